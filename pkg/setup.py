#!/usr/bin/env python3
"""
领域泛化集成实验设置脚本
帮助用户配置数据集位置并验证设置
"""

import os
import sys
from typing import Any, Dict, List

from utils.config_utils import ROOT_DIR, load_config, simple_save_config
from utils.dataset_utils import dataset_exists
from utils.errors import ConfigError


def _dataset_files(config: Dict[str, Any], dataset_id: str) -> List[str]:
    root = config["datasets"].get("root", "")
    return [
        p if os.path.isabs(p) else os.path.join(root, p)
        for p in config["datasets"][dataset_id].get("paths", [])
    ]


def setup_dataset_config() -> Dict[str, Any]:
    """设置数据集相关配置"""
    print("\n🔧 数据集配置设置")
    print("=" * 50)

    config = load_config()
    datasets = config["datasets"]

    print("\n📁 数据集根目录:")
    root = input(f"数据集根目录 [{datasets['root']}]: ").strip()
    if root:
        datasets["root"] = root

    print("\n📁 各数据集文件（相对根目录，多个文件以“,”分隔）:")
    for dataset_id in ("mnist", "usps", "svhn", "cifar10", "stl10"):
        current = ",".join(datasets[dataset_id]["paths"])
        paths = input(f"{dataset_id} ({datasets[dataset_id]['format']}) [{current}]: ").strip()
        if paths:
            datasets[dataset_id]["paths"] = [p.strip() for p in paths.split(",") if p.strip()]

    print("\n⚙️ 运行配置:")
    n_jobs = input(f"并行进程数 [{config['parallel']['n_jobs']}]: ").strip()
    if n_jobs:
        config["parallel"]["n_jobs"] = int(n_jobs)

    out_dir = input(f"结果输出目录 [{config['output']['out_dir']}]: ").strip()
    if out_dir:
        config["output"]["out_dir"] = out_dir

    simple_save_config(config)

    return config


def validate_setup() -> bool:
    """验证设置"""
    print("\n✅ 设置验证")
    print("=" * 50)

    required_files = [
        "scriptsForPython/dg_ensemble.py",
        "config/settings.yaml",
        "requirements.txt",
    ]
    missing_files = [p for p in required_files if not os.path.exists(os.path.join(ROOT_DIR, p))]
    if missing_files:
        print("❌ 缺少必要文件:")
        for file_path in missing_files:
            print(f"   - {file_path}")
        return False

    print("✅ 所有必要文件都存在")

    try:
        config = load_config()
        print("✅ 配置文件格式正确")
    except ConfigError as e:
        print(f"❌ 配置文件验证失败: {e}")
        return False

    # 数据集缺失只提示，不影响其余数据集的实验
    for dataset_id in ("mnist", "usps", "svhn", "cifar10", "stl10"):
        files = _dataset_files(config, dataset_id)
        if not dataset_exists(files):
            missing = [p for p in files if not os.path.exists(p)]
            print(f"⚠️  {dataset_id} 缺少文件: {', '.join(missing)}")
        else:
            print(f"✅ {dataset_id} 数据就绪")

    return True


def show_next_steps():
    """显示后续步骤"""
    print("\n🚀 后续步骤")
    print("=" * 50)

    steps = [
        "1. 下载 MNIST（IDX）与 CIFAR-10（二进制批次）放入数据集根目录",
        "2. 用 convert 命令把 USPS（CSV）、SVHN、STL10 转换为 .dgim",
        "3. 运行 python scriptsForPython/dg_ensemble.py gradcheck 检查梯度",
        "4. 运行 python scriptsForPython/dg_ensemble.py run --config templates/mnist_to_usps.json",
        "5. 用 table 命令并排渲染同一组合的两个方向",
    ]

    for step in steps:
        print(f"   {step}")

    print("\n📖 详细说明请参考 README.md 文件")


def main():
    """主函数"""
    print("🎯 领域泛化集成实验设置向导")
    print("=" * 50)

    setup_dataset_config()

    if validate_setup():
        print("\n🎉 设置完成！")
        show_next_steps()
    else:
        print("\n❌ 设置验证失败，请检查配置")
        sys.exit(1)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
单源领域泛化集成实验工具
在源域上独立训练 N 个使用不同增强子集的 CNN，用平均 / 元学习器融合，
并与参数量相同的单个 CNN（HCNN）及传统学习器对比，在目标域上评估
"""

import argparse
import logging
import os
import sys
import time
from typing import Any, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed

script_dir = os.path.dirname(os.path.abspath(__file__))
root_dir = os.path.dirname(script_dir)
sys.path.insert(0, root_dir)

from utils.array_utils import accuracy
from utils.augment_utils import augment_batch, assign_subsets, full_plan
from utils.classic_utils import (
    linear_predict_proba,
    rf_predict_proba,
    save_forest,
    save_linear,
    train_linear_svm,
    train_logistic_regression,
    train_random_forest,
    truncate_forest,
    tune_forest_trees,
)
from utils.cnn_utils import (
    build_base_cnn,
    build_hcnn,
    count_params,
    fit_model,
    predict_proba,
    save_checkpoint,
)
from utils.config_utils import load_config, load_experiment_config
from utils.dataset_utils import (
    LabeledImageSet,
    SplitSpec,
    flatten_pixels,
    load_cifar10_binary,
    load_csv_images,
    load_idx,
    load_stl10_binary,
    save_dgim,
    split,
    to_float,
)
from utils.ensemble_utils import (
    BaseOutputs,
    MetaConfig,
    concat_samples,
    ensemble_average,
    ensemble_traditional,
    meta_predict,
    save_meta,
    train_meta_linear,
    train_meta_mlp,
)
from utils.errors import DGError, StageError
from utils.files_utils import load_yaml_content
from utils.experiment_utils import (
    ExperimentConfig,
    prepare_domain_pair,
    resolve_pool,
    resolve_preprocessing,
)
from utils.gradcheck_utils import GRADCHECK_TOLERANCE, run_gradcheck_suite
from utils.object_utils import dataclass_from_dict, get_property
from utils.report_utils import (
    ResultsTable,
    base_row_name,
    compare_summary,
    emit_table,
    load_results_csv,
    render_csv,
    render_markdown,
    render_paired_markdown,
    write_metadata,
)
from utils.string_utils import short_hash, split_csv_list

logger = logging.getLogger(__name__)

DISPLAY_NAMES = {"mnist": "MNIST", "usps": "USPS", "svhn": "SVHN", "cifar10": "CIFAR10", "stl10": "STL10"}
SPLITS = ("s_train", "s_val", "t")


class DGEnsembleRunner:
    """按阶段执行一次实验；任一阶段失败时写出已完成的行并抛出带阶段名的 StageError"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.results = ResultsTable()
        self.stage = "init"
        self.started = time.perf_counter()
        self.checkpoint_dir = os.path.join(config.out_dir, "checkpoints")
        self.data: Dict[str, LabeledImageSet] = {}
        self.base_outputs: Dict[str, BaseOutputs] = {}
        self.base_models: List[Any] = []

    # region 工具

    def _add_row(self, name: str, probs: Dict[str, np.ndarray]) -> None:
        scores = [accuracy(probs[s], self.data[s].labels) for s in SPLITS]
        self.results.add_row(name, *scores)
        logger.info(f"[{name}] ✅ S_train={scores[0]:.3f} S_val={scores[1]:.3f} T={scores[2]:.3f}")

    def _checkpoint(self, name: str) -> Optional[str]:
        if not self.config.save_checkpoints:
            return None
        return os.path.join(self.checkpoint_dir, f"{name}.dgck")

    def _table_path(self, ext: str) -> str:
        return os.path.join(self.config.out_dir, f"{self.config.table_name}.{ext}")

    # endregion

    # region 各阶段

    def prepare(self) -> None:
        config = self.config
        self.plan = resolve_preprocessing(config.source.id, config.target.id)
        pair = prepare_domain_pair(config, self.plan)
        s_train, s_val = split(pair.source, SplitSpec(config.val_fraction, config.global_seed))
        self.data = {"s_train": s_train, "s_val": s_val, "t": pair.target}
        self.num_classes = pair.source.num_classes
        self.n_models = config.resolve_num_models(self.num_classes)
        self.seeds = config.seeds_for(self.n_models)
        self.pool = resolve_pool(config, self.plan)
        self.augmentation_plan = assign_subsets(self.pool, self.n_models, config.global_seed)
        self.base_spec = build_base_cnn(s_train.image_shape, self.num_classes)

        self.results.metadata.update(
            pairing=f"{DISPLAY_NAMES[config.source.id]}→{DISPLAY_NAMES[config.target.id]}",
            config_hash=short_hash(config.raw),
            seeds={"global": config.global_seed, "models": self.seeds},
            preprocessing=self.plan.to_dict(),
            sizes={name: len(s) for name, s in self.data.items()},
            augmentation_plan=self.augmentation_plan.to_dict(),
        )
        logger.info(
            f"ℹ️ {self.results.metadata['pairing']}: N={self.n_models}, K={self.num_classes}, "
            f"输入 {s_train.image_shape}, S_train={len(s_train)} S_val={len(s_val)} T={len(pair.target)}"
        )

    def train_bases(self) -> None:
        config = self.config
        jobs = []
        for i in range(self.n_models):
            tag = f"base {i + 1}/{self.n_models}"
            train_config = config.train_config(self.seeds[i], tag=tag)
            augs = self.augmentation_plan.augmentations_for(i)
            logger.info(f"[{tag}] 增强子集: {[a.kind for a in augs]}")
            jobs.append(delayed(fit_model)(self.base_spec, self.data["s_train"], self.data["s_val"], train_config, augs))
        self.base_models = Parallel(n_jobs=config.n_jobs_effective)(jobs)

        for i, (params, history) in enumerate(self.base_models):
            path = self._checkpoint(f"model_{i + 1}")
            if path:
                save_checkpoint(self.base_spec, params, path)
            logger.info(f"[base {i + 1}/{self.n_models}] 最佳 epoch {history.best_epoch + 1}")

        self.base_outputs = {
            s: BaseOutputs.from_list([predict_proba(self.base_spec, p, self.data[s]) for p, _ in self.base_models])
            for s in SPLITS
        }
        base_count = count_params(self.base_spec)
        self.results.metadata["params"] = {"base": [base_count] * self.n_models, "base_total": base_count * self.n_models}
        if config.enabled("base"):
            for i in range(self.n_models):
                self._add_row(base_row_name(i), {s: self.base_outputs[s].probs[i] for s in SPLITS})

    def fuse_average(self) -> None:
        self._add_row("EnA", {s: ensemble_average(self.base_outputs[s]) for s in SPLITS})

    def _meta_training_set(self):
        """干净的 S_train 输出，加上若干份使用完整增强集 A 的 S_train 输出"""
        config = self.config
        parts = [self.base_outputs["s_train"]]
        labels = [self.data["s_train"].labels]
        copies = int(config.meta.get("augmented_copies", 1))
        clean = to_float(self.data["s_train"])
        for c in range(copies):
            rng = np.random.default_rng([config.global_seed, 1000 + c])
            augmented = augment_batch(clean, full_plan(self.pool), rng)
            parts.append(BaseOutputs.from_list([predict_proba(self.base_spec, p, augmented) for p, _ in self.base_models]))
            labels.append(self.data["s_train"].labels)
        return concat_samples(parts), np.concatenate(labels)

    def fuse_meta(self) -> None:
        config = self.config
        outputs, labels = self._meta_training_set()
        meta_config = dataclass_from_dict(MetaConfig, {**config.meta, "seed": config.global_seed})
        for name, trainer, file_name in (("EnM", train_meta_linear, "enm"), ("EnM2", train_meta_mlp, "enm2")):
            if not config.enabled(name):
                continue
            self.stage = name
            meta = trainer(outputs, labels, meta_config)
            path = self._checkpoint(file_name)
            if path:
                save_meta(meta, path)
            self._add_row(name, {s: meta_predict(meta, self.base_outputs[s]) for s in SPLITS})

    def train_hcnn(self) -> None:
        config = self.config
        target = count_params(self.base_spec) * self.n_models
        spec = build_hcnn(self.data["s_train"].image_shape, self.num_classes, target)
        train_config = config.train_config(config.global_seed + self.n_models + 1, hcnn=True, tag="HCNN")
        params, _ = fit_model(spec, self.data["s_train"], self.data["s_val"], train_config, full_plan(self.pool))
        path = self._checkpoint("hcnn")
        if path:
            save_checkpoint(spec, params, path)
        self.results.metadata.setdefault("params", {}).update(
            hcnn=count_params(spec), hcnn_width_scale=spec.width_scale, hcnn_target=target
        )
        logger.info(f"[HCNN] 参数量 {count_params(spec)}（目标 {target}, width_scale={spec.width_scale}）")
        self._add_row("HCNN", {s: predict_proba(spec, params, self.data[s]) for s in SPLITS})

    def train_classical(self) -> None:
        config = self.config
        classical = config.classical
        X = {s: flatten_pixels(self.data[s]) for s in SPLITS}
        y_train = self.data["s_train"].labels
        k = self.num_classes
        probs: Dict[str, Dict[str, np.ndarray]] = {}
        need = {name: config.enabled(name) or config.enabled("EnT") for name in ("RF", "SVM", "LR")}

        if need["RF"]:
            self.stage = "RF"
            forest = train_random_forest(
                X["s_train"], y_train, int(classical.get("rf_trees", 100)), classical.get("rf_max_depth"),
                config.global_seed, num_classes=k, n_jobs=config.n_jobs_effective,
            )
            candidates = classical.get("rf_tree_candidates") or [forest.n_trees]
            best = tune_forest_trees(forest, X["s_val"], self.data["s_val"].labels, candidates)
            forest = truncate_forest(forest, best)
            self.results.metadata["rf_trees_selected"] = best
            path = self._checkpoint("rf")
            if path:
                save_forest(forest, path)
            probs["RF"] = {s: rf_predict_proba(forest, X[s]) for s in SPLITS}

        for name, trainer, key, file_name in (
            ("SVM", train_linear_svm, "svm", "svm"),
            ("LR", train_logistic_regression, "lr", "lr"),
        ):
            if not need[name]:
                continue
            self.stage = name
            options = classical.get(key) or {}
            model = trainer(
                X["s_train"], y_train,
                epochs=int(options.get("epochs", 10)), lr=float(options.get("lr", 0.01)),
                reg=float(options.get("reg", 1e-4)), seed=config.global_seed,
                batch_size=int(options.get("batch_size", 64)), num_classes=k,
            )
            path = self._checkpoint(file_name)
            if path:
                save_linear(model, path)
            probs[name] = {s: linear_predict_proba(model, X[s]) for s in SPLITS}

        if config.enabled("EnT"):
            self.stage = "EnT"
            self._add_row("EnT", {s: ensemble_traditional(probs["RF"][s], probs["SVM"][s], probs["LR"][s]) for s in SPLITS})
        for name in ("RF", "SVM", "LR"):
            if config.enabled(name):
                self._add_row(name, probs[name])

    def report(self, partial: bool = False) -> None:
        self.results.metadata["wall_time_s"] = round(time.perf_counter() - self.started, 3)
        self.results.metadata["partial"] = partial
        self.results.metadata["completed_rows"] = [name for name, _ in self.results.ordered_rows()]
        if partial:
            self.results.metadata["failed_stage"] = self.stage
        if not len(self.results):
            return
        summary = compare_summary(self.results) if self.results.base_rows() else None
        emit_table(self.results, "csv", self._table_path("csv"))
        emit_table(self.results, "markdown", self._table_path("md"))
        write_metadata(self.results, self._table_path("meta.json"), summary)

    # endregion

    def run(self) -> ResultsTable:
        config = self.config
        stages = [("prepare", self.prepare)]
        if any(config.enabled(n) for n in ("base", "EnA", "EnM", "EnM2")):
            stages.append(("base", self.train_bases))
        if config.enabled("EnA"):
            stages.append(("EnA", self.fuse_average))
        if config.enabled("EnM") or config.enabled("EnM2"):
            stages.append(("EnM", self.fuse_meta))
        if config.enabled("HCNN"):
            stages.append(("HCNN", self.train_hcnn))
        if any(config.enabled(n) for n in ("EnT", "RF", "SVM", "LR")):
            stages.append(("classical", self.train_classical))

        for name, stage in stages:
            self.stage = name
            logger.info(f"[{name}] ▶ 开始")
            try:
                stage()
            except Exception as e:
                logger.error(f"[{self.stage}] ❌ 阶段失败: {e}")
                try:
                    self.report(partial=True)
                except Exception as report_error:
                    logger.warning(f"❌ 写出部分结果失败: {report_error}")
                raise StageError(self.stage, e, partial=self.results) from e

        self.stage = "report"
        self.report()
        logger.info(f"✅ 实验完成! 📁 结果表: {self._table_path('csv')}")
        return self.results


def run_experiment(config: ExperimentConfig) -> ResultsTable:
    """
    执行完整实验：数据准备 → 划分 → 分配增强 → 训练基础 CNN → 融合 → HCNN → 传统学习器 → 输出表格

    Args:
        config: 实验配置

    Returns:
        结果表（同时写出 CSV、markdown 与 JSON 元数据）
    """
    return DGEnsembleRunner(config).run()


# region 命令行


def _sidecar_metadata(results_path: str) -> Dict[str, Any]:
    sidecar = os.path.splitext(results_path)[0] + ".meta.json"
    if not os.path.exists(sidecar):
        return {}
    with open(sidecar, "r", encoding="utf-8") as f:
        return load_yaml_content(f.read()) or {}


def cmd_run(args: argparse.Namespace) -> None:
    config = ExperimentConfig.from_dict(load_experiment_config(args.config))
    config = config.with_overrides(seed=args.seed, single_context=args.single_context, out_dir=args.out_dir)
    run_experiment(config)


def cmd_convert(args: argparse.Namespace) -> None:
    inputs = args.input
    if args.source == "idx":
        if len(inputs) != 2:
            raise SystemExit("❌ idx 需要 --input <images> <labels>")
        image_set = load_idx(inputs[0], inputs[1])
    elif args.source == "cifar10":
        image_set = load_cifar10_binary(inputs)
    elif args.source == "stl10":
        if len(inputs) != 2:
            raise SystemExit("❌ stl10 需要 --input <images> <labels>")
        image_set = load_stl10_binary(inputs[0], inputs[1])
    else:
        if not args.shape:
            raise SystemExit("❌ csv 需要 --shape C H W")
        channels, height, width = args.shape
        names = split_csv_list(args.class_names) if args.class_names else None
        image_set = load_csv_images(inputs[0], channels, height, width, names)
    save_dgim(image_set, args.output)


def cmd_table(args: argparse.Namespace) -> None:
    tables = [load_results_csv(path, _sidecar_metadata(path)) for path in args.results]
    if len(tables) == 2:
        if args.format != "markdown":
            raise SystemExit("❌ 并排表格只支持 markdown")
        content = render_paired_markdown(tables[0], tables[1])
        if args.output:
            with open(args.output, "w", encoding="utf-8") as f:
                f.write(content)
        else:
            print(content)
    elif args.output:
        emit_table(tables[0], args.format, args.output)
    else:
        print(render_markdown(tables[0]) if args.format == "markdown" else render_csv(tables[0]))


def cmd_gradcheck(args: argparse.Namespace) -> None:
    worst = run_gradcheck_suite(n_configs=args.configs, seed=args.seed)
    failed = [name for name, err in worst.items() if err > GRADCHECK_TOLERANCE]
    if failed:
        logger.error(f"❌ 梯度检查未通过: {failed}")
        sys.exit(1)
    logger.info("✅ 全部梯度检查通过")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="单源领域泛化集成实验")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="运行一次实验")
    run.add_argument("--config", required=True, help="实验配置 JSON")
    run.add_argument("--seed", type=int, default=None, help="全局种子（模型种子取 seed+1..N）")
    run.add_argument("--single-context", action="store_true", help="串行执行，保证逐字节可复现")
    run.add_argument("--out-dir", default=None, help="输出目录")
    run.set_defaults(func=cmd_run)

    convert = sub.add_parser("convert", help="转换数据集为 DGIM 容器")
    convert.add_argument("--from", dest="source", required=True, choices=["idx", "cifar10", "csv", "stl10"])
    convert.add_argument("--to", dest="target", default="dgim", choices=["dgim"])
    convert.add_argument("--input", nargs="+", required=True, help="输入文件")
    convert.add_argument("--output", required=True, help="输出 .dgim 文件")
    convert.add_argument("--shape", nargs=3, type=int, metavar=("C", "H", "W"), help="CSV 图像形状")
    convert.add_argument("--class-names", default=None, help="CSV 类别名，以“,”分隔")
    convert.set_defaults(func=cmd_convert)

    table = sub.add_parser("table", help="渲染结果表")
    table.add_argument("--results", nargs="+", required=True, help="一个或两个结果 CSV（两个时左右并排）")
    table.add_argument("--format", default="markdown", choices=["csv", "markdown"])
    table.add_argument("--output", default=None, help="输出文件（默认打印）")
    table.set_defaults(func=cmd_table)

    gradcheck = sub.add_parser("gradcheck", help="运行中心差分梯度检查")
    gradcheck.add_argument("--configs", type=int, default=20, help="每个算子的随机配置数")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.set_defaults(func=cmd_gradcheck)
    return parser


def setup_logging() -> None:
    try:
        settings = load_config()
    except DGError:
        settings = {}
    logging.basicConfig(
        level=get_property(settings, "logging.level", "INFO"),
        format=get_property(settings, "logging.format", "%(asctime)s - %(levelname)s - %(message)s"),
    )


def main(argv: Optional[List[str]] = None):
    """主函数"""
    setup_logging()
    args = build_parser().parse_args(argv)
    if len(getattr(args, "results", []) or []) > 2:
        logger.error("❌ --results 最多两个文件")
        sys.exit(1)
    try:
        args.func(args)
    except DGError as e:
        logger.error(f"❌ {e}")
        sys.exit(1)
    except OSError as e:
        logger.error(f"❌ 文件读写失败: {e}")
        sys.exit(1)


# endregion


if __name__ == "__main__":
    main()

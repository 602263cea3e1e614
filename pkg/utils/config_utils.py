import logging
import os
from typing import Any, Dict, Optional

import yaml

from utils.errors import ConfigError
from utils.merge_utils import merge_config_layers

logger = logging.getLogger(__name__)

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SETTINGS_PATH = os.path.join(ROOT_DIR, "config", "settings.yaml")


def _read_yaml(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"配置文件不存在: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"配置文件格式错误 {path}: {e}") from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError(f"配置文件顶层必须是映射: {path}")
    return content


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    加载默认设置

    Args:
        config_path: 设置文件路径，默认为 config/settings.yaml

    Returns:
        设置字典
    """
    return _read_yaml(config_path or SETTINGS_PATH)


def load_experiment_config(path: str, settings: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    加载实验配置（JSON 是 YAML 的子集，同一个解析器即可），并深合并到默认设置上

    Args:
        path: 实验配置文件
        settings: 默认设置，为 None 时读取 settings.yaml

    Returns:
        合并后的原始配置字典
    """
    base = settings if settings is not None else load_config()
    experiment = _read_yaml(path)
    logger.info(f"📁 读取实验配置: {path}")
    return merge_config_layers([base, experiment])


def simple_save_config(config: Dict[str, Any], config_path: Optional[str] = None) -> None:
    """
    简单保存配置文件

    Args:
        config: 配置内容
        config_path: 保存路径，默认为 config/settings.yaml
    """
    config_path = config_path or SETTINGS_PATH
    try:
        with open(config_path, "w", encoding="utf-8") as f:
            yaml.dump(config, f, default_flow_style=False, allow_unicode=True, sort_keys=False)
        print(f"✅ 配置已保存到: {config_path}")
    except OSError as e:
        print(f"❌ 保存配置失败: {e}")

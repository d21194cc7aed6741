"""Config-driven experiment harness."""

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config

__all__ = ["ConfigError", "ExperimentConfig", "config_from_dict", "load_config"]

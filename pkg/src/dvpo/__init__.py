"""Distributional value critics for policy optimization under noisy rewards."""
from .config import TrainConfig, load_config
from .trainer import TrainResult, train

__all__ = ["TrainConfig", "TrainResult", "load_config", "train"]
__version__ = "0.1.0"

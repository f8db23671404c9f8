"""Spiking audio-visual zero-shot learning at desk scale."""
from .config import Config, load_config
from .data import SyntheticSpec, generate_synthetic, load_features
from .kernels import BACKEND
from .model import MDST
from .training import evaluate, train, train_mdst, train_mdstpp

__version__ = "0.1.0"

__all__ = ["BACKEND", "Config", "MDST", "SyntheticSpec", "evaluate", "generate_synthetic", "load_config",
           "load_features", "train", "train_mdst", "train_mdstpp"]

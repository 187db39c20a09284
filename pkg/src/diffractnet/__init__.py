"""Multi-frequency diffractive deep neural networks in NumPy."""

from diffractnet.field import ComplexField, GridGeometry, RealMap
from diffractnet.network import MFDNet, MFDNetConfig
from diffractnet.training import TrainConfig

__all__ = [
    "ComplexField",
    "GridGeometry",
    "RealMap",
    "MFDNet",
    "MFDNetConfig",
    "TrainConfig",
]

__version__ = "0.1.0"

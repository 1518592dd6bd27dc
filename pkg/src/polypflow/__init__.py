"""Polyp segmentation as flow matching: a coarse U-Net prior refined by an Euler-integrated vector field."""
from .config import LossConfig, ModelConfig, TrainConfig
from .field import PolypFlow, VectorField
from .ode import Trajectory, euler_integrate

__version__ = "0.1.0"

__all__ = ["LossConfig", "ModelConfig", "TrainConfig", "PolypFlow", "VectorField", "Trajectory",
           "euler_integrate", "__version__"]

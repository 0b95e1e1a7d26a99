"""Differentiable physics-informed simulation and control of a soft-actuator pulling task."""

from .model import PhysicsModel
from .training import BaselineNN, Dataset, LearningConfig, learn_material

__all__ = ["PhysicsModel", "BaselineNN", "Dataset", "LearningConfig", "learn_material"]
__version__ = "0.1.0"

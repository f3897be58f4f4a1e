"""Boundary-content graph network for temporal action proposals, on a small numpy autodiff core."""

from .model import BCGNN, ModelConfig, init_params

__all__ = ["BCGNN", "ModelConfig", "init_params"]
__version__ = "0.1.0"

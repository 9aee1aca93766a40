"""Policy learning in latent state and action spaces.

Unsupervised VAE representation models for states and actions, a PPO
learner over the latent spaces, native MountainCar and PixelRacer
environments, and the analysis/CLI tooling around them. The tensor core
runs on a compiled conv backend when available (see ``conv_backend``).
"""

from .conv_backend import BACKEND as conv_backend_name
from .tensor import Tensor

__all__ = ["Tensor", "conv_backend_name"]
__version__ = "0.1.0"

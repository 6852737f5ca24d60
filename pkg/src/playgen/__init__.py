"""Unsupervised playable video generation.

Learns a discrete action space from unlabeled single-agent video through a
reconstruction-driven encoder / action / dynamics / decoder pipeline, then
lets a user drive generation interactively, one action per frame.
"""

__version__ = "0.1.0"

from .config import EnvSpec, LossWeights, ModelConfig, TrainConfig  # noqa: F401
from .model import PlayableModel, build_model  # noqa: F401

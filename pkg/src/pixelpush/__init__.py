"""Pixel-goal pushing: a 2D pushing simulator, stochastic pixel-flow
prediction (simulator oracle and trainable model), CEM-based visual MPC,
benchmarks against model-free baselines, and a live planning service."""

__version__ = "0.1.0"

from . import bench, flowmodel, imgrid, planner, pushsim, tracker  # noqa: F401

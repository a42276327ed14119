"""Variational inference of joint-angle trajectories from multiview keypoints."""

__version__ = "0.1.0"

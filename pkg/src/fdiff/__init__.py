"""Diffusion segmentation with fuzzy skip paths and attention fusion of sampling trajectories."""

__version__ = "0.1.0"

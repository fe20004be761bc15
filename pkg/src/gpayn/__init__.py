"""Grasp-prior demonstrations for off-policy multi-fingered grasping."""

__version__ = "0.1.0"

"""Motion-view disentanglement for streaming 3D pose lifting."""

__version__ = "0.1.0"

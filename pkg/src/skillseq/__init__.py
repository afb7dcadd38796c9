"""Tool-motion skill scoring with per-timestep feedback and trust measures."""

__version__ = "0.1.0"

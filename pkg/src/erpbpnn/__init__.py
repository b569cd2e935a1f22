"""Multi-task PPO with per-task network modules, bidirectional lateral
connections, and episodic-return-progress task selection."""

__version__ = "0.1.0"

from .backend import available as available_backends, default_name as default_backend

__all__ = ["__version__", "available_backends", "default_backend"]

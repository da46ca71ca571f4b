"""Double distillation networks for cooperative multi-agent Q-learning."""

__version__ = "0.1.0"

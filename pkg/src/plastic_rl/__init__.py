"""Continual-RL benchmark suite with orthogonality-regularized PPO/RPO agents."""

__version__ = "0.1.0"

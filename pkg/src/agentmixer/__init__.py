"""Desk-scale multi-agent RL laboratory.

Correlated joint-policy training on top of per-agent actor networks, with a
mode-consistency constraint that keeps decentralized greedy execution aligned
with the joint policy used during centralized training.  Ships independent
PPO and asymmetric imitation baselines, a handful of coordination-stress
environments, and an exact equilibrium / distillation analysis toolkit.
"""

__version__ = "0.1.0"

from agentmixer.autodiff import Tensor, backward, no_grad

__all__ = ["Tensor", "backward", "no_grad", "__version__"]

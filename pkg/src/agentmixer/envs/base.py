"""Shared environment interface for the cooperative multi-agent tasks.

All tasks share a single scalar team reward.  Decentralized consumers only
ever see the per-agent observation lists returned by reset/step; the full
state is behind get_state(), which counts its callers so tests can prove
the evaluation path never touches it.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class StepResult:
    observations: list
    reward: float
    done: bool


class MultiAgentEnv:
    """Base class carrying the common metadata and the state-read counter.

    Subclasses set: n_agents, obs_dims (tuple of per-agent observation
    lengths), state_dim, horizon, gamma, and either n_actions (tuple, for
    discrete tasks) or action_dim/action_low/action_high (continuous).
    """

    n_agents: int = 0
    obs_dims: tuple = ()
    state_dim: int = 0
    horizon: int = 1
    gamma: float = 0.99
    discrete: bool = True
    n_actions: tuple = ()
    action_dim: int = 0
    action_low: float = 0.0
    action_high: float = 0.0

    def __init__(self):
        self.state_reads = 0

    def reset(self, rng):
        raise NotImplementedError

    def step(self, actions, rng):
        raise NotImplementedError

    def get_state(self):
        # counted so the decentralized-evaluation contract is checkable
        self.state_reads += 1
        return self._state()

    def _state(self):
        raise NotImplementedError

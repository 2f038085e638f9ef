"""Tabular POMDP model, exact value iteration, and a step-env adapter."""
from dataclasses import dataclass

import numpy as np

from agentmixer.envs.base import MultiAgentEnv, StepResult


@dataclass
class TabularPomdp:
    transition: np.ndarray   # [S, A, S]
    reward: np.ndarray       # [S, A]
    observation: np.ndarray  # [S, O], emission from the state being entered
    rho0: np.ndarray         # [S]
    gamma: float
    absorbing: np.ndarray    # [S] bool

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def n_obs(self):
        return self.observation.shape[1]

    def validate(self):
        t, r, o = self.transition, self.reward, self.observation
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError(f"transition must be [S, A, S], got {t.shape}")
        if r.shape != t.shape[:2]:
            raise ValueError("reward shape must match [S, A]")
        if not np.allclose(t.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("transition rows must sum to 1")
        if not np.allclose(o.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("observation rows must sum to 1")
        if abs(self.rho0.sum() - 1.0) > 1e-12:
            raise ValueError("rho0 must sum to 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if not np.isfinite(r).all():
            raise ValueError("rewards must be finite")
        for s in np.flatnonzero(self.absorbing):
            if not (t[s, :, s] == 1.0).all() or not (r[s] == 0.0).all():
                raise ValueError(f"absorbing state {s} must self-loop with zero reward")


def value_iteration(pomdp, tol=1e-12, max_iters=100_000):
    """Exact optimal values on the underlying (fully observed) MDP."""
    t, r, g = pomdp.transition, pomdp.reward, pomdp.gamma
    v = np.zeros(pomdp.n_states)
    for _ in range(max_iters):
        q = r + g * t @ v
        v_new = q.max(axis=1)
        if np.abs(v_new - v).max() < tol:
            v = v_new
            break
        v = v_new
    q = r + g * t @ v
    return v, q, q.argmax(axis=1)


def greedy_policy_table(pomdp):
    """Optimal deterministic policy as a [S, A] one-hot table."""
    _, q, greedy = value_iteration(pomdp)
    table = np.zeros((pomdp.n_states, pomdp.n_actions))
    table[np.arange(pomdp.n_states), greedy] = 1.0
    return table


def policy_value(pomdp, policy_table):
    """Exact start value of a state-conditioned policy via linear solve."""
    t, r, g = pomdp.transition, pomdp.reward, pomdp.gamma
    s = pomdp.n_states
    p_pi = np.einsum("sa,sat->st", policy_table, t)
    r_pi = (policy_table * r).sum(axis=1)
    v = np.linalg.solve(np.eye(s) - g * p_pi, r_pi)
    return float(pomdp.rho0 @ v), v


class TabularEnv(MultiAgentEnv):
    """Single-agent step interface over a TabularPomdp.

    Observations are one-hot observation symbols; the centralized state is
    the one-hot underlying state, so partial observability is preserved on
    the decentralized side.
    """

    def __init__(self, pomdp, horizon=30):
        super().__init__()
        pomdp.validate()
        self.pomdp = pomdp
        self.n_agents = 1
        self.obs_dims = (pomdp.n_obs,)
        self.state_dim = pomdp.n_states
        self.horizon = horizon
        self.gamma = pomdp.gamma
        self.n_actions = (pomdp.n_actions,)
        self.discrete = True
        self._s = 0
        self._t = 0

    def reset(self, rng):
        self._s = int(rng.choice(self.pomdp.n_states, p=self.pomdp.rho0))
        self._t = 0
        return [self._emit(rng)]

    def step(self, actions, rng):
        a = int(actions[0])
        r = float(self.pomdp.reward[self._s, a])
        self._s = int(rng.choice(self.pomdp.n_states, p=self.pomdp.transition[self._s, a]))
        self._t += 1
        done = bool(self.pomdp.absorbing[self._s]) or self._t >= self.horizon
        return StepResult([self._emit(rng)], r, done)

    def _emit(self, rng):
        o = int(rng.choice(self.pomdp.n_obs, p=self.pomdp.observation[self._s]))
        vec = np.zeros(self.pomdp.n_obs)
        vec[o] = 1.0
        return vec

    def _state(self):
        vec = np.zeros(self.pomdp.n_states)
        vec[self._s] = 1.0
        return vec

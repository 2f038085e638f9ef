"""Per-agent observation histories and stochastic policy heads.

Decentralized actors condition only on a sliding window of their own
observations (optionally joined with the previous own action).  Heads come
in two flavors: diagonal Gaussian with a state-independent learned scale,
and categorical over a finite action set.
"""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from agentmixer import autodiff as ad
from agentmixer.autodiff import LOG_PROB_FLOOR, Tensor
from agentmixer.nn import Mlp, ParamStore

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class HistoryWindow:
    """Fixed-length stack of an agent's own observations, zero-padded."""

    def __init__(
        self,
        agent_id: int,
        obs_dim: int,
        window: int = 1,
        include_last_action: bool = False,
        n_actions: int = 0,
    ):
        if not 1 <= window <= 8:
            raise ValueError(f"history window must be in [1, 8], got {window}")
        if include_last_action and n_actions <= 0:
            raise ValueError("include_last_action requires n_actions")
        self.agent_id = agent_id
        self.obs_dim = obs_dim
        self.window = window
        self.include_last_action = include_last_action
        self.n_actions = n_actions
        self.reset()

    @property
    def feature_dim(self) -> int:
        extra = self.n_actions if self.include_last_action else 0
        return self.window * self.obs_dim + extra

    def reset(self) -> None:
        self._stack = np.zeros((self.window, self.obs_dim))
        self._last_action = np.zeros(self.n_actions if self.include_last_action else 0)

    def push(self, obs: np.ndarray, last_action: Optional[int] = None) -> None:
        self._stack = np.roll(self._stack, -1, axis=0)
        self._stack[-1] = obs
        if self.include_last_action:
            self._last_action = np.zeros(self.n_actions)
            if last_action is not None:
                self._last_action[last_action] = 1.0

    def features(self) -> np.ndarray:
        if self.include_last_action:
            return np.concatenate([self._stack.reshape(-1), self._last_action])
        return self._stack.reshape(-1)


class GaussianHead:
    """Diagonal Gaussian policy: state-dependent mean, learned global scale."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        feature_dim: int,
        action_dim: int,
        hidden: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
        init_log_std: float = -1.0,
    ):
        self.action_dim = action_dim
        self.net = Mlp(store, f"{prefix}/mu", [feature_dim, *hidden, action_dim], rng, activation)
        self.log_std_param = store.create(f"{prefix}/log_std", np.full(action_dim, init_log_std))

    def mu(self, features: Tensor) -> Tensor:
        return self.net(features)

    def log_std(self) -> Tensor:
        return ad.clamp(self.log_std_param, LOG_STD_MIN, LOG_STD_MAX)


class CategoricalHead:
    """Categorical policy over a finite action set."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        feature_dim: int,
        n_actions: int,
        hidden: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
    ):
        self.n_actions = n_actions
        self.net = Mlp(store, f"{prefix}/logits", [feature_dim, *hidden, n_actions], rng, activation)

    def logits(self, features: Tensor) -> Tensor:
        return self.net(features)


# -- differentiable distribution terms ---------------------------------------


def gaussian_log_prob(mu: Tensor, log_std: Tensor, actions: np.ndarray) -> Tensor:
    """Row log-density of ``actions`` under N(mu, diag(exp(log_std)^2))."""
    a = Tensor(np.asarray(actions, dtype=np.float64))
    z = (a - mu) * ad.exp(-log_std)
    per_dim = -0.5 * z.square() - log_std - HALF_LOG_2PI
    return ad.clamp(per_dim.sum(axis=-1), LOG_PROB_FLOOR, None)


def gaussian_entropy(log_std: Tensor) -> Tensor:
    """Entropy of the diagonal Gaussian; scalar (state independent)."""
    return (log_std + HALF_LOG_2PI + 0.5).sum()


def gaussian_kl(mu_p: Tensor, log_std_p: Tensor, mu_q: Tensor, log_std_q: Tensor) -> Tensor:
    """Row KL(p || q) between diagonal Gaussians, closed form."""
    var_ratio = ad.exp(2.0 * (log_std_p - log_std_q))
    mean_term = (mu_p - mu_q).square() * ad.exp(-2.0 * log_std_q)
    per_dim = log_std_q - log_std_p + 0.5 * (var_ratio + mean_term) - 0.5
    return per_dim.sum(axis=-1)


def categorical_log_prob(logits: Tensor, actions: np.ndarray) -> Tensor:
    lp = ad.log_softmax(logits, axis=-1)
    picked = ad.take_along_rows(lp, np.asarray(actions, dtype=np.intp))
    return ad.clamp(picked, LOG_PROB_FLOOR, None)


def categorical_entropy(logits: Tensor) -> Tensor:
    lp = ad.log_softmax(logits, axis=-1)
    p = ad.softmax(logits, axis=-1)
    return -(p * lp).sum(axis=-1)


def categorical_kl(logits_p: Tensor, logits_q: Tensor) -> Tensor:
    """Row KL(p || q) from logits; exact finite sum."""
    lp = ad.log_softmax(logits_p, axis=-1)
    lq = ad.log_softmax(logits_q, axis=-1)
    p = ad.softmax(logits_p, axis=-1)
    return (p * (lp - lq)).sum(axis=-1)


def categorical_kl_probs(p: np.ndarray, q: np.ndarray) -> float:
    """KL between two probability vectors; zero-mass terms contribute zero."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(mask & (q <= 0)):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


# -- sampling (numpy side, no tape) ------------------------------------------


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; consumes exactly one uniform."""
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


def sample_categorical_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF draws for ``[B x K]`` rows given uniforms ``[B]``."""
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf > u[:, None]).argmax(axis=1)
    return idx.astype(np.intp)


def mode_categorical(probs: np.ndarray) -> int:
    """Greedy action; ties break toward the lowest index."""
    return int(np.argmax(probs))


def act_decentralized(
    head,
    features: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    deterministic: bool = False,
) -> Tuple[np.ndarray, float]:
    """Single-step decentralized action from one agent's history features.

    Returns the action and its log-probability under the head.  The
    deterministic branch returns the distribution mode (mean for Gaussian,
    lowest-index argmax for categorical) and consumes no randomness.
    """
    feats = Tensor(np.asarray(features, dtype=np.float64).reshape(1, -1))
    with ad.no_grad():
        if isinstance(head, GaussianHead):
            mu = head.mu(feats).data[0]
            std = np.exp(head.log_std().data)
            if deterministic:
                action = mu.copy()
            else:
                action = mu + std * rng.standard_normal(head.action_dim)
            z = (action - mu) / std
            lp = float(np.sum(-0.5 * z * z - np.log(std) - HALF_LOG_2PI))
            return action, max(lp, LOG_PROB_FLOOR)
        logits = head.logits(feats)
        probs = ad.softmax(logits, axis=-1).data[0]
        action = mode_categorical(probs) if deterministic else sample_categorical(probs, rng)
        lp = float(np.log(max(probs[action], np.exp(LOG_PROB_FLOOR))))
        return np.intp(action), lp

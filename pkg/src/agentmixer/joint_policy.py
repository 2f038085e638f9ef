"""Correlated joint policy assembled from per-agent heads plus the mixer.

The joint policy perturbs each agent's individual distribution with a
state-conditioned term from the mixer network.  Continuous agents share
their mean with the individual policy and receive a state-dependent scale,
so greedy execution coincides exactly.  Discrete agents get their log-probs
shifted by double-log-transformed quantiles before a temperature softmax;
greedy consistency is then a measurable property rather than an identity,
and is surfaced through ``check_igc``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from agentmixer import autodiff as ad
from agentmixer import policies as pol
from agentmixer.autodiff import Tensor
from agentmixer.mixer import PolicyMixer


def noise_from_quantile(u: Tensor) -> Tensor:
    """Double-log transform mapping quantiles in (0,1) to unbounded noise.

    With i.i.d. uniform quantiles, adding this noise to log-probabilities
    and taking the argmax reproduces exact categorical sampling.
    """
    return -ad.log(-ad.log(u))


@dataclass
class JointPolicyState:
    """Per-agent distribution parameters of one joint-policy evaluation."""

    mode: str
    batch: int
    n_agents: int
    # discrete
    perturbed_logits: List[Tensor] = field(default_factory=list)  # z, [B x K] each
    log_alpha: List[Tensor] = field(default_factory=list)
    # continuous
    mu: List[Tensor] = field(default_factory=list)
    log_sigma: List[Tensor] = field(default_factory=list)  # joint scales
    individual_log_std: List[Tensor] = field(default_factory=list)

    def joint_probs(self) -> List[np.ndarray]:
        """Per-agent sampling distributions of the joint policy (discrete)."""
        return [ad.softmax(z).data for z in self.perturbed_logits]

    def individual_probs(self) -> List[np.ndarray]:
        return [np.exp(la.data) for la in self.log_alpha]


def build_joint(
    state_feats: Tensor,
    agent_features: Sequence[Tensor],
    heads: Sequence,
    pm: Optional[PolicyMixer],
    taus: Optional[Sequence[float]] = None,
    noise: Optional[Tensor] = None,
) -> JointPolicyState:
    """Evaluate heads and mixer into a joint policy over a batch of states.

    ``pm=None`` bypasses the mixer entirely: the joint degenerates to the
    product of the individual policies (identity configuration).  ``noise``
    is the shared per-sample coordination signal handed to the mixer; all
    agents in a row see the same draw, so conditioning on it lets the joint
    concentrate on specific action combinations while each agent's history
    policy stays the signal-averaged marginal.
    """
    n = len(heads)
    batch = state_feats.shape[0]
    if taus is None:
        taus = [1.0] * n

    if isinstance(heads[0], pol.GaussianHead):
        mus = [heads[i].mu(agent_features[i]) for i in range(n)]
        stds = [heads[i].log_std() for i in range(n)]
        if pm is None:
            log_sigmas = list(stds)
        else:
            ones = Tensor(np.ones((batch, 1)))
            params = []
            for i in range(n):
                sigma_row = ad.reshape(ad.exp(stds[i]), (1, -1))
                params.append(ad.concat([mus[i], ad.matmul(ones, sigma_row)], axis=1))
            log_sigmas = pm(state_feats, params, noise)
        return JointPolicyState(
            mode="continuous",
            batch=batch,
            n_agents=n,
            mu=mus,
            log_sigma=log_sigmas,
            individual_log_std=stds,
        )

    logits = [heads[i].logits(agent_features[i]) for i in range(n)]
    log_alphas = [ad.clamp(ad.log_softmax(lg), ad.LOG_PROB_FLOOR, None) for lg in logits]
    if pm is None:
        zs = [log_alphas[i] * (1.0 / taus[i]) for i in range(n)]
    else:
        quantiles = pm(state_feats, logits, noise)
        zs = [
            (noise_from_quantile(quantiles[i]) + log_alphas[i]) * (1.0 / taus[i])
            for i in range(n)
        ]
    return JointPolicyState(
        mode="discrete", batch=batch, n_agents=n, perturbed_logits=zs, log_alpha=log_alphas
    )


def joint_sample(
    jps: JointPolicyState, rngs: Sequence[np.random.Generator]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample one joint action per batch row; row b consumes rngs[b] only.

    Returns ``(actions, log_probs, per_agent_log_probs)``: actions are
    ``[B x N]`` ints for discrete mode and ``[B x N x A]`` floats for
    continuous.  Randomness is drawn per agent in index order, so the
    product-of-individuals configuration consumes streams exactly like an
    independent per-agent sampler.
    """
    b, n = jps.batch, jps.n_agents
    per_agent_lp = np.zeros((b, n))
    if jps.mode == "discrete":
        probs = jps.joint_probs()
        # log-probs are read off the same log-softmax path the update later
        # recomputes, so unchanged parameters give surrogate ratios of
        # exactly 1.0
        logp = [ad.log_softmax(z).data for z in jps.perturbed_logits]
        actions = np.zeros((b, n), dtype=np.intp)
        for row in range(b):
            for i in range(n):
                a = pol.sample_categorical(probs[i][row], rngs[row])
                actions[row, i] = a
                per_agent_lp[row, i] = max(logp[i][row, a], ad.LOG_PROB_FLOOR)
        return actions, per_agent_lp.sum(axis=1), per_agent_lp
    mus = [m.data for m in jps.mu]
    a_dim = mus[0].shape[1]
    log_sigmas = [np.broadcast_to(ls.data, (b, a_dim)) for ls in jps.log_sigma]
    actions = np.zeros((b, n, a_dim))
    for row in range(b):
        for i in range(n):
            noise = rngs[row].standard_normal(a_dim)
            ls = log_sigmas[i][row]
            actions[row, i] = mus[i][row] + np.exp(ls) * noise
            # mirror the update-side arithmetic exactly
            z = (actions[row, i] - mus[i][row]) * np.exp(-ls)
            lp = float(np.sum(-0.5 * z * z - ls - pol.HALF_LOG_2PI))
            per_agent_lp[row, i] = max(lp, ad.LOG_PROB_FLOOR)
    return actions, per_agent_lp.sum(axis=1), per_agent_lp


def joint_log_prob_entropy(
    jps: JointPolicyState, actions: np.ndarray
) -> Tuple[Tensor, Tensor, List[Tensor]]:
    """Differentiable joint log-prob and entropy of stored actions.

    Entropy is the sum of per-agent entropies; given the state the joint
    factorizes across agents, so that sum is exact.
    """
    per_agent = []
    if jps.mode == "discrete":
        for i in range(jps.n_agents):
            per_agent.append(pol.categorical_log_prob(jps.perturbed_logits[i], actions[:, i]))
        ent = pol.categorical_entropy(jps.perturbed_logits[0])
        for i in range(1, jps.n_agents):
            ent = ent + pol.categorical_entropy(jps.perturbed_logits[i])
    else:
        ones = Tensor(np.ones((jps.batch, jps.mu[0].shape[1])))
        for i in range(jps.n_agents):
            per_agent.append(
                pol.gaussian_log_prob(jps.mu[i], jps.log_sigma[i], actions[:, i])
            )
        ent_rows = []
        for i in range(jps.n_agents):
            ls = jps.log_sigma[i]
            ls_b = ls if ls.ndim == 2 else ad.mul(ones, ls)
            ent_rows.append((ls_b + pol.HALF_LOG_2PI + 0.5).sum(axis=-1))
        ent = ent_rows[0]
        for e in ent_rows[1:]:
            ent = ent + e
    total = per_agent[0]
    for lp in per_agent[1:]:
        total = total + lp
    return total, ent, per_agent


def joint_mode(jps: JointPolicyState) -> np.ndarray:
    """Greedy joint action per row (centralized execution)."""
    if jps.mode == "discrete":
        return np.stack([z.data.argmax(axis=1) for z in jps.perturbed_logits], axis=1)
    return np.stack([m.data for m in jps.mu], axis=1)


@dataclass
class IgcReport:
    """Agreement between greedy joint actions and greedy individual actions."""

    consistent_fraction: float
    per_agent_fraction: np.ndarray
    all_consistent: bool


def check_igc(jps: JointPolicyState) -> IgcReport:
    if jps.mode == "continuous":
        # shared means make greedy actions coincide by construction
        per_agent = np.ones(jps.n_agents)
        return IgcReport(1.0, per_agent, True)
    agree = np.zeros((jps.batch, jps.n_agents), dtype=bool)
    for i in range(jps.n_agents):
        joint_greedy = jps.perturbed_logits[i].data.argmax(axis=1)
        solo_greedy = jps.log_alpha[i].data.argmax(axis=1)
        agree[:, i] = joint_greedy == solo_greedy
    per_agent = agree.mean(axis=0)
    frac = float(agree.all(axis=1).mean())
    return IgcReport(frac, per_agent, bool(agree.all()))


def temperature_degeneration_test(
    alphas: Sequence[np.ndarray],
    n_samples: int,
    taus: Sequence[float],
    rng: np.random.Generator,
) -> List[Tuple[float, float]]:
    """Total variation between sampled joint frequencies and the product law.

    For each temperature, fresh i.i.d. quantiles replace the mixer output;
    tau = 0 is the argmax limit, which by the double-log construction must
    reproduce the product of the individual categoricals exactly.
    """
    n = len(alphas)
    sizes = [len(a) for a in alphas]
    product = alphas[0].copy()
    for a in alphas[1:]:
        product = np.multiply.outer(product, a)
    results = []
    for tau in taus:
        draws = []
        for i in range(n):
            u = rng.uniform(size=(n_samples, sizes[i]))
            z = -np.log(-np.log(u)) + np.log(alphas[i])
            if tau == 0.0:
                draws.append(z.argmax(axis=1))
            else:
                zt = z / tau
                p = np.exp(zt - zt.max(axis=1, keepdims=True))
                p /= p.sum(axis=1, keepdims=True)
                draws.append(pol.sample_categorical_rows(p, rng.random(n_samples)))
        counts = np.zeros(sizes)
        np.add.at(counts, tuple(draws), 1.0)
        emp = counts / n_samples
        tv = 0.5 * float(np.abs(emp - product).sum())
        results.append((float(tau), tv))
    return results

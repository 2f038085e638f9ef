"""Exact equilibrium gaps on one-shot games and belief-space distillation.

One-shot side: deviation gaps for Nash (unilateral policy swap on a
product policy), coarse correlated (fixed-action swap against a joint),
and correlated equilibrium (recommendation remaps f: A -> A, enumerated
exhaustively).  Tabular-POMDP side: exact discounted state-belief
occupancies by forward Bayes filtering, the belief-averaged projection of
a state-conditioned policy, its fixed-point iteration, and the zero-KL
identifiability test.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

MAX_ACTIONS_FOR_CE = 8
BELIEF_KEY_DECIMALS = 10
MASS_CUTOFF = 1e-8
MAX_BELIEF_POINTS = 100_000


# ------------------------------------------------------------- one-shot games

@dataclass
class StrategyModification:
    agent: int
    mapping: np.ndarray  # mapping[recommended] = played

    def apply(self, joint):
        """Push the joint distribution through the remap on this agent's axis."""
        moved = np.moveaxis(np.array(joint), self.agent, 0)
        out = np.zeros_like(moved)
        np.add.at(out, self.mapping, moved)
        return np.moveaxis(out, 0, self.agent)


def _validate_joint(payoff, joint):
    if joint.shape != payoff.shape:
        raise ValueError(f"joint shape {joint.shape} does not match payoff {payoff.shape}")
    if joint.min() < -1e-12:
        raise ValueError("joint distribution has negative entries")
    if abs(joint.sum() - 1.0) > 1e-12:
        raise ValueError("joint distribution must sum to 1")


def value_of_joint(payoff, joint):
    payoff = np.asarray(payoff, dtype=np.float64)
    joint = np.asarray(joint, dtype=np.float64)
    _validate_joint(payoff, joint)
    return float((payoff * joint).sum())


def _recommendation_payoffs(payoff, joint, agent):
    """G[a, a'] = mass-weighted payoff when agent is told a but plays a'."""
    p = np.moveaxis(payoff, agent, 0)
    j = np.moveaxis(joint, agent, 0)
    k = p.shape[0]
    g = np.zeros((k, k))
    for told in range(k):
        for played in range(k):
            g[told, played] = (j[told] * p[played]).sum()
    return g


def ce_gap(payoff, joint):
    """Largest gain over every deterministic recommendation remap.

    Returns (epsilon >= 0, witness StrategyModification); the identity remap
    anchors the gap at exactly zero.
    """
    payoff = np.asarray(payoff, dtype=np.float64)
    joint = np.asarray(joint, dtype=np.float64)
    _validate_joint(payoff, joint)
    n_agents = payoff.ndim
    best = 0.0
    witness = StrategyModification(0, np.arange(payoff.shape[0]))
    for i in range(n_agents):
        k = payoff.shape[i]
        if k > MAX_ACTIONS_FOR_CE:
            raise ValueError(
                f"refusing remap enumeration for {k} actions "
                f"(limit {MAX_ACTIONS_FOR_CE}: K^K maps)"
            )
        g = _recommendation_payoffs(payoff, joint, i)
        base = sum(g[a, a] for a in range(k))
        for mapping in itertools.product(range(k), repeat=k):
            gain = sum(g[a, mapping[a]] for a in range(k)) - base
            if gain > best:
                best = gain
                witness = StrategyModification(i, np.array(mapping))
    return best, witness


def _deviation_values(payoff, others_dist, agent):
    """Expected payoff of each fixed action against a distribution of others."""
    p = np.moveaxis(payoff, agent, 0)
    return p.reshape(p.shape[0], -1) @ np.asarray(others_dist).ravel()


def nash_gap(payoff, marginals):
    """Best unilateral deviation gain for a product policy.

    Pure best responses suffice in finite games, so the max runs over
    actions.  Returns (epsilon >= 0, (agent, action)).
    """
    payoff = np.asarray(payoff, dtype=np.float64)
    marginals = [np.asarray(m, dtype=np.float64) for m in marginals]
    best, witness = 0.0, (0, 0)
    for i in range(payoff.ndim):
        others = [m for j, m in enumerate(marginals) if j != i]
        others_dist = others[0]
        for m in others[1:]:
            others_dist = np.multiply.outer(others_dist, m)
        dev = _deviation_values(payoff, others_dist, i)
        value = float(dev @ marginals[i])
        gain = float(dev.max()) - value
        if gain > best:
            best = gain
            witness = (i, int(dev.argmax()))
    return max(best, 0.0), witness


def cce_gap(payoff, joint):
    """Best fixed-action deviation against the joint's others-marginal."""
    payoff = np.asarray(payoff, dtype=np.float64)
    joint = np.asarray(joint, dtype=np.float64)
    _validate_joint(payoff, joint)
    value = float((payoff * joint).sum())
    best, witness = 0.0, (0, 0)
    for i in range(payoff.ndim):
        others_dist = joint.sum(axis=i)
        dev = _deviation_values(payoff, others_dist, i)
        gain = float(dev.max()) - value
        if gain > best:
            best = gain
            witness = (i, int(dev.argmax()))
    return max(best, 0.0), witness


def product_joint(marginals):
    joint = np.asarray(marginals[0], dtype=np.float64)
    for m in marginals[1:]:
        joint = np.multiply.outer(joint, m)
    return joint


def equilibrium_report(payoff, joint):
    """All three gaps plus value, payoff-range normalization, optimality gap."""
    payoff = np.asarray(payoff, dtype=np.float64)
    joint = np.asarray(joint, dtype=np.float64)
    value = value_of_joint(payoff, joint)
    span = float(payoff.max() - payoff.min())
    scale = span if span > 0 else 1.0
    marginals = []
    for i in range(payoff.ndim):
        axes = tuple(j for j in range(payoff.ndim) if j != i)
        marginals.append(joint.sum(axis=axes))
    eps_ne, wit_ne = nash_gap(payoff, marginals)
    eps_ce, wit_ce = ce_gap(payoff, joint)
    eps_cce, wit_cce = cce_gap(payoff, joint)
    return {
        "value": value,
        "normalization": span,
        "epsilon_ne": {"absolute": eps_ne, "normalized": eps_ne / scale},
        "epsilon_ce": {"absolute": eps_ce, "normalized": eps_ce / scale},
        "epsilon_cce": {"absolute": eps_cce, "normalized": eps_cce / scale},
        "witnesses": {
            "ne": {"agent": wit_ne[0], "action": wit_ne[1]},
            "ce": {"agent": wit_ce.agent, "mapping": wit_ce.mapping.tolist()},
            "cce": {"agent": wit_cce[0], "action": wit_cce[1]},
        },
        "optimality_gap": float(payoff.max()) - value,
    }


# --------------------------------------------------------- tabular policies

def belief_key(belief):
    return (np.round(belief, BELIEF_KEY_DECIMALS) + 0.0).tobytes()


@dataclass
class StatePolicy:
    """Policy conditioned on the underlying state; ignores beliefs."""
    table: np.ndarray  # [S, A]

    def probs(self, state, belief):
        return self.table[state]


@dataclass
class BeliefPolicy:
    """Lookup table over enumerated belief points; uniform where unseen."""
    n_actions: int
    table: dict = field(default_factory=dict)   # belief key -> probs [A]
    beliefs: dict = field(default_factory=dict)  # belief key -> belief vector

    def probs(self, state, belief):
        row = self.table.get(belief_key(belief))
        if row is None:
            return np.full(self.n_actions, 1.0 / self.n_actions)
        return row

    def set(self, belief, probs):
        key = belief_key(belief)
        self.table[key] = np.asarray(probs, dtype=np.float64)
        self.beliefs[key] = np.asarray(belief, dtype=np.float64)


def belief_policy_tv(new, old):
    """Largest per-belief total variation, measured on the new support."""
    worst = 0.0
    for key, row in new.table.items():
        other = old.table.get(key)
        if other is None:
            other = np.full(new.n_actions, 1.0 / new.n_actions)
        worst = max(worst, 0.5 * float(np.abs(row - other).sum()))
    return worst


# ------------------------------------------------------- belief occupancies

@dataclass
class BeliefOccupancy:
    beliefs: np.ndarray        # [B, S] enumerated belief points
    rho_sb: np.ndarray         # [B, S] discounted joint occupancy mass
    rho_b: np.ndarray          # [B]
    rho_s_given_b: np.ndarray  # [B, S], rows sum to 1
    rho_so: np.ndarray         # [O, S] occupancy over (current obs, state)
    steps: int                 # forward steps enumerated before the cutoff

    def belief_index(self, belief):
        key = belief_key(belief)
        for idx in range(self.beliefs.shape[0]):
            if belief_key(self.beliefs[idx]) == key:
                return idx
        raise KeyError("belief point not enumerated")


def belief_update(pomdp, belief, action, obs):
    predicted = belief @ pomdp.transition[:, action, :]
    posterior = predicted * pomdp.observation[:, obs]
    z = posterior.sum()
    if z <= 0.0:
        return None
    return posterior / z


def belief_occupancy(pomdp, policy, cutoff=MASS_CUTOFF, max_points=MAX_BELIEF_POINTS):
    """Exact discounted (state, belief) occupancy under a policy.

    Forward-enumerates reachable (state, belief) pairs with probability
    mass, truncating once the discount drops below the cutoff.  Mass
    reaching an absorbing state is completed analytically with its
    geometric tail, so fully absorbing models satisfy the improper
    normalization sum(rho_sb) = 1/(1-gamma) exactly.
    """
    t, o_mat, rho0, gamma = (pomdp.transition, pomdp.observation,
                             pomdp.rho0, pomdp.gamma)
    n_s, n_a, n_o = pomdp.n_states, pomdp.n_actions, pomdp.n_obs

    belief_vecs = {}
    rho = {}          # (belief key, state) -> mass
    rho_so = np.zeros((n_o, n_s))

    frontier = {}     # (state, belief key) -> mass
    for obs in range(n_o):
        posterior = rho0 * o_mat[:, obs]
        z = posterior.sum()
        if z <= 0.0:
            continue
        belief = posterior / z
        key = belief_key(belief)
        belief_vecs.setdefault(key, belief)
        for s in np.flatnonzero(posterior):
            frontier[(s, key)] = frontier.get((s, key), 0.0) + posterior[s]
            rho_so[obs, s] += posterior[s]

    discount = 1.0
    steps = 0
    while frontier and discount >= cutoff:
        nxt = {}
        for (s, key), mass in frontier.items():
            rho[(key, s)] = rho.get((key, s), 0.0) + discount * mass
            if pomdp.absorbing[s]:
                tail = discount * gamma / (1.0 - gamma) * mass
                rho[(key, s)] += tail
                rho_so[:, s] += tail * o_mat[s]
                continue
            belief = belief_vecs[key]
            probs = policy.probs(s, belief)
            for a in np.flatnonzero(probs):
                for s2 in np.flatnonzero(t[s, a]):
                    for obs in np.flatnonzero(o_mat[s2]):
                        m2 = mass * probs[a] * t[s, a, s2] * o_mat[s2, obs]
                        b2 = belief_update(pomdp, belief, a, obs)
                        k2 = belief_key(b2)
                        belief_vecs.setdefault(k2, b2)
                        nxt[(s2, k2)] = nxt.get((s2, k2), 0.0) + m2
                        rho_so[obs, s2] += discount * gamma * m2
        frontier = nxt
        discount *= gamma
        steps += 1
        if len(belief_vecs) > max_points:
            raise RuntimeError(
                f"belief enumeration exceeded {max_points} points "
                f"({len(belief_vecs)} reached at step {steps})"
            )

    keys = list(belief_vecs.keys())
    beliefs = np.stack([belief_vecs[k] for k in keys])
    rho_sb = np.zeros((len(keys), n_s))
    for (key, s), mass in rho.items():
        rho_sb[keys.index(key), s] = mass
    rho_b = rho_sb.sum(axis=1)
    safe = np.where(rho_b > 0.0, rho_b, 1.0)
    rho_s_given_b = rho_sb / safe[:, None]
    return BeliefOccupancy(beliefs, rho_sb, rho_b, rho_s_given_b, rho_so, steps)


# ------------------------------------------------- distillation analysis

def implicit_product_policy(pomdp, state_table, behavior, cutoff=MASS_CUTOFF):
    """Belief-averaged projection of a state-conditioned policy.

    At every belief reachable under the behavior policy, averages the
    state-conditioned action distribution under the conditional state
    occupancy at that belief.
    """
    occ = belief_occupancy(pomdp, behavior, cutoff=cutoff)
    projected = BeliefPolicy(n_actions=state_table.shape[1])
    for idx in range(occ.beliefs.shape[0]):
        if occ.rho_b[idx] <= 0.0:
            continue
        row = occ.rho_s_given_b[idx] @ state_table
        projected.set(occ.beliefs[idx], row)
    return projected


@dataclass
class DistillResult:
    policy: BeliefPolicy
    tv_trace: list
    converged: bool
    iterations: int


def distill_fixed_point(pomdp, state_table, init=None, max_iters=100, tol=1e-10):
    """Iterate the belief-averaged projection to its fixed point.

    Each iterate is the exact minimizer of the distillation objective
    under the previous iterate's occupancy, so successive max-TV distances
    contract geometrically in the discount.
    """
    current = init if init is not None else BeliefPolicy(n_actions=state_table.shape[1])
    trace = []
    for k in range(max_iters):
        new = implicit_product_policy(pomdp, state_table, current)
        tv = belief_policy_tv(new, current)
        trace.append(tv)
        current = new
        if tv < tol:
            return DistillResult(current, trace, True, k + 1)
    return DistillResult(current, trace, False, max_iters)


def identifiability_check(pomdp, state_table, belief_policy, tol=1e-10):
    """Occupancy-weighted KL of the state policy from the belief policy.

    The weighting is the (state, belief) occupancy under the belief
    policy, normalized by (1-gamma) to a proper expectation.  A pair is
    identifiable exactly when the residual vanishes.
    """
    from agentmixer.policies import categorical_kl_probs

    occ = belief_occupancy(pomdp, belief_policy)
    residual = 0.0
    for idx in range(occ.beliefs.shape[0]):
        row = belief_policy.probs(None, occ.beliefs[idx])
        for s in np.flatnonzero(occ.rho_sb[idx]):
            kl = categorical_kl_probs(state_table[s], row)
            residual += occ.rho_sb[idx, s] * kl
    residual *= 1.0 - pomdp.gamma
    return residual <= tol, residual

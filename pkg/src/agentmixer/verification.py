"""Self-contained property suites behind the verify command.

Three suites, each returning a JSON-friendly report with measured
residuals: distillation (exact tabular fixed-point checks on the ice
lake), gumbel (temperature-zero sampling degenerates to the product of
individual categoricals), and gradients (central finite differences
against the tape, layer by layer).
"""
import numpy as np

from agentmixer import autodiff as ad
from agentmixer import policies as pol
from agentmixer import rngs
from agentmixer.autodiff import Tensor
from agentmixer.envs.ice_lake import ice_lake_tabular
from agentmixer.envs.tabular import greedy_policy_table
from agentmixer.equilibrium import (BeliefPolicy, belief_policy_tv,
                                    distill_fixed_point,
                                    identifiability_check,
                                    implicit_product_policy)
from agentmixer.gradcheck import check_gradients
from agentmixer.joint_policy import (JointPolicyState,
                                     joint_log_prob_entropy,
                                     noise_from_quantile,
                                     temperature_degeneration_test)
from agentmixer.mixer import MixerConfig, PolicyMixer
from agentmixer.nn import ParamStore, forward_linear, layer_norm

SUITES = ("distillation", "gumbel", "gradients")


# -------------------------------------------------------------- distillation

def run_distillation_suite():
    """Fixed-point, identifiability, and contraction-rate checks."""
    po = ice_lake_tabular(observable=False)
    fo = ice_lake_tabular(observable=True)
    teacher = greedy_policy_table(fo)

    result = distill_fixed_point(po, teacher)
    projected = implicit_product_policy(po, teacher, result.policy)
    fixed_residual = belief_policy_tv(projected, result.policy)

    # contraction: per-iteration log-slope of the max-TV trace; a drop to
    # exact zero (the exact filter makes the projection land in one step)
    # has slope -inf and is inside any geometric envelope, encoded as None
    slope_bound = float(np.log(po.gamma) + 0.05)
    max_slope = float("-inf")
    for prev, cur in zip(result.tv_trace, result.tv_trace[1:]):
        if prev <= 1e-12:
            continue
        slope = float("-inf") if cur <= 1e-12 else float(np.log(cur / prev))
        max_slope = max(max_slope, slope)
    slope_ok = max_slope <= slope_bound

    fo_result = distill_fixed_point(fo, teacher)
    identifiable, residual_kl = identifiability_check(fo, teacher,
                                                      fo_result.policy)

    checks = {
        "fixed_point_max_tv": {
            "value": float(fixed_residual), "tolerance": 1e-8,
            "passed": bool(fixed_residual <= 1e-8)},
        "fully_observable_residual_kl": {
            "value": float(residual_kl), "tolerance": 1e-10,
            "passed": bool(identifiable and residual_kl <= 1e-10)},
        "contraction_log_slope": {
            "value": None if np.isinf(max_slope) else max_slope,
            "bound": slope_bound, "passed": bool(slope_ok)},
    }
    return {
        "suite": "distillation",
        "converged": bool(result.converged and fo_result.converged),
        "iterations": int(result.iterations),
        "tv_trace": [float(tv) for tv in result.tv_trace],
        "checks": checks,
        "passed": bool(result.converged and fo_result.converged
                       and all(c["passed"] for c in checks.values())),
    }


# -------------------------------------------------------------------- gumbel

def run_gumbel_suite(seed=0, n_samples=100_000, n_configs=10):
    """TV between the temperature-zero joint sample law and the product."""
    rng = rngs.stream(seed, rngs.GUMBEL_TEST)
    sizes = (2, 3, 5)
    taus = (1.0, 0.1, 0.0)
    configs = []
    worst = 0.0
    for idx in range(n_configs):
        k = sizes[idx % len(sizes)]
        alphas = [rng.dirichlet(np.ones(k)) for _ in range(2)]
        trace = temperature_degeneration_test(alphas, n_samples, taus, rng)
        tv_zero = trace[-1][1]
        worst = max(worst, tv_zero)
        configs.append({
            "n_actions": k,
            "tv_by_tau": [{"tau": t, "tv": tv} for t, tv in trace],
            "tv_at_zero": tv_zero,
        })
    return {
        "suite": "gumbel",
        "n_samples": n_samples,
        "tolerance": 0.02,
        "worst_tv_at_zero": worst,
        "configs": configs,
        "passed": bool(worst <= 0.02),
    }


# ----------------------------------------------------------------- gradients

def _away_from_zero(x, margin=1e-2):
    # keeps central differences off the relu kink
    return np.where(np.abs(x) < margin, x + 2 * margin, x)


def _weighted_sum(out, weights):
    return (out * weights).sum()


def _linear_case(rng):
    b, d_in, d_out = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 4)
    x = Tensor(rng.normal(size=(b, d_in)), requires_grad=True)
    w = Tensor(rng.normal(size=(d_in, d_out)), requires_grad=True)
    bias = Tensor(rng.normal(size=d_out), requires_grad=True)
    f = rng.normal(size=(b, d_out))

    def fn(leaves):
        return _weighted_sum(forward_linear(leaves[0], leaves[1], leaves[2]), f)

    return fn, [x, w, bias]


def _layer_norm_case(rng):
    b, d = rng.integers(1, 4), rng.integers(2, 6)
    x = Tensor(rng.normal(size=(b, d)), requires_grad=True)
    gain = Tensor(rng.normal(size=d) * 0.5 + 1.0, requires_grad=True)
    shift = Tensor(rng.normal(size=d) * 0.3, requires_grad=True)
    f = rng.normal(size=(b, d))

    def fn(leaves):
        return _weighted_sum(layer_norm(leaves[0], leaves[1], leaves[2]), f)

    return fn, [x, gain, shift]


def _activation_case(op, keep_off_kink=False):
    def make(rng):
        b, d = rng.integers(1, 4), rng.integers(1, 6)
        data = rng.normal(size=(b, d))
        if keep_off_kink:
            data = _away_from_zero(data)
        x = Tensor(data, requires_grad=True)
        f = rng.normal(size=(b, d))

        def fn(leaves):
            return _weighted_sum(op(leaves[0]), f)

        return fn, [x]

    return make


def _softmax_case(rng):
    b, k = rng.integers(1, 4), rng.integers(2, 6)
    x = Tensor(rng.normal(size=(b, k)), requires_grad=True)
    f = rng.normal(size=(b, k))

    def fn(leaves):
        return _weighted_sum(ad.softmax(leaves[0]), f)

    return fn, [x]


def _gaussian_log_prob_case(rng):
    b, d = rng.integers(1, 4), rng.integers(1, 4)
    mu = Tensor(rng.normal(size=(b, d)), requires_grad=True)
    log_std = Tensor(rng.normal(size=d) * 0.3, requires_grad=True)
    actions = rng.normal(size=(b, d))

    def fn(leaves):
        return pol.gaussian_log_prob(leaves[0], leaves[1], actions).sum()

    return fn, [mu, log_std]


def _categorical_log_prob_case(rng):
    b, k = rng.integers(1, 4), rng.integers(2, 6)
    logits = Tensor(rng.normal(size=(b, k)), requires_grad=True)
    actions = rng.integers(0, k, size=b)

    def fn(leaves):
        return pol.categorical_log_prob(leaves[0], actions).sum()

    return fn, [logits]


def _mixer_block_case(rng):
    n_agents = int(rng.integers(2, 4))
    cfg = MixerConfig(n_agents=n_agents, state_dim=2, policy_param_dim=3,
                      head_dim=2, mode="discrete", channels=4,
                      agent_hidden=3, channel_hidden=5, n_blocks=1)
    store = ParamStore()
    pm = PolicyMixer(store, cfg, rng)
    batch = int(rng.integers(1, 3))
    rows = n_agents + 1
    grid = Tensor(rng.normal(size=(batch * rows, cfg.channels)),
                  requires_grad=True)
    block = pm.blocks[0]
    weights = [block[k] for k in sorted(block)]
    f = rng.normal(size=(batch * rows, cfg.channels))

    def fn(_):
        return _weighted_sum(pm.mixer_block(grid, block, batch), f)

    return fn, [grid, *weights]


def _gumbel_joint_log_prob_case(rng):
    n_agents = int(rng.integers(2, 4))
    b = int(rng.integers(1, 3))
    k = int(rng.choice([2, 3, 5]))
    tau = float(rng.uniform(0.5, 1.5))
    logits = [Tensor(rng.normal(size=(b, k)), requires_grad=True)
              for _ in range(n_agents)]
    # interior quantiles: clamp boundaries would zero one-sided differences
    quantiles = [Tensor(rng.uniform(0.05, 0.95, size=(b, k)),
                        requires_grad=True) for _ in range(n_agents)]
    actions = rng.integers(0, k, size=(b, n_agents))

    def fn(leaves):
        zs, las = [], []
        for i in range(n_agents):
            la = ad.log_softmax(leaves[i])
            eps = noise_from_quantile(leaves[n_agents + i])
            zs.append((eps + la) * (1.0 / tau))
            las.append(la)
        jps = JointPolicyState(mode="discrete", batch=b, n_agents=n_agents,
                               perturbed_logits=zs, log_alpha=las)
        log_prob, entropy, _ = joint_log_prob_entropy(jps, actions)
        return log_prob.sum() + 0.25 * entropy.sum()

    return fn, [*logits, *quantiles]


LAYER_CASES = {
    "linear": _linear_case,
    "layer_norm": _layer_norm_case,
    "relu": _activation_case(ad.relu, keep_off_kink=True),
    "gelu": _activation_case(ad.gelu),
    "sigmoid": _activation_case(ad.sigmoid),
    "softmax": _softmax_case,
    "gaussian_log_prob": _gaussian_log_prob_case,
    "categorical_log_prob": _categorical_log_prob_case,
    "mixer_block": _mixer_block_case,
    "gumbel_joint_log_prob": _gumbel_joint_log_prob_case,
}


def run_gradients_suite(seed=0, n_configs=100, tolerance=1e-4):
    """Finite-difference sweeps over every differentiable layer family."""
    layers = {}
    all_pass = True
    for index, (name, builder) in enumerate(LAYER_CASES.items()):
        rng = np.random.default_rng([seed, index])
        worst = 0.0
        for _ in range(n_configs):
            fn, leaves = builder(rng)
            result = check_gradients(fn, leaves)
            worst = max(worst, result.max_rel_error)
        passed = worst <= tolerance
        all_pass = all_pass and passed
        layers[name] = {"configs": n_configs, "max_rel_error": worst,
                        "passed": bool(passed)}
    return {
        "suite": "gradients",
        "tolerance": tolerance,
        "layers": layers,
        "passed": bool(all_pass),
    }


def run_suite(name, **kwargs):
    if name == "distillation":
        return run_distillation_suite()
    if name == "gumbel":
        return run_gumbel_suite(**kwargs)
    if name == "gradients":
        return run_gradients_suite(**kwargs)
    raise ValueError(f"unknown suite {name!r}; known: {', '.join(SUITES)}")

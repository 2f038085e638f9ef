"""Belief occupancies, the belief-averaged projection, and distillation."""
import numpy as np
import pytest

from agentmixer.envs.ice_lake import (
    ACT_FORWARD, ACT_RIGHT, N_STATES, ice_lake_tabular, state_index,
)
from agentmixer.envs.tabular import TabularPomdp, greedy_policy_table
from agentmixer.equilibrium import (
    BeliefPolicy, StatePolicy, belief_occupancy, belief_policy_tv,
    distill_fixed_point, identifiability_check, implicit_product_policy,
)


def chain_pomdp(n=3, gamma=0.95):
    """Fully observed deterministic cycle that never terminates."""
    t = np.zeros((n, 1, n))
    for s in range(n):
        t[s, 0, (s + 1) % n] = 1.0
    rho0 = np.zeros(n)
    rho0[0] = 1.0
    return TabularPomdp(t, np.zeros((n, 1)), np.eye(n), rho0, gamma,
                        np.zeros(n, dtype=bool))


def edge_route_policy():
    """Pit-blind route along the right edge; terminates in 4 steps."""
    table = np.zeros((N_STATES, 3))
    table[:, ACT_FORWARD] = 1.0
    for pit in range(2):
        for col in (2, 3):
            s = state_index(0, col, pit)
            table[s] = 0.0
            table[s, ACT_RIGHT] = 1.0
    return StatePolicy(table)


def test_fully_observed_chain_beliefs_are_point_masses():
    pomdp = chain_pomdp()
    occ = belief_occupancy(pomdp, BeliefPolicy(n_actions=1))
    row_maxes = occ.beliefs.max(axis=1)
    assert np.array_equal(row_maxes, np.ones(len(row_maxes)))
    mask = occ.rho_b > 0
    assert np.array_equal(occ.rho_s_given_b[mask].max(axis=1), np.ones(mask.sum()))


def test_chain_truncated_mass_is_geometric_partial_sum():
    pomdp = chain_pomdp()
    occ = belief_occupancy(pomdp, BeliefPolicy(n_actions=1))
    expect = (1.0 - pomdp.gamma ** occ.steps) / (1.0 - pomdp.gamma)
    assert abs(occ.rho_sb.sum() - expect) < 1e-9


def test_absorbing_model_mass_is_full_discounted_normalization():
    pomdp = ice_lake_tabular(observable=False)
    occ = belief_occupancy(pomdp, edge_route_policy())
    assert abs(occ.rho_sb.sum() - 1.0 / (1.0 - pomdp.gamma)) < 1e-9
    assert abs(occ.rho_b.sum() - 1.0 / (1.0 - pomdp.gamma)) < 1e-9


def test_initial_belief_splits_pit_layouts_evenly():
    pomdp = ice_lake_tabular(observable=False)
    occ = belief_occupancy(pomdp, BeliefPolicy(n_actions=3))
    b0 = np.zeros(N_STATES)
    b0[state_index(0, 2, 0)] = 0.5
    b0[state_index(0, 2, 1)] = 0.5
    idx = occ.belief_index(b0)
    assert np.allclose(occ.rho_s_given_b[idx], b0)


def test_surviving_the_risky_lane_collapses_the_belief():
    pomdp = ice_lake_tabular(observable=False)
    occ = belief_occupancy(pomdp, BeliefPolicy(n_actions=3))
    # standing on ice cell (1,1) is only possible when the pits sit right
    alive = np.zeros(N_STATES)
    alive[state_index(1, 1, 1)] = 1.0
    idx = occ.belief_index(alive)
    assert occ.rho_b[idx] > 0.0


def test_occupancy_rejects_belief_explosion():
    pomdp = ice_lake_tabular(observable=False)
    with pytest.raises(RuntimeError):
        belief_occupancy(pomdp, BeliefPolicy(n_actions=3), max_points=2)


def test_implicit_product_of_state_independent_policy():
    pomdp = ice_lake_tabular(observable=False)
    table = np.tile(np.array([0.2, 0.3, 0.5]), (N_STATES, 1))
    projected = implicit_product_policy(pomdp, table, BeliefPolicy(n_actions=3))
    for row in projected.table.values():
        assert np.allclose(row, [0.2, 0.3, 0.5], atol=1e-12)


def test_implicit_product_averages_the_two_safe_lanes():
    pomdp_po = ice_lake_tabular(observable=False)
    teacher = greedy_policy_table(ice_lake_tabular(observable=True))
    projected = implicit_product_policy(pomdp_po, teacher, BeliefPolicy(n_actions=3))
    b0 = np.zeros(N_STATES)
    b0[state_index(0, 2, 0)] = 0.5
    b0[state_index(0, 2, 1)] = 0.5
    row = projected.probs(None, b0)
    assert np.allclose(row, [0.5, 0.5, 0.0], atol=1e-12)


def test_projection_rows_are_distributions():
    pomdp = ice_lake_tabular(observable=False)
    rng = np.random.default_rng(0)
    table = rng.random((N_STATES, 3))
    table /= table.sum(axis=1, keepdims=True)
    projected = implicit_product_policy(pomdp, table, BeliefPolicy(n_actions=3))
    for row in projected.table.values():
        assert row.min() >= 0.0
        assert abs(row.sum() - 1.0) < 1e-12


def test_distillation_fixed_point_partially_observed():
    pomdp = ice_lake_tabular(observable=False)
    teacher = greedy_policy_table(ice_lake_tabular(observable=True))
    result = distill_fixed_point(pomdp, teacher)
    assert result.converged
    # self-consistency: projecting under the converged policy returns it
    again = implicit_product_policy(pomdp, teacher, result.policy)
    assert belief_policy_tv(again, result.policy) < 1e-9
    # and the pair is not identifiable: the teacher sees through the ice
    identifiable, residual = identifiability_check(pomdp, teacher, result.policy)
    assert not identifiable
    assert residual > 0.01


def test_distillation_fully_observed_is_identifiable():
    pomdp = ice_lake_tabular(observable=True)
    teacher = greedy_policy_table(pomdp)
    result = distill_fixed_point(pomdp, teacher)
    assert result.converged and result.iterations <= 3
    identifiable, residual = identifiability_check(pomdp, teacher, result.policy)
    assert identifiable
    assert residual <= 1e-10


def test_distillation_state_independent_teacher_is_exact():
    pomdp = ice_lake_tabular(observable=False)
    table = np.tile(np.array([0.25, 0.25, 0.5]), (N_STATES, 1))
    result = distill_fixed_point(pomdp, table)
    assert result.converged and result.iterations <= 2
    for row in result.policy.table.values():
        assert np.allclose(row, [0.25, 0.25, 0.5], atol=1e-12)
    identifiable, residual = identifiability_check(pomdp, table, result.policy)
    assert identifiable and residual <= 1e-12


def test_distillation_trace_contracts():
    pomdp = ice_lake_tabular(observable=False)
    teacher = greedy_policy_table(ice_lake_tabular(observable=True))
    trace = distill_fixed_point(pomdp, teacher).tv_trace
    positive = [tv for tv in trace if tv > 1e-12]
    assert all(b < a for a, b in zip(positive, positive[1:]))

"""Environment mechanics against hand-computed outcomes."""
import numpy as np
import pytest

from agentmixer.envs import make_env
from agentmixer.envs.bridge import PASSAGES, BridgeCrossing
from agentmixer.envs.climbing import CLIMBING_PAYOFF, MatrixGame, load_payoff
from agentmixer.envs.ice_lake import (
    ACT_FORWARD, ACT_LEFT, ACT_RIGHT, N_STATES, ice_lake_tabular, state_index,
)
from agentmixer.envs.predator_prey import PredatorPrey
from agentmixer.envs.spread import ContinuousSpread, spread_reward
from agentmixer.envs.tabular import TabularEnv, policy_value, value_iteration


# ---------------------------------------------------------------- climbing

def test_climbing_payoff_entries():
    env = MatrixGame()
    rng = np.random.default_rng(0)
    env.reset(rng)
    assert env.step([0, 0], rng).reward == 11.0
    assert env.step([1, 0], rng).reward == -30.0
    assert env.step([2, 1], rng).reward == 6.0
    assert max(env.step([i, j], rng).reward for i in range(3) for j in range(3)) == 11.0


def test_climbing_one_step_episode():
    env = MatrixGame()
    rng = np.random.default_rng(0)
    obs = env.reset(rng)
    assert len(obs) == 2 and obs[0].shape == (1,)
    assert env.step([2, 2], rng).done


def test_climbing_rejects_non_square():
    with pytest.raises(ValueError):
        MatrixGame(np.zeros((2, 3)))


def test_climbing_payoff_file_roundtrip(tmp_path):
    path = tmp_path / "payoff.txt"
    path.write_text("11 -30 0\n-30 7 0\n0 6 5\n")
    assert np.array_equal(load_payoff(path), CLIMBING_PAYOFF)


# ------------------------------------------------------------ predator-prey

def fixed_pp(**kw):
    env = PredatorPrey(**kw)
    env.reset(np.random.default_rng(0))
    return env


def test_pp_joint_capture_pays():
    env = fixed_pp()
    env._predators = np.array([[2, 1], [2, 3]])
    env._prey = np.array([[2, 2]])
    res = env.step([5, 5], np.random.default_rng(1))
    assert res.reward == 10.0
    # prey respawned somewhere free
    assert tuple(env._prey[0]) not in {(2, 1), (2, 3)}


def test_pp_lone_adjacent_capture_penalized():
    env = fixed_pp()
    env._predators = np.array([[2, 1], [0, 0]])
    env._prey = np.array([[2, 2]])
    assert env.step([5, 4], np.random.default_rng(1)).reward == -1.0


def test_pp_distant_capture_is_noop():
    env = fixed_pp()
    env._predators = np.array([[0, 0], [0, 1]])
    env._prey = np.array([[4, 4]])
    assert env.step([5, 5], np.random.default_rng(1)).reward == 0.0


def test_pp_no_capture_no_reward():
    env = fixed_pp()
    env._predators = np.array([[0, 0], [4, 0]])
    env._prey = np.array([[2, 4]])
    assert env.step([4, 4], np.random.default_rng(1)).reward == 0.0


def test_pp_penalty_zero_variant():
    env = fixed_pp(single_capture_penalty=0.0)
    env._predators = np.array([[2, 1], [0, 0]])
    env._prey = np.array([[2, 2]])
    assert env.step([5, 4], np.random.default_rng(1)).reward == 0.0


def test_pp_prey_retreats_to_distance_maximizer():
    env = fixed_pp()
    env._predators = np.array([[1, 2], [4, 4]])
    env._prey = np.array([[2, 2]])
    env.step([4, 4], np.random.default_rng(2))
    # all maximizers sit at min-distance 2 from the nearest predator
    d = min(abs(env._prey[0] - p).sum() for p in env._predators)
    assert d == 2
    assert tuple(env._prey[0]) in {(2, 1), (2, 3), (3, 2)}


def test_pp_observation_visibility_window():
    env = fixed_pp()
    env._predators = np.array([[0, 0], [2, 4]])
    env._prey = np.array([[4, 4]])
    obs = env._observations()
    assert np.array_equal(obs[0][2:], [0.0, 0.0, 0.0])  # Chebyshev 4, hidden
    assert obs[1][4] == 1.0  # Chebyshev 2, visible
    assert np.allclose(obs[1][2:4], [(4 - 2) / 4, (4 - 4) / 4])


def test_pp_rejects_bad_sizes():
    with pytest.raises(ValueError):
        PredatorPrey(grid_size=2)
    with pytest.raises(ValueError):
        PredatorPrey(n_predators=1)


# ----------------------------------------------------------------- bridge

RUSH_0 = [3] * 6                                     # straight through row 1
DETOUR_1 = [1, 1, 2, 2, 2, 2, 2, 2, 0, 0]            # around through row 3
RUSH_1 = [2] * 6


def play_bridge(sizes, plans, max_steps=30):
    env = BridgeCrossing()
    rng = np.random.default_rng(0)
    env.reset(rng)
    env._size = list(sizes)
    total, steps = 0.0, 0
    for t in range(max_steps):
        acts = [plan[t] if t < len(plan) else 4 for plan in plans]
        res = env.step(acts, rng)
        total += res.reward
        steps += 1
        if res.done:
            break
    return env, total, steps


def test_bridge_disjoint_passages_optimal_return():
    env, total, steps = play_bridge([2, 2], [RUSH_0, DETOUR_1])
    assert steps == 10
    assert abs(total - (20.0 - 0.05 * 10)) < 1e-12
    assert all(env._arrived)


def test_bridge_two_smalls_share_a_passage():
    env, total, steps = play_bridge([1, 1], [RUSH_0, RUSH_1])
    assert steps == 6
    assert abs(total - (20.0 - 0.05 * 6)) < 1e-12


def test_bridge_big_pair_collides_in_passage():
    env = BridgeCrossing()
    rng = np.random.default_rng(0)
    env.reset(rng)
    env._size = [2, 1]
    for t in range(2):
        env.step([3, 2], rng)
    res = env.step([3, 2], rng)  # both enter (3,1) together, 2+1 > 2
    assert abs(res.reward - (-5.0 - 0.05)) < 1e-12
    assert env._pos == [[2, 1], [4, 1]]  # both moves reverted


def test_bridge_swap_through_passage_blocked_for_bigs():
    env = BridgeCrossing()
    rng = np.random.default_rng(0)
    env.reset(rng)
    env._size = [2, 2]
    env._pos = [[3, 1], [4, 1]]
    res = env.step([3, 2], rng)
    assert abs(res.reward - (-5.0 - 0.05)) < 1e-12
    assert env._pos == [[3, 1], [4, 1]]


def test_bridge_walls_block_movement():
    env = BridgeCrossing()
    rng = np.random.default_rng(0)
    env.reset(rng)
    env._pos = [[2, 2], [6, 1]]
    env.step([3, 4], rng)  # (3,2) is wall
    assert env._pos[0] == [2, 2]


def test_bridge_observation_masks_other_physique():
    env = BridgeCrossing()
    rng = np.random.default_rng(0)
    env.reset(rng)
    env._size = [1, 1]
    base = env._observations()
    env._size = [1, 2]  # flip the hidden component for agent 0
    flipped = env._observations()
    assert np.array_equal(base[0], flipped[0])
    assert not np.array_equal(base[1], flipped[1])  # own physique is visible
    assert env.get_state()[5] != 0.0  # but the centralized state has it


def test_bridge_horizon_terminates():
    env = BridgeCrossing()
    rng = np.random.default_rng(0)
    env.reset(rng)
    for t in range(30):
        res = env.step([4, 4], rng)
    assert res.done and not any(env._arrived)


# ----------------------------------------------------------------- spread

def test_spread_on_landmarks_scores_zero():
    env = ContinuousSpread()
    env.reset(np.random.default_rng(0))
    env._pos = env.landmarks.copy()
    res = env.step(np.zeros((2, 2)), np.random.default_rng(0))
    assert abs(res.reward) < 1e-12


def test_spread_contact_penalty():
    env = ContinuousSpread()
    env.reset(np.random.default_rng(0))
    env._pos = np.array([[0.0, 0.0], [0.05, 0.0]])
    res = env.step(np.zeros((2, 2)), np.random.default_rng(0))
    assert res.reward < -1.0


def test_spread_reward_matches_direct_recomputation():
    from scipy.spatial.distance import cdist
    rng = np.random.default_rng(3)
    for _ in range(20):
        pos = rng.uniform(-1, 1, size=(3, 2))
        env = ContinuousSpread(n_agents=3)
        d = cdist(env.landmarks, pos)
        expect = -d.min(axis=1).sum()
        pair = cdist(pos, pos)
        expect -= np.sum(pair[np.triu_indices(3, k=1)] < 0.1)
        assert abs(spread_reward(pos, env.landmarks) - expect) < 1e-12


def test_spread_clips_velocity_and_arena():
    env = ContinuousSpread()
    env.reset(np.random.default_rng(0))
    env._pos = np.array([[0.98, 0.0], [-0.5, -0.5]])
    env.step(np.array([[5.0, 0.0], [-5.0, 0.0]]), np.random.default_rng(0))
    assert env._pos[0][0] == 1.0   # 0.98 + 0.1 clipped to arena
    assert env._pos[1][0] == -0.6  # velocity clipped to 0.1


# --------------------------------------------------------------- ice lake

def test_ice_lake_model_is_valid():
    for observable in (False, True):
        ice_lake_tabular(observable=observable).validate()


def test_ice_lake_fully_observed_optimum_frozen():
    pomdp = ice_lake_tabular(observable=True)
    v, _, greedy = value_iteration(pomdp)
    start_value = float(pomdp.rho0 @ v)
    assert abs(start_value - 9.025) < 1e-9  # 10 * 0.95^2
    # the optimal lane depends on the hidden pit layout
    assert greedy[state_index(0, 2, 0)] == ACT_RIGHT
    assert greedy[state_index(0, 2, 1)] == ACT_LEFT


def test_ice_lake_edge_detour_value_frozen():
    pomdp = ice_lake_tabular(observable=False)
    table = np.zeros((N_STATES, 3))
    table[:, ACT_FORWARD] = 1.0
    for pit in range(2):
        for col in (2, 3):
            row_state = state_index(0, col, pit)
            table[row_state] = 0.0
            table[row_state, ACT_RIGHT] = 1.0
    value, _ = policy_value(pomdp, table)
    assert abs(value - 8.57375) < 1e-9  # 10 * 0.95^3, pit-blind safe route


def test_ice_lake_pit_layout_hidden_from_partial_obs():
    pomdp = ice_lake_tabular(observable=False)
    for row in range(2):
        for col in range(5):
            a = pomdp.observation[state_index(row, col, 0)]
            b = pomdp.observation[state_index(row, col, 1)]
            assert np.array_equal(a, b)


def test_tabular_env_episode():
    env = TabularEnv(ice_lake_tabular(observable=False))
    rng = np.random.default_rng(4)
    obs = env.reset(rng)
    assert obs[0].shape == (11,) and obs[0].sum() == 1.0
    res = env.step([ACT_FORWARD], rng)  # straight into the center pit
    assert res.reward == -10.0 and res.done


# ------------------------------------------------------------- registry

def test_make_env_registry():
    assert make_env("climbing").n_actions == (3, 3)
    assert make_env("predator_prey", grid_size=6).grid_size == 6
    assert make_env("bridge_crossing").horizon == 30
    assert make_env("continuous_spread").discrete is False
    assert make_env("ice_lake", observable=True).state_dim == 21
    with pytest.raises(ValueError):
        make_env("mujoco")


def test_make_env_climbing_payoff_file(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("1 0\n0 1\n")
    env = make_env("climbing", payoff_file=str(path))
    assert env.n_actions == (2, 2)


# ----------------------------------------------------------- determinism

def roll(env, seed, steps=40):
    rng = np.random.default_rng(seed)
    act_rng = np.random.default_rng(seed + 1)
    trace = [env.reset(rng)]
    for _ in range(steps):
        if env.discrete:
            acts = [int(act_rng.integers(k)) for k in env.n_actions]
        else:
            acts = act_rng.uniform(-0.1, 0.1, size=(env.n_agents, env.action_dim))
        res = env.step(acts, rng)
        trace.append((res.observations, res.reward, res.done, env.get_state()))
        if res.done:
            trace.append(env.reset(rng))
    return trace


@pytest.mark.parametrize("name,params", [
    ("climbing", {}),
    ("predator_prey", {}),
    ("bridge_crossing", {}),
    ("continuous_spread", {}),
    ("ice_lake", {}),
])
def test_identical_seeds_reproduce_trajectories(name, params):
    a = roll(make_env(name, **params), seed=7)
    b = roll(make_env(name, **params), seed=7)
    assert len(a) == len(b)
    for x, y in zip(a, b):
        if isinstance(x, tuple):
            assert np.array_equal(x[3], y[3]) and x[1] == y[1] and x[2] == y[2]
            for ox, oy in zip(x[0], y[0]):
                assert np.array_equal(ox, oy)

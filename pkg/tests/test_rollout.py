"""Collection, GAE, and evaluation-path tests.

The GAE checks pit the batched recursion against direct per-element
summations written independently here.
"""
import numpy as np
import pytest

from agentmixer import rngs
from agentmixer.envs import make_env
from agentmixer.envs.climbing import CLIMBING_PAYOFF
from agentmixer.envs.ice_lake import ACT_FORWARD, ACT_RIGHT, ice_lake_tabular
from agentmixer.envs.tabular import TabularEnv
from agentmixer.mixer import MixerConfig, PolicyMixer
from agentmixer.nn import ParamStore
from agentmixer.policies import CategoricalHead
from agentmixer.rollout import (EvalStats, collect_rollouts, compute_gae,
                                evaluate, evaluate_centralized,
                                normalize_advantages)


class UniformSampler:
    """Joint uniform-random sampler over given per-agent action counts."""

    def __init__(self, n_actions):
        self.n_actions = n_actions
        self._b = 1

    def episode_start(self, thread, rng):
        pass

    def teacher_flags(self):
        return np.zeros(self._b, dtype=bool)

    def act(self, states, feats, rng_list):
        b = states.shape[0]
        self._b = b
        n = len(self.n_actions)
        actions = np.zeros((b, n), dtype=np.intp)
        per_lp = np.zeros((b, n))
        for t in range(b):
            for i, k in enumerate(self.n_actions):
                actions[t, i] = rng_list[t].integers(k)
                per_lp[t, i] = -np.log(k)
        return actions, per_lp.sum(axis=1), per_lp


class UniformBoxSampler:
    """Continuous analogue drawing uniform actions in [low, high]."""

    def __init__(self, n_agents, action_dim, low, high):
        self.n_agents = n_agents
        self.action_dim = action_dim
        self.low, self.high = low, high
        self._b = 1

    def episode_start(self, thread, rng):
        pass

    def teacher_flags(self):
        return np.zeros(self._b, dtype=bool)

    def act(self, states, feats, rng_list):
        b = states.shape[0]
        self._b = b
        actions = np.zeros((b, self.n_agents, self.action_dim))
        for t in range(b):
            actions[t] = rng_list[t].uniform(self.low, self.high,
                                             (self.n_agents, self.action_dim))
        lp = np.full((b, self.n_agents),
                     -self.action_dim * np.log(self.high - self.low))
        return actions, lp.sum(axis=1), lp


class ScriptedSampler:
    """Replays a fixed per-episode action plan; restarts it on reset."""

    def __init__(self, plan):
        self.plan = plan
        self.cursor = {}
        self._b = 1

    def episode_start(self, thread, rng):
        self.cursor[thread] = 0

    def teacher_flags(self):
        return np.zeros(self._b, dtype=bool)

    def act(self, states, feats, rng_list):
        b = states.shape[0]
        self._b = b
        actions = np.zeros((b, 1), dtype=np.intp)
        for t in range(b):
            actions[t, 0] = self.plan[self.cursor[t] % len(self.plan)]
            self.cursor[t] += 1
        lp = np.zeros((b, 1))
        return actions, lp.sum(axis=1), lp


def zero_values(states):
    return np.zeros(states.shape[0])


def gae_oracle(rewards, values, last_values, dones, gamma, lam):
    n_steps, n_threads = rewards.shape
    adv = np.zeros((n_steps, n_threads))
    for b in range(n_threads):
        for t in range(n_steps):
            total, discount = 0.0, 1.0
            for step in range(t, n_steps):
                if step == n_steps - 1:
                    next_v = last_values[b]
                else:
                    next_v = values[step + 1, b]
                live = 1.0 - dones[step, b]
                delta = rewards[step, b] + gamma * next_v * live - values[step, b]
                total += discount * delta
                if dones[step, b]:
                    break
                discount *= gamma * lam
            adv[t, b] = total
    return adv


def random_batch(seed, n_steps=10, n_threads=4, p_done=0.25):
    rng = np.random.default_rng(seed)
    rewards = rng.normal(size=(n_steps, n_threads))
    values = rng.normal(size=(n_steps, n_threads))
    last_values = rng.normal(size=n_threads)
    dones = (rng.random((n_steps, n_threads)) < p_done).astype(float)
    return rewards, values, last_values, dones


class TestGae:
    def test_lambda_zero_is_one_step_td(self):
        rewards, values, last_values, dones = random_batch(0)
        adv, _ = compute_gae(rewards, values, last_values, dones, 0.97, 0.0)
        next_values = np.vstack([values[1:], last_values[None, :]])
        td = rewards + 0.97 * next_values * (1.0 - dones) - values
        assert np.allclose(adv, td, atol=1e-12)

    def test_lambda_one_zero_values_gives_discounted_return(self):
        rewards, _, _, dones = random_batch(1)
        values = np.zeros_like(rewards)
        last_values = np.zeros(rewards.shape[1])
        adv, rets = compute_gae(rewards, values, last_values, dones, 0.9, 1.0)
        n_steps, n_threads = rewards.shape
        for b in range(n_threads):
            for t in range(n_steps):
                total, disc = 0.0, 1.0
                for step in range(t, n_steps):
                    total += disc * rewards[step, b]
                    if dones[step, b]:
                        break
                    disc *= 0.9
                assert abs(adv[t, b] - total) < 1e-12
        assert np.allclose(rets, adv)

    @pytest.mark.parametrize("seed", [2, 3, 4])
    def test_matches_direct_double_loop(self, seed):
        rewards, values, last_values, dones = random_batch(seed)
        adv, rets = compute_gae(rewards, values, last_values, dones, 0.99, 0.95)
        want = gae_oracle(rewards, values, last_values, dones, 0.99, 0.95)
        assert np.allclose(adv, want, atol=1e-12)
        assert np.allclose(rets, adv + values, atol=1e-12)

    def test_normalize_advantages(self):
        adv = np.random.default_rng(5).normal(3.0, 2.0, size=(7, 3))
        flat = normalize_advantages(adv)
        assert abs(flat.mean()) < 1e-10
        assert abs(flat.std() - 1.0) < 1e-6


class TestCollect:
    def test_single_thread_single_step_shapes(self):
        batch = collect_rollouts(lambda: make_env("climbing"),
                                 UniformSampler((3, 3)), zero_values,
                                 n_threads=1, n_steps=1, seed=0)
        assert batch.states.shape == (1, 1, 1)
        assert batch.actions.shape == (1, 1, 2)
        assert batch.rewards.shape == (1, 1)
        assert batch.dones[0, 0] == 1.0
        assert batch.n_transitions == 1
        assert len(batch.episode_returns) == 1

    def test_continuous_action_shapes(self):
        batch = collect_rollouts(lambda: make_env("continuous_spread"),
                                 UniformBoxSampler(2, 2, -0.1, 0.1),
                                 zero_values, n_threads=2, n_steps=3, seed=0)
        assert batch.actions.shape == (3, 2, 2, 2)
        assert batch.actions.dtype == np.float64
        assert np.all(np.abs(batch.actions) <= 0.1)

    def test_deterministic_given_seed(self):
        def run():
            return collect_rollouts(lambda: make_env("bridge_crossing"),
                                    UniformSampler((5, 5)), zero_values,
                                    n_threads=3, n_steps=40, seed=11)
        a, b = run(), run()
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.dones, b.dones)
        assert a.episode_returns == b.episode_returns

    def test_thread_data_independent_of_thread_count(self):
        def run(n_threads):
            return collect_rollouts(lambda: make_env("bridge_crossing"),
                                    UniformSampler((5, 5)), zero_values,
                                    n_threads=n_threads, n_steps=25, seed=7)
        small, big = run(2), run(4)
        assert np.array_equal(small.states, big.states[:, :2])
        assert np.array_equal(small.actions, big.actions[:, :2])
        assert np.array_equal(small.rewards, big.rewards[:, :2])

    def test_uniform_play_matches_payoff_table_mean(self):
        batch = collect_rollouts(lambda: make_env("climbing"),
                                 UniformSampler((3, 3)), zero_values,
                                 n_threads=10, n_steps=300, seed=3)
        n = batch.n_transitions
        want = CLIMBING_PAYOFF.mean()
        bound = 3.0 * CLIMBING_PAYOFF.std() / np.sqrt(n)
        assert abs(batch.rewards.mean() - want) < bound

    def test_scripted_plan_restarts_each_episode(self):
        plan = [ACT_RIGHT, ACT_FORWARD, ACT_FORWARD]
        batch = collect_rollouts(
            lambda: TabularEnv(ice_lake_tabular(observable=True)),
            ScriptedSampler(plan), zero_values,
            n_threads=1, n_steps=30, seed=2)
        assert len(batch.episode_returns) >= 3
        assert set(batch.episode_returns) <= {10.0, -10.0}
        assert batch.dones.sum() == len(batch.episode_returns)

    def test_log_prob_columns_sum(self):
        batch = collect_rollouts(lambda: make_env("climbing"),
                                 UniformSampler((3, 3)), zero_values,
                                 n_threads=2, n_steps=5, seed=0)
        assert np.allclose(batch.log_probs,
                           batch.per_agent_log_probs.sum(axis=2))

    def test_step_error_names_thread(self):
        class Broken:
            n_agents = 1

            def __init__(self):
                self.env = make_env("climbing")
                for attr in ("n_agents", "obs_dims", "state_dim", "discrete",
                             "n_actions"):
                    setattr(self, attr, getattr(self.env, attr))

            def reset(self, rng):
                return self.env.reset(rng)

            def get_state(self):
                return self.env.get_state()

            def step(self, actions, rng):
                raise ValueError("boom")

        with pytest.raises(RuntimeError, match="thread 0"):
            collect_rollouts(Broken, UniformSampler((3, 3)), zero_values,
                             n_threads=1, n_steps=1, seed=0)


def make_bridge_heads(seed=0):
    store = ParamStore()
    rng = rngs.stream(seed, rngs.POLICY_INIT)
    heads = [CategoricalHead(store, f"actor/{i}", 5, 5, (16,), rng)
             for i in range(2)]
    return store, heads


class TestEvaluate:
    def test_decentralized_never_reads_state(self):
        _, heads = make_bridge_heads()
        captured = []

        def factory():
            env = make_env("bridge_crossing")
            captured.append(env)
            return env

        mixer_store = ParamStore()
        pm = PolicyMixer(mixer_store,
                         MixerConfig(n_agents=2, state_dim=6,
                                     policy_param_dim=5, head_dim=5,
                                     mode="discrete", channels=8),
                         rngs.stream(0, rngs.POLICY_INIT, 1))
        stats = evaluate(heads, factory, n_episodes=4, seed=5)
        assert isinstance(stats, EvalStats)
        assert len(stats.returns) == 4
        assert all(env.state_reads == 0 for env in captured)
        assert pm.forward_count == 0

    def test_deterministic_eval_repeatable(self):
        _, heads = make_bridge_heads()
        run = lambda: evaluate(heads, lambda: make_env("bridge_crossing"),
                               n_episodes=3, seed=9)
        assert run().returns == run().returns

    def test_stochastic_eval_repeatable(self):
        _, heads = make_bridge_heads()
        run = lambda: evaluate(heads, lambda: make_env("bridge_crossing"),
                               n_episodes=3, seed=9, deterministic=False)
        assert run().returns == run().returns

    def test_success_rate_defined_only_when_env_reports_it(self):
        _, heads = make_bridge_heads()
        stats = evaluate(heads, lambda: make_env("bridge_crossing"),
                         n_episodes=2, seed=1)
        assert 0.0 <= stats.success_rate <= 1.0
        store = ParamStore()
        rng = rngs.stream(0, rngs.POLICY_INIT)
        pair = [CategoricalHead(store, f"actor/{i}", 1, 3, (8,), rng)
                for i in range(2)]
        stats = evaluate(pair, lambda: make_env("climbing"),
                         n_episodes=2, seed=1)
        assert np.isnan(stats.success_rate)

    def test_centralized_eval_reads_state(self):
        captured = []

        def factory():
            env = make_env("climbing")
            captured.append(env)
            return env

        def actor_fn(state, feats):
            return np.array([[2, 2]], dtype=np.intp)

        stats = evaluate_centralized(actor_fn, factory, n_episodes=3, seed=0)
        assert stats.returns == [5.0, 5.0, 5.0]
        assert all(env.state_reads >= 1 for env in captured)

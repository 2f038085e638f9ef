"""On-policy trajectory collection, advantage estimation, and evaluation.

Collection is centralized: it reads the environment state for the critic
and samples from whatever joint sampler it is given, with one RNG stream
per rollout thread so thread count never changes a thread's data.
Evaluation is decentralized by construction: it touches only per-agent
heads and observation histories, which is checkable through the
environment's state-read counter and the mixer's forward counter.
"""
from dataclasses import dataclass, field

import numpy as np

from agentmixer import rngs
from agentmixer.policies import HistoryWindow, act_decentralized


@dataclass
class TrajectoryBatch:
    states: np.ndarray        # [T, B, state_dim]
    features: list            # per agent: [T, B, feature_dim]
    actions: np.ndarray       # [T, B, N] int, or [T, B, N, action_dim] float
    log_probs: np.ndarray     # [T, B] joint behavior log-probs
    per_agent_log_probs: np.ndarray  # [T, B, N]
    rewards: np.ndarray       # [T, B]
    dones: np.ndarray         # [T, B]
    values: np.ndarray        # [T, B] critic values recorded at collection
    last_values: np.ndarray   # [B]
    teacher_mask: np.ndarray  # [T, B] episodes driven by a centralized teacher
    noise: np.ndarray = None  # [T, B, noise_dim] shared coordination signal
    episode_returns: list = field(default_factory=list)

    @property
    def n_transitions(self):
        return self.rewards.size

    def mean_episode_return(self):
        if not self.episode_returns:
            return float("nan")
        return float(np.mean(self.episode_returns))


def _make_histories(env, window, include_last_action):
    out = []
    for i in range(env.n_agents):
        n_act = env.n_actions[i] if env.discrete else 0
        out.append(HistoryWindow(i, env.obs_dims[i], window,
                                 include_last_action and env.discrete, n_act))
    return out


class RolloutWorkers:
    """Persistent bank of environment copies with per-thread RNG streams.

    Episodes run across collect() calls, so consecutive batches continue
    exactly where the previous ones stopped; thread t only ever consumes
    streams ("env", t) and ("sampling", t) of the run seed.
    """

    def __init__(self, env_fn, n_threads, seed, window=1,
                 include_last_action=False):
        self.envs = [env_fn() for _ in range(n_threads)]
        self.n_threads = n_threads
        self.env_rngs = [rngs.stream(seed, rngs.ENV, t) for t in range(n_threads)]
        self.samp_rngs = [rngs.stream(seed, rngs.SAMPLING, t) for t in range(n_threads)]
        self.n_agents = self.envs[0].n_agents
        self.histories = [_make_histories(env, window, include_last_action)
                          for env in self.envs]
        self.running = np.zeros(n_threads)
        self._fresh = True

    def _reset_thread(self, t, sampler):
        obs = self.envs[t].reset(self.env_rngs[t])
        for i in range(self.n_agents):
            self.histories[t][i].reset()
            self.histories[t][i].push(obs[i])
        sampler.episode_start(t, self.samp_rngs[t])

    def collect(self, sampler, value_fn, n_steps):
        """Roll every thread n_steps under the sampler's current snapshot.

        Partial episodes at batch edges carry over; only completed episodes
        contribute to episode_returns.
        """
        if self._fresh:
            for t in range(self.n_threads):
                self._reset_thread(t, sampler)
            self._fresh = False

        envs, n_agents = self.envs, self.n_agents
        states = np.zeros((n_steps, self.n_threads, envs[0].state_dim))
        feats = [np.zeros((n_steps, self.n_threads, self.histories[0][i].feature_dim))
                 for i in range(n_agents)]
        if envs[0].discrete:
            actions = np.zeros((n_steps, self.n_threads, n_agents), dtype=np.intp)
        else:
            actions = np.zeros((n_steps, self.n_threads, n_agents, envs[0].action_dim))
        log_probs = np.zeros((n_steps, self.n_threads))
        per_lp = np.zeros((n_steps, self.n_threads, n_agents))
        rewards = np.zeros((n_steps, self.n_threads))
        dones = np.zeros((n_steps, self.n_threads))
        values = np.zeros((n_steps, self.n_threads))
        teacher_mask = np.zeros((n_steps, self.n_threads), dtype=bool)
        noise_dim = getattr(sampler, "noise_dim", 0)
        noise = np.zeros((n_steps, self.n_threads, noise_dim))
        episode_returns = []

        for step in range(n_steps):
            for t in range(self.n_threads):
                states[step, t] = envs[t].get_state()
                for i in range(n_agents):
                    feats[i][step, t] = self.histories[t][i].features()
                if noise_dim:
                    # drawn from the thread's own sampling stream, before the
                    # action draw, so thread data stays thread-local
                    noise[step, t] = self.samp_rngs[t].standard_normal(noise_dim)
            feat_rows = [feats[i][step] for i in range(n_agents)]
            if noise_dim:
                act, lp, plp = sampler.act(states[step], feat_rows,
                                           self.samp_rngs, noise[step])
            else:
                act, lp, plp = sampler.act(states[step], feat_rows, self.samp_rngs)
            actions[step] = act
            log_probs[step] = lp
            per_lp[step] = plp
            values[step] = value_fn(states[step])
            teacher_mask[step] = sampler.teacher_flags()

            for t in range(self.n_threads):
                if envs[t].discrete:
                    joint_action = [int(act[t, i]) for i in range(n_agents)]
                else:
                    joint_action = [act[t, i] for i in range(n_agents)]
                try:
                    res = envs[t].step(joint_action, self.env_rngs[t])
                except Exception as exc:
                    raise RuntimeError(f"environment step failed in thread {t}") from exc
                rewards[step, t] = res.reward
                dones[step, t] = float(res.done)
                self.running[t] += res.reward
                if res.done:
                    episode_returns.append(self.running[t])
                    self.running[t] = 0.0
                    self._reset_thread(t, sampler)
                else:
                    for i in range(n_agents):
                        act_i = int(act[t, i]) if envs[t].discrete else None
                        self.histories[t][i].push(res.observations[i], act_i)

        final_states = np.stack([envs[t].get_state() for t in range(self.n_threads)])
        last_values = value_fn(final_states)
        return TrajectoryBatch(states, feats, actions, log_probs, per_lp,
                               rewards, dones, values, last_values,
                               teacher_mask, noise, episode_returns)


def collect_rollouts(env_fn, sampler, value_fn, n_threads, n_steps, seed,
                     window=1, include_last_action=False):
    """One-shot collection from fresh workers (see RolloutWorkers)."""
    workers = RolloutWorkers(env_fn, n_threads, seed, window,
                             include_last_action)
    return workers.collect(sampler, value_fn, n_steps)


def compute_gae(rewards, values, last_values, dones, gamma, lam):
    """Exponentially weighted advantage estimates and value targets.

    dones mask the bootstrap: a terminal step bootstraps zero, the batch
    edge bootstraps from last_values.
    """
    n_steps, _ = rewards.shape
    advantages = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1])
    next_values = last_values
    for t in reversed(range(n_steps)):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * live - values[t]
        carry = delta + gamma * lam * live * carry
        advantages[t] = carry
        next_values = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages):
    flat = advantages.ravel()
    return (flat - flat.mean()) / (flat.std() + 1e-8)


@dataclass
class EvalStats:
    mean_return: float
    std_return: float
    returns: list
    success_rate: float


def _aggregate(returns, successes):
    rate = float(np.mean(successes)) if successes else float("nan")
    return EvalStats(float(np.mean(returns)), float(np.std(returns)),
                     returns, rate)


def evaluate(heads, env_fn, n_episodes, seed, deterministic=True,
             window=1, include_last_action=False):
    """Decentralized evaluation: per-agent heads on local histories only."""
    returns, successes = [], []
    for ep in range(n_episodes):
        env = env_fn()
        env_rng = rngs.stream(seed, rngs.EVAL, ep)
        act_rng = None if deterministic else rngs.stream(seed, "eval-actions", ep)
        hw = _make_histories(env, window, include_last_action)
        obs = env.reset(env_rng)
        for i, h in enumerate(hw):
            h.reset()
            h.push(obs[i])
        total, done = 0.0, False
        while not done:
            joint = []
            for i, head in enumerate(heads):
                feat = hw[i].features().reshape(1, -1)
                a, _ = act_decentralized(head, feat, act_rng, deterministic)
                joint.append(a)
            res = env.step(joint, env_rng)
            total += res.reward
            done = res.done
            for i, h in enumerate(hw):
                if not done:
                    act_i = joint[i] if env.discrete else None
                    h.push(res.observations[i], act_i)
        returns.append(total)
        if hasattr(env, "success"):
            successes.append(float(env.success()))
    return _aggregate(returns, successes)


def evaluate_centralized(actor_fn, env_fn, n_episodes, seed, window=1,
                         include_last_action=False):
    """Evaluation with full state access, for centralized policies."""
    returns, successes = [], []
    for ep in range(n_episodes):
        env = env_fn()
        env_rng = rngs.stream(seed, rngs.EVAL, ep)
        hw = _make_histories(env, window, include_last_action)
        obs = env.reset(env_rng)
        for i, h in enumerate(hw):
            h.reset()
            h.push(obs[i])
        total, done = 0.0, False
        while not done:
            state = env.get_state().reshape(1, -1)
            feats = [hw[i].features().reshape(1, -1) for i in range(env.n_agents)]
            row = actor_fn(state, feats)
            if env.discrete:
                joint = [int(row[0, i]) for i in range(env.n_agents)]
            else:
                joint = [row[0, i] for i in range(env.n_agents)]
            res = env.step(joint, env_rng)
            total += res.reward
            done = res.done
            for i, h in enumerate(hw):
                if not done:
                    act_i = joint[i] if env.discrete else None
                    h.push(res.observations[i], act_i)
        returns.append(total)
        if hasattr(env, "success"):
            successes.append(float(env.success()))
    return _aggregate(returns, successes)

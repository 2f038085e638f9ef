"""PPO learners: correlated joint policy, independent baseline, and
asymmetric imitation.

All three share one collection path (the product-of-individuals sampler is
the mixer pipeline with the mixer removed), one centralized critic, and one
clipped-surrogate helper, so ablations differ only in the quantity being
optimized.
"""
from dataclasses import dataclass, fields

import numpy as np

from agentmixer import autodiff as ad
from agentmixer import policies as pol
from agentmixer import rngs
from agentmixer.autodiff import Tensor
from agentmixer.joint_policy import (build_joint, check_igc, joint_mode,
                                     joint_log_prob_entropy, joint_sample)
from agentmixer.mixer import MixerConfig, PolicyMixer
from agentmixer.nn import Mlp, NumericError, ParamStore, adam_step, clip_grad_norm
from agentmixer.policies import CategoricalHead, GaussianHead, HistoryWindow
from agentmixer.rollout import compute_gae, normalize_advantages


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo_epochs: int = 15
    minibatches: int = 1
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    actor_lr: float = 5e-4
    critic_lr: float = None
    mixer_lr: float = 5e-5
    max_grad_norm: float = 10.0
    adam_eps: float = 1e-5
    rollout_threads: int = 50
    episode_length: int = 200
    actor_hidden: tuple = (64,)
    critic_hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.critic_lr is None:
            self.critic_lr = self.actor_lr
        if self.minibatches != 1:
            raise ValueError("updates run on the full batch; minibatches must be 1")
        if not 0.0 < self.clip < 1.0:
            raise ValueError(f"clip must be in (0, 1), got {self.clip}")
        if self.ppo_epochs < 1:
            raise ValueError("ppo_epochs must be at least 1")


@dataclass
class DistillConfig:
    beta_start: float = 1.0
    anneal_frac: float = 0.5   # fraction of total env steps at which beta hits 0
    distill_weight: float = 1.0
    eval_every: int = 10

    def __post_init__(self):
        if not 0.0 <= self.beta_start <= 1.0:
            raise ValueError("beta_start must be in [0, 1]")

    def beta(self, progress):
        if self.anneal_frac <= 0.0:
            return 0.0
        value = self.beta_start * (1.0 - progress / self.anneal_frac)
        return float(np.clip(value, 0.0, self.beta_start))


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_frac: float
    igc_consistency_rate: float = float("nan")
    distill_loss: float = float("nan")
    teacher_fraction: float = float("nan")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


class CentralizedCritic:
    """State-value MLP shared by every method (training-time only)."""

    def __init__(self, store, state_dim, hidden, rng):
        self.net = Mlp(store, "critic/v", [state_dim, *hidden, 1], rng)

    def forward(self, states):
        return ad.reshape(self.net(states), (-1,))

    def values(self, states):
        with ad.no_grad():
            return self.forward(Tensor(np.asarray(states, dtype=np.float64))).data.copy()


def _feature_dims(env, window, include_last_action):
    dims = []
    for i in range(env.n_agents):
        n_act = env.n_actions[i] if env.discrete else 0
        dims.append(HistoryWindow(i, env.obs_dims[i], window,
                                  include_last_action and env.discrete,
                                  n_act).feature_dim)
    return dims


def _build_heads(store, env, feature_dims, hidden, rng):
    heads = []
    for i in range(env.n_agents):
        if env.discrete:
            heads.append(CategoricalHead(store, f"actor/{i}", feature_dims[i],
                                         env.n_actions[i], hidden, rng))
        else:
            heads.append(GaussianHead(store, f"actor/{i}", feature_dims[i],
                                      env.action_dim, hidden, rng))
    return heads


def _clipped_surrogate(log_prob, behavior_log_prob, advantages, clip):
    """Negated clipped PPO objective; ties resolve to the unclipped branch."""
    ratio = ad.exp(log_prob - Tensor(behavior_log_prob))
    adv = Tensor(advantages)
    clipped = ad.clamp(ratio, 1.0 - clip, 1.0 + clip)
    return -ad.tmean(ad.minimum(ratio * adv, clipped * adv))


def _ratio_stats(log_prob_new, log_prob_behavior, clip):
    ratio = np.exp(log_prob_new - log_prob_behavior)
    approx_kl = float(np.mean(log_prob_behavior - log_prob_new))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip))
    return approx_kl, clip_frac


class _SamplerBase:
    noise_dim = 0

    def __init__(self):
        self._batch_size = 1

    def episode_start(self, thread, rng):
        pass

    def teacher_flags(self):
        return np.zeros(self._batch_size, dtype=bool)


class JointSampler(_SamplerBase):
    """Draws joint actions from the learner's current policy snapshot."""

    def __init__(self, learner):
        super().__init__()
        self.learner = learner
        self.noise_dim = learner.noise_dim

    def act(self, states, feats, rng_list, noise=None):
        self._batch_size = states.shape[0]
        with ad.no_grad():
            jps = self.learner.build(states, feats, noise)
            return joint_sample(jps, rng_list)


class CorrelatedPpoLearner:
    """PPO on the mixed joint policy; heads train through shared parameters.

    use_mixer=False removes the mixer entirely, leaving the exact product
    of the individual policies on the same parameter layout and stream
    budget, which is what the degeneration-equivalence check exercises.
    """

    per_agent_surrogate = False

    def __init__(self, env, cfg, seed, use_mixer=True, taus=None,
                 mixer_channels=64, mixer_agent_hidden=32,
                 mixer_channel_hidden=256, mixer_blocks=1,
                 mixer_noise_dim=8, window=1, include_last_action=False):
        self.env = env
        self.cfg = cfg
        self.window = window
        self.include_last_action = include_last_action
        self.taus = taus
        # the shared signal only exists on the discrete perturbation path;
        # continuous joints stay deterministic functions of the state so the
        # identity-mixer configuration stays step-for-step comparable
        self.noise_dim = mixer_noise_dim if (use_mixer and env.discrete) else 0
        self.store = ParamStore()
        init_rng = rngs.stream(seed, rngs.POLICY_INIT)
        feature_dims = _feature_dims(env, window, include_last_action)
        self.heads = _build_heads(self.store, env, feature_dims,
                                  cfg.actor_hidden, init_rng)
        self.critic = CentralizedCritic(self.store, env.state_dim,
                                        cfg.critic_hidden, init_rng)
        if use_mixer:
            # separate sub-stream: presence of the mixer must not shift
            # head or critic initialization
            mixer_rng = rngs.stream(seed, rngs.POLICY_INIT, 1)
            if env.discrete:
                param_dim = head_dim = max(env.n_actions)
                mode = "discrete"
            else:
                param_dim = 2 * env.action_dim
                head_dim = env.action_dim
                mode = "continuous"
            self.pm = PolicyMixer(self.store, MixerConfig(
                n_agents=env.n_agents, state_dim=env.state_dim,
                policy_param_dim=param_dim, head_dim=head_dim, mode=mode,
                channels=mixer_channels, agent_hidden=mixer_agent_hidden,
                channel_hidden=mixer_channel_hidden, n_blocks=mixer_blocks,
                lr=cfg.mixer_lr, noise_dim=self.noise_dim), mixer_rng)
        else:
            self.pm = None

    # -- policy access --------------------------------------------------

    def build(self, states, feats, noise=None):
        state_t = Tensor(np.asarray(states, dtype=np.float64))
        feat_t = [Tensor(np.asarray(f, dtype=np.float64)) for f in feats]
        noise_t = None if noise is None else Tensor(np.asarray(noise, dtype=np.float64))
        return build_joint(state_t, feat_t, self.heads, self.pm, self.taus,
                           noise_t)

    def sampler(self):
        return JointSampler(self)

    def value_fn(self):
        return self.critic.values

    def centralized_actor_fn(self):
        def actor(state, feats):
            with ad.no_grad():
                return joint_mode(self.build(state, feats))
        return actor

    # -- optimization ---------------------------------------------------

    def _parameter_groups(self):
        groups = [(self.store.paths("actor"), self.cfg.actor_lr)]
        mixer_paths = self.store.paths("mixer")
        if mixer_paths:
            groups.append((mixer_paths, self.cfg.mixer_lr))
        groups.append((self.store.paths("critic"), self.cfg.critic_lr))
        return groups

    def _optimize(self, loss, diagnostics):
        if not np.isfinite(loss.data).all():
            raise NumericError(
                f"non-finite loss at optimizer step {self.store.step}: "
                + ", ".join(f"{k}={v:.6g}" for k, v in diagnostics.items()))
        self.store.zero_grad()
        ad.backward(loss)
        for paths, lr in self._parameter_groups():
            clip_grad_norm(self.store, self.cfg.max_grad_norm, paths)
            adam_step(self.store, lr, eps=self.cfg.adam_eps, paths=paths)

    def update(self, batch):
        cfg = self.cfg
        advantages, value_targets = compute_gae(
            batch.rewards, batch.values, batch.last_values, batch.dones,
            cfg.gamma, cfg.gae_lambda)
        adv = normalize_advantages(advantages)
        targets = value_targets.reshape(-1)
        states = batch.states.reshape(-1, batch.states.shape[-1])
        feats = [f.reshape(-1, f.shape[-1]) for f in batch.features]
        actions = batch.actions.reshape(-1, *batch.actions.shape[2:])
        noise = None
        if self.noise_dim:
            noise = batch.noise.reshape(-1, batch.noise.shape[-1])
        # behavior log-probs are recomputed here, in the exact array shapes
        # the epochs below use: BLAS kernels are batch-shape dependent in
        # the last bit, so the collection-time numbers can differ by one
        # ulp and would break the ratio-is-exactly-1 bookkeeping
        with ad.no_grad():
            jps0 = self.build(states, feats, noise)
            lp0, _, per0 = joint_log_prob_entropy(jps0, actions)
        behavior_lp = lp0.data.copy()
        behavior_per = np.stack([p.data.copy() for p in per0], axis=1)

        stats = None
        for _ in range(cfg.ppo_epochs):
            stats = self._epoch(states, feats, noise, actions, behavior_lp,
                                behavior_per, adv, targets)
        with ad.no_grad():
            report = check_igc(self.build(states, feats, noise))
        stats.igc_consistency_rate = report.consistent_fraction
        return stats

    def _epoch(self, states, feats, noise, actions, behavior_lp, behavior_per,
               adv, targets):
        cfg = self.cfg
        jps = self.build(states, feats, noise)
        joint_lp, entropy, per_agent_lp = joint_log_prob_entropy(jps, actions)

        if self.per_agent_surrogate:
            policy_loss = _clipped_surrogate(per_agent_lp[0], behavior_per[:, 0],
                                             adv, cfg.clip)
            for i in range(1, self.env.n_agents):
                policy_loss = policy_loss + _clipped_surrogate(
                    per_agent_lp[i], behavior_per[:, i], adv, cfg.clip)
        else:
            policy_loss = _clipped_surrogate(joint_lp, behavior_lp, adv, cfg.clip)

        values = self.critic.forward(Tensor(states))
        err = values - Tensor(targets)
        value_loss = 0.5 * ad.tmean(err * err)
        entropy_mean = ad.tmean(entropy)
        loss = policy_loss + cfg.value_coef * value_loss \
            - cfg.entropy_coef * entropy_mean

        self._optimize(loss, {
            "policy_loss": float(policy_loss.data),
            "value_loss": float(value_loss.data),
            "entropy": float(entropy_mean.data),
        })
        approx_kl, clip_frac = _ratio_stats(joint_lp.data, behavior_lp, cfg.clip)
        return UpdateStats(float(policy_loss.data), float(value_loss.data),
                           float(entropy_mean.data), approx_kl, clip_frac)


class IndependentPpoLearner(CorrelatedPpoLearner):
    """Per-agent clipped surrogates on decentralized log-probs, no mixer."""

    per_agent_surrogate = True

    def __init__(self, env, cfg, seed, window=1, include_last_action=False):
        super().__init__(env, cfg, seed, use_mixer=False, window=window,
                         include_last_action=include_last_action)


class AilSampler(_SamplerBase):
    """Per-episode coin flip between the teacher and the students."""

    def __init__(self, learner):
        super().__init__()
        self.learner = learner
        self._teacher_episode = {}

    def episode_start(self, thread, rng):
        self._teacher_episode[thread] = bool(rng.uniform() < self.learner.beta)

    def teacher_flags(self):
        return np.array([self._teacher_episode[t]
                         for t in range(self._batch_size)], dtype=bool)

    def act(self, states, feats, rng_list):
        self._batch_size = states.shape[0]
        with ad.no_grad():
            teacher = self.learner.build_teacher(states)
            student = self.learner.build_student(feats)
            t_act, t_lp, t_per = joint_sample(teacher, rng_list)
            # re-sampling the same rows from the student would desync the
            # per-thread streams, so pick per row after one joint draw
            s_act, s_lp, s_per = joint_sample(student, rng_list)
        flags = self.teacher_flags()
        actions = np.where(flags[:, None] if t_act.ndim == 2
                           else flags[:, None, None], t_act, s_act)
        lp = np.where(flags, t_lp, s_lp)
        per = np.where(flags[:, None], t_per, s_per)
        return actions, lp, per


class AsymmetricImitationLearner:
    """Centralized PPO teacher distilled into decentralized students.

    The teacher conditions on the full state with no consistency
    constraint; students minimize KL(teacher || student) over the
    beta-mixture occupancy.  This is the ablation whose training/evaluation
    gap the mixed joint policy is meant to close.
    """

    def __init__(self, env, cfg, distill_cfg, seed, window=1,
                 include_last_action=False):
        self.env = env
        self.cfg = cfg
        self.distill = distill_cfg
        self.window = window
        self.include_last_action = include_last_action
        self.beta = distill_cfg.beta_start
        self.store = ParamStore()
        init_rng = rngs.stream(seed, rngs.POLICY_INIT)
        feature_dims = _feature_dims(env, window, include_last_action)
        self.students = _build_heads(self.store, env, feature_dims,
                                     cfg.actor_hidden, init_rng)
        self.critic = CentralizedCritic(self.store, env.state_dim,
                                        cfg.critic_hidden, init_rng)
        self.teacher = []
        for i in range(env.n_agents):
            if env.discrete:
                self.teacher.append(CategoricalHead(
                    self.store, f"teacher/{i}", env.state_dim,
                    env.n_actions[i], cfg.actor_hidden, init_rng))
            else:
                self.teacher.append(GaussianHead(
                    self.store, f"teacher/{i}", env.state_dim,
                    env.action_dim, cfg.actor_hidden, init_rng))

    def set_progress(self, progress):
        self.beta = self.distill.beta(progress)

    # -- policy access --------------------------------------------------

    def build_teacher(self, states):
        state_t = Tensor(np.asarray(states, dtype=np.float64))
        return build_joint(state_t, [state_t] * self.env.n_agents,
                           self.teacher, None)

    def build_student(self, feats):
        feat_t = [Tensor(np.asarray(f, dtype=np.float64)) for f in feats]
        dummy_state = Tensor(np.zeros((feat_t[0].shape[0], 1)))
        return build_joint(dummy_state, feat_t, self.students, None)

    def sampler(self):
        return AilSampler(self)

    def value_fn(self):
        return self.critic.values

    def centralized_actor_fn(self):
        def actor(state, feats):
            with ad.no_grad():
                return joint_mode(self.build_teacher(state))
        return actor

    # -- optimization ---------------------------------------------------

    def _optimize(self, loss, paths_lr, diagnostics):
        if not np.isfinite(loss.data).all():
            raise NumericError(
                f"non-finite loss at optimizer step {self.store.step}: "
                + ", ".join(f"{k}={v:.6g}" for k, v in diagnostics.items()))
        self.store.zero_grad()
        ad.backward(loss)
        for paths, lr in paths_lr:
            clip_grad_norm(self.store, self.cfg.max_grad_norm, paths)
            adam_step(self.store, lr, eps=self.cfg.adam_eps, paths=paths)

    def update(self, batch):
        cfg = self.cfg
        advantages, value_targets = compute_gae(
            batch.rewards, batch.values, batch.last_values, batch.dones,
            cfg.gamma, cfg.gae_lambda)
        targets = value_targets.reshape(-1)
        states = batch.states.reshape(-1, batch.states.shape[-1])
        feats = [f.reshape(-1, f.shape[-1]) for f in batch.features]
        actions = batch.actions.reshape(-1, *batch.actions.shape[2:])
        mask = batch.teacher_mask.reshape(-1)
        teacher_fraction = float(mask.mean())
        if mask.any():
            # recomputed in the masked shape the teacher epochs use; see
            # the shape note in CorrelatedPpoLearner.update
            with ad.no_grad():
                jps0 = self.build_teacher(states[mask])
                _, _, per0 = joint_log_prob_entropy(jps0, actions[mask])
            teacher_behavior = np.stack([p.data.copy() for p in per0], axis=1)

        policy_loss = value_loss = entropy_val = 0.0
        approx_kl = clip_frac = 0.0
        for _ in range(cfg.ppo_epochs):
            # critic on the full mixture occupancy
            values = self.critic.forward(Tensor(states))
            err = values - Tensor(targets)
            v_loss = 0.5 * ad.tmean(err * err)
            groups = [(self.store.paths("critic"), cfg.critic_lr)]
            loss = cfg.value_coef * v_loss
            stats_diag = {"value_loss": float(v_loss.data)}

            if mask.any():
                adv = normalize_advantages(advantages.reshape(-1)[mask])
                t_states = states[mask]
                t_actions = actions[mask]
                jps = self.build_teacher(t_states)
                joint_lp, entropy, per_agent = joint_log_prob_entropy(jps, t_actions)
                p_loss = _clipped_surrogate(per_agent[0],
                                            teacher_behavior[:, 0],
                                            adv, cfg.clip)
                for i in range(1, self.env.n_agents):
                    p_loss = p_loss + _clipped_surrogate(
                        per_agent[i], teacher_behavior[:, i], adv, cfg.clip)
                ent_mean = ad.tmean(entropy)
                loss = loss + p_loss - cfg.entropy_coef * ent_mean
                groups.insert(0, (self.store.paths("teacher"), cfg.actor_lr))
                policy_loss = float(p_loss.data)
                entropy_val = float(ent_mean.data)
                approx_kl, clip_frac = _ratio_stats(joint_lp.data,
                                                    teacher_behavior.sum(axis=1),
                                                    cfg.clip)
                stats_diag["policy_loss"] = policy_loss
            self._optimize(loss, groups, stats_diag)
            value_loss = float(v_loss.data)

        distill_loss = 0.0
        for _ in range(cfg.ppo_epochs):
            distill_loss = self._distill_pass(states, feats)
        return UpdateStats(policy_loss, value_loss, entropy_val, approx_kl,
                           clip_frac, distill_loss=distill_loss,
                           teacher_fraction=teacher_fraction)

    def _distill_pass(self, states, feats):
        with ad.no_grad():
            teacher = self.build_teacher(states)
        student = self.build_student(feats)
        total = None
        for i in range(self.env.n_agents):
            if self.env.discrete:
                p_logits = Tensor(teacher.perturbed_logits[i].data)
                kl = pol.categorical_kl(p_logits, student.perturbed_logits[i])
            else:
                mu_p = Tensor(teacher.mu[i].data)
                ls_p = Tensor(teacher.log_sigma[i].data)
                kl = pol.gaussian_kl(mu_p, ls_p, student.mu[i],
                                     student.log_sigma[i])
            term = ad.tmean(kl)
            total = term if total is None else total + term
        loss = (self.distill.distill_weight / self.env.n_agents) * total
        self._optimize(loss, [(self.store.paths("actor"), self.cfg.actor_lr)],
                       {"distill_loss": float(loss.data)})
        return float(loss.data)

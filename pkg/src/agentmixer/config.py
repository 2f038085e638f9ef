"""Run configuration: INI-style parsing, validation, and serialization.

A run file has up to five sections: [run], [env], [ppo], [mixer], and
[distill].  Every key is validated against a typed schema and unknown keys
are rejected with their full section.key path.  Hyperparameter defaults
resolve per environment class (matrix / grid / continuous) before file
values are applied, and serialize_config emits the fully resolved file, so
parse -> serialize -> parse is the identity.
"""
import configparser
import io
from dataclasses import dataclass, field

from agentmixer.envs import make_env
from agentmixer.learners import DistillConfig, PpoConfig


class ConfigError(ValueError):
    """Invalid run configuration; carries the offending section.key path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ------------------------------------------------------------------ schema

def _to_int(raw):
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"expected integer, got {raw!r}")


def _to_float(raw):
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"expected number, got {raw!r}")


def _to_bool(raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected boolean, got {raw!r}")


def _to_str(raw):
    return raw.strip()


def _to_int_tuple(raw):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected comma-separated integers")
    return tuple(_to_int(p) for p in parts)


_RUN_SCHEMA = {
    "algorithm": _to_str,
    "total_env_steps": _to_int,
    "eval_every": _to_int,
    "eval_episodes": _to_int,
    "checkpoint_every": _to_int,
    "seeds": _to_int_tuple,
    "output_dir": _to_str,
    "window": _to_int,
    "include_last_action": _to_bool,
}

_PPO_SCHEMA = {
    "clip": _to_float,
    "gamma": _to_float,
    "gae_lambda": _to_float,
    "ppo_epochs": _to_int,
    "minibatches": _to_int,
    "entropy_coef": _to_float,
    "value_coef": _to_float,
    "actor_lr": _to_float,
    "critic_lr": _to_float,
    "mixer_lr": _to_float,
    "max_grad_norm": _to_float,
    "adam_eps": _to_float,
    "rollout_threads": _to_int,
    "episode_length": _to_int,
    "actor_hidden": _to_int_tuple,
    "critic_hidden": _to_int_tuple,
}

_MIXER_SCHEMA = {
    "channels": _to_int,
    "agent_hidden": _to_int,
    "channel_hidden": _to_int,
    "blocks": _to_int,
    "tau": _to_float,
    "noise_dim": _to_int,
}

_DISTILL_SCHEMA = {
    "beta_start": _to_float,
    "anneal_frac": _to_float,
    "distill_weight": _to_float,
}

_ENV_SCHEMAS = {
    "climbing": {"payoff_file": _to_str},
    "predator_prey": {
        "grid_size": _to_int,
        "n_predators": _to_int,
        "n_prey": _to_int,
        "capture_reward": _to_float,
        "single_capture_penalty": _to_float,
        "horizon": _to_int,
    },
    "bridge_crossing": {"horizon": _to_int},
    "continuous_spread": {
        "n_agents": _to_int,
        "arena_half_width": _to_float,
        "horizon": _to_int,
    },
    "ice_lake": {"observable": _to_bool, "horizon": _to_int},
}

ENV_CLASS = {
    "climbing": "matrix",
    "predator_prey": "grid",
    "bridge_crossing": "grid",
    "ice_lake": "grid",
    "continuous_spread": "continuous",
}

# per-class hyperparameter presets; remaining PpoConfig defaults are shared
PPO_PRESETS = {
    "matrix": dict(ppo_epochs=15, entropy_coef=0.01, actor_lr=5e-4,
                   mixer_lr=5e-4,
                   rollout_threads=50, episode_length=200,
                   actor_hidden=(64,)),
    "grid": dict(ppo_epochs=5, entropy_coef=0.01, actor_lr=5e-4,
                 rollout_threads=50, episode_length=200,
                 actor_hidden=(64,)),
    "continuous": dict(ppo_epochs=5, entropy_coef=0.0, actor_lr=3e-4,
                       rollout_threads=40, episode_length=100,
                       actor_hidden=(64, 64)),
}

ALGORITHMS = ("agentmixer", "ippo", "ail")


@dataclass
class RunConfig:
    env_name: str
    env_params: dict = field(default_factory=dict)
    algorithm: str = "agentmixer"
    ppo: PpoConfig = None
    distill: DistillConfig = None
    mixer_channels: int = 64
    mixer_agent_hidden: int = 32
    mixer_channel_hidden: int = 256
    mixer_blocks: int = 1
    mixer_tau: float = 1.0
    mixer_noise_dim: int = 8
    total_env_steps: int = 200_000
    eval_every: int = 10
    eval_episodes: int = 20
    checkpoint_every: int = 0
    seeds: tuple = (0,)
    output_dir: str = "runs"
    window: int = 1
    include_last_action: bool = False

    def __post_init__(self):
        if self.env_name not in ENV_CLASS:
            raise ConfigError("env.name", f"unknown environment {self.env_name!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                "run.algorithm",
                f"unknown algorithm {self.algorithm!r}; known: {', '.join(ALGORITHMS)}")
        if self.ppo is None:
            self.ppo = PpoConfig(**PPO_PRESETS[ENV_CLASS[self.env_name]])
        if self.distill is None:
            self.distill = DistillConfig(eval_every=self.eval_every)
        if self.total_env_steps < 0:
            raise ConfigError("run.total_env_steps", "must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("run.eval_every", "must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("run.eval_episodes", "must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every", "must be >= 0")
        if not self.seeds:
            raise ConfigError("run.seeds", "need at least one seed")
        if self.window < 1:
            raise ConfigError("run.window", "must be >= 1")
        if self.mixer_noise_dim < 0:
            raise ConfigError("mixer.noise_dim", "must be >= 0")

    def make_env(self):
        return make_env(self.env_name, **self.env_params)


def _parse_section(parser, section, schema):
    values = {}
    if not parser.has_section(section):
        return values
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"{section}.{key}", "unknown key")
        try:
            values[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}", str(exc))
    return values


def parse_config(text):
    """Parse a run file into a fully resolved RunConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"malformed config: {exc}")

    known = ("run", "env", "ppo", "mixer", "distill")
    for section in parser.sections():
        if section not in known:
            raise ConfigError(section, "unknown section")
    if not parser.has_section("env") or not parser.has_option("env", "name"):
        raise ConfigError("env.name", "missing required key")

    env_name = parser.get("env", "name").strip()
    if env_name not in _ENV_SCHEMAS:
        raise ConfigError(
            "env.name",
            f"unknown environment {env_name!r}; known: {', '.join(_ENV_SCHEMAS)}")
    env_schema = dict(_ENV_SCHEMAS[env_name], name=_to_str)
    env_params = _parse_section(parser, "env", env_schema)
    env_params.pop("name")

    run_values = _parse_section(parser, "run", _RUN_SCHEMA)
    ppo_values = _parse_section(parser, "ppo", _PPO_SCHEMA)
    mixer_values = _parse_section(parser, "mixer", _MIXER_SCHEMA)
    distill_values = _parse_section(parser, "distill", _DISTILL_SCHEMA)

    preset = dict(PPO_PRESETS[ENV_CLASS[env_name]])
    preset.update(ppo_values)
    try:
        ppo = PpoConfig(**preset)
    except ValueError as exc:
        raise ConfigError("ppo", str(exc))

    eval_every = run_values.get("eval_every", 10)
    try:
        distill = DistillConfig(eval_every=eval_every, **distill_values)
    except ValueError as exc:
        raise ConfigError("distill", str(exc))

    mixer_fields = {f"mixer_{k}": v for k, v in mixer_values.items()}
    return RunConfig(env_name=env_name, env_params=env_params, ppo=ppo,
                     distill=distill, **mixer_fields, **run_values)


def load_config(path):
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg):
    """Emit the fully resolved run file; inverse of parse_config."""
    out = io.StringIO()

    def section(name, pairs):
        out.write(f"[{name}]\n")
        for key, value in pairs:
            out.write(f"{key} = {_format_value(value)}\n")
        out.write("\n")

    section("run", [
        ("algorithm", cfg.algorithm),
        ("total_env_steps", cfg.total_env_steps),
        ("eval_every", cfg.eval_every),
        ("eval_episodes", cfg.eval_episodes),
        ("checkpoint_every", cfg.checkpoint_every),
        ("seeds", cfg.seeds),
        ("output_dir", cfg.output_dir),
        ("window", cfg.window),
        ("include_last_action", cfg.include_last_action),
    ])
    section("env", [("name", cfg.env_name)]
            + sorted(cfg.env_params.items()))
    ppo = cfg.ppo
    section("ppo", [
        ("clip", ppo.clip),
        ("gamma", ppo.gamma),
        ("gae_lambda", ppo.gae_lambda),
        ("ppo_epochs", ppo.ppo_epochs),
        ("minibatches", ppo.minibatches),
        ("entropy_coef", ppo.entropy_coef),
        ("value_coef", ppo.value_coef),
        ("actor_lr", ppo.actor_lr),
        ("critic_lr", ppo.critic_lr),
        ("mixer_lr", ppo.mixer_lr),
        ("max_grad_norm", ppo.max_grad_norm),
        ("adam_eps", ppo.adam_eps),
        ("rollout_threads", ppo.rollout_threads),
        ("episode_length", ppo.episode_length),
        ("actor_hidden", ppo.actor_hidden),
        ("critic_hidden", ppo.critic_hidden),
    ])
    section("mixer", [
        ("channels", cfg.mixer_channels),
        ("agent_hidden", cfg.mixer_agent_hidden),
        ("channel_hidden", cfg.mixer_channel_hidden),
        ("blocks", cfg.mixer_blocks),
        ("tau", cfg.mixer_tau),
        ("noise_dim", cfg.mixer_noise_dim),
    ])
    section("distill", [
        ("beta_start", cfg.distill.beta_start),
        ("anneal_frac", cfg.distill.anneal_frac),
        ("distill_weight", cfg.distill.distill_weight),
    ])
    return out.getvalue()

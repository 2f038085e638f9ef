"""Centralized policy-perturbation network.

The per-agent policy parameters and the global state are embedded into an
``[(n_agents + 1) x channels]`` grid per sample, with the state in row 0.
Mixer blocks then alternate two residual MLPs: one mixing across rows (the
agent axis, applied per channel via a transpose), one along each row (the
channel axis).  Small per-agent heads read the agent rows back out, either
as noise quantiles in (0, 1) for discrete actions or as log-scales for
continuous ones.

Everything runs batched: grids are stacked along the row axis and the two
mixing directions are realized with per-sample axis swaps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from agentmixer import autodiff as ad
from agentmixer.autodiff import Tensor
from agentmixer.nn import ParamStore, forward_linear, init_linear, layer_norm
from agentmixer.policies import LOG_STD_MAX, LOG_STD_MIN

# quantile outputs stay strictly inside (0, 1) so the double-log transform
# that turns them into noise stays finite
QUANTILE_MIN = 1e-6
QUANTILE_MAX = 1.0 - 1e-6


@dataclass
class MixerConfig:
    n_agents: int
    state_dim: int
    policy_param_dim: int
    head_dim: int
    mode: str  # "discrete" or "continuous"
    channels: int = 64
    agent_hidden: int = 32
    channel_hidden: int = 256
    n_blocks: int = 1
    lr: float = 5e-5
    activation: str = "relu"
    # width of the shared per-step signal appended to the state row; all
    # agents see the same draw, which is what lets the modified joint place
    # probability on coordinated action combinations instead of products
    noise_dim: int = 0

    def __post_init__(self):
        if self.mode not in ("discrete", "continuous"):
            raise ValueError(f"unknown mixer mode: {self.mode}")
        if self.n_agents < 1:
            raise ValueError("mixer needs at least one agent")
        if self.noise_dim < 0:
            raise ValueError("noise_dim must be non-negative")


class PolicyMixer:
    """Grid embed -> mixer blocks -> per-agent perturbation heads."""

    def __init__(self, store: ParamStore, cfg: MixerConfig, rng: np.random.Generator, prefix: str = "mixer"):
        self.cfg = cfg
        self.prefix = prefix
        self.forward_count = 0
        self.activation = ad.ACTIVATIONS[cfg.activation]
        c, rows = cfg.channels, cfg.n_agents + 1

        self.state_w = store.create(
            f"{prefix}/embed/state/w",
            init_linear(rng, cfg.state_dim + cfg.noise_dim, c))
        self.state_b = store.create(f"{prefix}/embed/state/b", np.zeros(c))
        # one embedding shared by all agents, so identically parameterized
        # agents stay interchangeable in the grid
        self.policy_w = store.create(f"{prefix}/embed/policy/w", init_linear(rng, cfg.policy_param_dim, c))
        self.policy_b = store.create(f"{prefix}/embed/policy/b", np.zeros(c))

        self.blocks = []
        for j in range(cfg.n_blocks):
            p = f"{prefix}/block{j}"
            self.blocks.append(
                {
                    "ln1_g": store.create(f"{p}/ln1/gain", np.ones(c)),
                    "ln1_s": store.create(f"{p}/ln1/shift", np.zeros(c)),
                    "agent_w1": store.create(f"{p}/agent/w1", init_linear(rng, rows, cfg.agent_hidden)),
                    "agent_b1": store.create(f"{p}/agent/b1", np.zeros(cfg.agent_hidden)),
                    "agent_w2": store.create(f"{p}/agent/w2", init_linear(rng, cfg.agent_hidden, rows)),
                    "agent_b2": store.create(f"{p}/agent/b2", np.zeros(rows)),
                    "ln2_g": store.create(f"{p}/ln2/gain", np.ones(c)),
                    "ln2_s": store.create(f"{p}/ln2/shift", np.zeros(c)),
                    "chan_w1": store.create(f"{p}/channel/w1", init_linear(rng, c, cfg.channel_hidden)),
                    "chan_b1": store.create(f"{p}/channel/b1", np.zeros(cfg.channel_hidden)),
                    "chan_w2": store.create(f"{p}/channel/w2", init_linear(rng, cfg.channel_hidden, c)),
                    "chan_b2": store.create(f"{p}/channel/b2", np.zeros(c)),
                }
            )

        head_bias = -1.0 if cfg.mode == "continuous" else 0.0
        self.head_w = store.create(f"{prefix}/head/w", init_linear(rng, c, cfg.head_dim))
        self.head_b = store.create(f"{prefix}/head/b", np.full(cfg.head_dim, head_bias))

    # -- pieces ---------------------------------------------------------

    def embed(self, state_feats: Tensor, agent_params: List[Tensor],
              noise: Tensor = None) -> Tensor:
        """Build the stacked grid ``[batch * (n_agents + 1) x channels]``."""
        n, rows = self.cfg.n_agents, self.cfg.n_agents + 1
        if len(agent_params) != n:
            raise ValueError(f"expected {n} per-agent parameter tensors, got {len(agent_params)}")
        batch = state_feats.shape[0]
        if self.cfg.noise_dim:
            if noise is None:
                noise = Tensor(np.zeros((batch, self.cfg.noise_dim)))
            state_feats = ad.concat([state_feats, noise], axis=1)
        state_row = self.activation(forward_linear(state_feats, self.state_w, self.state_b))
        params = ad.concat(agent_params, axis=0)  # [n*batch x P], agent-major
        agent_rows = self.activation(forward_linear(params, self.policy_w, self.policy_b))
        stacked = ad.concat([state_row, agent_rows], axis=0)
        index = np.empty(batch * rows, dtype=np.intp)
        for b in range(batch):
            index[b * rows] = b
            for i in range(n):
                index[b * rows + 1 + i] = batch + i * batch + b
        return ad.gather_rows(stacked, index)

    def mixer_block(self, grid: Tensor, block: dict, batch: int) -> Tensor:
        """One agent-mixing + channel-mixing pass with residual connections."""
        rows, c = self.cfg.n_agents + 1, self.cfg.channels
        y = layer_norm(grid, block["ln1_g"], block["ln1_s"])
        y = ad.swap_inner_axes(y, batch, rows)  # [batch*c x rows]
        y = self.activation(forward_linear(y, block["agent_w1"], block["agent_b1"]))
        y = forward_linear(y, block["agent_w2"], block["agent_b2"])
        y = ad.swap_inner_axes(y, batch, c)  # back to [batch*rows x c]
        grid = grid + y
        z = layer_norm(grid, block["ln2_g"], block["ln2_s"])
        z = self.activation(forward_linear(z, block["chan_w1"], block["chan_b1"]))
        z = forward_linear(z, block["chan_w2"], block["chan_b2"])
        return grid + z

    def raw_heads(self, grid: Tensor, batch: int) -> List[Tensor]:
        """Read agent rows out of the grid as unsquashed ``[batch x head_dim]``."""
        n, rows = self.cfg.n_agents, self.cfg.n_agents + 1
        agent_index = np.array(
            [b * rows + 1 + i for b in range(batch) for i in range(n)], dtype=np.intp
        )
        agent_rows = ad.gather_rows(grid, agent_index)  # [batch*n x c], sample-major
        out = forward_linear(agent_rows, self.head_w, self.head_b)
        per_agent = []
        for i in range(n):
            idx = np.arange(batch, dtype=np.intp) * n + i
            per_agent.append(ad.gather_rows(out, idx))
        return per_agent

    def _forward_raw(self, state_feats: Tensor, agent_params: List[Tensor],
                     noise: Tensor = None) -> List[Tensor]:
        batch = state_feats.shape[0]
        grid = self.embed(state_feats, agent_params, noise)
        for block in self.blocks:
            grid = self.mixer_block(grid, block, batch)
        return self.raw_heads(grid, batch)

    def _zero_signal_reference(self, state_feats: Tensor,
                               agent_params: List[Tensor]) -> List[np.ndarray]:
        """Raw head outputs at the zero signal, treated as constants.

        Subtracting these pins the quantile logits to 0 at the signal's
        origin, so a signal-independent preference for an action cannot be
        expressed by the mixer: constant tilts have to come from the
        individual policies, and the mixer only shapes how actions co-vary
        with the shared draw.  Rows are deduplicated before the extra
        forward pass (a matrix game has exactly one distinct row).
        """
        key = np.concatenate(
            [state_feats.data] + [p.data for p in agent_params], axis=1)
        uniq, inverse = np.unique(key, axis=0, return_inverse=True)
        bounds = [0, state_feats.shape[1]]
        for p in agent_params:
            bounds.append(bounds[-1] + p.shape[1])
        with ad.no_grad():
            s = Tensor(np.ascontiguousarray(uniq[:, :bounds[1]]))
            params = [
                Tensor(np.ascontiguousarray(uniq[:, bounds[i + 1]:bounds[i + 2]]))
                for i in range(len(agent_params))
            ]
            raw = self._forward_raw(s, params, None)
        return [r.data[inverse] for r in raw]

    def __call__(self, state_feats: Tensor, agent_params: List[Tensor],
                 noise: Tensor = None) -> List[Tensor]:
        """Per-agent perturbation outputs for a batch of states.

        Returns one ``[batch x head_dim]`` tensor per agent: noise quantiles
        ``u`` in discrete mode, log-scales in continuous mode.  ``noise`` is
        the shared per-sample signal; omitted, it defaults to zeros.  When a
        signal channel is configured, discrete quantile logits are anchored
        at their zero-signal value, which fixes the quantiles to 1/2 along
        the signal's origin.
        """
        self.forward_count += 1
        raw = self._forward_raw(state_feats, agent_params, noise)
        if self.cfg.mode == "discrete":
            if self.cfg.noise_dim:
                anchors = self._zero_signal_reference(state_feats, agent_params)
                raw = [r - Tensor(a) for r, a in zip(raw, anchors)]
            return [ad.clamp(ad.sigmoid(r), QUANTILE_MIN, QUANTILE_MAX)
                    for r in raw]
        return [ad.clamp(r, LOG_STD_MIN, LOG_STD_MAX) for r in raw]

    def zero_all_parameters(self, store: ParamStore) -> None:
        """Zero every mixer weight and bias; handy for identity checks."""
        for path in store.paths(self.prefix):
            store.params[path].data = np.zeros_like(store.params[path].data)

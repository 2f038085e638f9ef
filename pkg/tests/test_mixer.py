"""Mixer network: grid layout, residual identity, mixing structure, heads."""
import numpy as np

from agentmixer import autodiff as ad
from agentmixer.autodiff import Tensor
from agentmixer.gradcheck import check_gradients
from agentmixer.mixer import MixerConfig, PolicyMixer, QUANTILE_MAX, QUANTILE_MIN
from agentmixer.nn import ParamStore, forward_linear


def build(n_agents=3, state_dim=4, param_dim=5, head_dim=3, mode="discrete", seed=0, **kw):
    cfg = MixerConfig(
        n_agents=n_agents,
        state_dim=state_dim,
        policy_param_dim=param_dim,
        head_dim=head_dim,
        mode=mode,
        channels=kw.pop("channels", 16),
        **kw,
    )
    store = ParamStore()
    pm = PolicyMixer(store, cfg, np.random.default_rng(seed))
    return store, cfg, pm


def random_inputs(cfg, batch, rng):
    state = Tensor(rng.normal(size=(batch, cfg.state_dim)))
    params = [Tensor(rng.normal(size=(batch, cfg.policy_param_dim))) for _ in range(cfg.n_agents)]
    return state, params


def test_grid_shape_and_state_row_position():
    store, cfg, pm = build(n_agents=3, channels=16)
    rng = np.random.default_rng(1)
    state, params = random_inputs(cfg, batch=2, rng=rng)
    grid = pm.embed(state, params)
    assert grid.shape == (2 * 4, 16)
    # row 0 of each sample is the state embedding
    state_emb = ad.relu(forward_linear(state, pm.state_w, pm.state_b)).data
    assert np.array_equal(grid.data[0], state_emb[0])
    assert np.array_equal(grid.data[4], state_emb[1])


def test_zero_everything_gives_zero_grid():
    store, cfg, pm = build()
    pm.zero_all_parameters(store)
    zeros_state = Tensor(np.zeros((2, cfg.state_dim)))
    zeros_params = [Tensor(np.zeros((2, cfg.policy_param_dim))) for _ in range(cfg.n_agents)]
    grid = pm.embed(zeros_state, zeros_params)
    assert np.abs(grid.data).max() == 0.0


def test_zero_weight_block_is_identity():
    store, cfg, pm = build(seed=3)
    block = pm.blocks[0]
    for key in ("agent_w1", "agent_b1", "agent_w2", "agent_b2", "chan_w1", "chan_b1", "chan_w2", "chan_b2"):
        block[key].data = np.zeros_like(block[key].data)
    rng = np.random.default_rng(4)
    grid_in = Tensor(rng.normal(size=(3 * (cfg.n_agents + 1), cfg.channels)))
    grid_out = pm.mixer_block(grid_in, block, batch=3)
    assert np.array_equal(grid_out.data, grid_in.data)


def test_permuting_identical_agent_inputs_permutes_grid_rows():
    store, cfg, pm = build(n_agents=3)
    rng = np.random.default_rng(5)
    state, params = random_inputs(cfg, batch=1, rng=rng)
    grid = pm.embed(state, params).data
    swapped = pm.embed(state, [params[1], params[0], params[2]]).data
    assert np.array_equal(swapped[1], grid[2])
    assert np.array_equal(swapped[2], grid[1])
    assert np.array_equal(swapped[3], grid[3])
    assert np.array_equal(swapped[0], grid[0])


def test_agent_mixing_is_columnwise():
    # the row-mixing branch must treat channels independently
    store, cfg, pm = build(seed=6)
    block = pm.blocks[0]
    rng = np.random.default_rng(7)
    rows, c = cfg.n_agents + 1, cfg.channels

    def branch(x: np.ndarray) -> np.ndarray:
        t = ad.swap_inner_axes(Tensor(x), 1, rows)
        t = ad.relu(forward_linear(t, block["agent_w1"], block["agent_b1"]))
        t = forward_linear(t, block["agent_w2"], block["agent_b2"])
        return ad.swap_inner_axes(t, 1, c).data

    base = rng.normal(size=(rows, c))
    out = branch(base)
    poked = base.copy()
    poked[:, 2] += rng.normal(size=rows)
    out_poked = branch(poked)
    unchanged = np.delete(np.arange(c), 2)
    assert np.array_equal(out[:, unchanged], out_poked[:, unchanged])
    assert not np.array_equal(out[:, 2], out_poked[:, 2])


def test_cross_agent_information_flow():
    store, cfg, pm = build(seed=8)
    rng = np.random.default_rng(9)
    state, params = random_inputs(cfg, batch=1, rng=rng)
    out = [t.data.copy() for t in pm(state, params)]
    poked = [Tensor(p.data.copy()) for p in params]
    poked[2].data += 0.5
    out_poked = [t.data for t in pm(state, poked)]
    # with random weights agent 0's output responds to agent 2's input
    assert not np.allclose(out[0], out_poked[0])
    # with the row-mixing branch zeroed it cannot
    block = pm.blocks[0]
    for key in ("agent_w1", "agent_b1", "agent_w2", "agent_b2"):
        block[key].data = np.zeros_like(block[key].data)
    out = [t.data.copy() for t in pm(state, params)]
    out_poked = [t.data for t in pm(state, poked)]
    assert np.array_equal(out[0], out_poked[0])
    assert np.array_equal(out[1], out_poked[1])
    assert not np.array_equal(out[2], out_poked[2])


def test_discrete_head_zero_weights_give_half():
    store, cfg, pm = build(seed=10)
    pm.head_w.data = np.zeros_like(pm.head_w.data)
    pm.head_b.data = np.zeros_like(pm.head_b.data)
    rng = np.random.default_rng(11)
    state, params = random_inputs(cfg, batch=2, rng=rng)
    for u in pm(state, params):
        assert np.array_equal(u.data, np.full((2, cfg.head_dim), 0.5))


def test_continuous_head_zero_weights_give_exp_bias():
    store, cfg, pm = build(mode="continuous", seed=12)
    pm.head_w.data = np.zeros_like(pm.head_w.data)
    pm.head_b.data = np.full_like(pm.head_b.data, -0.7)
    rng = np.random.default_rng(13)
    state, params = random_inputs(cfg, batch=2, rng=rng)
    for log_sigma in pm(state, params):
        assert np.allclose(np.exp(log_sigma.data), np.exp(-0.7), atol=1e-15)


def test_quantiles_stay_in_open_interval():
    rng = np.random.default_rng(14)
    for trial in range(20):
        store, cfg, pm = build(seed=100 + trial)
        scale = 10.0 ** rng.integers(0, 4)
        state = Tensor(rng.normal(size=(25, cfg.state_dim)) * scale)
        params = [
            Tensor(rng.normal(size=(25, cfg.policy_param_dim)) * scale)
            for _ in range(cfg.n_agents)
        ]
        for u in pm(state, params):
            assert np.isfinite(u.data).all()
            assert (u.data >= QUANTILE_MIN).all() and (u.data <= QUANTILE_MAX).all()


def test_forward_count_increments():
    store, cfg, pm = build()
    rng = np.random.default_rng(15)
    state, params = random_inputs(cfg, batch=1, rng=rng)
    assert pm.forward_count == 0
    pm(state, params)
    pm(state, params)
    assert pm.forward_count == 2


def test_mixer_gradients_against_finite_differences():
    store, cfg, pm = build(n_agents=2, state_dim=3, param_dim=4, head_dim=2, channels=8, seed=16)
    rng = np.random.default_rng(17)
    state = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    params = [Tensor(rng.normal(size=(2, 4)), requires_grad=True) for _ in range(2)]
    block = pm.blocks[0]
    leaf_params = [
        block["agent_w1"], block["agent_w2"], block["chan_w1"], block["chan_w2"],
        block["ln1_g"], block["ln2_s"], pm.head_w, pm.policy_w, pm.state_w,
    ]

    def fn(_):
        outs = pm(state, params)
        total = outs[0].sum()
        for o in outs[1:]:
            total = total + o.sum()
        return total * total

    result = check_gradients(fn, [state, *params, *leaf_params])
    assert result.ok(1e-4), f"rel err {result.max_rel_error}"

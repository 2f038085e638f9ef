"""One-shot two-player matrix game with a shared payoff table.

The default table is the climbing game: a global optimum at (0,0) guarded
by steep miscoordination penalties, plus two shallow local optima that
independent learners tend to fall into.
"""
import numpy as np

from agentmixer.envs.base import MultiAgentEnv, StepResult

CLIMBING_PAYOFF = np.array([
    [11.0, -30.0, 0.0],
    [-30.0, 7.0, 0.0],
    [0.0, 6.0, 5.0],
])


def load_payoff(path):
    """Read a payoff table from a whitespace-separated numeric grid file."""
    table = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return table


class MatrixGame(MultiAgentEnv):
    def __init__(self, payoff=None):
        super().__init__()
        if payoff is None:
            payoff = CLIMBING_PAYOFF
        payoff = np.asarray(payoff, dtype=np.float64)
        if payoff.ndim != 2 or payoff.shape[0] != payoff.shape[1]:
            raise ValueError(f"payoff table must be square, got shape {payoff.shape}")
        if not np.isfinite(payoff).all():
            raise ValueError("payoff table must be finite")
        self.payoff = payoff
        k = payoff.shape[0]
        self.n_agents = 2
        self.obs_dims = (1, 1)
        self.state_dim = 1
        self.horizon = 1
        self.n_actions = (k, k)
        self.discrete = True

    def reset(self, rng):
        return [np.ones(1), np.ones(1)]

    def step(self, actions, rng):
        r = float(self.payoff[actions[0], actions[1]])
        return StepResult([np.ones(1), np.ones(1)], r, True)

    def _state(self):
        return np.ones(1)

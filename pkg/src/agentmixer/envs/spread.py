"""Continuous cooperative navigation: cover the landmarks, avoid contact.

Point-mass agents steer with 2-D velocity commands.  The team is charged
the distance from each landmark to its nearest agent, plus 1 for every
agent pair closer than the contact radius.  Agents observe only their own
position, so spreading out requires correlated behavior.
"""
import numpy as np

from agentmixer.envs.base import MultiAgentEnv, StepResult

MAX_SPEED = 0.1
CONTACT_RADIUS = 0.1


def landmark_layout(n_agents, half_width):
    xs = np.linspace(-half_width / 2, half_width / 2, n_agents)
    return np.stack([xs, np.zeros(n_agents)], axis=1)


def spread_reward(positions, landmarks):
    reward = 0.0
    for lm in landmarks:
        reward -= min(float(np.linalg.norm(lm - p)) for p in positions)
    n = len(positions)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(positions[i] - positions[j]) < CONTACT_RADIUS:
                reward -= 1.0
    return reward


class ContinuousSpread(MultiAgentEnv):
    def __init__(self, n_agents=2, arena_half_width=1.0, horizon=25):
        super().__init__()
        if n_agents < 2:
            raise ValueError(f"need at least 2 agents, got {n_agents}")
        self.half_width = float(arena_half_width)
        self.landmarks = landmark_layout(n_agents, self.half_width)
        self.n_agents = n_agents
        self.obs_dims = (2,) * n_agents
        self.state_dim = 2 * n_agents
        self.horizon = horizon
        self.discrete = False
        self.action_dim = 2
        self.action_low = -MAX_SPEED
        self.action_high = MAX_SPEED
        self._pos = None
        self._t = 0

    def reset(self, rng):
        hw = self.half_width
        self._pos = rng.uniform(-hw, hw, size=(self.n_agents, 2))
        self._t = 0
        return self._observations()

    def step(self, actions, rng):
        vel = np.clip(np.asarray(actions, dtype=np.float64), -MAX_SPEED, MAX_SPEED)
        self._pos = np.clip(self._pos + vel, -self.half_width, self.half_width)
        reward = spread_reward(self._pos, self.landmarks)
        self._t += 1
        done = self._t >= self.horizon
        return StepResult(self._observations(), reward, done)

    def _observations(self):
        return [self._pos[i].copy() for i in range(self.n_agents)]

    def _state(self):
        return self._pos.ravel().copy()

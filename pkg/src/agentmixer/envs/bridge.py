"""Two agents cross a wall through narrow passages, physiques hidden.

Each agent must reach the far-side cell the other started on.  A wall
splits the grid; its two passage cells hold a combined size of 2, so two
small agents can share one but a big agent blocks it.  Each agent sees
the other's position but not the other's physique, which is exactly the
information a correlated or fully informed policy can exploit.
"""
import numpy as np

from agentmixer.envs.base import MultiAgentEnv, StepResult

WIDTH = 7
HEIGHT = 5
WALL_COL = 3
PASSAGES = ((3, 1), (3, 3))
STARTS = ((0, 1), (6, 1))
GOALS = ((6, 1), (0, 1))
STEP_COST = -0.05
GOAL_REWARD = 10.0
CONGESTION_PENALTY = -5.0

# up, down, left, right, stay
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))


def is_wall(x, y):
    return x == WALL_COL and (x, y) not in PASSAGES


class BridgeCrossing(MultiAgentEnv):
    def __init__(self, horizon=30):
        super().__init__()
        self.n_agents = 2
        self.obs_dims = (5, 5)
        self.state_dim = 6
        self.horizon = horizon
        self.n_actions = (5, 5)
        self.discrete = True
        self._pos = None
        self._size = None
        self._arrived = None
        self._t = 0

    def reset(self, rng):
        self._pos = [list(STARTS[0]), list(STARTS[1])]
        self._size = [int(rng.integers(1, 3)) for _ in range(2)]
        self._arrived = [False, False]
        self._t = 0
        return self._observations()

    def step(self, actions, rng):
        old = [tuple(p) for p in self._pos]
        new = []
        for i in range(2):
            if self._arrived[i]:
                new.append(old[i])
                continue
            dx, dy = MOVES[actions[i]]
            x, y = old[i][0] + dx, old[i][1] + dy
            if not (0 <= x < WIDTH and 0 <= y < HEIGHT) or is_wall(x, y):
                x, y = old[i]
            new.append((x, y))

        reward = STEP_COST
        overfull = self._size[0] + self._size[1] > 2
        same_passage_cell = new[0] == new[1] and new[0] in PASSAGES
        swap_through_passage = (new[0] == old[1] and new[1] == old[0]
                                and new[0] != new[1]
                                and (old[0] in PASSAGES or old[1] in PASSAGES))
        if overfull and (same_passage_cell or swap_through_passage):
            reward += CONGESTION_PENALTY
            new = list(old)

        for i in range(2):
            self._pos[i] = list(new[i])
            if not self._arrived[i] and tuple(new[i]) == GOALS[i]:
                self._arrived[i] = True
                reward += GOAL_REWARD

        self._t += 1
        done = all(self._arrived) or self._t >= self.horizon
        return StepResult(self._observations(), reward, done)

    def _observations(self):
        obs = []
        for i in range(2):
            other = 1 - i
            obs.append(np.array([
                self._pos[i][0] / (WIDTH - 1),
                self._pos[i][1] / (HEIGHT - 1),
                float(self._size[i] - 1),
                self._pos[other][0] / (WIDTH - 1),
                self._pos[other][1] / (HEIGHT - 1),
            ]))
        return obs

    def _state(self):
        return np.array([
            self._pos[0][0] / (WIDTH - 1), self._pos[0][1] / (HEIGHT - 1),
            self._pos[1][0] / (WIDTH - 1), self._pos[1][1] / (HEIGHT - 1),
            float(self._size[0] - 1), float(self._size[1] - 1),
        ])

    def success(self):
        return all(self._arrived)

"""Gridworld pursuit task where captures only pay when executed together.

A capture succeeds, paying the team, only if at least two predators next
to the prey issue the capture action in the same step; a lone adjacent
attempt draws the single-capture penalty instead.  The prey hops to
whichever neighboring cell is farthest from the nearest predator.
"""
import numpy as np

from agentmixer.envs.base import MultiAgentEnv, StepResult

# up, down, left, right, stay, capture
MOVES = np.array([[0, -1], [0, 1], [-1, 0], [1, 0], [0, 0], [0, 0]])
ACT_CAPTURE = 5
VIEW_RADIUS = 2


class PredatorPrey(MultiAgentEnv):
    def __init__(self, grid_size=5, n_predators=2, n_prey=1,
                 capture_reward=10.0, single_capture_penalty=-1.0,
                 horizon=50):
        super().__init__()
        if grid_size < 3:
            raise ValueError(f"grid_size must be >= 3, got {grid_size}")
        if n_predators < 2 or n_prey < 1:
            raise ValueError("need at least 2 predators and 1 prey")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.grid_size = grid_size
        self.n_predators = n_predators
        self.n_prey = n_prey
        self.capture_reward = float(capture_reward)
        self.single_capture_penalty = float(single_capture_penalty)
        self.n_agents = n_predators
        self.obs_dims = (5,) * n_predators
        self.state_dim = 2 * (n_predators + n_prey)
        self.horizon = horizon
        self.n_actions = (6,) * n_predators
        self.discrete = True
        self._predators = None
        self._prey = None
        self._t = 0

    def reset(self, rng):
        cells = rng.choice(self.grid_size * self.grid_size,
                           size=self.n_predators + self.n_prey, replace=False)
        coords = np.stack([cells % self.grid_size, cells // self.grid_size], axis=1)
        self._predators = coords[:self.n_predators].astype(np.int64)
        self._prey = coords[self.n_predators:].astype(np.int64)
        self._t = 0
        return self._observations()

    def step(self, actions, rng):
        g = self.grid_size
        for i, a in enumerate(actions):
            nxt = self._predators[i] + MOVES[a]
            if 0 <= nxt[0] < g and 0 <= nxt[1] < g:
                self._predators[i] = nxt

        reward = 0.0
        for p in range(self.n_prey):
            adjacent_captures = 0
            for i, a in enumerate(actions):
                if a == ACT_CAPTURE and self._manhattan(self._predators[i], self._prey[p]) == 1:
                    adjacent_captures += 1
            if adjacent_captures >= 2:
                reward += self.capture_reward
                self._respawn_prey(p, rng)
            elif adjacent_captures == 1:
                reward += self.single_capture_penalty

        for p in range(self.n_prey):
            self._move_prey(p, rng)

        self._t += 1
        done = self._t >= self.horizon
        return StepResult(self._observations(), reward, done)

    def _manhattan(self, a, b):
        return abs(int(a[0]) - int(b[0])) + abs(int(a[1]) - int(b[1]))

    def _respawn_prey(self, p, rng):
        occupied = {tuple(q) for q in self._predators}
        occupied |= {tuple(self._prey[q]) for q in range(self.n_prey) if q != p}
        free = [(x, y) for x in range(self.grid_size) for y in range(self.grid_size)
                if (x, y) not in occupied]
        self._prey[p] = free[rng.integers(len(free))]

    def _move_prey(self, p, rng):
        g = self.grid_size
        candidates = []
        for m in MOVES[:5]:
            nxt = self._prey[p] + m
            if 0 <= nxt[0] < g and 0 <= nxt[1] < g:
                candidates.append(nxt)
        scores = [min(self._manhattan(c, q) for q in self._predators) for c in candidates]
        best = max(scores)
        pool = [c for c, s in zip(candidates, scores) if s == best]
        self._prey[p] = pool[rng.integers(len(pool))]

    def _observations(self):
        scale = self.grid_size - 1
        obs = []
        for i in range(self.n_predators):
            own = self._predators[i]
            vec = np.zeros(5)
            vec[0] = own[0] / scale
            vec[1] = own[1] / scale
            visible = [p for p in range(self.n_prey)
                       if max(abs(self._prey[p] - own)) <= VIEW_RADIUS]
            if visible:
                nearest = min(visible, key=lambda p: self._manhattan(self._prey[p], own))
                vec[2] = (self._prey[nearest][0] - own[0]) / scale
                vec[3] = (self._prey[nearest][1] - own[1]) / scale
                vec[4] = 1.0
            obs.append(vec)
        return obs

    def _state(self):
        scale = self.grid_size - 1
        flat = np.concatenate([self._predators.ravel(), self._prey.ravel()])
        return flat.astype(np.float64) / scale

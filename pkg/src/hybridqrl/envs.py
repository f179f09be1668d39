"""Environments: classic cart-pole balancing and a pixel-rendered grid maze.

Both expose the same minimal protocol:

* ``reset(rng) -> obs``
* ``step(action) -> (obs, reward, done)``
* ``n_actions``, ``obs_shape``

Observations are float64; the maze renders its 8x8 grid as a 48x48 grayscale
image (6x6 pixel blocks: wall 0.0, free 1.0, agent 0.66, target 0.33).
"""
from __future__ import annotations

import math
from collections import deque
from importlib import resources

import numpy as np

__all__ = ["CartPole", "Maze", "load_default_maze", "random_observations"]


class CartPole:
    """Cart-pole with the textbook constants and Euler integration.

    Reward is 1 per step; the episode ends when the cart leaves +-2.4, the
    pole passes +-12 degrees, or ``max_steps`` steps elapse.
    """

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    TOTAL_MASS = MASS_CART + MASS_POLE
    LENGTH = 0.5                       # half the pole length
    POLEMASS_LENGTH = MASS_POLE * LENGTH
    FORCE_MAG = 10.0
    TAU = 0.02
    X_THRESHOLD = 2.4
    THETA_THRESHOLD = 12.0 * 2.0 * math.pi / 360.0

    n_actions = 2
    obs_shape = (4,)

    def __init__(self, max_steps: int = 500):
        self.max_steps = max_steps
        self._state = np.zeros(4)
        self._steps = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = rng.uniform(-0.05, 0.05, size=4)
        self._steps = 0
        return self._state.copy()

    def step(self, action: int):
        x, x_dot, theta, theta_dot = self._state
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self.POLEMASS_LENGTH * theta_dot ** 2 * sin_t) \
            / self.TOTAL_MASS
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / \
            (self.LENGTH * (4.0 / 3.0
                            - self.MASS_POLE * cos_t ** 2 / self.TOTAL_MASS))
        x_acc = temp - self.POLEMASS_LENGTH * theta_acc * cos_t / self.TOTAL_MASS
        x += self.TAU * x_dot
        x_dot += self.TAU * x_acc
        theta += self.TAU * theta_dot
        theta_dot += self.TAU * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])
        self._steps += 1
        failed = abs(x) > self.X_THRESHOLD or abs(theta) > self.THETA_THRESHOLD
        done = failed or self._steps >= self.max_steps
        return self._state.copy(), 1.0, done


class Maze:
    """Grid maze observed as pixels.

    Layout text: '#' wall, '.' free, 'S' start, 'T' target (one line per row).
    Without explicit 'S'/'T' the first and last free cells (row-major) are
    used.  Actions 0..3 move up/right/down/left; stepping into a wall keeps
    the position.  Rewards: +1 on reaching the target, -0.1 for a wall bump,
    -0.01 otherwise; episodes cap at ``max_steps``.
    """

    BLOCK = 6
    WALL, FREE, AGENT, TARGET = 0.0, 1.0, 0.66, 0.33
    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left

    n_actions = 4

    def __init__(self, layout: str, max_steps: int = 100):
        rows = [line for line in layout.strip().splitlines()]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("maze layout rows must be non-empty and equal length")
        self.height = len(rows)
        self.width = len(rows[0])
        self.obs_shape = (self.height * self.BLOCK, self.width * self.BLOCK, 1)
        self.walls = np.zeros((self.height, self.width), dtype=bool)
        start = target = None
        free: list[tuple[int, int]] = []
        for i, row in enumerate(rows):
            for j, ch in enumerate(row):
                if ch == "#":
                    self.walls[i, j] = True
                elif ch in ".ST":
                    free.append((i, j))
                    if ch == "S":
                        start = (i, j)
                    elif ch == "T":
                        target = (i, j)
                else:
                    raise ValueError(f"bad maze character {ch!r}")
        if not free:
            raise ValueError("maze has no free cells")
        self.start = start if start is not None else free[0]
        self.target = target if target is not None else free[-1]
        if self.start == self.target:
            raise ValueError("start and target coincide")
        self.max_steps = max_steps
        self._pos = self.start
        self._steps = 0
        if self.shortest_path_length() is None:
            raise ValueError("target not reachable from start")

    @classmethod
    def from_file(cls, path: str, max_steps: int = 100) -> "Maze":
        with open(path) as f:
            return cls(f.read(), max_steps=max_steps)

    # ------------------------------------------------------------------
    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        self._pos = self.start
        self._steps = 0
        return self.render()

    def step(self, action: int):
        di, dj = self.MOVES[action]
        ni, nj = self._pos[0] + di, self._pos[1] + dj
        bumped = (not (0 <= ni < self.height and 0 <= nj < self.width)
                  or self.walls[ni, nj])
        if not bumped:
            self._pos = (ni, nj)
        self._steps += 1
        if self._pos == self.target:
            return self.render(), 1.0, True
        reward = -0.1 if bumped else -0.01
        return self.render(), reward, self._steps >= self.max_steps

    def render(self) -> np.ndarray:
        grid = np.where(self.walls, self.WALL, self.FREE)
        grid[self.target] = self.TARGET
        grid[self._pos] = self.AGENT
        img = np.kron(grid, np.ones((self.BLOCK, self.BLOCK)))
        return img[:, :, None]

    def shortest_path_length(self) -> int | None:
        """BFS distance (moves) start -> target; None if unreachable."""
        dist = {self.start: 0}
        queue = deque([self.start])
        while queue:
            cell = queue.popleft()
            if cell == self.target:
                return dist[cell]
            for di, dj in self.MOVES:
                nxt = (cell[0] + di, cell[1] + dj)
                if (0 <= nxt[0] < self.height and 0 <= nxt[1] < self.width
                        and not self.walls[nxt] and nxt not in dist):
                    dist[nxt] = dist[cell] + 1
                    queue.append(nxt)
        return None

    def optimal_return(self) -> float:
        """Return of a shortest path: step penalties, then the target bonus."""
        d = self.shortest_path_length()
        return 1.0 - 0.01 * (d - 1)


def load_default_maze(max_steps: int = 100) -> Maze:
    text = resources.files("hybridqrl.data").joinpath("default_maze.txt").read_text()
    return Maze(text, max_steps=max_steps)


def random_observations(env, n_obs: int, rng: np.random.Generator) -> np.ndarray:
    """Observations collected under a uniform-random policy (for AE training)."""
    out = np.empty((n_obs,) + env.obs_shape)
    obs = env.reset(rng)
    for i in range(n_obs):
        out[i] = obs
        obs, _, done = env.step(int(rng.integers(env.n_actions)))
        if done:
            obs = env.reset(rng)
    return out

"""Nonstationary benchmark environments.

Gridworld: a 15x15 board split into nine 5x5 rooms by thin walls sitting on
the edges between cells, one centered doorway per shared wall segment. The
agent starts every episode at the center cell and navigates to a hidden goal;
the reward is the negative BFS shortest-path distance to the goal divided by
10, so the signal is dense and any learning failure is an optimization
problem, not an exploration one. The goal moves every `change_period` steps,
which is the nonstationarity the continual agents have to survive.

PointGoal: a continuous stand-in with the same task-sequencing shape. The
agent steers a point toward a visible goal inside the unit square while a
hidden context (action gain, wind) changes from task to task; contexts are
rejection-sampled so consecutive tasks differ enough to force re-learning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

GRID_SIZE = 15
ROOM = 5
START = (7, 7)
_DOOR_POSITIONS = (2, 7, 12)   # centered doorway in each 5-cell wall segment
_WALL_BOUNDARIES = (4, 9)      # wall between line b and b+1
EPISODE_CAP = 100

ACTIONS = ("up", "down", "left", "right")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}

# Largest shortest-path distance between any two cells on this layout,
# pinned as a regression constant; rewards therefore live in [-2.8, 0].
MAX_BFS_DISTANCE = 28

WIND_CYCLE = ((0.0, 0.0), (-1.0, -1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, 1.0))


def _edge(a, b):
    return (a, b) if a <= b else (b, a)


def build_gridworld_layout():
    """Wall edges, start cell and goal candidates for the nine-room board.

    Walls live on edges between cell pairs. Returns (walls, start,
    candidates) where walls is a frozenset of normalized cell-pair tuples.
    """
    walls = set()
    for b in _WALL_BOUNDARIES:
        for t in range(GRID_SIZE):
            if t in _DOOR_POSITIONS:
                continue
            walls.add(_edge((t, b), (t, b + 1)))   # vertical wall line
            walls.add(_edge((b, t), (b + 1, t)))   # horizontal wall line
    candidates = [
        (r, c)
        for r in range(GRID_SIZE)
        for c in range(GRID_SIZE)
        if (r, c) != START
    ]
    return frozenset(walls), START, candidates


_LAYOUT_WALLS, _, _LAYOUT_CANDIDATES = build_gridworld_layout()


def in_bounds(cell) -> bool:
    r, c = cell
    return 0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE


def passable(a, b, walls=_LAYOUT_WALLS) -> bool:
    return in_bounds(a) and in_bounds(b) and _edge(a, b) not in walls


def neighbors(cell, walls=_LAYOUT_WALLS):
    r, c = cell
    for dr, dc in _MOVES.values():
        nxt = (r + dr, c + dc)
        if passable(cell, nxt, walls):
            yield nxt


def bfs_distances(goal, walls=_LAYOUT_WALLS) -> np.ndarray:
    """Shortest-path step counts from every cell to the goal (walls aware)."""
    dist = np.full((GRID_SIZE, GRID_SIZE), -1, dtype=np.int64)
    dist[goal] = 0
    frontier = [goal]
    while frontier:
        nxt = []
        for cell in frontier:
            for nb in neighbors(cell, walls):
                if dist[nb] < 0:
                    dist[nb] = dist[cell] + 1
                    nxt.append(nb)
        frontier = nxt
    return dist


def doorway_count(walls=_LAYOUT_WALLS) -> int:
    """Open passages sitting on the four interior wall lines."""
    count = 0
    for b in _WALL_BOUNDARIES:
        for t in range(GRID_SIZE):
            if _edge((t, b), (t, b + 1)) not in walls:
                count += 1
            if _edge((b, t), (b + 1, t)) not in walls:
                count += 1
    return count


def render_ascii(goal: Optional[tuple] = None) -> str:
    """ASCII board: walls '#', open doorways ' ', start 'S', cells '.'."""
    size = 2 * GRID_SIZE + 1
    art = [[" "] * size for _ in range(size)]
    for i in range(size):
        art[0][i] = art[size - 1][i] = "#"
        art[i][0] = art[i][size - 1] = "#"
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            art[2 * r + 1][2 * c + 1] = "."
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            if c + 1 < GRID_SIZE and not passable((r, c), (r, c + 1)):
                art[2 * r + 1][2 * c + 2] = "#"
            if r + 1 < GRID_SIZE and not passable((r, c), (r + 1, c)):
                art[2 * r + 2][2 * c + 1] = "#"
    for r in range(2, size - 1, 2):
        for c in range(2, size - 1, 2):
            around = (art[r - 1][c], art[r + 1][c], art[r][c - 1], art[r][c + 1])
            if "#" in around:
                art[r][c] = "#"
    art[2 * START[0] + 1][2 * START[1] + 1] = "S"
    if goal is not None:
        art[2 * goal[0] + 1][2 * goal[1] + 1] = "G"
    return "\n".join("".join(row) for row in art)


class GridworldEnv:
    """Nine-room navigation with a hidden, periodically resampled goal."""

    discrete = True
    obs_dim = GRID_SIZE * GRID_SIZE
    n_actions = 4
    max_episode_steps = EPISODE_CAP

    def __init__(self):
        self.walls, self.start, self.goal_candidates = build_gridworld_layout()
        self._dist_cache: dict = {}
        self.goal: Optional[tuple] = None
        self.pos = self.start
        self.steps_in_episode = 0
        self._done = True

    def set_task(self, goal) -> None:
        goal = (int(goal[0]), int(goal[1]))
        if goal == self.start or not in_bounds(goal):
            raise ValueError(f"invalid goal cell {goal}")
        self.goal = goal
        if goal not in self._dist_cache:
            self._dist_cache[goal] = bfs_distances(goal, self.walls)

    def distances(self) -> np.ndarray:
        return self._dist_cache[self.goal]

    def observe(self) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[self.pos[0] * GRID_SIZE + self.pos[1]] = 1.0
        return obs

    def reset(self) -> np.ndarray:
        if self.goal is None:
            raise RuntimeError("set_task must be called before reset")
        self.pos = self.start
        self.steps_in_episode = 0
        self._done = False
        return self.observe()

    def step(self, action: int):
        if self._done:
            raise RuntimeError("step called on a finished episode; call reset")
        dr, dc = _MOVES[int(action)]
        nxt = (self.pos[0] + dr, self.pos[1] + dc)
        if passable(self.pos, nxt, self.walls):
            self.pos = nxt
        self.steps_in_episode += 1
        dist = int(self.distances()[self.pos])
        reward = -dist / 10.0
        success = self.pos == self.goal
        self._done = success or self.steps_in_episode >= self.max_episode_steps
        return self.observe(), reward, self._done, success


@dataclass
class ContextVector:
    """Hidden simulation parameters for the point-goal environment."""

    action_gain: float = 1.0
    wind_x: float = 0.0
    wind_y: float = 0.0

    def continuous(self) -> np.ndarray:
        return np.array([self.action_gain])


@dataclass
class PointGoalBounds:
    action_gain_low: float = 0.5
    action_gain_high: float = 1.5
    min_change: float = 0.25

    def validate(self) -> None:
        if self.action_gain_high < self.action_gain_low:
            raise ValueError("action gain bounds are inverted")
        if self.min_change < 0:
            raise ValueError("min_change must be >= 0")


class PointGoalEnv:
    """Continuous point navigation in the unit square under a hidden context."""

    discrete = False
    obs_dim = 4
    action_dim = 2
    max_episode_steps = 200

    STEP_SCALE = 0.05
    WIND_SCALE = 0.01
    SUCCESS_RADIUS = 0.05

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self.context = ContextVector()
        self.pos = np.full(2, 0.5)
        self.goal = np.full(2, 0.5)
        self.steps_in_episode = 0
        self._done = True

    def set_task(self, context: ContextVector) -> None:
        self.context = context

    def observe(self) -> np.ndarray:
        return np.concatenate([self.pos, self.goal])

    def reset(self) -> np.ndarray:
        self.pos = np.full(2, 0.5)
        self.goal = self._rng.uniform(0.0, 1.0, size=2)
        self.steps_in_episode = 0
        self._done = False
        return self.observe()

    def step(self, action: np.ndarray):
        if self._done:
            raise RuntimeError("step called on a finished episode; call reset")
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        wind = np.array([self.context.wind_x, self.context.wind_y])
        self.pos = np.clip(
            self.pos + self.STEP_SCALE * self.context.action_gain * action
            + self.WIND_SCALE * wind,
            0.0,
            1.0,
        )
        self.steps_in_episode += 1
        dist = float(np.linalg.norm(self.pos - self.goal))
        success = dist < self.SUCCESS_RADIUS
        self._done = success or self.steps_in_episode >= self.max_episode_steps
        return self.observe(), -dist, self._done, success


def next_gridworld_goal(current, candidates, rng: np.random.Generator):
    """Uniform draw from the goal candidates, excluding the current goal."""
    pool = [c for c in candidates if c != current]
    return pool[int(rng.integers(len(pool)))]


_REJECTION_CAP = 100_000


def next_pointgoal_context(
    current: Optional[ContextVector],
    bounds: PointGoalBounds,
    wind_index: int,
    rng: np.random.Generator,
) -> tuple[ContextVector, int]:
    """Draw the next context; continuous parts are rejection-sampled.

    The l1 change requirement applies to the continuous components only; the
    wind pair cycles deterministically through a fixed 5-element list, one
    advance per accepted task. Returns (context, next wind index).
    """
    bounds.validate()
    wind = WIND_CYCLE[wind_index % len(WIND_CYCLE)]
    for _ in range(_REJECTION_CAP):
        gain = float(rng.uniform(bounds.action_gain_low, bounds.action_gain_high))
        ctx = ContextVector(action_gain=gain, wind_x=wind[0], wind_y=wind[1])
        if current is None or bounds.min_change == 0.0:
            return ctx, wind_index + 1
        change = float(np.sum(np.abs(ctx.continuous() - current.continuous())))
        if change >= bounds.min_change:
            return ctx, wind_index + 1
    raise ValueError(
        f"could not draw a context differing by >= {bounds.min_change} "
        f"within {_REJECTION_CAP} rejections; bounds too tight"
    )


@dataclass
class TaskSequence:
    """Pregenerated task list; task k is active for steps [k*p, (k+1)*p)."""

    tasks: list
    change_period: int

    def __len__(self):
        return len(self.tasks)


def generate_gridworld_tasks(count: int, change_period: int,
                             rng: np.random.Generator) -> TaskSequence:
    _, _, candidates = build_gridworld_layout()
    tasks = []
    current = None
    for _ in range(count):
        current = next_gridworld_goal(current, candidates, rng)
        tasks.append(current)
    return TaskSequence(tasks, change_period)


def generate_pointgoal_tasks(count: int, change_period: int,
                             rng: np.random.Generator,
                             bounds: Optional[PointGoalBounds] = None) -> TaskSequence:
    bounds = bounds or PointGoalBounds()
    tasks = []
    current = None
    wind_index = 0
    for _ in range(count):
        current, wind_index = next_pointgoal_context(current, bounds, wind_index, rng)
        tasks.append(current)
    return TaskSequence(tasks, change_period)

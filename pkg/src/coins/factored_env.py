"""Factored Breakout on an 84x84 integer grid, with ground-truth contact labels.

State layout per factor:
  paddle, ball : [pos_y, pos_x, vel_y, vel_x]
  block_i      : [pos_y, pos_x, alive]

The ball advances by its current velocity every step. Contacts found at the new
cell change the velocity (and kill blocks) but never teleport the ball, so a
contact shows up in the *velocity* of the next state. The paddle is moved after
the ball, so the pre-step paddle decides a bounce.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOARD = 84
PADDLE_ROW = 78
PADDLE_WIDTH = 8
PADDLE_MAX_X = BOARD - PADDLE_WIDTH
BLOCK_W, BLOCK_H = 8, 3
GRID_TOP, GRID_LEFT = 10, 2
ACTION_SHIFT = (-2, 0, 2)  # left, noop, right
# paddle quartile struck -> post-bounce (vel_y, vel_x)
QUARTILE_VELOCITY = ((-1, -1), (-2, -1), (-2, 1), (-1, 1))
BALL_VELOCITIES = QUARTILE_VELOCITY
DROP_PENALTY = -10.0
VARIANTS = ("base", "single", "hard", "big", "neg", "center", "prox")


@dataclass
class FactorSpec:
    name: str
    feature_count: int
    ranges: np.ndarray  # (k, 2) lo/hi in grid units
    # largest possible one-step change per feature, used to express deviations
    # of next-state features in comparable units
    step_scale: np.ndarray
    # index pairs (position, velocity) describing the same axis of motion
    motion_pairs: tuple = ()

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=np.float64).reshape(self.feature_count, 2)
        self.step_scale = np.asarray(self.step_scale, dtype=np.float64).reshape(self.feature_count)
        if np.any(self.ranges[:, 0] >= self.ranges[:, 1]):
            raise ValueError(f"factor {self.name}: every range needs lo < hi")
        self._mid = self.ranges.mean(axis=1)
        self._half = 0.5 * (self.ranges[:, 1] - self.ranges[:, 0])

    @property
    def mid(self):
        return self._mid

    @property
    def half(self):
        return self._half


@dataclass
class FactorSchema:
    factors: list
    action_arity: int

    def __post_init__(self):
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError("factor names must be unique")
        self._index = {f.name: i for i, f in enumerate(self.factors)}
        offs = np.cumsum([0] + [f.feature_count for f in self.factors])
        self._slices = {f.name: slice(int(offs[i]), int(offs[i + 1])) for i, f in enumerate(self.factors)}
        self.state_dim = int(offs[-1])

    @property
    def names(self):
        return [f.name for f in self.factors]

    def spec(self, name) -> FactorSpec:
        return self.factors[self._index[name]]

    def index(self, name) -> int:
        return self._index[name]

    def slice(self, name) -> slice:
        return self._slices[name]

    def normalize(self, name, values):
        s = self.spec(name)
        return (np.asarray(values, dtype=np.float64) - s.mid) / s.half

    def denormalize(self, name, values):
        s = self.spec(name)
        return np.asarray(values, dtype=np.float64) * s.half + s.mid


def breakout_schema(n_blocks=100) -> FactorSchema:
    pos = [0.0, BOARD - 1.0]
    vel = [-2.0, 2.0]
    paddle = FactorSpec("paddle", 4, [pos, pos, vel, vel], [1.0, 2.0, 4.0, 4.0], ((0, 2), (1, 3)))
    ball = FactorSpec("ball", 4, [pos, pos, vel, vel], [2.0, 1.0, 4.0, 2.0], ((0, 2), (1, 3)))
    blocks = [FactorSpec(f"block_{i}", 3, [pos, pos, [0.0, 1.0]], [1.0, 1.0, 1.0]) for i in range(n_blocks)]
    return FactorSchema([paddle, ball] + blocks, action_arity=3)


@dataclass
class VariantConfig:
    kind: str = "base"
    seed: int = 0


@dataclass
class Transition:
    state: np.ndarray
    action: int
    next_state: np.ndarray
    reward: float
    done: bool
    oracle: frozenset = field(default_factory=frozenset)


class EpisodeFinished(RuntimeError):
    pass


class Breakout:
    """Deterministic Breakout. Same variant, seed and action sequence give the same run."""

    def __init__(self, kind="base", seed=0, max_steps=10000):
        if kind not in VARIANTS:
            raise ValueError(f"unknown variant {kind!r}; expected one of {VARIANTS}")
        self.kind = kind
        self.seed = seed
        self.max_steps = max_steps
        self.rng = np.random.default_rng(seed)
        self.n_blocks = {"base": 100, "center": 100, "prox": 100, "single": 1,
                         "hard": 11, "big": 1, "neg": 10}[kind]
        self.schema = breakout_schema(self.n_blocks)
        self.block_names = [f"block_{i}" for i in range(self.n_blocks)]
        self.bounce_penalty = -1.0 if kind in ("single", "center") else 0.0
        self.sign = np.ones(self.n_blocks)
        if kind == "neg":
            self.sign = self.rng.permutation([1.0] * 5 + [-1.0] * 5)
        self.done = True
        self.reset()

    # ----------------------------------------------------------------- layout
    def _grid_slot(self, k):
        r, c = divmod(int(k), 10)
        return GRID_TOP + BLOCK_H * r, GRID_LEFT + BLOCK_W * c

    def _layout(self, rng):
        n = self.n_blocks
        by = np.zeros(n, dtype=np.int64)
        bx = np.zeros(n, dtype=np.int64)
        bh = np.full(n, BLOCK_H, dtype=np.int64)
        bw = np.full(n, BLOCK_W, dtype=np.int64)
        hard = np.zeros(n, dtype=bool)
        value = np.ones(n)
        if self.kind in ("base", "center", "prox"):
            for k in range(n):
                by[k], bx[k] = self._grid_slot(k)
            if self.kind == "center":
                cols = np.arange(n) % 10
                hard[(cols >= 3) & (cols <= 6)] = True
        elif self.kind in ("single", "hard"):
            slots = rng.choice(100, size=n, replace=False)
            for k, s in enumerate(slots):
                by[k], bx[k] = self._grid_slot(s)
            hard[1:] = True
        elif self.kind == "big":
            by[0], bx[0] = 14, GRID_LEFT + 20 * int(rng.integers(4))
            bh[0], bw[0] = 6, 20
        elif self.kind == "neg":
            for k in range(n):
                by[k], bx[k] = self._grid_slot(k)
            value = self.sign.copy()
        value[hard] = 0.0
        return by, bx, bh, bw, hard, value

    def _paint(self, k, val):
        self.cell[self.by[k]:self.by[k] + self.bh[k], self.bx[k]:self.bx[k] + self.bw[k]] = val

    # ----------------------------------------------------------------- api
    def reset(self, seed=None):
        rng = self.rng if seed is None else np.random.default_rng(seed)
        self.by, self.bx, self.bh, self.bw, self.hard, self.value = self._layout(rng)
        self.alive = np.ones(self.n_blocks, dtype=np.int64)
        self.cell = np.full((BOARD, BOARD), -1, dtype=np.int64)
        for k in range(self.n_blocks):
            self._paint(k, k)
        self.px = int(rng.integers(0, PADDLE_MAX_X // 2 + 1)) * 2
        self.pv = 0
        self.y = int(rng.integers(46, 62))
        self.x = int(rng.integers(4, BOARD - 4))
        self.vy, self.vx = BALL_VELOCITIES[int(rng.integers(4))]
        self.target = int(rng.integers(self.n_blocks)) if self.kind == "prox" else -1
        self.remaining = int(np.sum(~self.hard))
        self.t = 0
        self.hits = 0
        self.awaiting_block = False
        self.done = False
        return self.state()

    def state(self) -> np.ndarray:
        s = np.empty(self.schema.state_dim)
        s[0:4] = (PADDLE_ROW, self.px, 0, self.pv)
        s[4:8] = (self.y, self.x, self.vy, self.vx)
        blk = s[8:].reshape(self.n_blocks, 3)
        blk[:, 0] = self.by
        blk[:, 1] = self.bx
        blk[:, 2] = self.alive
        return s

    def paddle_vec(self):
        return np.array([PADDLE_ROW, self.px, 0, self.pv], dtype=np.float64)

    def ball_vec(self):
        return np.array([self.y, self.x, self.vy, self.vx], dtype=np.float64)

    def step(self, action) -> Transition:
        s = self.state()
        reward, done, bounce, hit = self.advance(action)
        oracle = {("action", "paddle")}
        if bounce:
            oracle.add(("paddle", "ball"))
        if hit >= 0:
            oracle.add(("ball", self.block_names[hit]))
        return Transition(s, int(action), self.state(), reward, done, frozenset(oracle))

    def advance(self, action):
        """Step without building arrays. Returns (reward, done, paddle_bounce, block_hit)."""
        if self.done:
            raise EpisodeFinished("episode is over; call reset()")
        action = int(action)
        if not 0 <= action < 3:
            raise ValueError(f"action {action} outside [0, 3)")
        y, x, vy, vx = self.y, self.x, self.vy, self.vx
        ny, nx = y + vy, x + vx
        if nx < 0:
            nx, vx = -nx, -vx
        elif nx > BOARD - 1:
            nx, vx = 2 * (BOARD - 1) - nx, -vx
        if ny < 0:
            ny, vy = -ny, -vy
        reward = 0.0
        done = False
        bounce = False
        hit = -1
        if vy > 0 and y < PADDLE_ROW <= ny:
            if self.px <= nx < self.px + PADDLE_WIDTH:
                vy, vx = QUARTILE_VELOCITY[(nx - self.px) // 2]
                bounce = True
                reward += self.bounce_penalty
                if self.kind == "big":
                    if self.awaiting_block:
                        reward += DROP_PENALTY
                        done = True
                    self.awaiting_block = True
            else:
                reward += DROP_PENALTY
                done = True
        elif ny < BOARD:
            k = self.cell[ny, nx]
            if k >= 0:
                hit = int(k)
                if self.hard[k]:
                    ny, nx = y, x
                    vy = -vy
                else:
                    vy = -vy
                    self.alive[k] = 0
                    self._paint(k, -1)
                    self.hits += 1
                    self.remaining -= 1
                    reward += self._block_reward(k)
                    done = done or self._block_ends(k)
        self.y, self.x, self.vy, self.vx = ny, nx, vy, vx
        npx = min(max(self.px + ACTION_SHIFT[action], 0), PADDLE_MAX_X)
        self.pv = npx - self.px
        self.px = npx
        self.t += 1
        if self.t >= self.max_steps:
            done = True
        if not done and self.remaining == 0:
            done = True
        self.done = done
        return reward, done, bounce, hit

    def _block_reward(self, k):
        if self.kind == "prox":
            d = np.hypot(self.by[k] - self.by[self.target], self.bx[k] - self.bx[self.target])
            return float(1.0 - 2.0 * min(1.0, d / 42.0))
        return float(self.value[k])

    def _block_ends(self, k):
        if self.kind in ("single", "hard", "big"):
            return True
        if self.kind == "neg":
            return self.hits >= 5
        if self.kind == "prox":
            return k == self.target
        return False


Environment = Breakout


def make_env(config: VariantConfig, max_steps=10000) -> Breakout:
    return Breakout(config.kind, config.seed, max_steps=max_steps)


def reset(env: Breakout, seed: int):
    return env.reset(seed)


def step(env: Breakout, action: int) -> Transition:
    return env.step(action)


def synth_var1(coupling, noise_sd, length, seed=0, alpha=0.5, beta=0.7):
    """Two coupled scalar AR(1) series: a drives b, b never drives a.

    b[t+1] = alpha*b[t] + coupling*a[t] + e,  a[t+1] = beta*a[t] + e'
    """
    if length <= 0:
        raise ValueError("length must be positive")
    if length < 10:
        raise ValueError("length must be at least 10")
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    rng = np.random.default_rng(seed)
    ea = rng.normal(0.0, noise_sd, length)
    eb = rng.normal(0.0, noise_sd, length)
    a = np.zeros(length)
    b = np.zeros(length)
    for t in range(length - 1):
        a[t + 1] = beta * a[t] + ea[t]
        b[t + 1] = alpha * b[t] + coupling * a[t] + eb[t]
    return a, b

"""Growing store of factored Breakout transitions (the dataset D)."""
from __future__ import annotations

import numpy as np

from .factored_env import PADDLE_ROW, Breakout, breakout_schema

ARRAYS = ("paddle", "ball", "alive", "paddle_next", "ball_next", "alive_next",
          "action", "reward", "done", "bounce", "hit")


class Trace:
    """Columnar transition log. Block positions are fixed per layout, so only
    the alive flags are stored per step."""

    def __init__(self, n_blocks=100, block_pos=None, capacity=1024):
        self.n_blocks = n_blocks
        self.schema = breakout_schema(n_blocks)
        self.block_pos = None if block_pos is None else np.asarray(block_pos, dtype=np.float32)
        self.n = 0
        self._alloc(capacity)

    def _alloc(self, cap):
        nb = self.n_blocks
        shapes = {
            "paddle": ((cap, 4), np.float32), "ball": ((cap, 4), np.float32),
            "alive": ((cap, nb), np.uint8), "paddle_next": ((cap, 4), np.float32),
            "ball_next": ((cap, 4), np.float32), "alive_next": ((cap, nb), np.uint8),
            "action": ((cap,), np.int8), "reward": ((cap,), np.float32),
            "done": ((cap,), np.bool_), "bounce": ((cap,), np.bool_), "hit": ((cap,), np.int16),
        }
        for k, (shape, dt) in shapes.items():
            new = np.zeros(shape, dtype=dt)
            old = getattr(self, "_" + k, None)
            if old is not None:
                new[:self.n] = old[:self.n]
            setattr(self, "_" + k, new)
        self.capacity = cap

    def __len__(self):
        return self.n

    def __getattr__(self, name):
        if name in ARRAYS:
            return self.__dict__["_" + name][:self.n]
        raise AttributeError(name)

    def record(self, env: Breakout, action, reward, done, bounce, hit, prev):
        """Append one step. ``prev`` is (paddle, ball, alive) captured before stepping."""
        if self.block_pos is None:
            self.block_pos = np.stack([env.by, env.bx], axis=1).astype(np.float32)
        if self.n == self.capacity:
            self._alloc(self.capacity * 2)
        i = self.n
        self._paddle[i], self._ball[i], self._alive[i] = prev
        self._paddle_next[i] = (PADDLE_ROW, env.px, 0, env.pv)
        self._ball_next[i] = (env.y, env.x, env.vy, env.vx)
        self._alive_next[i] = env.alive
        self._action[i] = action
        self._reward[i] = reward
        self._done[i] = done
        self._bounce[i] = bounce
        self._hit[i] = hit
        self.n += 1

    def extend(self, other: "Trace"):
        if other.n_blocks != self.n_blocks:
            raise ValueError("block count mismatch")
        if self.block_pos is None:
            self.block_pos = other.block_pos
        need = self.n + other.n
        if need > self.capacity:
            self._alloc(max(need, 2 * self.capacity))
        for k in ARRAYS:
            getattr(self, "_" + k)[self.n:need] = getattr(other, k)
        self.n = need

    def subset(self, idx) -> "Trace":
        idx = np.asarray(idx)
        out = Trace(self.n_blocks, self.block_pos, capacity=max(1, len(idx)))
        for k in ARRAYS:
            getattr(out, "_" + k)[:len(idx)] = getattr(self, k)[idx]
        out.n = len(idx)
        return out

    def factor(self, name, nxt=False):
        """Raw (N, k) float32 features of one factor, or a one-hot action block."""
        if name == "action":
            out = np.zeros((self.n, 3), dtype=np.float32)
            out[np.arange(self.n), self.action.astype(np.int64)] = 1.0
            return out
        suffix = "_next" if nxt else ""
        if name in ("paddle", "ball"):
            return getattr(self, name + suffix)
        k = int(name.split("_")[1])
        out = np.empty((self.n, 3), dtype=np.float32)
        out[:, 0:2] = self.block_pos[k]
        out[:, 2] = getattr(self, "alive" + suffix)[:, k]
        return out

    def blocks(self, nxt=False, ids=None):
        """(n_blocks, N, 3) raw block features, or only the blocks in ``ids``."""
        ids = np.arange(self.n_blocks) if ids is None else np.asarray(ids)
        alive = getattr(self, "alive_next" if nxt else "alive")
        out = np.empty((len(ids), self.n, 3), dtype=np.float32)
        out[:, :, 0:2] = self.block_pos[ids][:, None, :]
        out[:, :, 2] = alive[:, ids].T
        return out

    def tail(self, n):
        """View-backed copy of the most recent ``n`` records."""
        n = min(n, self.n)
        return self.subset(np.arange(self.n - n, self.n))

    def arrays(self):
        return {k: getattr(self, k) for k in ARRAYS}

    @classmethod
    def from_arrays(cls, arrays, n_blocks, block_pos):
        n = len(arrays["action"])
        out = cls(n_blocks, block_pos, capacity=max(1, n))
        for k in ARRAYS:
            getattr(out, "_" + k)[:n] = arrays[k]
        out.n = n
        return out


def capture(env: Breakout):
    return ((PADDLE_ROW, env.px, 0, env.pv), (env.y, env.x, env.vy, env.vx), env.alive.copy())


class Recorder:
    """Step hook appending every primitive transition to a Trace."""

    def __init__(self, trace: Trace):
        self.trace = trace

    def __call__(self, env, action, prev, reward, done, bounce, hit):
        self.trace.record(env, action, reward, done, bounce, hit, prev)


def collect_random(env: Breakout, steps, rng, trace=None):
    """Uniform random primitive actions, resetting on episode end."""
    trace = trace if trace is not None else Trace(env.n_blocks)
    acts = rng.integers(0, 3, size=steps)
    if env.done:
        env.reset()
    for a in acts:
        prev = capture(env)
        r, d, b, h = env.advance(int(a))
        trace.record(env, int(a), r, d, b, h, prev)
        if d:
            env.reset()
    return trace

"""Goal-conditioned double-Q learner: network, replay, updates, and the skill training loop."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .nets import Adam, init_mlp, mlp_backward, mlp_forward


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    step_size: float = 5e-4
    batch_size: int = 64
    buffer_capacity: int = 200_000
    target_sync_every: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_frac: float = 0.2  # fraction of the budget over which epsilon decays
    n_complete: int = 10_000
    updates_per_collect: int = 2
    hidden: int = 64
    success_window: int = 100
    hindsight_rate: float = 0.5
    # a plateau only ends training once the rolling success rate is at least this
    # high; rare successes make low plateaus look flat long before learning is done
    converge_min_rate: float = 0.9
    warmup: int = 500  # records in the buffer before updates start
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be at least batch_size")

    def epsilon(self, step, budget):
        horizon = max(1.0, self.epsilon_decay_frac * budget)
        frac = min(1.0, step / horizon)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class QNetwork:
    """MLP mapping an observation (state features plus goal features) to one value per action."""

    def __init__(self, input_dim, action_count, hidden=64, rng=None, params=None):
        self.input_dim = int(input_dim)
        self.action_count = int(action_count)
        self.hidden = int(hidden)
        if params is None:
            params = init_mlp([input_dim, hidden, hidden, action_count], 1, rng)
        self.params = params
        self.opt = None

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out, _ = mlp_forward(self.params, (x[None] if single else x)[None])
        return out[0, 0] if single else out[0]

    def copy(self):
        return QNetwork(self.input_dim, self.action_count, self.hidden, params=[p.copy() for p in self.params])

    def load_from(self, other):
        for p, q in zip(self.params, other.params):
            p[...] = q


class ReplayBuffer:
    """Fixed-capacity ring of (obs, action, reward, next_obs, done); the oldest record is overwritten."""

    def __init__(self, capacity, obs_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.size = 0
        self.head = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done):
        i = self.head
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def ordered(self):
        """Indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.head + np.arange(self.capacity)) % self.capacity

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {"obs": self.obs[idx], "action": self.action[idx], "reward": self.reward[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx]}


def select_action(q: QNetwork, obs, epsilon, rng):
    """Epsilon-greedy; argmax ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.action_count))
    return int(np.argmax(q(obs)))


def td_targets(q, target_q, batch, gamma):
    """r + gamma (1 - done) Q_target(s', argmax_a Q(s', a))."""
    nxt = np.asarray(batch["next_obs"], dtype=np.float64)
    a_star = np.argmax(q(nxt), axis=1)
    v = target_q(nxt)[np.arange(len(a_star)), a_star]
    return batch["reward"] + gamma * (1.0 - batch["done"]) * v


def q_loss_and_grads(q: QNetwork, batch, targets):
    """0.5 * mean squared TD error of the taken actions, with targets held fixed."""
    x = np.asarray(batch["obs"], dtype=np.float64)[None]
    out, acts = mlp_forward(q.params, x)
    B = x.shape[1]
    a = np.asarray(batch["action"])
    pred = out[0, np.arange(B), a]
    delta = pred - targets
    loss = 0.5 * float(np.mean(delta * delta))
    dout = np.zeros_like(out)
    dout[0, np.arange(B), a] = delta / B
    grads, _ = mlp_backward(q.params, acts, dout)
    return loss, grads


def update_q(q: QNetwork, target_q: QNetwork, batch, config: LearnerConfig):
    """One double-Q gradient step. Returns the loss before the step."""
    if q.opt is None:
        q.opt = Adam(q.params, lr=config.step_size)
    y = td_targets(q, target_q, batch, config.gamma)
    loss, grads = q_loss_and_grads(q, batch, y)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite TD loss")
    q.opt.step(q.params, grads)
    return loss


class Learner:
    """Online network, lagged target network, replay, and the step counters tying them together."""

    def __init__(self, obs_dim, action_count, config: LearnerConfig, rng=None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.q = QNetwork(obs_dim, action_count, config.hidden, self.rng)
        self.target = self.q.copy()
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim)
        self.updates = 0
        self.last_loss = float("nan")

    def push(self, obs, action, reward, next_obs, done):
        self.buffer.add(obs, action, reward, next_obs, done)

    def train(self, n_updates):
        cfg = self.config
        if len(self.buffer) < max(cfg.batch_size, cfg.warmup):
            return None
        losses = []
        for _ in range(n_updates):
            batch = self.buffer.sample(cfg.batch_size, self.rng)
            losses.append(update_q(self.q, self.target, batch, cfg))
            self.updates += 1
            if self.updates % cfg.target_sync_every == 0:
                self.target.load_from(self.q)
        self.last_loss = float(np.mean(losses))
        return self.last_loss


class SuccessTracker:
    """Rolling success over the last ``window`` goal attempts plus the convergence rule:
    stop once the rolling rate moved by less than ``tol`` across ``n_complete`` env steps."""

    def __init__(self, window=100, n_complete=10_000, tol=0.01):
        self.window = deque(maxlen=window)
        self.n_complete = n_complete
        self.tol = tol
        self.history = []  # (step, rate)

    def add(self, success):
        self.window.append(bool(success))

    @property
    def rate(self):
        return float(np.mean(self.window)) if self.window else 0.0

    def converged(self, step):
        if len(self.window) < self.window.maxlen:
            return False
        self.history.append((step, self.rate))
        old = [r for s, r in self.history if s <= step - self.n_complete]
        if not old:
            return False
        return abs(self.rate - old[-1]) < self.tol


def train_skill(env, skill, config: LearnerConfig, budget, rng=None, log=None, curve_every=1000,
                stop_on_convergence=True, on_step=None):
    """Train ``skill.policy`` by goal attempts with hindsight relabeling.

    Returns a list of (env_step, success_rate, mean_return, loss) rows. A
    zero budget returns an empty curve without touching the skill. The
    convergence rule is only consulted once epsilon has finished decaying and
    the rolling success rate has reached ``config.converge_min_rate``.
    """
    from .skills import execute_skill, relabel_hindsight, sample_goal

    curve = []
    if budget <= 0:
        return curve
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    learner = skill.learner
    if learner is None:
        learner = Learner(skill.obs_dim, skill.action_count, config, rng)
        skill.learner = learner
        skill.policy = learner.q
    tracker = SuccessTracker(config.success_window, config.n_complete)
    steps = 0
    next_log = curve_every
    returns = deque(maxlen=100)
    ep_return = 0.0
    any_success = False
    if env.done:
        env.reset()
    while steps < budget:
        goal = sample_goal(skill, rng)
        eps = config.epsilon(steps, budget)
        ep = execute_skill(env, skill, goal, budget - steps, rng=rng, epsilon=eps, on_step=on_step)
        steps += ep.steps
        ep_return += ep.env_return
        outcome = ep.outcome(skill)
        if outcome is not None:
            tracker.add(outcome)
        any_success |= ep.terminated
        for seg in ep.segments:
            learner.push(*skill.transition(seg, goal, config.gamma))
        for g, segs in relabel_hindsight(ep, config.hindsight_rate, rng, skill):
            for seg in segs:
                learner.push(*skill.transition(seg, g, config.gamma))
        learner.train(config.updates_per_collect * len(ep.segments))
        if env.done:
            returns.append(ep_return)
            ep_return = 0.0
            env.reset()
        if steps >= next_log or steps >= budget:
            row = (steps, tracker.rate, float(np.mean(returns)) if returns else float("nan"), learner.last_loss)
            curve.append(row)
            if log is not None:
                log(*row)
            next_log = steps + curve_every
        if (stop_on_convergence and steps >= config.epsilon_decay_frac * budget
                and tracker.rate >= config.converge_min_rate and tracker.converged(steps)):
            break
    skill.train_steps += steps
    if not any_success:
        skill.diagnostic = "budget exhausted without any success"
    return curve

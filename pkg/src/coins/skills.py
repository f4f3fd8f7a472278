"""Goal-conditioned skills over one factor: termination, reward, hierarchical execution, hindsight."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import capture
from .factored_env import PADDLE_ROW, Breakout
from .interaction import ControlMask, Detector
from .rl import select_action

EPS_REW = 0.1
RELATIVE_D = 0.2
RELATIVE_OUTPUTS = np.linspace(-1.0, 1.0, 17)
PRIMITIVE_ACTIONS = 3


def factor_vec(env: Breakout, name):
    """Raw feature vector of one factor read straight from the simulator."""
    if name == "paddle":
        return np.array([PADDLE_ROW, env.px, 0.0, env.pv])
    if name == "ball":
        return np.array([env.y, env.x, env.vy, env.vx], dtype=np.float64)
    k = int(name.split("_")[1])
    return np.array([env.by[k], env.bx[k], env.alive[k]], dtype=np.float64)


def terminates(s_a, s_b, s_b_next, goal, skill, detector=None):
    """Interaction detected on this transition and the masked next state lies within eps_c of the goal."""
    detector = detector or skill.detector
    if not detector(s_a, s_b, s_b_next):
        return False
    return skill.reached(np.asarray(s_b_next)[skill.mask.index], goal)


def skill_reward(termination, eps_rew=EPS_REW):
    if not 0.0 < eps_rew <= 1.0:
        raise ValueError("eps_rew must lie in (0, 1]")
    return 0.0 if termination else -eps_rew


def remap_relative_action(policy_output, d, mask, s_b, low=None, high=None, schema_spec=None):
    """Goal = s_b shifted on masked features by output * d * feature range, clipped.

    ``policy_output`` has one entry per masked feature. ``low``/``high`` give the
    clip range per feature (full length); they default to the schema ranges.
    """
    bits = mask.bits if isinstance(mask, ControlMask) else np.asarray(mask)
    idx = np.flatnonzero(bits)
    s_b = np.asarray(s_b, dtype=np.float64)
    if low is None:
        low = schema_spec.ranges[:, 0]
        high = schema_spec.ranges[:, 1]
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    out = s_b.copy()
    out[idx] = np.clip(s_b[idx] + np.asarray(policy_output, dtype=np.float64) * d * (high[idx] - low[idx]),
                       low[idx], high[idx])
    return out


@dataclass
class Segment:
    """One decision of a skill: the chosen action and what followed until the next decision."""
    feat: np.ndarray
    sb: np.ndarray  # masked target at the decision
    action: int
    feat_next: np.ndarray
    sb_next: np.ndarray
    achieved: list  # masked target values at detected interactions within the segment
    terminated: bool
    episode_end: bool
    steps: int
    env_return: float


@dataclass
class GoalEpisode:
    goal: np.ndarray
    segments: list = field(default_factory=list)
    terminated: bool = False
    timed_out: bool = False
    episode_end: bool = False
    steps: int = 0
    env_return: float = 0.0
    depth: int = 0

    def outcome(self, skill):
        """True on success, False on failure, None when the attempt was cut short by
        the budget or by an episode end the skill is not blamed for."""
        if self.terminated:
            return True
        if self.timed_out or (self.episode_end and skill.end_is_failure):
            return False
        return None


class Skill:
    """Controller moving ``target`` toward a goal in its mask's goal space by choosing
    goals for ``parent`` (or primitive actions when there is no parent)."""

    def __init__(self, source, target, mask: ControlMask, detector: Detector, goal_proximity, timeout,
                 parent=None, schema=None, eps_rew=EPS_REW, relative_d=RELATIVE_D,
                 relative_outputs=RELATIVE_OUTPUTS, end_is_failure=None):
        self.source = source
        self.target = target
        self.mask = mask
        self.detector = detector
        self.goal_proximity = float(goal_proximity)
        self.timeout = int(timeout)
        self.parent = parent
        self.schema = schema if schema is not None else detector.schema
        self.eps_rew = eps_rew
        self.relative_d = relative_d
        self.relative_outputs = np.asarray(relative_outputs, dtype=np.float64)
        # a lost episode counts as a permanent failure unless the skill sits
        # directly on primitive actions (its target is untouched by the loss)
        self.end_is_failure = parent is not None if end_is_failure is None else end_is_failure
        self.policy = None
        self.learner = None
        self.train_steps = 0
        self.diagnostic = ""
        self._spec = self.schema.spec(target)
        self._idx = mask.index
        self._gmid = self._spec.mid[self._idx]
        self._ghalf = self._spec.half[self._idx]
        self.obs_dim = len(self._state_features_dummy()) + self.goal_feature_dim

    # ------------------------------------------------------------ spaces
    @property
    def level(self):
        return 1 if self.parent is None else self.parent.level + 1

    @property
    def action_space(self):
        """Primitive actions, or the parent's goal space."""
        if self.parent is None:
            return {"primitive": PRIMITIVE_ACTIONS}
        return self.parent.mask.goal_space

    @property
    def action_count(self):
        if self.parent is None:
            return PRIMITIVE_ACTIONS
        if self.parent.mask.kind == "discrete":
            return len(self.parent.mask.values)
        return len(self.relative_outputs)

    @property
    def goal_feature_dim(self):
        k = len(self._idx)
        extra = len(self.mask.values) if self.mask.kind == "discrete" else 0
        return 2 * k + extra

    def parent_goal(self, a, env):
        """Translate this skill's action id into a goal for the parent skill."""
        pm = self.parent.mask
        if pm.kind == "discrete":
            return pm.values[a]
        s_p = factor_vec(env, self.parent.target)
        pspec = self.schema.spec(self.parent.target)
        low = pspec.ranges[:, 0].astype(np.float64).copy()
        high = pspec.ranges[:, 1].astype(np.float64).copy()
        low[pm.index], high[pm.index] = pm.low, pm.high
        out = self.relative_outputs[a] * np.ones(len(pm.index))
        return remap_relative_action(out, self.relative_d, pm, s_p, low, high)[pm.index]

    # ------------------------------------------------------------ features
    def _state_features_dummy(self):
        nb = self._spec.feature_count
        if self.source == "action":
            return np.zeros(nb)
        na = self.schema.spec(self.source).feature_count
        return np.zeros(na + nb + 2)

    def state_features(self, env):
        s_b = factor_vec(env, self.target)
        nb = (s_b - self._spec.mid) / self._spec.half
        if self.source == "action":
            return nb
        s_a = factor_vec(env, self.source)
        sa_spec = self.schema.spec(self.source)
        na = (s_a - sa_spec.mid) / sa_spec.half
        rel = (s_a[0:2] - s_b[0:2]) / self._spec.half[0:2]
        return np.concatenate([na, nb, rel])

    def goal_features(self, goal, sb_masked):
        goal = np.asarray(goal, dtype=np.float64)
        parts = [(goal - self._gmid) / self._ghalf, (goal - sb_masked) / self._ghalf]
        if self.mask.kind == "discrete":
            parts.append(np.all(self.mask.values == goal, axis=1).astype(np.float64))
        return np.concatenate(parts)

    def observe(self, feat, sb_masked, goal):
        return np.concatenate([feat, self.goal_features(goal, sb_masked)])

    def reached(self, sb_masked, goal):
        return float(np.sum(np.abs(np.asarray(sb_masked) - goal))) < self.goal_proximity

    # ------------------------------------------------------------ learning records
    def segment_outcome(self, seg: Segment, goal, gamma=0.99):
        """(reward, done) of a segment judged against ``goal``."""
        hit = any(self.reached(v, goal) for v in seg.achieved)
        if hit:
            return 0.0, True
        if seg.episode_end and self.end_is_failure:
            return -self.eps_rew / (1.0 - gamma), True
        return -self.eps_rew, False

    def transition(self, seg: Segment, goal, gamma=0.99):
        r, done = self.segment_outcome(seg, goal, gamma)
        return (self.observe(seg.feat, seg.sb, goal), seg.action, r,
                self.observe(seg.feat_next, seg.sb_next, goal), done)

    def act(self, obs, epsilon, rng):
        if self.policy is None:
            return int(rng.integers(self.action_count))
        return select_action(self.policy, obs, epsilon, rng)


def sample_goal(skill: Skill, rng):
    """Uniform over the skill's goal space."""
    m = skill.mask
    if m.kind == "discrete":
        return m.values[int(rng.integers(len(m.values)))].copy()
    return rng.uniform(m.low, m.high)


class _Frame:
    __slots__ = ("skill", "goal", "terminated", "achieved", "ret")

    def __init__(self, skill, goal):
        self.skill = skill
        self.goal = np.asarray(goal, dtype=np.float64)
        self.terminated = False
        self.achieved = []
        self.ret = 0.0


class _Context:
    def __init__(self, env, budget, rng, epsilon, parent_epsilon, on_step):
        self.env = env
        self.budget = budget
        self.rng = rng
        self.epsilon = epsilon
        self.parent_epsilon = parent_epsilon
        self.on_step = on_step
        self.steps = 0
        self.stack = []
        self.max_depth = 0

    def aborted(self, level):
        return any(f.terminated for f in self.stack[:level])

    def primitive(self, action):
        env = self.env
        names = {f.skill.source for f in self.stack} | {f.skill.target for f in self.stack}
        before = {n: factor_vec(env, n) for n in names if n != "action"}
        prev = capture(env) if self.on_step is not None else None
        reward, done, bounce, hit = env.advance(action)
        self.steps += 1
        after = {n: factor_vec(env, n) for n in names if n != "action"}
        for f in self.stack:
            f.ret += reward
            sk = f.skill
            s_a = action if sk.source == "action" else before[sk.source]
            if sk.detector(s_a, before[sk.target], after[sk.target]):
                v = after[sk.target][sk.mask.index]
                f.achieved.append(v)
                if not f.terminated and sk.reached(v, f.goal):
                    f.terminated = True
        if self.on_step is not None:
            self.on_step(env, action, prev, reward, done, bounce, hit)


def _run(ctx: _Context, skill: Skill, goal, level):
    env = ctx.env
    frame = _Frame(skill, goal)
    ctx.stack.append(frame)
    ctx.max_depth = max(ctx.max_depth, len(ctx.stack))
    ep = GoalEpisode(goal=frame.goal, depth=skill.level)
    eps = ctx.epsilon if level == 0 else ctx.parent_epsilon
    idx = skill.mask.index
    while True:
        if frame.terminated or env.done or ctx.aborted(level):
            break
        if ep.steps >= skill.timeout:
            ep.timed_out = True
            break
        if ctx.steps >= ctx.budget:
            break
        feat = skill.state_features(env)
        sb = factor_vec(env, skill.target)[idx]
        a = skill.act(skill.observe(feat, sb, frame.goal), eps, ctx.rng)
        frame.achieved = []
        frame.ret = 0.0
        start = ctx.steps
        if skill.parent is None:
            ctx.primitive(a)
        else:
            _run(ctx, skill.parent, skill.parent_goal(a, env), level + 1)
        taken = ctx.steps - start
        if taken == 0:
            break
        seg = Segment(feat, sb, a, skill.state_features(env), factor_vec(env, skill.target)[idx],
                      list(frame.achieved), frame.terminated, env.done, taken, frame.ret)
        ep.segments.append(seg)
        ep.steps += taken
        ep.env_return += frame.ret
    ep.terminated = frame.terminated
    ep.episode_end = env.done and not frame.terminated
    ctx.stack.pop()
    return ep


def execute_skill(env, skill: Skill, goal, budget, rng=None, epsilon=0.0, parent_epsilon=0.0, on_step=None):
    """Run ``skill`` toward ``goal`` until it terminates, times out, the episode ends or
    ``budget`` primitive steps are used. Parents run greedily unless ``parent_epsilon`` > 0.

    ``on_step(env, action, prev, reward, done, bounce, hit)`` observes every
    primitive step; ``prev`` is the (paddle, ball, alive) capture before it.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    ctx = _Context(env, budget, rng, epsilon, parent_epsilon, on_step)
    ep = _run(ctx, skill, goal, 0)
    ep.depth = ctx.max_depth
    return ep


def relabel_hindsight(episode: GoalEpisode, rate, rng, skill: Skill):
    """With probability ``rate`` return the episode relabeled toward one achieved state.

    The relabeled copy stops at its first segment that reaches the new goal.
    Returns a list of (goal, segments) pairs (empty or one element).
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    if rate == 0.0 or rng.random() >= rate:
        return []
    achieved = [v for seg in episode.segments for v in seg.achieved]
    if not achieved:
        return []
    g = np.asarray(achieved[int(rng.integers(len(achieved)))], dtype=np.float64)
    out = []
    for seg in episode.segments:
        out.append(seg)
        if any(skill.reached(v, g) for v in seg.achieved):
            break
    return [(g, out)]


def evaluate_skill(env, skill: Skill, n_goals, rng, epsilon=0.0):
    """Greedy success rate over ``n_goals`` judged goal attempts (censored attempts are redrawn)."""
    wins = judged = 0
    guard = 0
    while judged < n_goals and guard < 20 * n_goals:
        guard += 1
        if env.done:
            env.reset()
        ep = execute_skill(env, skill, sample_goal(skill, rng), skill.timeout, rng=rng, epsilon=epsilon)
        out = ep.outcome(skill)
        if out is not None:
            judged += 1
            wins += out
    return wins / max(1, judged)

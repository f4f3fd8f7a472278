import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coins.factored_env import Breakout, breakout_schema
from coins.interaction import ControlMask, DetectorThresholds
from coins.skills import (
    RELATIVE_OUTPUTS, GoalEpisode, Segment, Skill, evaluate_skill, execute_skill, factor_vec,
    relabel_hindsight, remap_relative_action, sample_goal, skill_reward, terminates,
)

SCHEMA = breakout_schema(100)
VELS = np.array([[-2.0, -1.0], [-2.0, 1.0], [-1.0, -1.0], [-1.0, 1.0]])


class StubDetector:
    """Stands in for a trained detector with a known rule."""

    def __init__(self, source, target, rule):
        self.source, self.target, self.rule = source, target, rule
        self.schema = SCHEMA
        self.thresholds = DetectorThresholds()

    def __call__(self, s_a, s_b, s_b_next):
        return self.rule(s_a, s_b, s_b_next)


def paddle_skill():
    mask = ControlMask(np.array([0, 1, 0, 0]), "continuous", low=np.array([0.0]), high=np.array([76.0]))
    return Skill("action", "paddle", mask, StubDetector("action", "paddle", lambda *a: True), 2.0, 100,
                 schema=SCHEMA)


def ball_skill(parent):
    mask = ControlMask(np.array([0, 0, 1, 1]), "discrete", values=VELS)

    def bounce(s_a, s_b, s_b_next):
        return s_b[2] > 0 and s_b_next[2] < 0 and s_b[0] > 60

    return Skill("paddle", "ball", mask, StubDetector("paddle", "ball", bounce), 0.5, 600, parent=parent,
                 schema=SCHEMA)


def test_terminates_requires_interaction_and_proximity():
    sk = paddle_skill()
    s = np.array([78.0, 40.0, 0.0, 2.0])
    assert terminates(0, s, s, np.array([41.0]), sk)
    assert not terminates(0, s, s, np.array([45.0]), sk)
    sk.detector = StubDetector("action", "paddle", lambda *a: False)
    assert not terminates(0, s, s, np.array([40.0]), sk)


def test_skill_reward_values():
    assert skill_reward(True) == 0.0
    assert skill_reward(False) == -0.1
    with pytest.raises(ValueError):
        skill_reward(False, eps_rew=0.0)


def test_remap_clips_near_wall():
    mask = ControlMask(np.array([0, 1, 0, 0]), "continuous")
    s_b = np.array([78.0, 74.0, 0.0, 0.0])
    low, high = np.array([0.0, 0.0, -2, -2]), np.array([83.0, 76.0, 2, 2])
    out = remap_relative_action([1.0], 0.2, mask, s_b, low, high)
    assert out[1] == 76.0
    out = remap_relative_action([-1.0], 0.2, mask, np.array([78.0, 3.0, 0, 0]), low, high)
    assert out[1] == 0.0
    out = remap_relative_action([0.5], 0.2, mask, s_b * 0 + 30, low, high)
    assert out[1] == pytest.approx(30 + 0.5 * 0.2 * 76)


@settings(max_examples=100, deadline=None)
@given(o=st.floats(-1, 1), x=st.floats(0, 76), d=st.floats(0.01, 1))
def test_remap_stays_in_range_and_leaves_unmasked(o, x, d):
    mask = np.array([0, 1, 0, 0])
    s_b = np.array([78.0, x, 0.0, 2.0])
    out = remap_relative_action([o], d, mask, s_b, schema_spec=SCHEMA.spec("paddle"))
    lo, hi = SCHEMA.spec("paddle").ranges[1]
    assert lo <= out[1] <= hi
    np.testing.assert_array_equal(out[[0, 2, 3]], s_b[[0, 2, 3]])


def test_goal_features_and_dims():
    p = paddle_skill()
    b = ball_skill(p)
    assert p.action_count == 3 and p.level == 1
    assert b.action_count == len(RELATIVE_OUTPUTS) and b.level == 2
    env = Breakout("base", 0)
    obs = b.observe(b.state_features(env), factor_vec(env, "ball")[[2, 3]], VELS[1])
    assert obs.shape == (b.obs_dim,)
    # discrete goal one-hot sits at the end
    np.testing.assert_array_equal(obs[-4:], [0, 1, 0, 0])


def test_parent_goal_relative_and_clipped():
    p = paddle_skill()
    b = ball_skill(p)
    env = Breakout("base", 0)
    env.px = 70
    top = b.parent_goal(len(RELATIVE_OUTPUTS) - 1, env)
    assert top[0] == 76.0
    mid = b.parent_goal(len(RELATIVE_OUTPUTS) // 2, env)
    assert mid[0] == 70.0


def test_sample_goal_in_space():
    rng = np.random.default_rng(0)
    p = paddle_skill()
    for _ in range(50):
        g = sample_goal(p, rng)
        assert 0.0 <= g[0] <= 76.0
    b = ball_skill(p)
    for _ in range(20):
        g = sample_goal(b, rng)
        assert any(np.array_equal(g, v) for v in VELS)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), budget=st.integers(1, 300))
def test_execute_paddle_skill_accounting(seed, budget):
    env = Breakout("base", seed)
    sk = paddle_skill()
    rng = np.random.default_rng(seed)
    goal = sample_goal(sk, rng)
    ep = execute_skill(env, sk, goal, budget, rng=rng)
    assert 1 <= ep.steps <= min(budget, sk.timeout)
    assert sum(s.steps for s in ep.segments) == ep.steps
    if ep.terminated:
        assert abs(env.px - goal[0]) < sk.goal_proximity
    assert ep.outcome(sk) in (True, False, None)


class ScriptedPaddle:
    """Greedy controller for the paddle skill: steps toward the goal (via the goal-difference feature)."""
    action_count = 3

    def __call__(self, obs):
        diff = obs[-1]  # (goal - s_b) / half for the single masked feature
        q = np.zeros(3)
        q[2 if diff > 0 else 0 if diff < 0 else 1] = 1.0
        return q


def test_scripted_paddle_reaches_goals():
    sk = paddle_skill()
    sk.policy = ScriptedPaddle()
    env = Breakout("base", 1)
    rate = evaluate_skill(env, sk, 30, np.random.default_rng(0))
    assert rate == 1.0


def test_hierarchical_execution_depth_and_abort():
    p = paddle_skill()
    p.policy = ScriptedPaddle()
    b = ball_skill(p)
    env = Breakout("base", 4)
    rng = np.random.default_rng(0)
    ep = execute_skill(env, b, VELS[0], 2000, rng=rng, epsilon=1.0)
    assert ep.depth == 2
    assert ep.steps == sum(s.steps for s in ep.segments)
    # every ball segment is one paddle attempt; an attempt never outlives the ball's termination
    if ep.terminated:
        assert ep.segments[-1].terminated


def test_censored_outcomes():
    p = paddle_skill()
    b = ball_skill(p)
    assert GoalEpisode(goal=np.zeros(1), episode_end=True).outcome(p) is None
    assert GoalEpisode(goal=np.zeros(1), episode_end=True).outcome(b) is False
    assert GoalEpisode(goal=np.zeros(1)).outcome(p) is None
    assert GoalEpisode(goal=np.zeros(1), timed_out=True).outcome(p) is False
    assert GoalEpisode(goal=np.zeros(1), terminated=True).outcome(b) is True


def seg(achieved, end=False):
    z = np.zeros(2)
    return Segment(z, z, 0, z, z, [np.asarray(a, float) for a in achieved], False, end, 3, 0.0)


def test_segment_outcome_and_terminal_penalty():
    p = paddle_skill()
    b = ball_skill(p)
    g = VELS[0]
    assert b.segment_outcome(seg([g]), g) == (0.0, True)
    assert b.segment_outcome(seg([]), g) == (-0.1, False)
    r, done = b.segment_outcome(seg([], end=True), g, gamma=0.99)
    assert done and r == pytest.approx(-10.0)
    assert p.segment_outcome(seg([], end=True), np.array([3.0])) == (-0.1, False)


def test_hindsight_relabel_truncates_at_first_reach():
    b = ball_skill(paddle_skill())
    ep = GoalEpisode(goal=VELS[0], segments=[seg([]), seg([VELS[2]]), seg([]), seg([VELS[3]])])
    rng = np.random.default_rng(0)
    assert relabel_hindsight(ep, 0.0, rng, b) == []
    outs = [relabel_hindsight(ep, 1.0, np.random.default_rng(s), b)[0] for s in range(20)]
    for g, segs in outs:
        assert any(np.array_equal(g, v) for v in (VELS[2], VELS[3]))
        assert len(segs) == (2 if np.array_equal(g, VELS[2]) else 4)
        r, done = b.segment_outcome(segs[-1], g)
        assert done and r == 0.0
    with pytest.raises(ValueError):
        relabel_hindsight(ep, 1.5, rng, b)
    assert relabel_hindsight(GoalEpisode(goal=VELS[0], segments=[seg([])]), 1.0, rng, b) == []


def test_execute_rejects_zero_budget():
    with pytest.raises(ValueError):
        execute_skill(Breakout("base", 0), paddle_skill(), np.array([3.0]), 0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coins.factored_env import (
    BOARD, DROP_PENALTY, PADDLE_ROW, PADDLE_WIDTH, QUARTILE_VELOCITY, Breakout, EpisodeFinished,
    VariantConfig, breakout_schema, make_env, reset, step, synth_var1,
)

VEL_SET = {(-1, -1), (-2, -1), (-2, 1), (-1, 1)}


def place(env, y, x, vy, vx, px):
    env.y, env.x, env.vy, env.vx, env.px, env.pv = y, x, vy, vx, px, 0


def test_schema_layout():
    s = breakout_schema(100)
    assert s.state_dim == 4 + 4 + 300
    assert s.slice("ball") == slice(4, 8)
    assert s.spec("paddle").feature_count == 4
    np.testing.assert_allclose(s.normalize("ball", s.spec("ball").ranges[:, 1]), 1.0)
    np.testing.assert_allclose(s.denormalize("ball", s.normalize("ball", [3, 4, 1, -1])), [3, 4, 1, -1])


def test_reset_state_shape_and_ranges():
    env = Breakout("base", 3)
    s = env.state()
    assert s.shape == (308,)
    assert s[0] == PADDLE_ROW and 0 <= s[1] <= BOARD - PADDLE_WIDTH
    assert (int(s[6]), int(s[7])) in VEL_SET
    assert np.all(s[8:].reshape(100, 3)[:, 2] == 1)


@pytest.mark.parametrize("q", range(4))
def test_quartile_bounce_velocity(q):
    # ball falls straight onto quartile q of a paddle at x=40
    env = Breakout("base", 0)
    px = 40
    place(env, PADDLE_ROW - 1, px + 2 * q, 1, 0, px)
    tr = step(env, 1)
    assert (env.vy, env.vx) == QUARTILE_VELOCITY[q]
    assert ("paddle", "ball") in tr.oracle
    assert tr.reward == 0.0 and not tr.done


def test_miss_drops_with_penalty():
    env = Breakout("base", 0)
    place(env, PADDLE_ROW - 1, 10, 1, 1, 50)
    tr = step(env, 1)
    assert tr.done and tr.reward == DROP_PENALTY
    assert ("paddle", "ball") not in tr.oracle
    with pytest.raises(EpisodeFinished):
        env.step(1)


def test_block_hit_reward_and_kill():
    env = Breakout("base", 0)
    k = 95  # bottom row of the grid
    y, x = int(env.by[k]) + 3, int(env.bx[k]) + 1
    place(env, y, x, -1, 0, 0)
    tr = step(env, 1)
    assert tr.reward == 1.0
    assert env.alive[k] == 0 and env.vy == 1
    assert ("ball", f"block_{k}") in tr.oracle


def test_walls_reflect():
    env = Breakout("base", 0)
    place(env, 40, 0, -1, -1, 0)
    env.advance(1)
    assert (env.x, env.vx) == (1, 1)
    place(env, 40, BOARD - 1, 1, 1, 0)
    env.advance(1)
    assert (env.x, env.vx) == (BOARD - 2, -1)
    place(env, 0, 40, -2, 1, 0)
    env.advance(1)
    assert (env.y, env.vy) == (2, 2)


def test_actions_move_and_clip():
    env = Breakout("base", 0)
    env.px = 0
    env.y, env.vy = 40, -1
    env.advance(0)
    assert env.px == 0 and env.pv == 0
    env.advance(2)
    assert env.px == 2 and env.pv == 2
    env.px = BOARD - PADDLE_WIDTH
    env.advance(2)
    assert env.px == BOARD - PADDLE_WIDTH
    with pytest.raises(ValueError):
        env.advance(3)


def test_unknown_variant():
    with pytest.raises(ValueError):
        Breakout("nope")


def test_module_level_wrappers():
    env = make_env(VariantConfig("neg", 4))
    assert env.n_blocks == 10
    s = reset(env, 11)
    assert s.shape == (4 + 4 + 30,)
    assert step(env, 1).state.shape == s.shape


def test_max_steps_ends_episode():
    env = Breakout("base", 0, max_steps=5)
    env.y, env.vy = 30, -1
    for _ in range(5):
        r, done, _, _ = env.advance(1)
    assert done


def _replay_bounce(s, action):
    """Independent geometry replay: does the ball land on the pre-step paddle this step?"""
    y, x, vy, vx = s[4:8]
    px = s[1]
    nx = x + vx
    if nx < 0:
        nx = -nx
    elif nx > BOARD - 1:
        nx = 2 * (BOARD - 1) - nx
    return vy > 0 and y < PADDLE_ROW <= y + vy and px <= nx < px + PADDLE_WIDTH


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), acts=st.lists(st.integers(0, 2), min_size=50, max_size=400))
def test_oracle_soundness_and_velocity_closure(seed, acts):
    env = Breakout("base", seed)
    for a in acts:
        if env.done:
            env.reset()
        s = env.state()
        tr = env.step(a)
        bounced = ("paddle", "ball") in tr.oracle
        assert bounced == _replay_bounce(s, a)
        assert ("action", "paddle") in tr.oracle
        if bounced:
            assert (int(tr.next_state[6]), int(tr.next_state[7])) in VEL_SET


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), acts=st.lists(st.integers(0, 2), min_size=100, max_size=2000))
def test_reward_accounting(seed, acts):
    env = Breakout("base", seed)
    total = 0.0
    kills = drops = 0
    for a in acts:
        alive = env.alive.sum()
        r, done, bounce, hit = env.advance(a)
        total += r
        kills += int(alive - env.alive.sum())
        drops += int(r <= DROP_PENALTY + 1)
        if done:
            break
    assert total == kills - 10 * drops


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), acts=st.lists(st.integers(0, 2), min_size=10, max_size=300),
       kind=st.sampled_from(["base", "neg", "single", "big", "hard", "center", "prox"]))
def test_determinism(seed, acts, kind):
    def run():
        env = Breakout(kind, seed)
        out = []
        for a in acts:
            if env.done:
                env.reset()
            tr = env.step(a)
            out.append((tr.next_state.copy(), tr.reward, tr.done, tr.oracle))
        return out
    a, b = run(), run()
    for (s1, r1, d1, o1), (s2, r2, d2, o2) in zip(a, b):
        assert np.array_equal(s1, s2) and r1 == r2 and d1 == d2 and o1 == o2


def test_neg_variant_signs_and_end():
    env = Breakout("neg", 2)
    assert sorted(env.value.tolist()) == [-1.0] * 5 + [1.0] * 5
    env.hits = 4
    assert not env._block_ends(0)
    env.hits = 5
    assert env._block_ends(0)


def test_synth_var1_shapes_and_errors():
    a, b = synth_var1(0.8, 0.05, 100, seed=1)
    assert a.shape == b.shape == (100,)
    with pytest.raises(ValueError):
        synth_var1(0.8, 0.0, 100)
    with pytest.raises(ValueError):
        synth_var1(0.8, 0.05, 0)

import csv
import dataclasses

import numpy as np
import pytest

from coins import checkpoint as ck
from coins.chain_builder import (
    CURVE_HEADER, REPORT_HEADER, BuildConfig, build_chain, chain_artifact, evaluate, load_chain,
    always_drop_floor, stage_rng,
)
from coins.config import load_config
from coins.factored_env import Breakout


def tiny_config(**kw):
    base = BuildConfig()
    return BuildConfig(seed=1, collect_increment=5000, stage_min_steps=(10_000, 5000), stage_max_steps=(10_000,),
                       stage_model_steps=(3000, 300), refit_steps=200,
                       block_model=dataclasses.replace(base.block_model, gradient_steps=50),
                       skill_budgets=(5000, 3000), max_skills=2, **kw)


def same_arrays(a, b):
    assert a.keys() == b.keys()
    for k in a:
        if isinstance(a[k], np.ndarray):
            assert a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]), k
        else:
            assert a[k] == b[k], k


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    cfg = tiny_config()
    full = build_chain(cfg, run_dir=root / "full")
    part = root / "resumed"
    first = build_chain(cfg, run_dir=part, stop_after=1)
    resumed = build_chain(cfg, run_dir=part)
    return cfg, root, full, first, resumed


def test_small_build_finds_paddle(runs):
    _, _, full, _, _ = runs
    assert full.structure[:2] == ["actions", "paddle"]
    assert full.stages[0].mask.bits.tolist() == [0, 1, 0, 0]
    # the dataset only grows: collected increments plus every skill-training step
    assert full.stages[0].data_size == 10_000
    if len(full.stages) > 1:
        grown = full.stages[1].data_size - full.stages[0].data_size - full.skills[0].train_steps
        assert grown > 0 and grown % 5000 == 0
    assert full.terminated or len(full.skills) == 2


def test_resume_equals_uninterrupted(runs):
    _, root, full, first, resumed = runs
    assert len(first.stages) == 1
    assert resumed.structure == full.structure
    same_arrays(chain_artifact(full), chain_artifact(resumed))
    assert (root / "full" / "chain.coin").read_bytes() == (root / "resumed" / "chain.coin").read_bytes()


def test_run_directory_contents(runs):
    cfg, root, full, _, _ = runs
    d = root / "full"
    names = {p.name for p in d.iterdir()}
    assert {"chain.coin", "config.ini", "reports.csv", "paddle_curve.csv", "stage0.dat", "stage0_models.coin"} <= names
    assert load_config(d / "config.ini") == cfg
    with open(d / "reports.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == REPORT_HEADER
    assert any(r[:2] == ["action", "paddle"] for r in rows[1:])
    with open(d / "paddle_curve.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CURVE_HEADER and len(rows) > 1
    trace = ck.unpack_trace(ck.load_checkpoint(d / "stage0.dat"), "trace")
    assert len(trace) == full.stages[0].data_size


def test_loaded_chain_matches(runs):
    _, root, full, _, _ = runs
    same_arrays(chain_artifact(load_chain(root / "full" / "chain.coin")), chain_artifact(full))


def test_stage_rng_streams_independent():
    a = stage_rng(0, 1, 0).random(4)
    assert np.array_equal(a, stage_rng(0, 1, 0).random(4))
    assert not np.array_equal(a, stage_rng(0, 1, 1).random(4))
    assert not np.array_equal(a, stage_rng(0, 2, 0).random(4))


def test_collect_increment_validated():
    with pytest.raises(ValueError):
        BuildConfig(collect_increment=10)


def test_evaluate_and_floor(tmp_path):
    out = evaluate(Breakout("base", 0), lambda e: 1, 3, seed=5, csv_path=tmp_path / "e.csv")
    assert len(out["returns"]) == 3
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "episode,return"
    with pytest.raises(ValueError):
        evaluate(Breakout("base", 0), lambda e: 1, 0)
    # fleeing the paddle drops the first returning ball: a few block hits, then -10
    floor = always_drop_floor("base", episodes=3)
    assert -10.0 <= floor < 0.0


def test_reloaded_chain_reproduces_skill_success(runs):
    from coins.skills import evaluate_skill
    _, root, full, _, _ = runs
    loaded = load_chain(root / "full" / "chain.coin")
    a = evaluate_skill(Breakout("base", 9), full.skills[0], 40, np.random.default_rng(3))
    b = evaluate_skill(Breakout("base", 9), loaded.skills[0], 40, np.random.default_rng(3))
    assert abs(a - b) <= 0.05

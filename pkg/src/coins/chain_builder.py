"""Builds the skill chain stage by stage, then trains and evaluates a task policy on top of it."""
from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ck
from . import dyn_models as dm
from . import interaction as it
from .data import Recorder, Trace, collect_random
from .factored_env import Breakout
from .rl import Learner, LearnerConfig, SuccessTracker, select_action, train_skill
from .skills import Skill, execute_skill, factor_vec, sample_goal

CHAIN_FILE = "chain.coin"


def _default_model_cfg():
    return dm.TrainConfig(step_size=7e-4, gradient_steps=50_000, balance_lambda=100.0, variance_power=0.5)


def _default_block_cfg():
    return dm.TrainConfig(step_size=1e-3, gradient_steps=1500, batch_size=64, balance_lambda=100.0,
                          variance_power=0.5, hidden=16)


@dataclass
class BuildConfig:
    variant: str = "base"
    seed: int = 0
    collect_increment: int = 10_000
    thresholds: it.DetectorThresholds = field(default_factory=it.DetectorThresholds)
    # proximity gate used by skill terminations (grid cells, 0 disables)
    skill_proximity: float = 10.0
    model: dm.TrainConfig = field(default_factory=_default_model_cfg)
    stage_model_steps: tuple = (5000, 50_000)  # gradient steps of the first fit in a stage, by stage
    refit_steps: int = 10_000  # warm-start steps for later tests within the same stage
    block_model: dm.TrainConfig = field(default_factory=_default_block_cfg)
    block_group: int = 10  # block models trained together as one stack
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    skill_budgets: tuple = (50_000, 500_000)  # env steps per learned skill, by position
    skill_timeouts: tuple = (100, 600)
    stage_min_steps: tuple = (10_000, 200_000, 100_000)  # data gathered in a stage before testing
    stage_max_steps: tuple = (300_000, 300_000, 100_000)  # give up on a stage after this much stage data
    goal_eps_continuous: float = 1.0
    goal_eps_discrete: float = 0.5
    fit_window: int = 200_000  # most recent records of the dataset used for model fits
    max_skills: int = 4
    max_steps: int = 10_000

    def __post_init__(self):
        bs = max(self.model.batch_size, self.learner.batch_size)
        if self.collect_increment < bs:
            raise ValueError("collect_increment must be at least the batch sizes")

    @staticmethod
    def _pick(seq, i):
        return seq[min(i, len(seq) - 1)]

    def budget(self, i):
        return self._pick(self.skill_budgets, i)

    def timeout(self, i):
        return self._pick(self.skill_timeouts, i)

    def model_steps(self, i):
        return self._pick(self.stage_model_steps, i)

    def min_steps(self, i):
        return self._pick(self.stage_min_steps, i)

    def max_steps_in(self, i):
        return self._pick(self.stage_max_steps, i)


@dataclass
class StageRecord:
    index: int
    source: str
    target: str | None
    reports: list  # InteractionReport per candidate, schema order
    aggregate: it.InteractionReport | None  # class-level block score, reported only
    data_size: int
    mask: it.ControlMask | None = None
    curve: list = field(default_factory=list)


class SkillChain:
    """Learned skills from primitive actions upward, with the artifacts of every stage."""

    def __init__(self, config: BuildConfig, n_blocks):
        self.config = config
        self.skills: list[Skill] = []
        self.stages: list[StageRecord] = []
        self.trace = Trace(n_blocks)
        self.passive: dict = {}
        self.active: dict = {}
        self.terminated = False
        self.diagnostic = ""

    @property
    def structure(self):
        return ["actions"] + [s.target for s in self.skills]

    @property
    def top(self):
        return self.skills[-1] if self.skills else None

    def controlled(self):
        return {"action"} | {s.target for s in self.skills}


# ------------------------------------------------------------------ helpers
def stage_rng(seed, stage, stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stage), int(stream)]))


def collect_with_skill(env, skill, steps, rng, trace):
    """Run ``skill`` greedily toward uniformly drawn goals, recording every primitive step."""
    rec = Recorder(trace)
    start = len(trace)
    while len(trace) - start < steps:
        if env.done:
            env.reset()
        execute_skill(env, skill, sample_goal(skill, rng), steps - (len(trace) - start), rng=rng, on_step=rec)
        if env.done:
            env.reset()
    return trace


def _fit_pair(data, chain, source, target, cfg: BuildConfig, model_cfg, retest):
    """Fit (or warm-start) the passive model of ``target`` and the active model of source -> target.

    Passive models carry over between stages and are warm-started. A retest
    within the same stage only runs ``refit_steps`` more steps on each model.
    """
    short = dataclasses.replace(model_cfg, gradient_steps=min(cfg.refit_steps, model_cfg.gradient_steps))
    pas_old = chain.passive.get(target)
    pas = dm.fit(data, "passive", short if retest else model_cfg, model=None if pas_old is None else pas_old.copy())
    w = dm.balance_weights(data, None, model_cfg.balance_lambda, model_cfg.proximity_eps, passive=pas)
    act_old = chain.active.get((source, target))
    acfg = short if (retest and act_old is not None) else model_cfg
    inter = None
    if model_cfg.interaction_mix > 0:
        inter = w > 1.0
    act = dm.fit(data, "active", acfg, model=None if act_old is None else act_old.copy(), weights=w,
                 interaction=inter)
    return pas, act


def score_stage(chain: SkillChain, source, cfg: BuildConfig, log=None, stage=0, retest=False):
    """Fit models for every uncontrolled factor against ``source`` and score each pair.

    Returns (reports in schema order, aggregate block report, per-target (passive, active, data))
    where the last item only holds the non-block targets.
    """
    thr = cfg.thresholds
    window = chain.trace.tail(cfg.fit_window)
    schema = window.schema
    controlled = chain.controlled() | {source}
    reports = []
    fitted = {}
    block_ids = [i for i in range(window.n_blocks) if f"block_{i}" not in controlled]
    for name in schema.names:
        if name in controlled or name.startswith("block_"):
            continue
        data = dm.make_pair_dataset(window, source, name)
        mcfg = dataclasses.replace(cfg.model, gradient_steps=cfg.model_steps(stage))
        pas, act = _fit_pair(data, chain, source, name, cfg, mcfg, retest)
        chain.passive[name] = pas
        chain.active[(source, name)] = act
        lls = it.detector_lls(data, act, pas)
        reports.append(it.interaction_score(data, (source, name), act, pas, thr, lls=lls))
        fitted[name] = (pas, act, data, lls)
        if log:
            log(f"  {source}->{name}: Sc_I={reports[-1].score:.3f} n_int={reports[-1].interaction_count}")
    block_reports = {}
    agg_sum, agg_n, agg_la, agg_lp = 0.0, 0, 0.0, 0.0
    for g in range(0, len(block_ids), cfg.block_group):
        ids = block_ids[g:g + cfg.block_group]
        data = dm.make_pair_dataset(window, source, "blocks", block_ids=ids)
        key = tuple(ids)
        pas, act = _fit_pair(data, chain, source, ("blocks",) + key, cfg, cfg.block_model, retest)
        chain.passive[("blocks",) + key] = pas
        chain.active[(source, ("blocks",) + key)] = act
        la, lp = it.detector_lls(data, act, pas)
        close = it.proximity_mask(data, thr)
        for j, i in enumerate(ids):
            r = it.report_from_ll((source, f"block_{i}"), la[j], lp[j], thr, None if close is None else close[j])
            block_reports[i] = r
            agg_sum += r.score * r.interaction_count
            agg_n += r.interaction_count
            agg_la += float(np.mean(la[j]))
            agg_lp += float(np.mean(lp[j]))
    reports.extend(block_reports[i] for i in sorted(block_reports))
    aggregate = None
    if block_reports:
        nb = len(block_reports)
        aggregate = it.InteractionReport((source, "blocks"), agg_sum / agg_n if agg_n else 0.0,
                                         (agg_la - agg_lp) / nb, agg_n, agg_n / (len(window) * nb))
        if log:
            best = max(block_reports.values(), key=lambda r: r.score)
            log(f"  {source}->blocks: best {best.pair[1]} Sc_I={best.score:.3f}, class Sc_I={aggregate.score:.3f}")
    return reports, aggregate, fitted


def _skill_thresholds(cfg):
    return dataclasses.replace(cfg.thresholds, interaction_proximity=cfg.skill_proximity)


def _make_skill(chain, cfg, source, target, mask, pas, act):
    i = len(chain.skills)
    sthr = _skill_thresholds(cfg)
    det = it.Detector(source, target, pas, act, sthr, chain.trace.schema)
    eps_c = cfg.goal_eps_discrete if mask.kind == "discrete" else cfg.goal_eps_continuous
    return Skill(source, target, mask, det, eps_c, cfg.timeout(i), parent=chain.top, schema=chain.trace.schema)


# ------------------------------------------------------------------ the build loop
def build_chain(config: BuildConfig, run_dir=None, log=None, stop_after=None):
    """Discover and train the chain. With ``run_dir`` every finished stage is saved and an
    existing chain there is resumed from its last finished stage. ``stop_after`` ends the
    call after that many stages (used to simulate an interrupted run)."""
    chain = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        path = os.path.join(run_dir, CHAIN_FILE)
        if os.path.exists(path):
            chain = load_chain(path)
            if log:
                log(f"resumed at stage {len(chain.stages)}")
    if chain is None:
        chain = SkillChain(config, Breakout(config.variant, config.seed).n_blocks)
    cfg = chain.config
    if run_dir is not None:
        from .config import dump_config
        ck.atomic_write(os.path.join(run_dir, "config.ini"), dump_config(cfg).encode("utf-8"))
    done_now = 0
    while not chain.terminated and len(chain.skills) < cfg.max_skills:
        if stop_after is not None and done_now >= stop_after:
            break
        k = len(chain.stages)
        source = "action" if k == 0 else chain.top.target
        env = Breakout(cfg.variant, int(stage_rng(cfg.seed, k, 0).integers(2**31)), cfg.max_steps)
        rng = stage_rng(cfg.seed, k, 1)
        stage_steps = 0
        tests = 0
        target = None
        while True:
            if k == 0:
                collect_random(env, cfg.collect_increment, rng, chain.trace)
            else:
                collect_with_skill(env, chain.top, cfg.collect_increment, rng, chain.trace)
            stage_steps += cfg.collect_increment
            if stage_steps < cfg.min_steps(k):
                continue
            if log:
                log(f"stage {k}: testing {source} with {len(chain.trace)} records")
            if run_dir is not None:
                ck.save_checkpoint(os.path.join(run_dir, f"stage{k}.dat"), ck.pack_trace(chain.trace, "trace"))
            reports, aggregate, fitted = score_stage(chain, source, cfg, log, stage=k, retest=tests > 0)
            tests += 1
            target = it.select_target(reports, cfg.thresholds)
            if target is not None or stage_steps >= cfg.max_steps_in(k):
                break
        rec = StageRecord(k, source, target, reports, aggregate, len(chain.trace))
        chain.stages.append(rec)
        if target is None:
            chain.terminated = True
            if log:
                log(f"stage {k}: no target above eps_si; chain ends at {chain.structure}")
        else:
            if target not in fitted:
                # block models are fitted in stacks; the chosen block gets its own pair of models
                data = dm.make_pair_dataset(chain.trace.tail(cfg.fit_window), source, target)
                pas, act = _fit_pair(data, chain, source, target, cfg, cfg.block_model, False)
                fitted[target] = (pas, act, data, it.detector_lls(data, act, pas))
            pas, act, data, lls = fitted[target]
            if run_dir is not None:
                ck.save_checkpoint(os.path.join(run_dir, f"stage{k}_models.coin"),
                                   {**ck.pack_predictor(pas, "passive"), **ck.pack_predictor(act, "active"),
                                    "pair": [source, target]})
            # the goal set comes from the same gated detections that will end the skill,
            # so far-off wall reflections the passive model missed do not become goals
            mask = it.control_mask(data, act, pas, _skill_thresholds(cfg), chain.trace.schema.spec(target), lls=lls)
            rec.mask = mask
            skill = _make_skill(chain, cfg, source, target, mask, pas, act)
            if log:
                log(f"stage {k}: {source}->{target} mask={mask.bits.tolist()} goals={mask.goal_space}")
            env.reset()
            rec.curve = train_skill(env, skill, cfg.learner, cfg.budget(len(chain.skills)), rng=stage_rng(cfg.seed, k, 2),
                                    on_step=Recorder(chain.trace),
                                    log=(lambda *r: log("  step %d success %.3f return %.2f loss %.4f" % r)) if log else None,
                                    curve_every=10_000)
            chain.skills.append(skill)
            if skill.diagnostic:
                chain.diagnostic = f"{target} skill: {skill.diagnostic}"
                chain.terminated = True
        # keep only models the chain still needs
        chain.active = {key: m for key, m in chain.active.items() if key[0] != source}
        done_now += 1
        if run_dir is not None:
            save_chain(os.path.join(run_dir, CHAIN_FILE), chain)
            write_reports_csv(os.path.join(run_dir, "reports.csv"), chain)
            for s, r in zip(chain.skills, [st for st in chain.stages if st.target is not None]):
                write_curve_csv(os.path.join(run_dir, f"{s.target}_curve.csv"), r.curve)
    return chain


# ------------------------------------------------------------------ task policy
def pooled_block_features(env):
    alive = env.alive.astype(bool)
    if not alive.any():
        return np.zeros(5)
    y = (env.by[alive] - 41.5) / 41.5
    x = (env.bx[alive] - 41.5) / 41.5
    return np.array([y.mean(), x.mean(), y.max(), x.max(), alive.mean()])


def task_features(env, schema):
    p = schema.normalize("paddle", factor_vec(env, "paddle"))
    b = schema.normalize("ball", factor_vec(env, "ball"))
    rel = (p[0:2] - b[0:2])
    return np.concatenate([p, b, rel, pooled_block_features(env)])


class TaskPolicy:
    """High-level controller choosing goals of the chain's top skill from the full (pooled) state."""

    def __init__(self, chain: SkillChain, q=None):
        self.chain = chain
        self.skill = chain.top
        self.q = q

    @property
    def action_count(self):
        m = self.skill.mask
        if m.kind != "discrete":
            raise ValueError("the task policy needs a discrete top-level goal space")
        return len(m.values)

    def features(self, env):
        return task_features(env, self.chain.trace.schema)

    def goal(self, a):
        return self.skill.mask.values[a]

    def act(self, env, epsilon, rng):
        if self.q is None:
            return int(rng.integers(self.action_count))
        return select_action(self.q, self.features(env), epsilon, rng)


# One decision spans a whole ball attempt, so decisions are few and each is worth many updates.
TASK_LEARNER = LearnerConfig(step_size=1e-4, updates_per_collect=32, warmup=64, gamma=0.95)


def train_task_policy(env, chain: SkillChain, budget, config: LearnerConfig | None = None, rng=None,
                      log=None, curve_every=10_000):
    """Learn to pick top-skill goals for environment reward. Each choice runs the top skill to
    termination or timeout. Returns (policy, curve rows (step, success_rate, mean_return, loss))."""
    config = config or TASK_LEARNER
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    policy = TaskPolicy(chain)
    obs_dim = len(policy.features(env))
    learner = Learner(obs_dim, policy.action_count, config, rng)
    policy.q = learner.q
    tracker = SuccessTracker(config.success_window, config.n_complete)
    env.reset()
    steps, ep_ret = 0, 0.0
    returns = []
    curve = []
    next_log = curve_every
    while steps < budget:
        x = policy.features(env)
        a = policy.act(env, config.epsilon(steps, budget), rng)
        ep = execute_skill(env, policy.skill, policy.goal(a), policy.skill.timeout, rng=rng)
        steps += ep.steps
        ep_ret += ep.env_return
        out = ep.outcome(policy.skill)
        if out is not None:
            tracker.add(out)
        learner.push(x, a, ep.env_return, policy.features(env), env.done)
        learner.train(config.updates_per_collect)
        if env.done:
            returns.append(ep_ret)
            ep_ret = 0.0
            env.reset()
        if steps >= next_log or steps >= budget:
            recent = returns[-10:]
            row = (steps, tracker.rate, float(np.mean(recent)) if recent else float("nan"), learner.last_loss)
            curve.append(row)
            if log:
                log(*row)
            next_log = steps + curve_every
    return policy, curve


def evaluate(env, policy, episodes, seed=0, csv_path=None, rng=None):
    """Undiscounted episode returns. ``policy`` is a TaskPolicy, a SkillChain (uniformly random
    top-skill goals) or a callable env -> primitive action."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    returns = []
    for e in range(episodes):
        env.reset(seed=seed + e)
        total = 0.0
        while not env.done:
            if isinstance(policy, TaskPolicy):
                ep = execute_skill(env, policy.skill, policy.goal(policy.act(env, 0.0, rng)), policy.skill.timeout, rng=rng)
                total += ep.env_return
            elif isinstance(policy, SkillChain):
                ep = execute_skill(env, policy.top, sample_goal(policy.top, rng), policy.top.timeout, rng=rng)
                total += ep.env_return
            else:
                r, _, _, _ = env.advance(int(policy(env)))
                total += r
        returns.append(total)
    returns = np.asarray(returns)
    summary = {"mean": float(returns.mean()), "sd": float(returns.std()), "returns": returns.tolist()}
    if csv_path is not None:
        rows = [("episode", "return")] + [(i, f"{r:.6g}") for i, r in enumerate(returns)]
        _write_csv(csv_path, rows)
    return summary


def always_drop_floor(variant, episodes=100, seed=0, max_steps=10_000):
    """Mean return of a policy that parks the paddle as far from the ball as it can."""
    env = Breakout(variant, seed, max_steps)

    def away(e):
        return 0 if e.x >= 42 else 2
    return evaluate(env, away, episodes, seed=seed)["mean"]


# ------------------------------------------------------------------ persistence
def _write_csv(path, rows):
    import io
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    ck.atomic_write(path, buf.getvalue().encode("utf-8"))


REPORT_HEADER = ("source", "target", "mg_score", "sc_i", "n_int", "rate")
CURVE_HEADER = ("step", "success_rate", "mean_return", "loss")


def report_rows(reports):
    return [(r.pair[0], r.pair[1], f"{r.mg_score:.6g}", f"{r.score:.6g}", r.interaction_count,
             f"{r.interaction_rate:.6g}") for r in reports]


def write_reports_csv(path, chain):
    rows = [REPORT_HEADER]
    for st in chain.stages:
        ordered = sorted(st.reports, key=lambda r: -r.score)
        rows += report_rows(ordered + ([st.aggregate] if st.aggregate else []))
    _write_csv(path, rows)


def write_curve_csv(path, curve):
    _write_csv(path, [CURVE_HEADER] + [(int(s), f"{a:.6g}", f"{b:.6g}", f"{c:.6g}") for s, a, b, c in curve])


def _report_json(r):
    return None if r is None else {"pair": list(r.pair), "score": r.score, "mg": r.mg_score,
                                   "n": r.interaction_count, "rate": r.interaction_rate}


def _report_from_json(d):
    return None if d is None else it.InteractionReport(tuple(d["pair"]), d["score"], d["mg"], d["n"], d["rate"])


def _mask_arrays(mask, prefix):
    return {f"{prefix}/bits": np.asarray(mask.bits, dtype=np.int64), f"{prefix}/values": np.asarray(mask.values, dtype=np.float64),
            f"{prefix}/low": np.asarray(mask.low, dtype=np.float64), f"{prefix}/high": np.asarray(mask.high, dtype=np.float64)}


def _mask_from(art, prefix, kind):
    return it.ControlMask(art[f"{prefix}/bits"], kind, values=art[f"{prefix}/values"], low=art[f"{prefix}/low"],
                          high=art[f"{prefix}/high"])


def config_to_dict(cfg: BuildConfig):
    return dataclasses.asdict(cfg)


def config_from_dict(d) -> BuildConfig:
    d = dict(d)
    d["thresholds"] = it.DetectorThresholds(**d["thresholds"])
    d["model"] = dm.TrainConfig(**d["model"])
    d["block_model"] = dm.TrainConfig(**d["block_model"])
    d["learner"] = LearnerConfig(**d["learner"])
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    return BuildConfig(**d)


def chain_artifact(chain: SkillChain) -> dict:
    art = {}
    meta = {"config": config_to_dict(chain.config), "terminated": chain.terminated, "diagnostic": chain.diagnostic,
            "stages": [], "skills": [], "passive": [], "n_blocks": chain.trace.n_blocks}
    for st in chain.stages:
        meta["stages"].append({"index": st.index, "source": st.source, "target": st.target,
                               "reports": [_report_json(r) for r in st.reports],
                               "aggregate": _report_json(st.aggregate), "data_size": st.data_size,
                               "mask_kind": st.mask.kind if st.mask is not None else None,
                               "curve": [list(map(float, row)) for row in st.curve]})
        if st.mask is not None:
            art.update(_mask_arrays(st.mask, f"stage{st.index}/mask"))
    for i, s in enumerate(chain.skills):
        meta["skills"].append({"source": s.source, "target": s.target, "goal_proximity": s.goal_proximity,
                               "timeout": s.timeout, "eps_rew": s.eps_rew, "relative_d": s.relative_d,
                               "end_is_failure": s.end_is_failure, "mask_kind": s.mask.kind,
                               "thresholds": dataclasses.asdict(s.detector.thresholds),
                               "train_steps": s.train_steps, "diagnostic": s.diagnostic})
        art.update(_mask_arrays(s.mask, f"skill{i}/mask"))
        art[f"skill{i}/relative_outputs"] = s.relative_outputs
        art.update(ck.pack_predictor(s.detector.passive, f"skill{i}/passive"))
        art.update(ck.pack_predictor(s.detector.active, f"skill{i}/active"))
        if s.policy is not None:
            art.update(ck.pack_qnet(s.policy, f"skill{i}/q"))
    for j, (name, model) in enumerate(sorted(chain.passive.items(), key=lambda kv: str(kv[0]))):
        meta["passive"].append(list(name) if isinstance(name, tuple) else name)
        art.update(ck.pack_predictor(model, f"passive{j}"))
    art.update(ck.pack_trace(chain.trace, "trace"))
    art["meta"] = meta
    return art


def chain_from_artifact(art) -> SkillChain:
    meta = art["meta"]
    cfg = config_from_dict(meta["config"])
    chain = SkillChain(cfg, meta["n_blocks"])
    chain.trace = ck.unpack_trace(art, "trace")
    chain.terminated = meta["terminated"]
    chain.diagnostic = meta["diagnostic"]
    for j, name in enumerate(meta["passive"]):
        key = tuple(name) if isinstance(name, list) else name
        chain.passive[key] = ck.unpack_predictor(art, f"passive{j}")
    for st in meta["stages"]:
        mask = _mask_from(art, f"stage{st['index']}/mask", st["mask_kind"]) if st["mask_kind"] else None
        chain.stages.append(StageRecord(st["index"], st["source"], st["target"],
                                        [_report_from_json(r) for r in st["reports"]],
                                        _report_from_json(st["aggregate"]), st["data_size"], mask,
                                        [tuple(r) for r in st["curve"]]))
    schema = chain.trace.schema
    for i, sd in enumerate(meta["skills"]):
        mask = _mask_from(art, f"skill{i}/mask", sd["mask_kind"])
        det = it.Detector(sd["source"], sd["target"], ck.unpack_predictor(art, f"skill{i}/passive"),
                          ck.unpack_predictor(art, f"skill{i}/active"), it.DetectorThresholds(**sd["thresholds"]),
                          schema)
        s = Skill(sd["source"], sd["target"], mask, det, sd["goal_proximity"], sd["timeout"], parent=chain.top,
                  schema=schema, eps_rew=sd["eps_rew"], relative_d=sd["relative_d"],
                  relative_outputs=art[f"skill{i}/relative_outputs"], end_is_failure=sd["end_is_failure"])
        if f"skill{i}/q/meta" in art:
            s.policy = ck.unpack_qnet(art, f"skill{i}/q")
        s.train_steps = sd["train_steps"]
        s.diagnostic = sd["diagnostic"]
        chain.skills.append(s)
    return chain


def save_chain(path, chain):
    ck.save_checkpoint(path, chain_artifact(chain))


def load_chain(path) -> SkillChain:
    return chain_from_artifact(ck.load_checkpoint(path))


def save_task_policy(path, policy: TaskPolicy):
    ck.save_checkpoint(path, ck.pack_qnet(policy.q, "task"))


def load_task_policy(path, chain) -> TaskPolicy:
    return TaskPolicy(chain, ck.unpack_qnet(ck.load_checkpoint(path), "task"))


def bounce_accuracy(env, skill: Skill, attempts, rng, epsilon=0.0):
    """Fraction of goal attempts whose first paddle bounce leaves the ball with the
    commanded velocity. Uses the simulator's own bounce flag; a drop counts as a miss."""
    hits = 0
    for _ in range(attempts):
        if env.done:
            env.reset()
        goal = sample_goal(skill, rng)
        first = []

        def watch(e, action, prev, reward, done, bounce, hit):
            if bounce and not first:
                first.append((e.vy, e.vx))
        execute_skill(env, skill, goal, skill.timeout, rng=rng, epsilon=epsilon, on_step=watch)
        if first and np.array_equal(np.asarray(first[0], dtype=np.float64), goal):
            hits += 1
    return hits / attempts

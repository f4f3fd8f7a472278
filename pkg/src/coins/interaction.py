"""Granger-style interaction tests: affine test, detector, scores, target and mask discovery."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dyn_models as dm

LR_THRESHOLD = 6.0


@dataclass
class DetectorThresholds:
    eps_act: float = 2.0
    eps_pas: float = 0.0
    eps_si: float = 5.0
    eps_eta: float = 0.1
    n_disc: int = 10
    # goal values seen less often than this fraction of the most frequent value
    # are treated as detector noise when building the goal set
    min_goal_support: float = 0.1
    # optional gate: only count detections where source and target positions are
    # closer than this (grid cells). 0 disables it.
    interaction_proximity: float = 0.0
    # a target is only eligible when interactions occur at least this often per
    # tested record; rarer edges have too little data to build a skill on
    min_interaction_rate: float = 1e-3

    def __post_init__(self):
        if not self.eps_act > self.eps_pas:
            raise ValueError("eps_act must exceed eps_pas")
        if not 0.0 <= self.min_goal_support < 1.0:
            raise ValueError("min_goal_support must lie in [0, 1)")
        if self.min_interaction_rate < 0:
            raise ValueError("min_interaction_rate must be non-negative")


@dataclass
class InteractionReport:
    pair: tuple
    score: float
    mg_score: float
    interaction_count: int
    interaction_rate: float


@dataclass
class ControlMask:
    bits: np.ndarray
    kind: str  # "discrete" or "continuous"
    values: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # discrete goals, (n, k)
    low: np.ndarray = field(default_factory=lambda: np.zeros(0))  # continuous bounds on masked features
    high: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def index(self):
        return np.flatnonzero(self.bits)

    @property
    def goal_space(self):
        if self.kind == "discrete":
            return {"discrete": [tuple(v) for v in self.values.tolist()]}
        return {"continuous": list(zip(self.low.tolist(), self.high.tolist()))}

    def same_as(self, other):
        return (self.kind == other.kind and np.array_equal(self.bits, other.bits)
                and np.array_equal(self.values, other.values) and np.array_equal(self.low, other.low)
                and np.array_equal(self.high, other.high))


# ---------------------------------------------------------------- affine test
@dataclass
class GrangerResult:
    passive_mse: float
    active_mse: float
    causes: bool
    statistic: float
    degenerate: bool = False


def _lagged(x, w, n):
    return np.stack([x[w - k - 1:w - k - 1 + n] for k in range(w)], axis=1)


def affine_granger_test(series_a, series_b, w=1, threshold=LR_THRESHOLD) -> GrangerResult:
    """Does the history of a improve a linear prediction of b's next value?

    Passive: b[t] ~ c + sum_k p_k b[t-k]. Active: adds sum_k q_k a[t-k].
    The statistic n*log(mse_pas / mse_act) is compared against ``threshold``.
    """
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if len(a) != len(b):
        raise ValueError("series lengths differ")
    if len(b) <= 10 * w:
        raise ValueError("series too short for the lag window")
    n = len(b) - w
    y = b[w:]
    ones = np.ones((n, 1))
    xp = np.hstack([ones, _lagged(b, w, n)])
    xa = np.hstack([xp, _lagged(a, w, n)])
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0 or np.linalg.matrix_rank(xa) < xa.shape[1]:
        return GrangerResult(float("nan"), float("nan"), False, 0.0, degenerate=True)
    rp = y - xp @ np.linalg.lstsq(xp, y, rcond=None)[0]
    ra = y - xa @ np.linalg.lstsq(xa, y, rcond=None)[0]
    mp, ma = float(np.mean(rp ** 2)), float(np.mean(ra ** 2))
    if ma <= 0.0:
        return GrangerResult(mp, ma, mp > 0.0, float("inf"))
    stat = n * np.log(mp / ma)
    return GrangerResult(mp, ma, bool(ma < mp and stat > threshold), float(stat))


# ---------------------------------------------------------------- detector
def detector_lls(data: dm.PairDataset, active, passive):
    """Per-record (active ll, passive ll)."""
    return dm.dataset_ll(active, data, "active"), dm.dataset_ll(passive, data, "passive")


def detect_from_ll(ll_act, ll_pas, thr: DetectorThresholds, close=None):
    hit = (np.asarray(ll_act) > thr.eps_act) & (np.asarray(ll_pas) < thr.eps_pas)
    if close is not None and thr.interaction_proximity > 0:
        hit = hit & close
    return hit


def proximity_mask(data: dm.PairDataset, thr: DetectorThresholds):
    """Per-record closeness for the optional proximity gate (None when it does not apply)."""
    if thr.interaction_proximity <= 0 or data.sa_pos is None:
        return None
    return np.linalg.norm(data.sb_pos - data.sa_pos, axis=-1) < thr.interaction_proximity


def detect(s_a, s_b, s_b_next, active, passive, thresholds: DetectorThresholds, schema=None,
           source=None, target=None):
    """Single-record detector on raw factor vectors. ``source='action'`` takes an action id."""
    x_act, x_pas = single_inputs(s_a, s_b, schema, source, target)
    la = dm.log_likelihood(active, x_act, s_b_next)
    lp = dm.log_likelihood(passive, x_pas, s_b_next)
    close = None
    if source != "action" and thresholds.interaction_proximity > 0:
        close = np.linalg.norm(np.asarray(s_a, float)[0:2] - np.asarray(s_b, float)[0:2]) < thresholds.interaction_proximity
    return bool(detect_from_ll(la, lp, thresholds, close))


def single_inputs(s_a, s_b, schema, source, target):
    s_b = np.asarray(s_b, dtype=np.float64)
    nb = schema.normalize(target, s_b)
    if source == "action":
        sa = np.zeros(3)
        sa[int(s_a)] = 1.0
        x_act = np.concatenate([sa, nb])
    else:
        s_a = np.asarray(s_a, dtype=np.float64)
        na = schema.normalize(source, s_a)
        x_act = np.concatenate([na, nb, (s_a[0:2] - s_b[0:2]) / dm.REL_SCALE])
    return x_act, nb


def mg_score(data, pair, active, passive, lls=None):
    """Mean active ll minus mean passive ll (one value per stacked model for stacks)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    la, lp = lls if lls is not None else detector_lls(data, active, passive)
    gap = np.mean(la, axis=-1) - np.mean(lp, axis=-1)
    return float(gap) if np.ndim(gap) == 0 else gap


def interaction_score(data, pair, active, passive, thresholds: DetectorThresholds, lls=None,
                      valid=None) -> InteractionReport:
    """Mean active-minus-passive ll over the records where the detector fires (0 if none).

    ``valid`` masks out records that should not count (e.g. across a reset).
    """
    la, lp = lls if lls is not None else detector_lls(data, active, passive)
    close = proximity_mask(data, thresholds)
    if valid is not None:
        la, lp = la[..., valid], lp[..., valid]
        close = None if close is None else close[..., valid]
    return report_from_ll(pair, la, lp, thresholds, close)


def report_from_ll(pair, la, lp, thresholds, close=None):
    hit = detect_from_ll(la, lp, thresholds, close)
    n = int(hit.sum())
    score = float(np.sum((la - lp)[hit]) / n) if n else 0.0
    mg = float(np.mean(la) - np.mean(lp)) if len(la) else 0.0
    return InteractionReport(tuple(pair), score, mg, n, n / max(1, len(la)))


def select_target(reports, thresholds: DetectorThresholds):
    """Target factor with the highest score above eps_si among reports with enough
    interaction support; earliest report wins ties."""
    best, best_score = None, -np.inf
    for r in reports:
        if r.interaction_rate < thresholds.min_interaction_rate:
            continue
        if r.score > best_score:
            best, best_score = r, r.score
    if best is None or not best_score > thresholds.eps_si:
        return None
    return best.pair[1]


def control_mask(data: dm.PairDataset, active, passive, thresholds: DetectorThresholds, spec,
                 lls=None, valid=None) -> ControlMask:
    """Features the source visibly changes at detected interactions, plus the goal space.

    Deviations |s_b' - passive mean| are expressed in units of each feature's
    largest one-step change. A velocity whose deviation simply mirrors that of
    its paired position (the position absorbed the new velocity within the
    step) is folded into the position, so a goal never pins one degree of
    freedom twice.
    """
    la, lp = lls if lls is not None else detector_lls(data, active, passive)
    hit = detect_from_ll(la, lp, thresholds, proximity_mask(data, thresholds))
    if valid is not None:
        hit &= valid
    if not hit.any():
        raise ValueError("no detected interactions: mask undefined")
    sub = data.subset(np.flatnonzero(hit))
    mu = dm.dataset_mean(passive, sub, "passive")
    dev = (sub.raw_next.astype(np.float64) - mu)
    scale = spec.step_scale
    norm = np.abs(dev) / scale
    bits = (norm.mean(axis=0) > thresholds.eps_eta).astype(np.int64)
    for p, v in spec.motion_pairs:
        if bits[p] and bits[v]:
            mirror = np.mean(np.abs(dev[:, p] - dev[:, v])) / scale[p]
            if mirror <= thresholds.eps_eta:
                bits[v] = 0
    idx = np.flatnonzero(bits)
    post = sub.raw_next[:, idx].astype(np.float64)
    uniq, counts = np.unique(post, axis=0, return_counts=True)
    kept = uniq[counts >= thresholds.min_goal_support * counts.max()]
    if len(kept) < thresholds.n_disc:
        return ControlMask(bits, "discrete", values=kept)
    return ControlMask(bits, "continuous", low=post.min(axis=0), high=post.max(axis=0))


class Detector:
    """Trained (passive, active) pair for one source -> target edge, callable on raw factor vectors."""

    def __init__(self, source, target, passive, active, thresholds: DetectorThresholds, schema):
        self.source = source
        self.target = target
        self.passive = passive
        self.active = active
        self.thresholds = thresholds
        self.schema = schema

    def lls(self, s_a, s_b, s_b_next):
        x_act, x_pas = single_inputs(s_a, s_b, self.schema, self.source, self.target)
        la = dm.log_likelihood(self.active, x_act, s_b_next)
        lp = dm.log_likelihood(self.passive, x_pas, s_b_next)
        return float(la), float(lp)

    def __call__(self, s_a, s_b, s_b_next):
        thr = self.thresholds
        if self.source != "action" and thr.interaction_proximity > 0:
            d = np.hypot(s_a[0] - s_b[0], s_a[1] - s_b[1])
            if d >= thr.interaction_proximity:
                return False
        la, lp = self.lls(s_a, s_b, s_b_next)
        return la > thr.eps_act and lp < thr.eps_pas

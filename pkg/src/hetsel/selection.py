"""Selection procedures: the prioritized step-wise rule and baselines.

Units are partitioned four ways by the signs of (x - mu0) and (clfdr -
alpha). Group 0 units gain both power and error budget and are always
selected; group 3 units lose both and never are. Groups 1 and 2 trade one
currency for the other, ranked by the value-to-cost score
t = (x - mu0) / (clfdr - alpha), reported through the bounded transform
s = tanh(t). The step-wise procedure alternates between spending budget on
group 1 (descending s) and buying budget from group 2 (ascending s),
stopping when the realized modified power starts to fall.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "Group",
    "ScoredUnit",
    "ThresholdPair",
    "TraceStep",
    "SelectionResult",
    "classify_group",
    "classify_groups",
    "score",
    "score_arrays",
    "build_units",
    "select_dd",
    "select_clfdr_stepup",
    "clfdr_stepup_threshold",
    "select_bh",
    "calibrate_thresholds",
    "oracle_thresholds",
    "select_oracle",
]

# Slack allowed on the selected-set budget sum(clfdr - alpha) <= 0.
CAPACITY_TOL = 1e-9


class Group(IntEnum):
    G0 = 0  # x >= mu0 and clfdr <= alpha: free gain, always selected
    G1 = 1  # x >= mu0 and clfdr > alpha: power gain, budget cost
    G2 = 2  # x < mu0 and clfdr <= alpha: budget gain, power cost
    G3 = 3  # x < mu0 and clfdr > alpha: never selected


@dataclass(frozen=True)
class ScoredUnit:
    """One unit with its score and group label, aligned by ``index``."""

    index: int
    x: float
    clfdr: float
    t: float
    s: float
    group: Group


@dataclass(frozen=True)
class ThresholdPair:
    """Cutoffs (c1, c2) on the bounded score s for groups 1 and 2.

    ``t1`` and ``t2`` are the same cutoffs on the unbounded value-to-cost
    scale. They matter because tanh saturates to exactly 1.0 in double
    precision once t exceeds about 19: beyond that point s carries no
    information and comparisons must fall back to t. When not supplied they
    are derived from (c1, c2).
    """

    c1: float
    c2: float
    t1: float | None = None
    t2: float | None = None

    def __post_init__(self):
        for name, v in (("c1", self.c1), ("c2", self.c2)):
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1]")
        if self.t1 is None:
            object.__setattr__(self, "t1", _atanh_ext(self.c1))
        if self.t2 is None:
            object.__setattr__(self, "t2", _atanh_ext(self.c2))
        if np.sign(self.t1) * np.sign(self.c1) < 0 or np.sign(self.t2) * np.sign(self.c2) < 0:
            raise ValueError("t cutoffs must be sign-consistent with (c1, c2)")


def _atanh_ext(c: float) -> float:
    if c >= 1.0:
        return math.inf
    if c <= -1.0:
        return -math.inf
    return math.atanh(c)


@dataclass(frozen=True)
class TraceStep:
    """One audit record: what happened, to which unit, and the running state."""

    kind: str
    unit: int | None
    etp_star: float
    capacity: float


@dataclass(eq=False)
class SelectionResult:
    """Decisions plus realized modified power, final budget and audit trail."""

    decisions: np.ndarray
    etp_star_realized: float | None
    capacity_final: float | None
    trace: list = field(default_factory=list)

    @property
    def selected_indices(self) -> np.ndarray:
        return np.flatnonzero(self.decisions)

    @property
    def n_selected(self) -> int:
        return int(self.decisions.sum())

    def to_json_dict(self, ids=None) -> dict:
        sel = self.selected_indices
        if ids is not None:
            selected_ids = [ids[i] for i in sel]
        else:
            selected_ids = [int(i) for i in sel]
        return {
            "schema": "hetsel/selection/v1",
            "selected_ids": selected_ids,
            "etp_star": self.etp_star_realized,
            "capacity": self.capacity_final,
            "trace": [
                {
                    "step": st.kind,
                    "unit": None if st.unit is None else int(st.unit),
                    "etp_star": st.etp_star,
                    "capacity": st.capacity,
                }
                for st in self.trace
            ],
        }


def _check_alpha(alpha: float):
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def _check_ratio(values, name):
    v = np.asarray(values, dtype=float)
    if v.size and (np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v))):
        raise ValueError(f"{name} must lie in [0, 1]")
    return v


def classify_group(x: float, clfdr: float, mu0: float, alpha: float) -> Group:
    """Group label from the signs of (x - mu0, clfdr - alpha).

    Both boundaries are closed towards groups 0 and 2: x = mu0 counts as a
    gain and clfdr = alpha as free budget.
    """
    if x - mu0 >= 0:
        return Group.G0 if clfdr - alpha <= 0 else Group.G1
    return Group.G2 if clfdr - alpha <= 0 else Group.G3


def classify_groups(x, clfdr, mu0: float, alpha: float) -> np.ndarray:
    xs = np.asarray(x, dtype=float)
    cl = np.asarray(clfdr, dtype=float)
    gain = xs - mu0 >= 0
    cheap = cl - alpha <= 0
    return np.select(
        [gain & cheap, gain & ~cheap, ~gain & cheap],
        [Group.G0, Group.G1, Group.G2],
        default=Group.G3,
    ).astype(np.int8)


def score(x: float, clfdr: float, mu0: float, alpha: float):
    """Value-to-cost ratio t and its bounded transform s = tanh(t).

    When clfdr equals alpha exactly, t is +inf for x > mu0, -inf for
    x < mu0 and 0 at x = mu0; tanh maps the infinities to +-1.
    """
    if not 0.0 <= clfdr <= 1.0:
        raise ValueError("clfdr must lie in [0, 1]")
    num = x - mu0
    den = clfdr - alpha
    if den == 0.0:
        t = math.inf if num > 0 else (-math.inf if num < 0 else 0.0)
    else:
        t = num / den
    return t, math.tanh(t)


def score_arrays(x, clfdr, mu0: float, alpha: float):
    """Vectorized ``score``; returns (t, s) arrays."""
    xs = np.asarray(x, dtype=float)
    cl = _check_ratio(clfdr, "clfdr")
    num = xs - mu0
    den = cl - alpha
    zero = den == 0.0
    safe = np.where(zero, 1.0, den)
    t = np.where(zero, np.where(num > 0, np.inf, np.where(num < 0, -np.inf, 0.0)), num / safe)
    return t, np.tanh(t)


def build_units(x, clfdr, mu0: float, alpha: float, indices=None) -> list:
    """Scores and labels every unit; indices default to positions 0..m-1."""
    _check_alpha(alpha)
    xs = np.asarray(x, dtype=float)
    t, s = score_arrays(xs, clfdr, mu0, alpha)
    groups = classify_groups(xs, clfdr, mu0, alpha)
    cl = np.asarray(clfdr, dtype=float)
    if indices is None:
        indices = range(xs.size)
    return [
        ScoredUnit(
            index=idx,
            x=float(xs[i]),
            clfdr=float(cl[i]),
            t=float(t[i]),
            s=float(s[i]),
            group=Group(int(groups[i])),
        )
        for i, idx in enumerate(indices)
    ]


def _unit_arrays(units, mu0: float, alpha: float):
    x = np.array([u.x for u in units], dtype=float)
    cl = np.array([u.clfdr for u in units], dtype=float)
    grp = np.array([int(u.group) for u in units], dtype=np.int8)
    expect = classify_groups(x, cl, mu0, alpha)
    if not np.array_equal(grp, expect):
        raise ValueError("units were scored for a different (mu0, alpha)")
    t, _ = score_arrays(x, cl, mu0, alpha)
    return x, cl, t, grp


def _ordered(indices, t, x, descending_t: bool):
    # Ties in the score break towards larger x (the quantity the power
    # metric rewards), then towards earlier input position.
    key_t = -t[indices] if descending_t else t[indices]
    order = np.lexsort((indices, -x[indices], key_t))
    return indices[order]


def select_dd(units, alpha: float, mu0: float) -> SelectionResult:
    """Step-wise prioritized selection with a full audit trail.

    Seeds the selection with every group-0 unit, then alternates between
    two moves: fill group 1 in descending s while the cumulative budget
    sum(clfdr - alpha) over new additions fits within the current capacity,
    and buy one group-2 unit (ascending s) to enlarge the capacity. After
    each refill the realized modified power is compared with the previous
    value; on the first strict decline the last group-2 purchase and its
    refill are rolled back and the previous state is returned. Exhausting
    group 2 triggers one final refill; exhausting group 1 returns directly.
    """
    _check_alpha(alpha)
    m = len(units)
    decisions = np.zeros(m, dtype=np.int8)
    if m == 0:
        return SelectionResult(decisions, 0.0, 0.0, [])
    x, cl, t, grp = _unit_arrays(units, mu0, alpha)

    g0 = np.flatnonzero(grp == Group.G0)
    g1 = _ordered(np.flatnonzero(grp == Group.G1), t, x, descending_t=True)
    g2 = _ordered(np.flatnonzero(grp == Group.G2), t, x, descending_t=False)
    n1, n2 = g1.size, g2.size

    cost1 = np.cumsum(cl[g1] - alpha)  # strictly increasing: clfdr > alpha on g1
    power1 = np.cumsum(x[g1] - mu0)
    gain2 = np.cumsum(alpha - cl[g2])
    loss2 = np.cumsum(x[g2] - mu0)

    cap_base0 = float(np.sum(alpha - cl[g0]))
    etp_g0 = float(np.sum(x[g0] - mu0))

    def afford(cap: float) -> int:
        return int(np.searchsorted(cost1, cap, side="right"))

    def state(b: int):
        """Capacity base, affordable group-1 prefix and power at b group-2 buys."""
        cap = cap_base0 + (float(gain2[b - 1]) if b else 0.0)
        a = afford(cap)
        power = etp_g0 + (float(loss2[b - 1]) if b else 0.0)
        power += float(power1[a - 1]) if a else 0.0
        capacity = cap - (float(cost1[a - 1]) if a else 0.0)
        return a, power, capacity

    trace: list[TraceStep] = []
    running_etp = 0.0
    running_cap = 0.0
    for i in g0:
        running_etp += x[i] - mu0
        running_cap += alpha - cl[i]
        trace.append(TraceStep("seed_group0", int(i), running_etp, running_cap))

    def record_refill(a_from: int, a_to: int):
        nonlocal running_etp, running_cap
        for i in g1[a_from:a_to]:
            running_etp += x[i] - mu0
            running_cap -= cl[i] - alpha
            trace.append(TraceStep("add_group1", int(i), running_etp, running_cap))

    b = 0
    a_cur, etp_cur, cap_cur = state(0)
    record_refill(0, a_cur)
    trace.append(TraceStep("store_etp", None, etp_cur, cap_cur))

    while True:
        if a_cur == n1:
            trace.append(TraceStep("stop_group1_exhausted", None, etp_cur, cap_cur))
            break
        if b == n2:
            trace.append(TraceStep("stop_group2_exhausted", None, etp_cur, cap_cur))
            break
        nxt = int(g2[b])
        running_etp += x[nxt] - mu0
        running_cap += alpha - cl[nxt]
        trace.append(TraceStep("add_group2", nxt, running_etp, running_cap))
        a_new, etp_new, cap_new = state(b + 1)
        record_refill(a_cur, a_new)
        trace.append(TraceStep("store_etp", None, etp_new, cap_new))
        if etp_new < etp_cur:
            # Roll back the losing purchase: rebuild from group 0 plus the
            # first b group-2 units, refilled from group 1. With prefix
            # refills this is exactly the previous state; both states stay
            # in the trace.
            for i in g1[a_cur:a_new][::-1]:
                running_etp -= x[i] - mu0
                running_cap += cl[i] - alpha
                trace.append(TraceStep("rollback_group1", int(i), running_etp, running_cap))
            running_etp -= x[nxt] - mu0
            running_cap -= alpha - cl[nxt]
            trace.append(TraceStep("rollback_group2", nxt, running_etp, running_cap))
            trace.append(TraceStep("stop_power_decline", None, etp_cur, cap_cur))
            break
        b += 1
        a_cur, etp_cur, cap_cur = a_new, etp_new, cap_new

    decisions[g0] = 1
    decisions[g2[:b]] = 1
    decisions[g1[:a_cur]] = 1
    sel = np.flatnonzero(decisions)
    etp_real = float(np.sum(x[sel] - mu0)) if sel.size else 0.0
    cap_final = float(-np.sum(cl[sel] - alpha)) if sel.size else 0.0
    return SelectionResult(decisions, etp_real, cap_final, trace)


def select_clfdr_stepup(clfdrs, alpha: float) -> SelectionResult:
    """Step-up on sorted clfdr values: largest prefix with running mean <= alpha.

    All units tied with the cutoff value are included. The realized power
    field is None because this procedure never sees the observations.
    """
    _check_alpha(alpha)
    cl = _check_ratio(clfdrs, "clfdrs")
    m = cl.size
    decisions = np.zeros(m, dtype=np.int8)
    threshold = clfdr_stepup_threshold(cl, alpha)
    if math.isfinite(threshold):
        decisions[cl <= threshold] = 1
    sel = np.flatnonzero(decisions)
    cap = float(-np.sum(cl[sel] - alpha)) if sel.size else 0.0
    return SelectionResult(decisions, None, cap, [])


def clfdr_stepup_threshold(clfdrs, alpha: float) -> float:
    """The clfdr cutoff realized by the step-up rule; -inf when nothing passes."""
    _check_alpha(alpha)
    cl = _check_ratio(clfdrs, "clfdrs")
    if cl.size == 0:
        return -math.inf
    srt = np.sort(cl)
    means = np.cumsum(srt) / np.arange(1, cl.size + 1)
    ok = np.flatnonzero(means <= alpha)
    if ok.size == 0:
        return -math.inf
    return float(srt[ok[-1]])


def select_bh(pvalues, alpha: float) -> SelectionResult:
    """Benjamini-Hochberg step-up on p-values."""
    _check_alpha(alpha)
    p = _check_ratio(pvalues, "pvalues")
    m = p.size
    decisions = np.zeros(m, dtype=np.int8)
    if m:
        srt = np.sort(p)
        ok = np.flatnonzero(srt <= np.arange(1, m + 1) * alpha / m)
        if ok.size:
            decisions[p <= srt[ok[-1]]] = 1
    return SelectionResult(decisions, None, None, [])


def calibrate_thresholds(x, clfdr, alpha: float, mu0: float) -> ThresholdPair:
    """Empirical score cutoffs maximizing power along the one-dimensional curve.

    For b = 0, 1, ... group-2 purchases (ascending s), the group-1 cutoff is
    set to the smallest value whose selection keeps the empirical budget
    sum(clfdr - alpha) <= 0; the search stops at the first strict decline of
    the realized modified power. Candidate cutoffs are the observed scores
    themselves plus the sentinels: +1 / -1 encode "select none" for groups 1
    and 2, -1 / +1 "select all". An input with empty groups 1 and 2 yields
    the degenerate pair (+1, -1), meaning group 0 only.
    """
    _check_alpha(alpha)
    xs = np.asarray(x, dtype=float)
    cl = _check_ratio(clfdr, "clfdr")
    t, _ = score_arrays(xs, cl, mu0, alpha)
    grp = classify_groups(xs, cl, mu0, alpha)

    g0 = np.flatnonzero(grp == Group.G0)
    g1 = _ordered(np.flatnonzero(grp == Group.G1), t, xs, descending_t=True)
    g2 = _ordered(np.flatnonzero(grp == Group.G2), t, xs, descending_t=False)
    n1, n2 = g1.size, g2.size

    cap0 = float(np.sum(alpha - cl[g0]))
    etp0 = float(np.sum(xs[g0] - mu0))
    cost1 = np.cumsum(cl[g1] - alpha)
    power1 = np.concatenate(([0.0], np.cumsum(xs[g1] - mu0)))
    gain2 = np.concatenate(([0.0], np.cumsum(alpha - cl[g2])))
    loss2 = np.concatenate(([0.0], np.cumsum(xs[g2] - mu0)))

    a_of_b = np.searchsorted(cost1, cap0 + gain2, side="right")
    etp_b = etp0 + loss2 + power1[a_of_b]
    declines = np.flatnonzero(np.diff(etp_b) < 0)
    b_star = int(declines[0]) if declines.size else n2
    a_star = int(a_of_b[b_star])

    if a_star == 0:
        t1 = math.inf
    elif a_star == n1:
        t1 = -math.inf
    else:
        t1 = float(t[g1[a_star]])  # first excluded group-1 score
    if b_star == 0:
        t2 = -math.inf
    elif b_star == n2:
        t2 = math.inf
    else:
        t2 = float(t[g2[b_star]])  # first excluded group-2 score
    return ThresholdPair(c1=float(np.tanh(t1)), c2=float(np.tanh(t2)), t1=t1, t2=t2)


def oracle_thresholds(
    model,
    alpha: float,
    mu0: float,
    n_mc: int = 10 ** 6,
    seed: int | np.random.SeedSequence = 0,
) -> ThresholdPair:
    """Monte Carlo calibration of the oracle cutoffs under a known model.

    ``model`` must provide ``sample(rng, n) -> (x, sigma, mu, group)`` and
    ``clfdr(x, sigma, group, mu0)``; see ``deconv.JointModel``. Draws n_mc
    synthetic units, scores them exactly, and runs the empirical curve
    search of ``calibrate_thresholds``.
    """
    if n_mc < 10 ** 5:
        raise ValueError("n_mc must be at least 1e5 for a stable calibration")
    rng = np.random.default_rng(seed)
    x, sigma, _, group = model.sample(rng, int(n_mc))
    cl = model.clfdr(x, sigma, group, mu0)
    return calibrate_thresholds(x, cl, alpha, mu0)


def select_oracle(units, thresholds: ThresholdPair, alpha: float, mu0: float) -> SelectionResult:
    """Fixed-cutoff rule: all of group 0, group 1 with s > c1, group 2 with s < c2.

    Both comparisons are strict, so a unit whose score equals the cutoff is
    not selected. Where s sits at exact float saturation (|s| = 1.0) and
    coincides with the cutoff, the comparison is resolved on the unbounded
    t scale, which is what the saturated s would order in exact arithmetic.
    """
    _check_alpha(alpha)
    x, cl, t, grp = _unit_arrays(units, mu0, alpha)
    s = np.tanh(t)
    saturated = np.abs(s) == 1.0
    pick1 = (s > thresholds.c1) | (saturated & (s == thresholds.c1) & (t > thresholds.t1))
    pick2 = (s < thresholds.c2) | (saturated & (s == thresholds.c2) & (t < thresholds.t2))
    sel = (grp == Group.G0) | ((grp == Group.G1) & pick1) | ((grp == Group.G2) & pick2)
    decisions = sel.astype(np.int8)
    idx = np.flatnonzero(decisions)
    etp_real = float(np.sum(x[idx] - mu0)) if idx.size else 0.0
    cap = float(-np.sum(cl[idx] - alpha)) if idx.size else 0.0
    return SelectionResult(decisions, etp_real, cap, [])

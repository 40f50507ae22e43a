"""R-values: extremal-threshold rankings induced by a selection procedure.

A unit's r-value is the most demanding setting at which the procedure still
selects it: the smallest FDR level alpha (definition "alpha"), or the
largest reference level mu0 (definition "mu0"). Units selected earlier are
more important, which yields an objective ranking without fixing the
threshold parameter in advance.

The continuum definitions are approximated on a declared finite grid. The
procedures here are not assumed nested in the varying parameter, so the
extremum is taken over every grid point where the unit is selected rather
than located by bisection.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .selection import build_units, score_arrays, select_dd

__all__ = [
    "RValueEntry",
    "RValueTable",
    "default_alpha_grid",
    "default_mu0_grid",
    "rvalue_vary_alpha",
    "rvalue_vary_mu0",
    "dd_alpha_evaluator",
    "dd_mu0_evaluator",
]

VARY_ALPHA = "alpha"
VARY_MU0 = "mu0"


@dataclass(frozen=True)
class RValueEntry:
    """Per-unit r-value and standardized rank.

    ``r`` is +inf (vary-alpha) or -inf (vary-mu0) for units never selected
    on the grid; those units carry no rank (``r_prime`` is NaN). ``tied``
    flags units sharing their r-value with another unit, where the rank
    order fell back to the tie-break (larger score s, then input position).
    """

    id: object
    x: float
    sigma: float | None
    r: float
    r_prime: float
    tied: bool

    @property
    def selected_ever(self) -> bool:
        return math.isfinite(self.r)


@dataclass(frozen=True)
class RValueTable:
    definition: str
    grid_resolution: float
    n_grid: int
    entries: tuple

    def to_json_dict(self) -> dict:
        return {
            "schema": "hetsel/rvalues/v1",
            "definition": self.definition,
            "grid_resolution": self.grid_resolution,
            "n_grid": self.n_grid,
            "entries": [
                {
                    "id": e.id,
                    "x": e.x,
                    "sigma": e.sigma,
                    "r": e.r if math.isfinite(e.r) else None,
                    "r_prime": None if math.isnan(e.r_prime) else e.r_prime,
                    "tied": e.tied,
                }
                for e in self.entries
            ],
        }

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["id", "x", "sigma", "r", "r_prime", "definition", "grid_resolution"]
            )
            for e in self.entries:
                writer.writerow(
                    [
                        e.id,
                        repr(e.x),
                        "" if e.sigma is None else repr(e.sigma),
                        repr(e.r) if math.isfinite(e.r) else "",
                        "" if math.isnan(e.r_prime) else repr(e.r_prime),
                        self.definition,
                        repr(self.grid_resolution),
                    ]
                )


def default_alpha_grid(n: int = 200, low: float = 1e-4, high: float = 0.5) -> np.ndarray:
    """Log-spaced ascending grid of FDR levels."""
    if not (0 < low < high < 1):
        raise ValueError("need 0 < low < high < 1")
    return np.geomspace(low, high, int(n))


def default_mu0_grid(x, n: int = 200, pad: float | None = None) -> np.ndarray:
    """Linear descending grid from above max(x) to below min(x)."""
    xs = np.asarray(x, dtype=float)
    lo, hi = float(xs.min()), float(xs.max())
    if pad is None:
        pad = 1e-3 * (hi - lo) if hi > lo else 1e-6
    return np.linspace(hi + pad, lo - pad, int(n))


def _validate_grid(grid, definition):
    g = np.asarray(grid, dtype=float)
    if g.size == 0:
        raise ValueError("grid must be nonempty")
    d = np.diff(g)
    if definition == VARY_ALPHA:
        if np.any(g <= 0) or np.any(g >= 1):
            raise ValueError("alpha grid must lie in (0, 1)")
        if g.size > 1 and not np.all(d > 0):
            raise ValueError("alpha grid must be strictly ascending")
    else:
        if g.size > 1 and not np.all(d < 0):
            raise ValueError("mu0 grid must be strictly descending")
    resolution = float(np.max(np.abs(d))) if g.size > 1 else float("nan")
    return g, resolution


def _scan(ids, x, evaluate, grid, sentinel, n_jobs=1):
    """First-selection scan: records the first grid point selecting each unit.

    The grid is ordered from most to least demanding, so the first selection
    realizes the extremum even for non-nested procedures (each point is
    evaluated regardless of earlier selections). Replays at distinct grid
    points are independent and may run on a thread pool; results are merged
    in grid order, so the outcome does not depend on ``n_jobs``.
    """
    m = len(ids)
    r = np.full(m, sentinel, dtype=float)
    s_at = np.full(m, -np.inf)
    points = [float(p) for p in grid]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outputs = list(pool.map(evaluate, points))
    else:
        outputs = [evaluate(p) for p in points]
    for point, out in zip(points, outputs):
        sel, s = out if isinstance(out, tuple) else (out, None)
        sel = np.asarray(sel, dtype=bool)
        if sel.shape != (m,):
            raise ValueError("procedure returned a selection of the wrong length")
        newly = sel & ~np.isfinite(r)
        if newly.any():
            r[newly] = point
            if s is not None:
                s_at[newly] = np.asarray(s, dtype=float)[newly]
    return r, s_at


def _build_table(ids, x, sigma, r, s_at, definition, resolution, n_grid):
    xs = np.asarray(x, dtype=float)
    m = len(ids)
    ranked = np.flatnonzero(np.isfinite(r))
    r_prime = np.full(m, np.nan)
    if ranked.size:
        # Importance order: ascending r for vary-alpha (selected at a smaller
        # level first), descending r for vary-mu0 (still selected at a higher
        # reference level). Ties break to larger score s, then input order.
        primary = r[ranked] if definition == VARY_ALPHA else -r[ranked]
        order = np.lexsort((ranked, -s_at[ranked], primary))
        r_prime[ranked[order]] = np.arange(1, ranked.size + 1) / m
    finite_r = r[np.isfinite(r)]
    uniq, counts = np.unique(finite_r, return_counts=True)
    tied_values = set(uniq[counts > 1].tolist())
    sig = None if sigma is None else np.asarray(sigma, dtype=float)
    entries = tuple(
        RValueEntry(
            id=ids[i],
            x=float(xs[i]),
            sigma=None if sig is None else float(sig[i]),
            r=float(r[i]),
            r_prime=float(r_prime[i]),
            tied=bool(math.isfinite(r[i]) and r[i] in tied_values),
        )
        for i in range(m)
    )
    return RValueTable(
        definition=definition,
        grid_resolution=resolution,
        n_grid=n_grid,
        entries=entries,
    )


def rvalue_vary_alpha(ids, x, evaluate, alpha_grid, sigma=None, n_jobs=1) -> RValueTable:
    """R-values as the smallest grid alpha at which each unit is selected.

    ``evaluate(alpha)`` must return a boolean selection vector, optionally
    paired with the per-unit scores s used for rank tie-breaks. Units never
    selected get r = +inf and no rank.
    """
    grid, resolution = _validate_grid(alpha_grid, VARY_ALPHA)
    r, s_at = _scan(ids, x, evaluate, grid, math.inf, n_jobs=n_jobs)
    return _build_table(ids, x, sigma, r, s_at, VARY_ALPHA, resolution, grid.size)


def rvalue_vary_mu0(ids, x, evaluate, mu0_grid, sigma=None, n_jobs=1) -> RValueTable:
    """R-values as the largest grid mu0 at which each unit is selected.

    The grid must descend, conventionally from above max(x) to below
    min(x). Units never selected get r = -inf and no rank.
    """
    grid, resolution = _validate_grid(mu0_grid, VARY_MU0)
    r, s_at = _scan(ids, x, evaluate, grid, -math.inf, n_jobs=n_jobs)
    return _build_table(ids, x, sigma, r, s_at, VARY_MU0, resolution, grid.size)


def dd_alpha_evaluator(x, clfdr, mu0: float):
    """Replay hook for the step-wise procedure with alpha varying."""
    xs = np.asarray(x, dtype=float)
    cl = np.asarray(clfdr, dtype=float)

    def evaluate(alpha: float):
        units = build_units(xs, cl, mu0, alpha)
        res = select_dd(units, alpha, mu0)
        _, s = score_arrays(xs, cl, mu0, alpha)
        return res.decisions.astype(bool), s

    return evaluate


def dd_mu0_evaluator(x, clfdr_fn, alpha: float):
    """Replay hook with mu0 varying; ``clfdr_fn(mu0)`` supplies the scores."""
    xs = np.asarray(x, dtype=float)

    def evaluate(mu0: float):
        cl = np.asarray(clfdr_fn(mu0), dtype=float)
        units = build_units(xs, cl, mu0, alpha)
        res = select_dd(units, alpha, mu0)
        _, s = score_arrays(xs, cl, mu0, alpha)
        return res.decisions.astype(bool), s

    return evaluate

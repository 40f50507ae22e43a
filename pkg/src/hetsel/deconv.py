"""Effect-size prior estimation and conditional local FDR evaluation.

The estimator approximates the prior of the true effects by point masses on
an evenly spaced grid. Grid weights are chosen so that the marginal density
implied by the discretized prior matches, in least squares over the
probability simplex, a weighted variable-bandwidth kernel estimate of the
observation density. The conditional local FDR of a unit is then the ratio
of the null-region marginal mass to the full marginal at its observation.

Two evaluation paths are provided:

* ``clfdr_from_fit`` scores units against a fitted discrete prior;
* ``oracle_clfdr`` scores units against a known prior (point masses,
  uniform intervals, or normal components) using exact closed forms, for
  simulations where the generating distribution is available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import ndtr

from .model import normal_cdf

__all__ = [
    "PriorGrid",
    "BandwidthPair",
    "FittedPrior",
    "FitConvergenceError",
    "PointMass",
    "UniformInterval",
    "NormalComponent",
    "TruePrior",
    "ConstantSigma",
    "UniformSigma",
    "DiscreteSigma",
    "JointModel",
    "build_grid",
    "silverman_bandwidths",
    "kernel_marginal",
    "kernel_marginals",
    "simplex_project",
    "fit_weights",
    "clfdr_from_fit",
    "oracle_clfdr",
    "fit_prior",
    "fit_prior_by_group",
    "clfdr_by_group",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Floor applied to marginal densities before division so that Gaussian tail
# underflow cannot produce 0/0; the resulting ratio is clamped to [0, 1].
DENSITY_FLOOR = 1e-300


def _gauss(z, h):
    """Gaussian kernel with scale h: exp(-z^2 / (2 h^2)) / (sqrt(2 pi) h)."""
    return np.exp(-0.5 * np.square(z / h)) / (_SQRT_2PI * h)


def _interval_mass(z_lo, z_hi):
    """P(z_lo <= Z <= z_hi) for standard normal Z, stable in the far tails.

    When both endpoints sit in the upper tail the difference of CDFs loses
    all precision; the survival-function form is used there instead.
    """
    z_lo = np.asarray(z_lo, dtype=float)
    z_hi = np.asarray(z_hi, dtype=float)
    upper = ndtr(-z_lo) - ndtr(-z_hi)
    lower = ndtr(z_hi) - ndtr(z_lo)
    out = np.where(z_lo > 0, upper, lower)
    return np.maximum(out, 0.0)


class FitConvergenceError(RuntimeError):
    """Raised when the simplex solver exhausts its iteration budget.

    Carries the best iterate found (``fit``) and its projected-gradient
    norm (``residual``) so callers can inspect or accept the partial result.
    """

    def __init__(self, message: str, fit: "FittedPrior", residual: float):
        super().__init__(message)
        self.fit = fit
        self.residual = residual


@dataclass(frozen=True)
class PriorGrid:
    """Evenly spaced support points {left, left + eta, ..., left + (k-1) eta}."""

    left: float
    eta: float
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("grid needs at least 2 nodes")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError("grid spacing eta must be positive and finite")
        if not np.isfinite(self.left):
            raise ValueError("grid left endpoint must be finite")

    @property
    def right(self) -> float:
        return self.left + self.eta * (self.k - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.left + self.eta * np.arange(self.k)


@dataclass(frozen=True)
class BandwidthPair:
    """Kernel bandwidths for the observation and sigma directions."""

    h_x: float
    h_sigma: float

    def __post_init__(self):
        for name, v in (("h_x", self.h_x), ("h_sigma", self.h_sigma)):
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite")


@dataclass(frozen=True, eq=False)
class FittedPrior:
    """Discretized prior estimate: grid nodes, simplex weights, fit diagnostics."""

    grid: PriorGrid
    weights: np.ndarray
    objective: float
    iterations: int
    bandwidths: BandwidthPair | None = None
    pg_residual: float = float("nan")
    objective_history: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.grid.k,):
            raise ValueError("weights length must equal the grid size")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if self.objective < 0:
            raise ValueError("objective must be nonnegative")
        object.__setattr__(self, "weights", w)

    def to_json_dict(self) -> dict:
        doc = {
            "schema": "hetsel/prior-fit/v1",
            "nodes": [float(v) for v in self.grid.nodes],
            "weights": [float(v) for v in self.weights],
            "objective": float(self.objective),
            "iterations": int(self.iterations),
        }
        if self.bandwidths is not None:
            doc["bandwidths"] = {
                "h_x": self.bandwidths.h_x,
                "h_sigma": self.bandwidths.h_sigma,
            }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FittedPrior":
        if doc.get("schema") != "hetsel/prior-fit/v1":
            raise ValueError(f"unrecognized prior fit schema: {doc.get('schema')!r}")
        nodes = np.asarray(doc["nodes"], dtype=float)
        if nodes.size < 2:
            raise ValueError("prior fit document needs at least 2 nodes")
        eta = float(nodes[1] - nodes[0])
        grid = PriorGrid(left=float(nodes[0]), eta=eta, k=int(nodes.size))
        if not np.allclose(grid.nodes, nodes, rtol=0, atol=1e-9 * max(1.0, abs(eta))):
            raise ValueError("prior fit nodes are not evenly spaced")
        bw = None
        if "bandwidths" in doc:
            bw = BandwidthPair(doc["bandwidths"]["h_x"], doc["bandwidths"]["h_sigma"])
        return cls(
            grid=grid,
            weights=np.asarray(doc["weights"], dtype=float),
            objective=float(doc["objective"]),
            iterations=int(doc["iterations"]),
            bandwidths=bw,
        )


def build_grid(xs, k: int = 50) -> PriorGrid:
    """Grid spanning the empirical 1% and 99% quantiles of the observations.

    Quantiles use order statistics with linear interpolation (probability p
    maps to 1-based index p (m - 1) + 1), i.e. numpy's default convention.
    """
    x = np.asarray(xs, dtype=float)
    if k < 2:
        raise ValueError("grid needs at least 2 nodes")
    if np.unique(x).size < 2:
        raise ValueError("need at least 2 distinct observations to build a grid")
    lo, hi = np.quantile(x, [0.01, 0.99])
    if not hi > lo:
        raise ValueError("degenerate support: 1% and 99% quantiles coincide")
    return PriorGrid(left=float(lo), eta=float((hi - lo) / (k - 1)), k=int(k))


def _rule_of_thumb(values: np.ndarray, m: int, name: str) -> float:
    sd = float(np.std(values, ddof=1))
    iqr = float(np.quantile(values, 0.75) - np.quantile(values, 0.25))
    spread = min(sd, iqr)
    if spread <= 0:
        raise ValueError(f"zero spread in {name}: rule-of-thumb bandwidth vanishes")
    return 0.9 * spread / (1.34 * m ** 0.2)


def silverman_bandwidths(xs, sigmas) -> BandwidthPair:
    """Rule-of-thumb bandwidths 0.9 min{sd(v), IQR(v)} / (1.34 m^(1/5)).

    Applied to the observations and to the standard deviations separately.
    The sample standard deviation uses the unbiased (ddof=1) convention.
    """
    x = np.asarray(xs, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    if x.shape != s.shape:
        raise ValueError("xs and sigmas must have the same length")
    m = x.size
    if m < 2:
        raise ValueError("need at least 2 observations for bandwidth selection")
    return BandwidthPair(
        h_x=_rule_of_thumb(x, m, "xs"), h_sigma=_rule_of_thumb(s, m, "sigmas")
    )


def kernel_marginals(x, sigma, bandwidths: BandwidthPair, chunk_size: int = 1024):
    """Weighted variable-bandwidth kernel estimate of each unit's marginal.

    For unit i the estimate is
        sum_j  w_ij * phi_{h_x sigma_j}(x_i - x_j),
    where w_ij normalizes phi_{h_sigma}(sigma_i - sigma_j) over j, so units
    with similar sigma dominate, and the x-kernel widens with sigma_j. The
    sum includes j = i, hence the result is strictly positive.
    """
    xs = np.asarray(x, dtype=float)
    sg = np.asarray(sigma, dtype=float)
    if xs.shape != sg.shape or xs.ndim != 1:
        raise ValueError("x and sigma must be 1-d arrays of equal length")
    m = xs.size
    if m < 1:
        raise ValueError("need at least one observation")
    hx_j = bandwidths.h_x * sg
    out = np.empty(m, dtype=float)
    for start in range(0, m, chunk_size):
        stop = min(start + chunk_size, m)
        sw = _gauss(sg[start:stop, None] - sg[None, :], bandwidths.h_sigma)
        sw /= sw.sum(axis=1, keepdims=True)
        xk = _gauss(xs[start:stop, None] - xs[None, :], hx_j[None, :])
        out[start:stop] = np.einsum("ij,ij->i", sw, xk)
    return out


def kernel_marginal(i: int, x, sigma, bandwidths: BandwidthPair) -> float:
    """Marginal density estimate for a single unit; see ``kernel_marginals``."""
    xs = np.asarray(x, dtype=float)
    sg = np.asarray(sigma, dtype=float)
    sw = _gauss(sg[i] - sg, bandwidths.h_sigma)
    sw /= sw.sum()
    xk = _gauss(xs[i] - xs, bandwidths.h_x * sg)
    return float(np.dot(sw, xk))


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort algorithm)."""
    y = np.asarray(v, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, y.size + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(y - theta, 0.0)


def _design_matrix(grid: PriorGrid, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return _gauss(x[:, None] - grid.nodes[None, :], sigma[:, None])


def fit_weights(
    grid: PriorGrid,
    x,
    sigma,
    marginals,
    *,
    max_iter: int = 20000,
    rel_tol: float = 1e-10,
    pg_tol: float = 1e-6,
    keep_history: bool = False,
) -> FittedPrior:
    """Least-squares simplex weights matching the implied marginals.

    Minimizes sum_i (f_i(x_i) - marginals_i)^2 over the probability simplex,
    where f_i(x) = sum_j w_j phi_{sigma_i}(x - node_j). Solved by a monotone
    accelerated projected-gradient method from uniform weights: Euclidean
    simplex projections, a backtracking line search on the proximal upper
    bound, Nesterov momentum with a function-value restart, and a safeguard
    that never accepts an iterate worse than the incumbent, so the objective
    sequence is non-increasing. Stops when the relative objective change
    drops below ``rel_tol`` or the unit-step projected-gradient norm drops
    below ``pg_tol``. The kernel design matrix is heavily rank-deficient, so
    unaccelerated descent tends to exhaust the iteration budget; momentum
    brings typical instances down to a few thousand iterations.

    Raises ``FitConvergenceError`` (carrying the best iterate) if the
    iteration cap is reached first.
    """
    xs = np.asarray(x, dtype=float)
    sg = np.asarray(sigma, dtype=float)
    b = np.asarray(marginals, dtype=float)
    if not (xs.shape == sg.shape == b.shape):
        raise ValueError("x, sigma and marginals must have equal length")
    if np.any(b <= 0):
        raise ValueError("marginals must be strictly positive")

    A = _design_matrix(grid, xs, sg)
    # Normal-equation form: the objective is w'Gw - 2 c'w + const, so each
    # iteration costs O(k^2) regardless of the number of observations.
    G = A.T @ A
    c = A.T @ b
    const = float(b @ b)

    def objective(w):
        return max(float(w @ (G @ w) - 2.0 * (c @ w) + const), 0.0)

    def pg_residual(w):
        g = 2.0 * (G @ w - c)
        return float(np.linalg.norm(w - simplex_project(w - g)))

    w = np.full(grid.k, 1.0 / grid.k)
    y = w.copy()
    f_cur = objective(w)
    history = [f_cur] if keep_history else None
    step = 1.0
    momentum = 1.0
    pg_norm = pg_residual(w)
    iterations = 0
    converged = pg_norm < pg_tol

    while not converged and iterations < max_iter:
        gy = 2.0 * (G @ y - c)
        f_y = objective(y)
        while True:
            z = simplex_project(y - step * gy)
            d = z - y
            f_z = objective(z)
            if f_z <= f_y + float(gy @ d) + float(d @ d) / (2.0 * step) + 1e-18:
                break
            step *= 0.5
            if step < 1e-20:
                z, f_z = y, f_y
                break
        iterations += 1
        restart = f_z > f_cur
        if restart:
            # Momentum overshot: keep the incumbent and restart the schedule.
            momentum = 1.0
            y = w.copy()
        else:
            w_new, f_new = z, f_z
            momentum_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
            y = w_new + (momentum / momentum_next) * (z - w_new) + (
                (momentum - 1.0) / momentum_next
            ) * (w_new - w)
            momentum = momentum_next
            rel_change = abs(f_cur - f_new) / max(f_cur, 1e-30)
            w, f_cur = w_new, f_new
            if history is not None:
                history.append(f_cur)
            pg_norm = pg_residual(w)
            if pg_norm < pg_tol or rel_change < rel_tol:
                converged = True
        step *= 2.0

    if not converged:
        partial = FittedPrior(
            grid=grid,
            weights=simplex_project(w),
            objective=f_cur,
            iterations=iterations,
            pg_residual=pg_norm,
            objective_history=tuple(history) if history else None,
        )
        raise FitConvergenceError(
            f"simplex fit did not converge within {max_iter} iterations "
            f"(projected-gradient norm {pg_norm:.3e})",
            fit=partial,
            residual=pg_norm,
        )

    w = simplex_project(w)
    return FittedPrior(
        grid=grid,
        weights=w,
        objective=objective(w),
        iterations=iterations,
        pg_residual=pg_residual(w),
        objective_history=tuple(history) if history else None,
    )


def clfdr_from_fit(fit: FittedPrior, x, sigma, mu0: float):
    """Conditional local FDR under a fitted prior: f0(x) / f(x) in [0, 1].

    f sums weighted Gaussian densities over all grid nodes; f0 over the nodes
    with node <= mu0 (closed inequality). The denominator is floored at
    ``DENSITY_FLOOR`` and the ratio clamped to [0, 1].
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    sg = np.atleast_1d(np.asarray(sigma, dtype=float))
    xs, sg = np.broadcast_arrays(xs, sg)
    dens = _gauss(xs[:, None] - fit.grid.nodes[None, :], sg[:, None])
    full = dens @ fit.weights
    null_mask = fit.grid.nodes <= mu0
    null = dens[:, null_mask] @ fit.weights[null_mask]
    out = np.clip(null / np.maximum(full, DENSITY_FLOOR), 0.0, 1.0)
    if np.ndim(x) == 0 and np.ndim(sigma) == 0:
        return float(out[0])
    return out


# ---------------------------------------------------------------------------
# Known priors (for simulations) and exact conditional local FDR.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    loc: float


@dataclass(frozen=True)
class UniformInterval:
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform component needs high > low")


@dataclass(frozen=True)
class NormalComponent:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("normal component needs sd > 0")


PriorComponent = Union[PointMass, UniformInterval, NormalComponent]


@dataclass(frozen=True)
class TruePrior:
    """Known effect-size prior: a finite weighted mixture of components."""

    weights: tuple
    components: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != len(self.components) or len(w) == 0:
            raise ValueError("weights and components must align and be nonempty")
        if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("component weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def point_masses(cls, locs, weights) -> "TruePrior":
        return cls(tuple(weights), tuple(PointMass(float(v)) for v in locs))

    @classmethod
    def uniform_mixture(cls, pieces) -> "TruePrior":
        """pieces: iterable of (weight, low, high)."""
        ws, comps = zip(*[(w, UniformInterval(lo, hi)) for w, lo, hi in pieces])
        return cls(ws, comps)

    @classmethod
    def normal_mixture(cls, pieces) -> "TruePrior":
        """pieces: iterable of (weight, mean, sd)."""
        ws, comps = zip(*[(w, NormalComponent(m, s)) for w, m, s in pieces])
        return cls(ws, comps)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        which = rng.choice(len(self.components), size=n, p=np.asarray(self.weights))
        out = np.empty(n, dtype=float)
        for j, comp in enumerate(self.components):
            mask = which == j
            cnt = int(mask.sum())
            if cnt == 0:
                continue
            if isinstance(comp, PointMass):
                out[mask] = comp.loc
            elif isinstance(comp, UniformInterval):
                out[mask] = rng.uniform(comp.low, comp.high, size=cnt)
            else:
                out[mask] = comp.mean + comp.sd * rng.standard_normal(cnt)
        return out


def _component_densities(comp, w: float, x, sigma, mu0: float):
    """(full, null) marginal contributions of one weighted prior component."""
    if isinstance(comp, PointMass):
        dens = w * _gauss(x - comp.loc, sigma)
        null = dens if comp.loc <= mu0 else np.zeros_like(dens)
        return dens, null
    if isinstance(comp, UniformInterval):
        width = comp.high - comp.low
        z_hi = (x - comp.low) / sigma
        z_lo = (x - comp.high) / sigma
        dens = w * _interval_mass(z_lo, z_hi) / width
        if mu0 <= comp.low:
            null = np.zeros_like(dens)
        else:
            top = min(comp.high, mu0)
            null = w * _interval_mass((x - top) / sigma, z_hi) / width
        return dens, null
    # Normal component: convolution is normal; the null mass adds a CDF
    # factor evaluated at the posterior distribution of the effect.
    total_var = sigma ** 2 + comp.sd ** 2
    dens = w * np.exp(-0.5 * (x - comp.mean) ** 2 / total_var) / (
        _SQRT_2PI * np.sqrt(total_var)
    )
    post_mean = comp.mean + (comp.sd ** 2 / total_var) * (x - comp.mean)
    post_sd = sigma * comp.sd / np.sqrt(total_var)
    null = dens * normal_cdf((mu0 - post_mean) / post_sd)
    return dens, null


def oracle_clfdr(prior: TruePrior, x, sigma, mu0: float):
    """Exact conditional local FDR under a known prior.

    Point masses reduce to finite sums, uniform components to differences of
    normal CDFs, normal components to Gaussian convolution identities with a
    CDF truncation term; no generic quadrature is involved. Result in [0, 1].
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    sg = np.atleast_1d(np.asarray(sigma, dtype=float))
    xs, sg = np.broadcast_arrays(xs, sg)
    full = np.zeros(xs.shape, dtype=float)
    null = np.zeros(xs.shape, dtype=float)
    for w, comp in zip(prior.weights, prior.components):
        d, d0 = _component_densities(comp, w, xs, sg, mu0)
        full += d
        null += d0
    out = np.clip(null / np.maximum(full, DENSITY_FLOOR), 0.0, 1.0)
    if np.ndim(x) == 0 and np.ndim(sigma) == 0:
        return float(out[0])
    return out


# ---------------------------------------------------------------------------
# Sigma laws and the joint (sigma, mu) model used for oracle calibration.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantSigma:
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("sigma must be positive")

    def sample(self, rng, n):
        return np.full(n, self.value, dtype=float)


@dataclass(frozen=True)
class UniformSigma:
    low: float
    high: float

    def __post_init__(self):
        if not (0 < self.low < self.high):
            raise ValueError("need 0 < low < high")

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=n)


@dataclass(frozen=True)
class DiscreteSigma:
    values: tuple
    weights: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        ws = tuple(float(w) for w in self.weights)
        if len(vals) != len(ws) or not vals:
            raise ValueError("values and weights must align and be nonempty")
        if any(v <= 0 for v in vals) or abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError("sigmas must be positive, weights sum to 1")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", ws)

    def sample(self, rng, n):
        idx = rng.choice(len(self.values), size=n, p=np.asarray(self.weights))
        return np.asarray(self.values, dtype=float)[idx]


@dataclass(frozen=True)
class JointModel:
    """Sampleable joint law of (sigma, mu): a mixture of sigma-groups.

    Each group pairs a sigma law with the effect prior holding in that
    group, so designs where the effect distribution depends on sigma are
    expressed as several groups. ``clfdr`` evaluates the exact conditional
    local FDR using each unit's group prior.
    """

    group_weights: tuple
    sigma_laws: tuple
    priors: tuple

    def __post_init__(self):
        ws = tuple(float(w) for w in self.group_weights)
        if not (len(ws) == len(self.sigma_laws) == len(self.priors)) or not ws:
            raise ValueError("group weights, sigma laws and priors must align")
        if any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError("group weights must be nonnegative and sum to 1")
        object.__setattr__(self, "group_weights", ws)

    @classmethod
    def independent(cls, prior: TruePrior, sigma_law) -> "JointModel":
        return cls((1.0,), (sigma_law,), (prior,))

    @property
    def n_groups(self) -> int:
        return len(self.priors)

    def sample(self, rng: np.random.Generator, n: int):
        """Returns (x, sigma, mu, group_index); draws are vectorized per group."""
        if self.n_groups == 1:
            group = np.zeros(n, dtype=int)
        else:
            group = rng.choice(self.n_groups, size=n, p=np.asarray(self.group_weights))
        sigma = np.empty(n, dtype=float)
        mu = np.empty(n, dtype=float)
        for g in range(self.n_groups):
            mask = group == g
            cnt = int(mask.sum())
            if cnt == 0:
                continue
            sigma[mask] = self.sigma_laws[g].sample(rng, cnt)
            mu[mask] = self.priors[g].sample(rng, cnt)
        x = mu + sigma * rng.standard_normal(n)
        return x, sigma, mu, group

    def clfdr(self, x, sigma, group, mu0: float) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        sg = np.asarray(sigma, dtype=float)
        gp = np.asarray(group, dtype=int)
        out = np.empty(xs.shape, dtype=float)
        for g in range(self.n_groups):
            mask = gp == g
            if mask.any():
                out[mask] = oracle_clfdr(self.priors[g], xs[mask], sg[mask], mu0)
        return out


# ---------------------------------------------------------------------------
# Convenience pipeline: bandwidths + grid + kernel marginals + weights.
# ---------------------------------------------------------------------------


def fit_prior(
    x,
    sigma,
    *,
    k: int = 50,
    bandwidths: BandwidthPair | None = None,
    grid: PriorGrid | None = None,
    keep_history: bool = False,
) -> FittedPrior:
    """Full deconvolution fit for one group of observations.

    When all sigmas in the group coincide the sigma-direction kernel weights
    are uniform whatever the bandwidth, so a placeholder h_sigma = 1.0 is
    substituted rather than failing the zero-spread check.
    """
    xs = np.asarray(x, dtype=float)
    sg = np.asarray(sigma, dtype=float)
    if bandwidths is None:
        m = xs.size
        if m < 2:
            raise ValueError("need at least 2 observations to fit a prior")
        h_x = _rule_of_thumb(xs, m, "xs")
        if np.ptp(sg) == 0:
            h_sigma = 1.0
        else:
            h_sigma = _rule_of_thumb(sg, m, "sigmas")
        bandwidths = BandwidthPair(h_x=h_x, h_sigma=h_sigma)
    if grid is None:
        grid = build_grid(xs, k)
    marginals = kernel_marginals(xs, sg, bandwidths)
    fit = fit_weights(grid, xs, sg, marginals, keep_history=keep_history)
    return FittedPrior(
        grid=fit.grid,
        weights=fit.weights,
        objective=fit.objective,
        iterations=fit.iterations,
        bandwidths=bandwidths,
        pg_residual=fit.pg_residual,
        objective_history=fit.objective_history,
    )


def fit_prior_by_group(x, sigma, group_ids, *, k: int = 50) -> dict:
    """Fits one prior per sigma-group; returns {group_id: FittedPrior}.

    Fitting per group restores the independence between sigma and the
    effect prior that the estimator relies on when the two are correlated
    across groups.
    """
    xs = np.asarray(x, dtype=float)
    sg = np.asarray(sigma, dtype=float)
    gids = np.asarray(group_ids)
    fits = {}
    for g in np.unique(gids):
        mask = gids == g
        fits[g.item() if hasattr(g, "item") else g] = fit_prior(
            xs[mask], sg[mask], k=k
        )
    return fits


def clfdr_by_group(fits: dict, group_ids, x, sigma, mu0: float) -> np.ndarray:
    """Evaluates each unit's conditional local FDR under its group's fit."""
    xs = np.asarray(x, dtype=float)
    sg = np.asarray(sigma, dtype=float)
    gids = np.asarray(group_ids)
    out = np.empty(xs.shape, dtype=float)
    for g, fit in fits.items():
        mask = gids == g
        if mask.any():
            out[mask] = clfdr_from_fit(fit, xs[mask], sg[mask], mu0)
    return out

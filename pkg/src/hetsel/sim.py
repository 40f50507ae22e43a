"""Seeded simulation designs, the replication runner, and metric aggregation.

Three generative designs are provided:

* ``TwoComponent``: two deterministic halves with normal effect priors
  centered at 5 and 7 (sd 0.5); the first half has sigma = 1, the second
  sigma = sigma2. Reference level defaults to 6.
* ``UniformIndep``: effects from a two-interval uniform mixture
  (weight 1 - pi1 on (-3, -1), pi1 on (1, 2)) independent of
  sigma ~ U(0.5, sigma_max). Reference level defaults to 0.
* ``CorrelatedTwoGroup``: sigma is 0.25 s or 1.25 s with equal probability
  and the effect mixture depends on the sigma group, so larger effects ride
  on noisier units. Reference level defaults to 1.

Each replication draws from an isolated, replayable stream; four methods
run on every replicate: the data-driven step-wise procedure (DD), the
fixed-cutoff rule with exact scores (OR), the clfdr step-up baseline on
exact scores, and Benjamini-Hochberg on p-values.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Union

import numpy as np

from .deconv import (
    ConstantSigma,
    JointModel,
    TruePrior,
    UniformSigma,
    clfdr_by_group,
    fit_prior_by_group,
)
from .model import MetricsRecord, etp, etp_star, fdp, zvalue_pvalue
from .selection import (
    ThresholdPair,
    build_units,
    oracle_thresholds,
    select_bh,
    select_clfdr_stepup,
    select_dd,
    select_oracle,
)

__all__ = [
    "TwoComponent",
    "UniformIndep",
    "CorrelatedTwoGroup",
    "SimDesign",
    "Replicate",
    "MethodSummary",
    "ReplicationReport",
    "METHODS",
    "generate",
    "joint_model",
    "run_replications",
]

METHODS = ("DD", "OR", "Clfdr", "BH")

# Stream namespaces under the master seed: replicate r draws from
# (master, _REP_STREAM, r); the oracle calibration from (master, _CALIB_STREAM).
_REP_STREAM = 0
_CALIB_STREAM = 1


@dataclass(frozen=True)
class TwoComponent:
    sigma2: float
    m: int = 10000
    DEFAULT_MU0 = 6.0

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.m < 4 or self.m % 2:
            raise ValueError("m must be an even count of at least 4")


@dataclass(frozen=True)
class UniformIndep:
    sigma_max: float
    m: int = 5000
    pi1: float = 0.2
    DEFAULT_MU0 = 0.0

    def __post_init__(self):
        if not self.sigma_max > 0.5:
            raise ValueError("sigma_max must exceed the lower endpoint 0.5")
        if not (0 < self.pi1 < 1):
            raise ValueError("pi1 must lie in (0, 1)")
        if self.m < 2:
            raise ValueError("m must be at least 2")


@dataclass(frozen=True)
class CorrelatedTwoGroup:
    sigma: float
    m: int = 10000
    DEFAULT_MU0 = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.m < 2:
            raise ValueError("m must be at least 2")


Family = Union[TwoComponent, UniformIndep, CorrelatedTwoGroup]


@dataclass(frozen=True)
class SimDesign:
    family: Family
    mu0: float
    alpha: float
    reps: int
    master_seed: int

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")

    def label(self) -> str:
        fam = self.family
        if isinstance(fam, TwoComponent):
            return f"two-component(sigma2={fam.sigma2}, m={fam.m})"
        if isinstance(fam, UniformIndep):
            return f"uniform(sigma_max={fam.sigma_max}, m={fam.m}, pi1={fam.pi1})"
        return f"correlated(sigma={fam.sigma}, m={fam.m})"


@dataclass(frozen=True, eq=False)
class Replicate:
    """One generated dataset with its truth and per-group priors."""

    x: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    group_ids: np.ndarray
    priors: tuple
    seed_key: tuple


def _rep_seed(master_seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((master_seed, _REP_STREAM, rep))


def _calib_seed(master_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((master_seed, _CALIB_STREAM))


def _correlated_priors(sigma_bar: float):
    lo = TruePrior.normal_mixture([(0.9, -0.5, 0.25), (0.1, 1.5, 0.25)])
    hi = TruePrior.normal_mixture([(0.9, -0.5, 0.25), (0.1, 3.0, 0.25)])
    return lo, hi


def joint_model(family: Family) -> JointModel:
    """The population law matching ``generate``, for oracle calibration."""
    if isinstance(family, TwoComponent):
        return JointModel(
            (0.5, 0.5),
            (ConstantSigma(1.0), ConstantSigma(family.sigma2)),
            (
                TruePrior.normal_mixture([(1.0, 5.0, 0.5)]),
                TruePrior.normal_mixture([(1.0, 7.0, 0.5)]),
            ),
        )
    if isinstance(family, UniformIndep):
        prior = TruePrior.uniform_mixture(
            [(1.0 - family.pi1, -3.0, -1.0), (family.pi1, 1.0, 2.0)]
        )
        return JointModel.independent(prior, UniformSigma(0.5, family.sigma_max))
    lo, hi = _correlated_priors(family.sigma)
    return JointModel(
        (0.5, 0.5),
        (ConstantSigma(0.25 * family.sigma), ConstantSigma(1.25 * family.sigma)),
        (lo, hi),
    )


def generate(design: SimDesign, rep: int) -> Replicate:
    """Draws one replicate from its isolated stream (master_seed, rep).

    Truth labels are derived from the drawn effects at the design's mu0,
    so theta_i = 1{mu_i > mu0} holds exactly in every design.
    """
    if not 0 <= rep < design.reps:
        raise ValueError(f"rep must lie in [0, {design.reps})")
    seed = _rep_seed(design.master_seed, rep)
    rng = np.random.default_rng(seed)
    fam = design.family

    if isinstance(fam, TwoComponent):
        half = fam.m // 2
        mu = np.concatenate(
            [
                5.0 + 0.5 * rng.standard_normal(half),
                7.0 + 0.5 * rng.standard_normal(half),
            ]
        )
        sigma = np.concatenate([np.ones(half), np.full(half, fam.sigma2)])
        group_ids = np.repeat([0, 1], half)
        priors = (
            TruePrior.normal_mixture([(1.0, 5.0, 0.5)]),
            TruePrior.normal_mixture([(1.0, 7.0, 0.5)]),
        )
    elif isinstance(fam, UniformIndep):
        labels = rng.random(fam.m) < fam.pi1
        mu = np.empty(fam.m)
        n0 = int((~labels).sum())
        mu[~labels] = rng.uniform(-3.0, -1.0, n0)
        mu[labels] = rng.uniform(1.0, 2.0, fam.m - n0)
        sigma = rng.uniform(0.5, fam.sigma_max, fam.m)
        group_ids = np.zeros(fam.m, dtype=int)
        priors = (
            TruePrior.uniform_mixture(
                [(1.0 - fam.pi1, -3.0, -1.0), (fam.pi1, 1.0, 2.0)]
            ),
        )
    else:
        group_ids = (rng.random(fam.m) < 0.5).astype(int)
        sigma = np.where(group_ids == 0, 0.25 * fam.sigma, 1.25 * fam.sigma)
        lo, hi = _correlated_priors(fam.sigma)
        mu = np.empty(fam.m)
        for g, prior in ((0, lo), (1, hi)):
            mask = group_ids == g
            mu[mask] = prior.sample(rng, int(mask.sum()))
        priors = (lo, hi)

    x = mu + sigma * rng.standard_normal(mu.size)
    theta = (mu > design.mu0).astype(np.int8)
    return Replicate(
        x=x,
        sigma=sigma,
        mu=mu,
        theta=theta,
        group_ids=group_ids,
        priors=priors,
        seed_key=(design.master_seed, _REP_STREAM, rep),
    )


def _metrics(decisions, rep: Replicate, mu0: float) -> tuple:
    rec = MetricsRecord(
        fdp=fdp(decisions, rep.theta),
        etp=etp(decisions, rep.theta),
        etp_star=etp_star(decisions, rep.x, mu0),
        n_selected=int(np.sum(decisions)),
    )
    false = int(np.sum((1 - rep.theta) * decisions))
    return rec, false


def _run_one_rep(design: SimDesign, rep_index: int, thresholds: ThresholdPair, k: int):
    rep = generate(design, rep_index)
    model = joint_model(design.family)

    try:
        fits = fit_prior_by_group(rep.x, rep.sigma, rep.group_ids, k=k)
    except Exception as exc:
        raise RuntimeError(f"deconvolution failed in replication {rep_index}") from exc
    clfdr_hat = clfdr_by_group(fits, rep.group_ids, rep.x, rep.sigma, design.mu0)
    clfdr_true = model.clfdr(rep.x, rep.sigma, rep.group_ids, design.mu0)

    dd = select_dd(
        build_units(rep.x, clfdr_hat, design.mu0, design.alpha),
        design.alpha,
        design.mu0,
    )
    orc = select_oracle(
        build_units(rep.x, clfdr_true, design.mu0, design.alpha),
        thresholds,
        design.alpha,
        design.mu0,
    )
    stepup = select_clfdr_stepup(clfdr_true, design.alpha)
    _, pvals = zvalue_pvalue(rep.x, rep.sigma, design.mu0)
    bh = select_bh(pvals, design.alpha)

    out = {}
    for name, result in (("DD", dd), ("OR", orc), ("Clfdr", stepup), ("BH", bh)):
        rec, false = _metrics(result.decisions, rep, design.mu0)
        out[name] = (rec, false)
    return rep_index, rep.seed_key, out


@dataclass(frozen=True)
class MethodSummary:
    """Replication averages for one method, with Monte Carlo standard errors.

    ``fdr`` is the mean realized FDP across replications; ``mfdr_estimate``
    is the ratio of total false selections to total selections, the
    marginal variant that the error-control guarantee is stated in. Both
    are reported because they answer different questions.
    """

    fdr: float
    se_fdr: float
    mfdr_estimate: float
    mean_etp: float
    se_etp: float
    mean_etp_star: float
    se_etp_star: float
    mean_selected: float

    def as_dict(self) -> dict:
        return {
            "fdr": self.fdr,
            "se_fdr": self.se_fdr,
            "mfdr_estimate": self.mfdr_estimate,
            "mean_etp": self.mean_etp,
            "se_etp": self.se_etp,
            "mean_etp_star": self.mean_etp_star,
            "se_etp_star": self.se_etp_star,
            "mean_selected": self.mean_selected,
        }


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return mean, se


@dataclass(frozen=True)
class ReplicationReport:
    design_label: str
    config: dict
    per_rep: dict
    summary: dict
    seed_ledger: tuple
    thresholds: ThresholdPair

    def to_json_dict(self) -> dict:
        return {
            "schema": "hetsel/replication-report/v1",
            "design": self.design_label,
            "config": self.config,
            "oracle_thresholds": {"c1": self.thresholds.c1, "c2": self.thresholds.c2},
            "summary": {m: s.as_dict() for m, s in self.summary.items()},
            "per_rep": {
                m: [r.as_dict() for r in recs] for m, recs in self.per_rep.items()
            },
            "seed_ledger": [list(k) for k in self.seed_ledger],
        }

    def tidy_rows(self):
        """Long-format rows (design, method, metric, rep, value) for plotting."""
        rows = []
        for method, recs in self.per_rep.items():
            for rep_index, rec in enumerate(recs):
                for metric, value in rec.as_dict().items():
                    rows.append(
                        {
                            "design": self.design_label,
                            "method": method,
                            "metric": metric,
                            "rep": rep_index,
                            "value": value,
                        }
                    )
        return rows


def run_replications(
    design: SimDesign,
    *,
    k: int = 50,
    oracle_n_mc: int = 10 ** 6,
    n_jobs: int = 1,
) -> ReplicationReport:
    """Runs every replication and aggregates the four methods' metrics.

    The oracle cutoffs are calibrated once per design from their own stream
    and shared across replications. Replications are independent and may run
    in parallel; records are always aggregated in replication order.
    """
    model = joint_model(design.family)
    thresholds = oracle_thresholds(
        model,
        design.alpha,
        design.mu0,
        n_mc=oracle_n_mc,
        seed=_calib_seed(design.master_seed),
    )

    results = [None] * design.reps
    if n_jobs > 1 and design.reps > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [
                pool.submit(_run_one_rep, design, r, thresholds, k)
                for r in range(design.reps)
            ]
            for fut in futures:
                rep_index, seed_key, recs = fut.result()
                results[rep_index] = (seed_key, recs)
    else:
        for r in range(design.reps):
            rep_index, seed_key, recs = _run_one_rep(design, r, thresholds, k)
            results[rep_index] = (seed_key, recs)

    per_rep = {m: [] for m in METHODS}
    falses = {m: 0 for m in METHODS}
    selected = {m: 0 for m in METHODS}
    seed_ledger = []
    for seed_key, recs in results:
        seed_ledger.append(seed_key)
        for m in METHODS:
            rec, false = recs[m]
            per_rep[m].append(rec)
            falses[m] += false
            selected[m] += rec.n_selected

    summary = {}
    for m in METHODS:
        recs = per_rep[m]
        fdr, se_fdr = _mean_se([r.fdp for r in recs])
        metp, se_etp = _mean_se([r.etp for r in recs])
        mstar, se_star = _mean_se([r.etp_star for r in recs])
        summary[m] = MethodSummary(
            fdr=fdr,
            se_fdr=se_fdr,
            mfdr_estimate=falses[m] / max(selected[m], 1),
            mean_etp=metp,
            se_etp=se_etp,
            mean_etp_star=mstar,
            se_etp_star=se_star,
            mean_selected=float(np.mean([r.n_selected for r in recs])),
        )

    config = {
        "design": design.label(),
        "mu0": design.mu0,
        "alpha": design.alpha,
        "reps": design.reps,
        "master_seed": design.master_seed,
        "grid_size": k,
        "oracle_n_mc": oracle_n_mc,
    }
    return ReplicationReport(
        design_label=design.label(),
        config=config,
        per_rep=per_rep,
        summary=summary,
        seed_ledger=tuple(seed_ledger),
        thresholds=thresholds,
    )

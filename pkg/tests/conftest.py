"""Shared helpers: coherent instance generators and independent oracles.

The generators draw (x, sigma) from explicit joint models and attach exact
conditional local FDR values, so every instance is realizable under the
model class the procedures assume. The oracles re-derive expected results
from scratch (pure-Python loops, direct objective evaluation) and never
call the code paths they check.
"""
from __future__ import annotations

import numpy as np

from hetsel import (
    ConstantSigma,
    JointModel,
    NormalComponent,
    PointMass,
    TruePrior,
    UniformInterval,
    UniformSigma,
)

INSTANCE_FAMILIES = {
    "two-interval": JointModel.independent(
        TruePrior.uniform_mixture([(0.8, -3.0, -1.0), (0.2, 1.0, 2.0)]),
        UniformSigma(0.5, 3.0),
    ),
    "group2-rich": JointModel.independent(
        TruePrior.uniform_mixture([(0.05, -1.5, -0.5), (0.95, 0.5, 4.0)]),
        UniformSigma(1.0, 3.0),
    ),
    "point-mass": JointModel.independent(
        TruePrior.point_masses([-1.0, 0.8, 2.5], [0.3, 0.4, 0.3]),
        UniformSigma(0.5, 2.5),
    ),
    "mixed": JointModel.independent(
        TruePrior(
            (0.2, 0.5, 0.3),
            (
                PointMass(-0.7),
                UniformInterval(0.3, 2.0),
                NormalComponent(1.0, 0.5),
            ),
        ),
        UniformSigma(0.8, 3.0),
    ),
    "correlated": JointModel(
        (0.5, 0.5),
        (ConstantSigma(0.5), ConstantSigma(2.5)),
        (
            TruePrior.normal_mixture([(0.6, -0.5, 0.25), (0.4, 1.5, 0.25)]),
            TruePrior.normal_mixture([(0.6, -0.5, 0.25), (0.4, 3.0, 0.25)]),
        ),
    ),
}


def coherent_instance(rng, m, mu0=0.0, family=None):
    """One instance (x, sigma, clfdr) with exact scores under a known model."""
    names = sorted(INSTANCE_FAMILIES)
    name = family or names[int(rng.integers(len(names)))]
    model = INSTANCE_FAMILIES[name]
    x, sigma, mu, group = model.sample(rng, m)
    clfdr = model.clfdr(x, sigma, group, mu0)
    return x, sigma, clfdr, model


def enumerate_prefix_best(x, clfdr, alpha, mu0, tol=1e-12):
    """Exhaustive maximum of sum(x - mu0) over feasible prefix selections.

    Considers every subset made of all group-0 units, a descending-score
    prefix of group 1 and an ascending-score prefix of group 2, subject to
    sum(clfdr - alpha) <= tol. Pure Python, quadratic in the group sizes.
    """
    x = np.asarray(x, dtype=float)
    clfdr = np.asarray(clfdr, dtype=float)
    m = x.size
    t = np.empty(m)
    for i in range(m):
        den = clfdr[i] - alpha
        num = x[i] - mu0
        if den == 0.0:
            t[i] = np.inf if num > 0 else (-np.inf if num < 0 else 0.0)
        else:
            t[i] = num / den
    g0, g1, g2 = [], [], []
    for i in range(m):
        if x[i] >= mu0:
            (g0 if clfdr[i] <= alpha else g1).append(i)
        elif clfdr[i] <= alpha:
            g2.append(i)
    g1.sort(key=lambda i: (-t[i], -x[i], i))
    g2.sort(key=lambda i: (t[i], -x[i], i))
    best = -np.inf
    for a in range(len(g1) + 1):
        for b in range(len(g2) + 1):
            chosen = g0 + g1[:a] + g2[:b]
            if sum(clfdr[i] - alpha for i in chosen) <= tol:
                best = max(best, sum(x[i] - mu0 for i in chosen))
    return best if best > -np.inf else 0.0


def stepup_bh_reference(pvalues, alpha):
    """BH step-up by direct loop: the largest j with p_(j) <= j alpha / m."""
    p = sorted(pvalues)
    m = len(p)
    k = 0
    for j in range(1, m + 1):
        if p[j - 1] <= j * alpha / m:
            k = j
    if k == 0:
        return [0] * m
    cut = p[k - 1]
    return [1 if v <= cut else 0 for v in pvalues]


def stepup_clfdr_reference(clfdrs, alpha):
    """Running-mean step-up by direct loop, ties at the cutoff included."""
    c = sorted(clfdrs)
    m = len(c)
    k = 0
    total = 0.0
    for j in range(1, m + 1):
        total += c[j - 1]
        if total / j <= alpha:
            k = j
    if k == 0:
        return [0] * m
    cut = c[k - 1]
    return [1 if v <= cut else 0 for v in clfdrs]

"""Composition operators on normalized probability tables.

These are the exact finite-domain forms of the binary and N-ary operations the
library realizes with guided samplers elsewhere: harmonic mean (mass where all
operands agree), contrast (mass where the first operand is high and the second
is not), the general N-observation posterior they both specialize, and the
energy-style product/negation they are contrasted with.

Every operator returns a fresh normalized table. Ratios are evaluated in log
space on explicit support masks, so zeros stay exact zeros and nothing is ever
silently clamped.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    BadWeights,
    DisjointSupport,
    EmptyObservations,
    ShapeMismatch,
    UnboundedRatio,
)
from .tables import DensityTable

_SIMPLEX_TOL = 1e-12


def _check_same_domain(*tables: DensityTable) -> tuple[int, ...]:
    shape = tables[0].domain_shape
    for t in tables[1:]:
        if t.domain_shape != shape:
            raise ShapeMismatch(f"{t.domain_shape} vs {shape}")
    return shape


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie strictly inside (0,1), got {alpha}")
    return alpha


def _normalized_ratio(log_num: np.ndarray, log_den: np.ndarray, support: np.ndarray) -> np.ndarray:
    """exp(log_num - log_den) on `support`, 0 elsewhere, normalized to sum 1."""
    out = np.zeros(support.shape, dtype=np.float64)
    if np.any(support):
        log_ratio = log_num[support] - log_den[support]
        log_ratio -= log_ratio.max()
        out[support] = np.exp(log_ratio)
    return out / out.sum()


def harmonic_mean(p: DensityTable, q: DensityTable, alpha: float = 0.5) -> DensityTable:
    """Normalized p(x)q(x) / (alpha p(x) + (1-alpha) q(x)).

    alpha = 0.5 is the plain (unweighted) harmonic mean. As alpha -> 0 the
    result approaches p, as alpha -> 1 it approaches q. The support is the
    intersection of the operand supports.
    """
    shape = _check_same_domain(p, q)
    alpha = _check_alpha(alpha)
    support = p.support_mask & q.support_mask
    if not np.any(support):
        raise DisjointSupport("harmonic mean of densities with non-intersecting supports")
    with np.errstate(divide="ignore"):
        log_num = np.log(p.mass) + np.log(q.mass)
        log_den = np.log(alpha * p.mass + (1.0 - alpha) * q.mass)
    mass = _normalized_ratio(log_num, log_den, support)
    return DensityTable(shape, mass, mass > 0.0)


def contrast(p: DensityTable, q: DensityTable, alpha: float = 0.5) -> DensityTable:
    """Normalized p(x)^2 / (alpha p(x) + (1-alpha) q(x)).

    Emphasizes states likely under p but not under q; swap the arguments for
    the reverse direction. Unlike a density ratio this is always well defined:
    the result is bounded above by p(x)/alpha.
    """
    shape = _check_same_domain(p, q)
    alpha = _check_alpha(alpha)
    support = p.support_mask
    with np.errstate(divide="ignore"):
        log_num = 2.0 * np.log(p.mass)
        log_den = np.log(alpha * p.mass + (1.0 - alpha) * q.mass)
    mass = _normalized_ratio(log_num, log_den, support)
    return DensityTable(shape, mass, mass > 0.0)


def nary_posterior(dists: list[DensityTable], observations: list[int]) -> DensityTable:
    """Posterior over states after observing n model labels.

    For base distributions p_1..p_m and observed labels i_1..i_n (1-based),
    returns the normalized table proportional to

        prod_k p_{i_k}(x)  /  (sum_j p_j(x))^(n-1).

    observations=[i] returns base i exactly; [1,2] over two bases is their
    harmonic mean; [1,1] is the contrast of p_1 against p_2.
    """
    if not observations:
        raise EmptyObservations("at least one observation is required")
    if not dists:
        raise ValueError("at least one base distribution is required")
    shape = _check_same_domain(*dists)
    m = len(dists)
    for i in observations:
        if not (1 <= int(i) <= m):
            raise ValueError(f"observation index {i} outside 1..{m}")
    n = len(observations)
    stacked = np.stack([d.mass for d in dists])
    support = np.ones(shape, dtype=bool)
    for i in observations:
        support &= dists[int(i) - 1].support_mask
    if not np.any(support):
        raise DisjointSupport("observed bases share no support")
    with np.errstate(divide="ignore"):
        log_num = sum(np.log(dists[int(i) - 1].mass) for i in observations)
        log_den = (n - 1) * np.log(stacked.sum(axis=0))
    mass = _normalized_ratio(log_num, log_den, support)
    return DensityTable(shape, mass, mass > 0.0)


def energy_product(p: DensityTable, q: DensityTable) -> DensityTable:
    """Normalized pointwise product p(x)q(x)."""
    shape = _check_same_domain(p, q)
    raw = p.mass * q.mass
    if raw.sum() <= 0.0:
        raise DisjointSupport("product of densities with non-intersecting supports")
    mass = raw / raw.sum()
    return DensityTable(shape, mass, mass > 0.0)


def energy_negation(p: DensityTable, q: DensityTable, gamma: float) -> DensityTable:
    """Normalized p(x) / q(x)^gamma.

    On a finite table the only failure mode is a vanishing denominator: any
    state with p(x) > 0 but q(x) = 0 makes the ratio unbounded.
    """
    shape = _check_same_domain(p, q)
    gamma = float(gamma)
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    blown = p.support_mask & ~q.support_mask
    if np.any(blown):
        raise UnboundedRatio(f"q vanishes on {int(blown.sum())} states where p does not")
    support = p.support_mask
    if not np.any(support):
        raise DisjointSupport("negation result is identically zero")
    with np.errstate(divide="ignore"):
        log_num = np.log(p.mass)
        log_den = gamma * np.log(q.mass)
    mass = _normalized_ratio(log_num, log_den, support)
    return DensityTable(shape, mass, mass > 0.0)


def mixture(dists: list[DensityTable], weights: np.ndarray) -> DensityTable:
    """Weighted mixture sum_i w_i p_i(x); weights must lie on the simplex."""
    if not dists:
        raise ValueError("at least one base distribution is required")
    shape = _check_same_domain(*dists)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(dists),):
        raise BadWeights(f"need {len(dists)} weights, got shape {weights.shape}")
    if np.any(weights < 0.0) or abs(float(weights.sum()) - 1.0) > _SIMPLEX_TOL:
        raise BadWeights(f"weights must be nonnegative and sum to 1, got {weights!r}")
    mass = sum(w * d.mass for w, d in zip(weights, dists))
    mass = mass / mass.sum()
    return DensityTable(shape, mass, mass > 0.0)


def mixture_decomposition_weights(p: DensityTable, q: DensityTable) -> tuple[float, float]:
    """Coefficients (Z_hm, Z_con) with p = Z_hm * harmonic_mean(p,q) + Z_con * contrast(p,q).

    Z_hm is the normalizing mass of the unnormalized harmonic mean,
    sum_x p(x)q(x)/(p(x)+q(x)), and Z_con = 1 - Z_hm.
    """
    _check_same_domain(p, q)
    both = p.support_mask & q.support_mask
    z_hm = 0.0
    if np.any(both):
        pm, qm = p.mass[both], q.mass[both]
        z_hm = float(np.sum(pm * qm / (pm + qm)))
    return z_hm, 1.0 - z_hm

"""Gaussian mixtures: exact densities, scores, CDFs, sampling, and the
properness test for density negation.

Mixtures here are value objects used both as base models for the diffusion
engine (which needs closed-form diffused marginals and scores) and as the
analytic ground truth that sampled compositions are measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_mean(mean) -> np.ndarray:
    m = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    if m.ndim != 1:
        raise ValueError(f"mean must be a vector, got shape {m.shape}")
    return m


def _as_covariance(variance, dim: int) -> np.ndarray:
    """Normalize scalar / diagonal-vector / full-matrix input to a (d,d) matrix."""
    v = np.asarray(variance, dtype=np.float64)
    if v.ndim == 0:
        v = np.full(dim, float(v))
    if v.ndim == 1:
        if v.shape != (dim,):
            raise ValueError(f"diagonal variance needs {dim} entries, got {v.shape}")
        if np.any(v <= 0.0):
            raise ValueError("variance entries must be strictly positive")
        return np.diag(v)
    if v.shape != (dim, dim):
        raise ValueError(f"covariance must be ({dim},{dim}), got {v.shape}")
    # symmetric positive definite check via Cholesky
    np.linalg.cholesky(v)
    return v


@dataclass(frozen=True)
class GaussianComponent:
    """A single Gaussian with mean vector and (diagonal or full) covariance."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        mean = _as_mean(self.mean)
        cov = _as_covariance(self.variance, mean.shape[0])
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def inflated(self, extra_variance: float) -> "GaussianComponent":
        """Same component with extra_variance added on the diagonal."""
        return GaussianComponent(self.mean, self.variance + float(extra_variance) * np.eye(self.dim))


@dataclass(frozen=True)
class GaussianMixtureDensity:
    """A normalized mixture of Gaussian components."""

    weights: np.ndarray
    components: tuple[GaussianComponent, ...]

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(comps),) or np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must be a simplex vector over {len(comps)} components")
        dim = comps[0].dim
        if any(c.dim != dim for c in comps):
            raise ValueError("components must share one dimension")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def _points(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=np.float64)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts[:, None] if self.dim == 1 else pts[None, :]
        if pts.shape[-1] != self.dim:
            raise ValueError(f"points must have last dimension {self.dim}")
        return pts

    def component_logpdfs(self, x) -> np.ndarray:
        """(N, n_components) matrix of per-component log densities."""
        pts = self._points(x)
        out = np.empty((pts.shape[0], len(self.components)), dtype=np.float64)
        for j, comp in enumerate(self.components):
            diff = pts - comp.mean
            chol = np.linalg.cholesky(comp.variance)
            y = np.linalg.solve(chol, diff.T).T
            quad = np.sum(y * y, axis=1)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            out[:, j] = -0.5 * (quad + logdet + comp.dim * _LOG_2PI)
        return out

    def logpdf(self, x) -> np.ndarray:
        lp = self.component_logpdfs(x) + np.log(self.weights)[None, :]
        mx = lp.max(axis=1)
        return mx + np.log(np.exp(lp - mx[:, None]).sum(axis=1))

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def score(self, x) -> np.ndarray:
        """Gradient of log density at each point; shape (N, d)."""
        pts = self._points(x)
        lp = self.component_logpdfs(pts) + np.log(self.weights)[None, :]
        lp -= lp.max(axis=1, keepdims=True)
        resp = np.exp(lp)
        resp /= resp.sum(axis=1, keepdims=True)
        out = np.zeros_like(pts)
        for j, comp in enumerate(self.components):
            grad_j = -np.linalg.solve(comp.variance, (pts - comp.mean).T).T
            out += resp[:, j:j + 1] * grad_j
        return out

    def cdf(self, x) -> np.ndarray:
        """Mixture CDF; one-dimensional mixtures only."""
        if self.dim != 1:
            raise ValueError("cdf is defined for 1-D mixtures only")
        pts = self._points(x)[:, 0]
        total = np.zeros_like(pts)
        for w, comp in zip(self.weights, self.components):
            mu = float(comp.mean[0])
            sd = float(np.sqrt(comp.variance[0, 0]))
            total += w * 0.5 * (1.0 + erf((pts - mu) / (sd * np.sqrt(2.0))))
        return total

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact ancestral sampling; returns (n, d)."""
        counts = rng.multinomial(n, self.weights)
        chunks = []
        for count, comp in zip(counts, self.components):
            if count == 0:
                continue
            chol = np.linalg.cholesky(comp.variance)
            z = rng.standard_normal((count, comp.dim))
            chunks.append(comp.mean + z @ chol.T)
        pts = np.concatenate(chunks, axis=0)
        return pts[rng.permutation(n)]

    def inflated(self, extra_variance: float) -> "GaussianMixtureDensity":
        return GaussianMixtureDensity(
            self.weights, tuple(c.inflated(extra_variance) for c in self.components)
        )


def gaussian_1d(mean: float, variance: float) -> GaussianMixtureDensity:
    """Convenience constructor for a single 1-D Gaussian as a mixture."""
    return GaussianMixtureDensity(np.array([1.0]), (GaussianComponent([mean], [variance]),))


@dataclass(frozen=True)
class NegationProperness:
    """Verdict on whether p1/p2^gamma is normalizable, with the decisive coefficients.

    The exponent of p1(x)/p2(x)^gamma is a quadratic; the ratio integrates to a
    finite value iff the quadratic coefficient is negative, or zero with a zero
    linear coefficient.
    """

    proper: bool
    quadratic_coeff: float
    linear_coeff: float

    def __bool__(self) -> bool:
        return self.proper


def gaussian_negation_is_proper(
    c1: GaussianComponent, c2: GaussianComponent, gamma: float
) -> NegationProperness:
    """Decide whether the negation density p1(x)/p2(x)^gamma is normalizable (1-D)."""
    if c1.dim != 1 or c2.dim != 1:
        raise ValueError("properness test applies to 1-D components")
    gamma = float(gamma)
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0,1), got {gamma}")
    s1 = float(c1.variance[0, 0])
    s2 = float(c2.variance[0, 0])
    m1 = float(c1.mean[0])
    m2 = float(c2.mean[0])
    quad = (gamma * s1 - s2) / (2.0 * s1 * s2)
    lin = m1 / s1 - gamma * m2 / s2
    improper = quad > 0.0 or (quad == 0.0 and lin != 0.0)
    return NegationProperness(not improper, quad, lin)


def log_simpson(log_values: np.ndarray, spacing: float) -> float:
    """log of the composite-Simpson integral given log integrand samples.

    Expects an odd number of equally spaced samples. Works entirely in log
    space so astronomically large integrands do not overflow.
    """
    log_values = np.asarray(log_values, dtype=np.float64)
    n = log_values.shape[0]
    if n < 3 or n % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of samples >= 3")
    coeff = np.ones(n)
    coeff[1:-1:2] = 4.0
    coeff[2:-1:2] = 2.0
    terms = log_values + np.log(coeff * spacing / 3.0)
    mx = float(terms.max())
    if not np.isfinite(mx):
        return float(mx)
    return mx + float(np.log(np.exp(terms - mx).sum()))


def negation_log_integral(
    c1: GaussianComponent, c2: GaussianComponent, gamma: float, lo: float, hi: float,
    points: int = 4001,
) -> float:
    """log integral of p1(x)/p2(x)^gamma over [lo, hi] by composite Simpson."""
    xs = np.linspace(lo, hi, points)
    p1 = GaussianMixtureDensity(np.array([1.0]), (c1,))
    p2 = GaussianMixtureDensity(np.array([1.0]), (c2,))
    log_ratio = p1.logpdf(xs) - float(gamma) * p2.logpdf(xs)
    return log_simpson(log_ratio, xs[1] - xs[0])


def negation_quadrature_diverges(
    c1: GaussianComponent, c2: GaussianComponent, gamma: float,
    half_width: float = 50.0, log_tol: float = 1e-4,
) -> bool:
    """Numerical divergence probe for the negation integral.

    Integrates over [-w, w] and [-2w, 2w]; a normalizable ratio has converged
    (the two log integrals agree within log_tol) while an improper one keeps
    growing as the window widens.
    """
    inner = negation_log_integral(c1, c2, gamma, -half_width, half_width)
    outer = negation_log_integral(c1, c2, gamma, -2.0 * half_width, 2.0 * half_width, points=8001)
    return bool(outer - inner > log_tol)

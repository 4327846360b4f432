"""Variance-exploding diffusion over Gaussian-mixture bases.

The forward process adds noise with zero drift and geometric noise scale
sigma(t) = sigma_min (sigma_max/sigma_min)^(t/T), so the marginal at time t is
the base density with every component variance inflated by
sigma(t)^2 - sigma(0)^2. Everything downstream is closed-form: scores,
per-base posteriors, and the mixture/composed reverse drifts. Observation
probabilities at positive noise levels, which require integrating the clean
posterior against label products, are handled by per-component
Gauss-Legendre quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import AllZeroDensity, BadWeights, NonFiniteDetected, QuadratureNonConvergence
from .gaussians import GaussianComponent, GaussianMixtureDensity
from .tables import _atomic_write_bytes


@dataclass(frozen=True)
class VeSde:
    """Zero-drift SDE with geometrically growing noise scale."""

    sigma_min: float = 0.01
    sigma_max: float = 10.0
    t_max: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.t_max <= 0.0:
            raise ValueError("horizon must be positive")

    def _check_t(self, t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= self.t_max:
            raise ValueError(f"t must lie in [0, {self.t_max}], got {t}")
        return t

    def sigma(self, t: float) -> float:
        t = self._check_t(t)
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** (t / self.t_max)

    def g2(self, t: float) -> float:
        """Squared diffusion coefficient, d/dt of sigma(t)^2."""
        return 2.0 * self.sigma(t) ** 2 * math.log(self.sigma_max / self.sigma_min) / self.t_max

    def g(self, t: float) -> float:
        return math.sqrt(self.g2(t))

    def inflation(self, t: float) -> float:
        """Variance added to the data by time t."""
        return self.sigma(t) ** 2 - self.sigma_min**2


@dataclass(frozen=True)
class DiffusedMixture:
    """A Gaussian-mixture data distribution paired with its noising process."""

    base: GaussianMixtureDensity
    sde: VeSde

    @property
    def dim(self) -> int:
        return self.base.dim

    def marginal(self, t: float) -> GaussianMixtureDensity:
        return self.base.inflated(self.sde.inflation(t))


def diffused_marginal(dm: DiffusedMixture, t: float) -> GaussianMixtureDensity:
    return dm.marginal(t)


def _batch(x, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and dim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def analytic_score(dm: DiffusedMixture, t: float, x) -> np.ndarray:
    """Exact gradient of log p_t at each row of x."""
    return dm.marginal(t).score(_batch(x, dm.dim))


def _shared_sde(dms: list[DiffusedMixture]) -> VeSde:
    sde = dms[0].sde
    if any(d.sde != sde for d in dms[1:]):
        raise ValueError("bases must share one noising SDE")
    if any(d.dim != dms[0].dim for d in dms[1:]):
        raise ValueError("bases must share one dimension")
    return sde


def _simplex_weights(weights, m: int) -> np.ndarray:
    if weights is None:
        return np.full(m, 1.0 / m)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise BadWeights(f"weights must be a simplex vector of length {m}")
    return w


def _log_label_posterior(
    dms: list[DiffusedMixture], weights: np.ndarray, t: float, x: np.ndarray
) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    logp = np.stack([dm.marginal(t).logpdf(x) for dm in dms], axis=1)
    z = logp + logw
    norm = logsumexp(z, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise AllZeroDensity("every base density underflowed at some query point")
    return z - norm


def label_posterior(dms: list[DiffusedMixture], weights, t: float, x) -> np.ndarray:
    """p(y = i | x_t): posterior over which base a noisy point came from."""
    _shared_sde(dms)
    w = _simplex_weights(weights, len(dms))
    xb = _batch(x, dms[0].dim)
    return np.exp(_log_label_posterior(dms, w, t, xb))


def mixture_backward_drift(
    dms: list[DiffusedMixture], weights, t: float, x
) -> tuple[np.ndarray, float]:
    """Reverse-SDE drift and diffusion of the mixture, shared-SDE form.

    Drift is -g_t^2 sum_i p(y=i|x_t) s_i(x_t); integrating
    x <- x - drift*dt + g sqrt(dt) xi from t=T to 0 samples the mixture.
    """
    sde = _shared_sde(dms)
    w = _simplex_weights(weights, len(dms))
    xb = _batch(x, dms[0].dim)
    post = np.exp(_log_label_posterior(dms, w, t, xb))
    scores = np.stack([dm.marginal(t).score(xb) for dm in dms], axis=1)  # (B, m, d)
    g2 = sde.g2(t)
    drift = -g2 * np.einsum("bm,bmd->bd", post, scores)
    return drift, sde.g(t)


def heterogeneous_backward_drift(
    dms: list[DiffusedMixture], weights, t: float, x
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse drift and per-point diffusion when bases carry different SDEs.

    Drift is sum_i p(y=i|x_t) (-g_{i,t}^2 s_i(x_t)) and the diffusion scale is
    sqrt(sum_i p(y=i|x_t) g_{i,t}^2), both depending on the query point.
    """
    if any(dm.dim != dms[0].dim for dm in dms[1:]):
        raise ValueError("bases must share one dimension")
    w = _simplex_weights(weights, len(dms))
    xb = _batch(x, dms[0].dim)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    logp = np.stack([dm.marginal(t).logpdf(xb) for dm in dms], axis=1)
    z = logp + logw
    norm = logsumexp(z, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise AllZeroDensity("every base density underflowed at some query point")
    post = np.exp(z - norm)
    g2s = np.array([dm.sde.g2(t) for dm in dms])
    scores = np.stack([dm.marginal(t).score(xb) for dm in dms], axis=1)
    drift = -np.einsum("bm,m,bmd->bd", post, g2s, scores)
    diffusion = np.sqrt(post @ g2s)
    return drift, diffusion


def mixture_density(dms: list[DiffusedMixture], weights, t: float) -> GaussianMixtureDensity:
    """The weighted mixture of base marginals at time t as one flat mixture."""
    _shared_sde(dms)
    w = _simplex_weights(weights, len(dms))
    parts: list[GaussianComponent] = []
    coefs: list[float] = []
    for wi, dm in zip(w, dms):
        marg = dm.marginal(t)
        for pw, comp in zip(marg.weights, marg.components):
            parts.append(comp)
            coefs.append(float(wi * pw))
    total = sum(coefs)
    return GaussianMixtureDensity([c / total for c in coefs], parts)


class QuadratureJoint:
    """Exact observation probabilities p~(y_1..y_k | x_t) by quadrature.

    The clean-data posterior given x_t decomposes over mixture components
    into Gaussians with shrunk variance, so the label-product expectation is
    a sum of per-component integrals. Each integral is evaluated with
    Gauss-Legendre nodes spanning `span` posterior standard deviations,
    refined on a doubling ladder until the log value stabilizes (or taken at
    a fixed node count when `nodes` is set, for tight inner loops). Dimension
    1 is fully supported; dimension 2 requires diagonal component covariances
    and integrates on a tensor grid.
    """

    _LADDER = (33, 65, 129, 257, 513, 1025)

    def __init__(
        self,
        dms: list[DiffusedMixture],
        weights,
        span: float = 10.0,
        log_tol: float = 1e-7,
        nodes: int | None = None,
    ) -> None:
        self.sde = _shared_sde(dms)
        self.dms = list(dms)
        self.m = len(dms)
        self.weights = _simplex_weights(weights, self.m)
        self.dim = dms[0].dim
        if self.dim not in (1, 2):
            raise ValueError("quadrature supports 1D and 2D bases only")
        self.span = float(span)
        self.log_tol = float(log_tol)
        self.nodes = nodes
        flat = mixture_density(dms, weights, 0.0)
        self._means = np.stack([c.mean for c in flat.components])  # (C, d)
        covs = np.stack([c.covariance for c in flat.components])  # (C, d, d)
        if self.dim == 2 and np.any(np.abs(covs[:, 0, 1]) + np.abs(covs[:, 1, 0]) > 0):
            raise ValueError("2D quadrature requires diagonal component covariances")
        self._vars = np.stack([np.diag(c) for c in covs])  # (C, d)
        self._log_prior = np.log(np.asarray(flat.weights))
        # per-base component parameters, flattened for fast label evaluation
        self._base_params = []
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        for wlog, dm in zip(log_w, dms):
            marg = dm.base
            self._base_params.append(
                (
                    wlog + np.log(np.asarray(marg.weights)),
                    np.stack([c.mean for c in marg.components]),
                    np.stack([np.diag(c.covariance) for c in marg.components]),
                )
            )

    # -- label machinery at t = 0 ---------------------------------------

    def _log_obs_product(self, x0: np.ndarray, observations: tuple[int, ...]) -> np.ndarray:
        """log prod_k q(y_k | x_0) for points of any leading shape."""
        parts = []
        for logw, mu, var in self._base_params:  # (c,), (c, d), (c, d)
            sq = (x0[..., None, :] - mu) ** 2 / var + np.log(2 * np.pi * var)
            parts.append(logsumexp(logw - 0.5 * sq.sum(-1), axis=-1))
        logp = np.stack(parts, axis=-1)  # (..., m)
        logq = logp - logsumexp(logp, axis=-1, keepdims=True)
        out = np.zeros(x0.shape[:-1])
        for y in observations:
            out = out + logq[..., y - 1]
        return out

    # -- the quadrature itself -------------------------------------------

    def _log_joint_fixed(
        self, observations: tuple[int, ...], t: float, x: np.ndarray, n_nodes: int
    ) -> np.ndarray:
        infl = self.sde.inflation(t)
        mu, var, lp = self._means, self._vars, self._log_prior  # (C,d),(C,d),(C,)
        total_var = var + infl  # (C, d)
        # responsibilities of p_{M,t} components at x
        diff = x[:, None, :] - mu[None, :, :]  # (B, C, d)
        log_resp = lp + (-0.5 * (diff**2 / total_var + np.log(2 * np.pi * total_var))).sum(-1)
        log_resp = log_resp - logsumexp(log_resp, axis=1, keepdims=True)  # (B, C)
        # clean-data posterior per component: product of Gaussians
        post_var = 1.0 / (1.0 / var + 1.0 / infl)  # (C, d)
        post_mean = post_var * (mu / var + x[:, None, :] / infl)  # (B, C, d)
        post_sd = np.sqrt(post_var)

        # substituting x0 = mean + span*sd*u makes the Gaussian factor cancel
        # the sd in the node spacing, leaving a point-independent kernel
        u, lam = np.polynomial.legendre.leggauss(n_nodes)
        axis_kernel = np.log(lam * self.span) - 0.5 * (self.span * u) ** 2 - 0.5 * math.log(
            2 * math.pi
        )
        if self.dim == 1:
            nodes = post_mean[:, :, None, :] + (
                self.span * post_sd[None, :, None, :] * u[None, None, :, None]
            )  # (B, C, K, 1)
            log_f = self._log_obs_product(nodes, observations)  # (B, C, K)
            log_integrals = logsumexp(axis_kernel + log_f, axis=2)
        else:
            log_integrals = self._tensor_integrals(
                observations, post_mean, post_sd, u, axis_kernel
            )
        return logsumexp(log_resp + log_integrals, axis=1)

    def _tensor_integrals(self, observations, post_mean, post_sd, u, axis_kernel) -> np.ndarray:
        b, c, _ = post_mean.shape
        k = u.shape[0]
        out = np.empty((b, c))
        grid_u = np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1).reshape(-1, 2)  # (K^2, 2)
        grid_kernel = (axis_kernel[:, None] + axis_kernel[None, :]).ravel()  # (K^2,)
        chunk = max(1, 262144 // (c * k * k))
        for lo in range(0, b, chunk):
            hi = min(b, lo + chunk)
            pm = post_mean[lo:hi, :, None, :]  # (b', C, 1, d)
            nodes = pm + self.span * post_sd[None, :, None, :] * grid_u[None, None, :, :]
            log_f = self._log_obs_product(nodes, observations)
            out[lo:hi] = logsumexp(grid_kernel + log_f, axis=2)
        return out

    # -- public interface --------------------------------------------------

    def log_joint(self, observations, t: float, x) -> np.ndarray:
        obs = tuple(int(y) for y in observations)
        if not obs or any(y < 1 or y > self.m for y in obs):
            raise ValueError(f"labels must lie in 1..{self.m}, got {obs}")
        xb = _batch(x, self.dim)
        t = self.sde._check_t(t)
        if self.sde.inflation(t) == 0.0:
            return self._log_obs_product(xb, obs)
        if self.nodes is not None:
            return self._log_joint_fixed(obs, t, xb, self.nodes)
        previous = self._log_joint_fixed(obs, t, xb, self._LADDER[0])
        for n_nodes in self._LADDER[1:]:
            current = self._log_joint_fixed(obs, t, xb, n_nodes)
            gap = float(np.max(np.abs(current - previous)))
            if gap <= self.log_tol:
                return current
            previous = current
        raise QuadratureNonConvergence(
            f"quadrature did not stabilize within {self._LADDER[-1]} nodes (gap {gap:.2e})"
        )

    def joint(self, observations, t: float, x) -> np.ndarray:
        return np.exp(self.log_joint(observations, t, x))

    def grad_log_joint(self, observations, t: float, x) -> np.ndarray:
        """Central-difference gradient with step 1e-4 sigma(t) per axis."""
        xb = _batch(x, self.dim)
        h = 1e-4 * self.sde.sigma(t)
        grads = np.empty_like(xb)
        for j in range(self.dim):
            shift = np.zeros((1, self.dim))
            shift[0, j] = h
            stacked = np.concatenate([xb + shift, xb - shift], axis=0)
            values = self.log_joint(observations, t, stacked)
            grads[:, j] = (values[: xb.shape[0]] - values[xb.shape[0] :]) / (2.0 * h)
        return grads


def quadrature_label_joint(
    dms: list[DiffusedMixture], weights, n: int, observations, t: float, x_t
) -> np.ndarray:
    """p~(y_1..y_k | x_t) for k = len(observations) <= n, as probabilities."""
    obs = tuple(int(y) for y in observations)
    if n < 1 or len(obs) > n:
        raise ValueError(f"got {len(obs)} observations for a model of size n={n}")
    return QuadratureJoint(dms, weights).joint(obs, t, x_t)


def composed_backward_drift(
    dms: list[DiffusedMixture],
    weights,
    classifier,
    observations,
    t: float,
    x,
    guidance_scale: float = 1.0,
) -> tuple[np.ndarray, float]:
    """Reverse drift steering the mixture toward the observation posterior.

    `classifier` must expose grad_log_joint(observations, t, x); both the
    quadrature oracle and the learned time classifier do.
    """
    sde = _shared_sde(dms)
    w = _simplex_weights(weights, len(dms))
    xb = _batch(x, dms[0].dim)
    post = np.exp(_log_label_posterior(dms, w, t, xb))
    scores = np.stack([dm.marginal(t).score(xb) for dm in dms], axis=1)
    guidance = classifier.grad_log_joint(observations, t, xb)
    g2 = sde.g2(t)
    drift = -g2 * (np.einsum("bm,bmd->bd", post, scores) + guidance_scale * guidance)
    return drift, sde.g(t)


def euler_maruyama(
    drift_fn,
    diffusion_fn,
    prior_sampler,
    steps: int,
    rng: np.random.Generator,
    t_max: float = 1.0,
) -> np.ndarray:
    """Integrate a reverse SDE from t_max down to 0.

    The update is x <- x - drift_fn(t, x) dt + diffusion_fn(t) sqrt(dt) xi,
    evaluated at t = t_max, t_max - dt, ..., dt. diffusion_fn may return a
    scalar or a per-point array.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x = np.asarray(prior_sampler(rng), dtype=np.float64)
    dt = t_max / steps
    for k in range(steps):
        t = t_max - k * dt
        drift = drift_fn(t, x)
        g = diffusion_fn(t)
        noise = rng.standard_normal(x.shape)
        g_col = np.asarray(g)[..., None] if np.ndim(g) == 1 else g
        x = x - drift * dt + g_col * math.sqrt(dt) * noise
        if not np.all(np.isfinite(x)):
            raise NonFiniteDetected(f"sample paths diverged at t={t:.4f}")
    return x


def base_prior_sampler(dm: DiffusedMixture, count: int):
    """Samples x_T exactly from the base's fully noised marginal."""

    def sampler(rng: np.random.Generator) -> np.ndarray:
        return dm.marginal(dm.sde.t_max).sample(count, rng)

    return sampler


def composed_prior_sampler(
    dms: list[DiffusedMixture],
    weights,
    classifier,
    observations,
    count: int,
    oversample: int = 4,
):
    """Samples x_T from the observation-tilted noised mixture.

    Draws `oversample * count` points from the mixture marginal at t_max and
    importance-resamples them with weights proportional to the classifier's
    observation probability, which is the exact conditional at time t_max.
    """
    sde = _shared_sde(dms)
    marginal = mixture_density(dms, weights, sde.t_max)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        pool = marginal.sample(count * oversample, rng)
        logw = classifier.log_joint(observations, sde.t_max, pool)
        logw = logw - logsumexp(logw)
        picks = rng.choice(pool.shape[0], size=count, p=np.exp(logw))
        return pool[picks]

    return sampler


def save_samples(path: str, samples: np.ndarray, seed: int, steps: int) -> None:
    """Binary float64 dump with a JSON sidecar recording shape and provenance."""
    samples = np.ascontiguousarray(np.asarray(samples, dtype=np.float64))
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise ValueError(f"expected a (n, dim) sample array, got shape {samples.shape}")
    _atomic_write_bytes(path, samples.tobytes())
    sidecar = {
        "n_samples": int(samples.shape[0]),
        "dim": int(samples.shape[1]),
        "seed": int(seed),
        "steps": int(steps),
    }
    _atomic_write_bytes(path + ".json", json.dumps(sidecar, indent=2).encode() + b"\n")


def load_samples(path: str) -> tuple[np.ndarray, dict]:
    with open(path + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    flat = np.frombuffer(open(path, "rb").read(), dtype=np.float64)
    return flat.reshape(sidecar["n_samples"], sidecar["dim"]).copy(), sidecar


def save_density_curve(path: str, xs: np.ndarray, pdf: np.ndarray) -> None:
    """CSV curve (x, pdf) for plotting 1D densities."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    pdf = np.asarray(pdf, dtype=np.float64).ravel()
    if xs.shape != pdf.shape:
        raise ValueError("x grid and pdf values must have the same length")
    lines = ["x,pdf"] + [f"{x:.17g},{p:.17g}" for x, p in zip(xs, pdf)]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_density_curve(path: str) -> tuple[np.ndarray, np.ndarray]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, 0], rows[:, 1]

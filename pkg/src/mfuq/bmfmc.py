"""Posterior statistics of the high-fidelity output density.

The mean density is the Gaussian mixture
``(1/N) sum_j N(y; m(z_j), v(z_j) + noise)`` over the LF feature samples;
its variance under the GP posterior is the double sum of bivariate normal
densities evaluated on the diagonal ``[y, y]`` minus the squared mean.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .errors import UsageError
from .gp import GaussianProcessModel, posterior_cov, predict

RHO_CLAMP = 1.0 - 1e-12
VARIANCE_FLOOR = -1e-8
DEFAULT_SUPPORT_POINTS = 200
DEFAULT_SUPPORT_PAD = 0.15
DEFAULT_N_VARIANCE = 500


@dataclass(frozen=True, eq=False)
class SupportGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2 or np.any(np.diff(pts) <= 0):
            raise UsageError("support grid must be strictly increasing with at least two points")
        object.__setattr__(self, "points", pts)

    @property
    def S(self):
        return self.points.size

    def trapezoid_weights(self):
        d = np.diff(self.points)
        w = np.zeros(self.S)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w

    def integrate(self, values):
        return float(trapezoid(values, self.points))

    @classmethod
    def covering(cls, *values, n_points=DEFAULT_SUPPORT_POINTS, pad=DEFAULT_SUPPORT_PAD):
        """Equispaced grid over the pooled range of ``values`` widened by ``pad``."""
        pooled = np.concatenate([np.asarray(v, dtype=float).ravel() for v in values])
        lo, hi = float(pooled.min()), float(pooled.max())
        span = hi - lo if hi > lo else max(abs(lo), 1.0)
        return cls(np.linspace(lo - pad * span, hi + pad * span, int(n_points)))

    @classmethod
    def around_mixture(cls, means, variances, n_sigma=8.0, n_points=2000):
        """Grid reaching ``n_sigma`` total standard deviations past every component."""
        sd = np.sqrt(np.max(variances))
        return cls(np.linspace(np.min(means) - n_sigma * sd, np.max(means) + n_sigma * sd, int(n_points)))


def _component_variances(pred, min_bandwidth):
    total = pred.variance + pred.noise
    if min_bandwidth:
        total = np.maximum(total, float(min_bandwidth) ** 2)
    return total


def _dirac_on_grid(support: SupportGrid, location):
    """Unit mass split linearly between the two grid nodes around ``location``."""
    out = np.zeros(support.S)
    pts = support.points
    if location < pts[0] or location > pts[-1]:
        return out
    k = min(int(np.searchsorted(pts, location, side="right")) - 1, support.S - 2)
    t = (location - pts[k]) / (pts[k + 1] - pts[k])
    w = support.trapezoid_weights()
    out[k] += (1.0 - t) / w[k]
    out[k + 1] += t / w[k + 1]
    return out


def mixture_terms(support: SupportGrid, means, variances):
    """Matrix (S x N) of component densities on the grid."""
    y = support.points[:, None]
    terms = np.zeros((support.S, means.size))
    ok = variances > 0
    if np.any(ok):
        s = variances[ok][None, :]
        terms[:, ok] = np.exp(-0.5 * (y - means[ok][None, :]) ** 2 / s) / np.sqrt(2.0 * np.pi * s)
    for j in np.flatnonzero(~ok):
        terms[:, j] = _dirac_on_grid(support, means[j])
    return terms


def mixture_density(support: SupportGrid, means, variances, chunk=4096):
    """Average of normal densities, summed with correctly rounded ``math.fsum``
    so the result does not depend on the component order."""
    means = np.asarray(means, dtype=float).ravel()
    variances = np.asarray(variances, dtype=float).ravel()
    n = means.size
    if n < 1:
        raise UsageError("mixture needs at least one component")
    if n <= chunk:
        terms = mixture_terms(support, means, variances)
        return np.array([math.fsum(row) for row in terms]) / n
    # exact partial sums per chunk, combined exactly via fsum again
    partials = [[] for _ in range(support.S)]
    for start in range(0, n, chunk):
        terms = mixture_terms(support, means[start:start + chunk], variances[start:start + chunk])
        for l, row in enumerate(terms):
            partials[l].extend(row.tolist())
    return np.array([math.fsum(p) for p in partials]) / n


def density_mean(model: GaussianProcessModel, Z_star, support: SupportGrid, min_bandwidth=None) -> np.ndarray:
    """Posterior mean of the HF density on ``support``.

    ``min_bandwidth`` optionally floors each component's standard deviation;
    leave it ``None`` for the plain mixture.
    """
    pred = predict(model, Z_star)
    return mixture_density(support, pred.mean, _component_variances(pred, min_bandwidth))


def bivariate_diagonal_terms(y, mu_i, mu_j, s_i, s_j, cov_ij):
    """N2([y, y]; [mu_i, mu_j], [[s_i, c], [c, s_j]]) for broadcastable inputs."""
    a = y - mu_i
    b = y - mu_j
    det = s_i * s_j - cov_ij**2
    quad = (a * a * s_j - 2.0 * cov_ij * a * b + b * b * s_i) / det
    return np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))


def _clamped_covariance(s, cov):
    scale = np.sqrt(np.outer(s, s))
    rho = cov / scale
    bad = np.abs(rho) > RHO_CLAMP
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} posterior correlations exceed 1 in magnitude; clamped")
        rho = np.clip(rho, -RHO_CLAMP, RHO_CLAMP)
    return rho * scale


def density_second_moment(model: GaussianProcessModel, Z_v, support: SupportGrid, min_bandwidth=None):
    """E_f[p(y)^2] estimated with the double sum over ``Z_v``."""
    pred = predict(model, Z_v)
    s = _component_variances(pred, min_bandwidth)
    if np.any(s <= 0):
        raise UsageError("density variance needs strictly positive component variances; "
                         "set min_bandwidth for noise-free models")
    cov = _clamped_covariance(s, posterior_cov(model, Z_v, Z_v))
    m = pred.mean
    out = np.empty(support.S)
    for l, y in enumerate(support.points):
        out[l] = np.sum(bivariate_diagonal_terms(y, m[:, None], m[None, :], s[:, None], s[None, :], cov))
    return out / m.size**2


def density_variance(model: GaussianProcessModel, Z_v, support: SupportGrid, mean_vec,
                     min_bandwidth=None, clamp=True) -> np.ndarray:
    """Pointwise posterior variance of the HF density.

    ``mean_vec`` must be the mean density computed from the same rows ``Z_v``.
    """
    mean_vec = np.asarray(mean_vec, dtype=float)
    if mean_vec.shape != (support.S,):
        raise UsageError("mean vector does not match the support grid")
    var = density_second_moment(model, Z_v, support, min_bandwidth) - mean_vec**2
    if not clamp:
        return var
    if var.min() < VARIANCE_FLOOR:
        warnings.warn(f"density variance {var.min():.3g} below the pre-clamp floor")
    return np.maximum(var, 0.0)


def stride_indices(n, n_use):
    """Deterministic evenly strided subset of ``range(n)`` of size ``min(n, n_use)``."""
    if n_use is None or n_use >= n:
        return np.arange(n)
    return (np.arange(n_use) * n) // n_use


@dataclass(eq=False)
class DensityPrediction:
    support: SupportGrid
    mean: np.ndarray
    variance: np.ndarray
    n_used_mean: int
    n_used_var: int
    metadata: dict = field(default_factory=dict)

    def band(self, k=2.0):
        half = k * np.sqrt(self.variance)
        return np.maximum(self.mean - half, 0.0), self.mean + half

    def integral(self):
        return self.support.integrate(self.mean)

    def to_json(self):
        return {
            "support": self.support.points.tolist(),
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "n_used_mean": self.n_used_mean,
            "n_used_var": self.n_used_var,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, payload):
        return cls(SupportGrid(np.array(payload["support"])), np.array(payload["mean"]),
                   np.array(payload["variance"]), payload["n_used_mean"], payload["n_used_var"],
                   payload.get("metadata", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    def write_plot_bundle(self, path, reference=None):
        lower, upper = self.band()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["support", "mean", "lower", "upper"] + (["reference"] if reference is not None else []))
            for l in range(self.support.S):
                row = [self.support.points[l], self.mean[l], lower[l], upper[l]]
                if reference is not None:
                    row.append(reference[l])
                w.writerow([repr(float(v)) for v in row])


def posterior_statistics(model: GaussianProcessModel, Z_star, support: SupportGrid,
                         n_variance=DEFAULT_N_VARIANCE, min_bandwidth=None) -> DensityPrediction:
    """Mean density over all rows and its variance over a strided subset.

    The variance subtracts the squared mean of the same subset.
    """
    Z_star = np.atleast_2d(np.asarray(Z_star, dtype=float))
    mean = density_mean(model, Z_star, support, min_bandwidth)
    idx = stride_indices(Z_star.shape[0], n_variance)
    Z_v = Z_star[idx]
    sub_mean = mean if idx.size == Z_star.shape[0] else density_mean(model, Z_v, support, min_bandwidth)
    raw = density_variance(model, Z_v, support, sub_mean, min_bandwidth, clamp=False)
    variance = np.maximum(raw, 0.0)
    meta = {"variance_min_preclamp": float(raw.min())}
    if raw.min() < VARIANCE_FLOOR:
        warnings.warn(f"density variance {raw.min():.3g} below the pre-clamp floor")
    return DensityPrediction(support, mean, variance, Z_star.shape[0], int(idx.size), meta)

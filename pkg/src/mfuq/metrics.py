"""Reference densities (Gaussian KDE), Kullback-Leibler divergence on a shared
grid and the Monte Carlo standard error."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .errors import UsageError

BANDWIDTH_MODES = ("silverman", "cv-grid")
CV_CANDIDATES = 30
CV_MAX_POINTS = 2000
KLD_FLOOR = 1e-12


def silverman_bandwidth(samples):
    x = np.asarray(samples, dtype=float).ravel()
    return 1.06 * x.std(ddof=1) * x.size ** (-0.2)


def loo_log_likelihood(samples, bandwidth, max_points=CV_MAX_POINTS):
    """Leave-one-out log likelihood of a Gaussian KDE.

    For more than ``max_points`` samples a strided subset is scored.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size > max_points:
        x = x[(np.arange(max_points) * x.size) // max_points]
    n = x.size
    z = (x[:, None] - x[None, :]) / bandwidth
    logk = -0.5 * z**2
    np.fill_diagonal(logk, -np.inf)
    dens = logsumexp(logk, axis=1) - np.log((n - 1) * bandwidth * np.sqrt(2 * np.pi))
    return float(np.sum(dens))


@dataclass(eq=False)
class KDEEstimate:
    samples: np.ndarray
    bandwidth: float
    mode: str

    def __call__(self, points, chunk=2_000_000):
        pts = np.asarray(points, dtype=float).ravel()
        out = np.zeros(pts.size)
        step = max(1, chunk // max(pts.size, 1))
        norm = self.samples.size * self.bandwidth * np.sqrt(2 * np.pi)
        for start in range(0, self.samples.size, step):
            s = self.samples[start:start + step]
            out += np.exp(-0.5 * ((pts[:, None] - s[None, :]) / self.bandwidth) ** 2).sum(axis=1)
        return out / norm


def kde_fit(samples, bandwidth_mode="silverman") -> KDEEstimate:
    """Gaussian KDE with Silverman's rule or a leave-one-out grid search over
    30 log-spaced bandwidths between 0.1x and 3x the Silverman value."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2 or np.ptp(x) == 0:
        raise UsageError("KDE needs at least two distinct samples")
    if bandwidth_mode not in BANDWIDTH_MODES:
        raise UsageError(f"unknown bandwidth mode {bandwidth_mode!r}")
    h = silverman_bandwidth(x)
    if bandwidth_mode == "cv-grid":
        grid = h * np.logspace(-1, np.log10(3.0), CV_CANDIDATES)
        scores = [loo_log_likelihood(x, b) for b in grid]
        h = float(grid[int(np.argmax(scores))])
    return KDEEstimate(x, float(h), bandwidth_mode)


def kld(p, q, support) -> float:
    """KL(p || q) by trapezoid quadrature on the shared grid.

    ``q`` is floored at ``1e-12 * max(q)``; negative round-off results are
    returned as 0.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    grid = support.points if hasattr(support, "points") else np.asarray(support, dtype=float).ravel()
    if not (p.shape == q.shape == grid.shape):
        raise UsageError(f"densities and grid differ in length: {p.size}, {q.size}, {grid.size}")
    qf = np.maximum(q, KLD_FLOOR * q.max())
    integrand = np.zeros_like(p)
    pos = p > 0
    integrand[pos] = p[pos] * np.log(p[pos] / qf[pos])
    return max(float(trapezoid(integrand, grid)), 0.0)


def mc_standard_error(sample_std, n):
    if n < 1:
        raise UsageError("sample count must be at least 1")
    return sample_std / np.sqrt(n)


def inputs_hash(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def append_metric(ledger_path, metric, value, *inputs, **extra):
    """Append one JSON line ``{metric, value, inputs_hash, ...}`` to the run ledger."""
    record = {"metric": metric, "value": float(value), "inputs_hash": inputs_hash(*inputs), **extra}
    with Path(ledger_path).open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return record

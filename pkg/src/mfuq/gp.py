"""Gaussian-process regression with a squared-exponential kernel.

Hyperparameters are fitted by maximizing the log marginal likelihood in
log-space with multi-start L-BFGS-B. The prior mean is either zero or the
first feature (the LF output) passed straight through.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist, pdist

from ._linalg import jittered_cholesky, strict_cholesky
from .errors import NumericError, UsageError

log = logging.getLogger(__name__)

MEAN_MODES = ("zero", "lf-passthrough")
LOG_2PI = np.log(2.0 * np.pi)

# restart box, relative to the median pairwise distance and the target variance
RESTART_BOX = {"length_scale": (1e-2, 1e2), "signal_var": (1e-2, 1e2), "noise_var": (1e-6, 1.0)}
# optimization bounds, relative to the same scales
OPT_BOUNDS = {"length_scale": (1e-3, 1e3), "signal_var": (1e-8, 1e4), "noise_var": (1e-10, 1e1)}
FAILED_OBJECTIVE = 1e25


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential hyperparameters. ``length_scale`` may be a vector
    (one per feature dimension) when fitted with ``ard=True``."""

    length_scale: float | np.ndarray
    signal_var: float
    noise_var: float

    def __post_init__(self):
        ls = np.asarray(self.length_scale, dtype=float)
        if np.any(ls <= 0) or not self.signal_var > 0 or self.noise_var < 0:
            raise UsageError(f"invalid kernel parameters {self}")

    @property
    def n_length_scales(self):
        return np.asarray(self.length_scale).size

    def to_log(self):
        noise = np.log(self.noise_var) if self.noise_var > 0 else -np.inf
        return np.concatenate([np.log(np.atleast_1d(self.length_scale)), [np.log(self.signal_var), noise]])

    @classmethod
    def from_log(cls, theta):
        theta = np.asarray(theta, dtype=float)
        ls = np.exp(theta[:-2])
        return cls(float(ls[0]) if ls.size == 1 else ls, float(np.exp(theta[-2])), float(np.exp(theta[-1])))

    def to_dict(self):
        ls = self.length_scale
        return {"length_scale": ls.tolist() if isinstance(ls, np.ndarray) else ls,
                "signal_var": self.signal_var, "noise_var": self.noise_var}


def _as_2d(z):
    z = np.asarray(z, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def _sqdist(params, A, B):
    ls = np.asarray(params.length_scale, dtype=float)
    return cdist(A / ls, B / ls, "sqeuclidean")


def kernel_eval(params: KernelParams, Z_a, Z_b) -> np.ndarray:
    A, B = _as_2d(Z_a), _as_2d(Z_b)
    if A.shape[1] != B.shape[1]:
        raise UsageError(f"feature dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    return params.signal_var * np.exp(-0.5 * _sqdist(params, A, B))


def prior_mean(Z, mean_mode):
    Z = _as_2d(Z)
    if mean_mode == "zero":
        return np.zeros(Z.shape[0])
    if mean_mode == "lf-passthrough":
        return Z[:, 0].copy()
    raise UsageError(f"unknown mean mode {mean_mode!r}; choose from {MEAN_MODES}")


def log_marginal_likelihood(params: KernelParams, Z_train, Y_train, mean_mode="lf-passthrough",
                            return_grad=False):
    """Log evidence of the training data; optionally its gradient with respect
    to ``params.to_log()``. Raises NumericError if the covariance is singular
    (no jitter is added here)."""
    Z = _as_2d(Z_train)
    y = np.asarray(Y_train, dtype=float).ravel()
    n = y.shape[0]
    if n < 1 or Z.shape[0] != n:
        raise UsageError("training features and targets must have the same, non-zero length")
    r = y - prior_mean(Z, mean_mode)
    Kf = kernel_eval(params, Z, Z)
    K = Kf + params.noise_var * np.eye(n)
    L = strict_cholesky(K, name="training covariance")
    alpha = linalg.cho_solve((L, True), r)
    lml = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    if not return_grad:
        return float(lml)
    W = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    ls = np.atleast_1d(np.asarray(params.length_scale, dtype=float))
    grads = []
    if ls.size == 1:
        grads.append(0.5 * np.sum(W * Kf * cdist(Z, Z, "sqeuclidean")) / ls[0] ** 2)
    else:
        for d in range(ls.size):
            diff2 = (Z[:, d, None] - Z[None, :, d]) ** 2
            grads.append(0.5 * np.sum(W * Kf * diff2) / ls[d] ** 2)
    grads.append(0.5 * np.sum(W * Kf))
    grads.append(0.5 * params.noise_var * np.trace(W))
    return float(lml), np.array(grads)


@dataclass(frozen=True)
class PredictiveGaussian:
    """Latent posterior ``N(mean, variance)`` per test row; ``noise`` is the
    fitted observation variance that callers add for predictions of y."""

    mean: np.ndarray
    variance: np.ndarray
    noise: float


@dataclass(eq=False)
class GaussianProcessModel:
    params: KernelParams
    mean_mode: str
    Z_train: np.ndarray
    Y_train: np.ndarray
    chol: np.ndarray | None
    alpha: np.ndarray | None
    jitter: float = 0.0
    log_likelihood: float = float("nan")

    @classmethod
    def build(cls, params, Z_train, Y_train, mean_mode="lf-passthrough", log_likelihood=float("nan")):
        """Condition the prior on data using fixed hyperparameters."""
        Z = _as_2d(Z_train)
        y = np.asarray(Y_train, dtype=float).ravel()
        if Z.shape[0] != y.shape[0]:
            raise UsageError("training features and targets must have the same length")
        K = kernel_eval(params, Z, Z) + params.noise_var * np.eye(y.shape[0])
        L, jitter = jittered_cholesky(K, name="GP training covariance")
        alpha = linalg.cho_solve((L, True), y - prior_mean(Z, mean_mode))
        return cls(params, mean_mode, Z, y, L, alpha, jitter, log_likelihood)

    @classmethod
    def prior(cls, params, dim, mean_mode="zero"):
        """Unconditioned GP; ``predict`` then returns the prior at the test inputs."""
        return cls(params, mean_mode, np.zeros((0, dim)), np.zeros(0), None, None)

    @property
    def noise(self):
        return self.params.noise_var

    @property
    def is_conditioned(self):
        return self.chol is not None

    def _v(self, Z):
        return linalg.solve_triangular(self.chol, kernel_eval(self.params, self.Z_train, Z), lower=True)

    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.Z_train).tobytes())
        h.update(np.ascontiguousarray(self.Y_train).tobytes())
        h.update(json.dumps([self.params.to_dict(), self.mean_mode], sort_keys=True).encode())
        return h.hexdigest()

    def to_json(self):
        return {
            "params": self.params.to_dict(),
            "mean_mode": self.mean_mode,
            "Z_train": self.Z_train.tolist(),
            "Y_train": self.Y_train.tolist(),
            "log_likelihood": self.log_likelihood,
            "jitter": self.jitter,
            "content_hash": self.content_hash(),
        }

    @classmethod
    def from_json(cls, payload):
        p = payload["params"]
        ls = p["length_scale"]
        params = KernelParams(np.array(ls) if isinstance(ls, list) else ls, p["signal_var"], p["noise_var"])
        model = cls.build(params, np.array(payload["Z_train"]), np.array(payload["Y_train"]),
                          payload["mean_mode"], payload.get("log_likelihood", float("nan")))
        if payload.get("content_hash") and model.content_hash() != payload["content_hash"]:
            raise NumericError("GP model content hash does not match its data")
        return model


def predict(model: GaussianProcessModel, Z_test) -> PredictiveGaussian:
    Z = _as_2d(Z_test)
    if model.Z_train.shape[1] != Z.shape[1]:
        raise UsageError(f"model expects {model.Z_train.shape[1]} features, got {Z.shape[1]}")
    mean = prior_mean(Z, model.mean_mode)
    var = np.full(Z.shape[0], model.params.signal_var)
    if model.is_conditioned:
        k = kernel_eval(model.params, model.Z_train, Z)
        mean = mean + k.T @ model.alpha
        v = linalg.solve_triangular(model.chol, k, lower=True)
        var = var - np.einsum("ij,ij->j", v, v)
    if np.any(var < 0):
        if var.min() < -1e-8 * model.params.signal_var:
            warnings.warn(f"posterior variance {var.min():.3g} below zero; clamped")
        var = np.maximum(var, 0.0)
    return PredictiveGaussian(mean, var, model.noise)


def posterior_cov(model: GaussianProcessModel, Z_a, Z_b) -> np.ndarray:
    A, B = _as_2d(Z_a), _as_2d(Z_b)
    cov = kernel_eval(model.params, A, B)
    if model.is_conditioned:
        cov = cov - model._v(A).T @ model._v(B)
    return cov


def _restart_scales(Z, y, mean_mode):
    dists = pdist(Z)
    dists = dists[dists > 0]
    med = float(np.median(dists)) if dists.size else 1.0
    var = float(np.var(y))
    if not var > 0:
        resid = y - prior_mean(Z, mean_mode)
        var = float(np.mean(resid**2)) or 1.0
    return med, var


def fit(Z_train, Y_train, mean_mode="lf-passthrough", restarts=8, seed=0, ard=False) -> GaussianProcessModel:
    """Maximum marginal-likelihood GP.

    Each restart draws a log-uniform start from ``RESTART_BOX`` and runs
    L-BFGS-B inside ``OPT_BOUNDS``; the best restart (ties: lowest index)
    is kept.
    """
    Z = _as_2d(Z_train)
    y = np.asarray(Y_train, dtype=float).ravel()
    if Z.shape[0] != y.shape[0]:
        raise UsageError("training features and targets must have the same length")
    if np.unique(Z, axis=0).shape[0] < 2:
        raise UsageError("need at least two distinct training inputs")
    if mean_mode not in MEAN_MODES:
        raise UsageError(f"unknown mean mode {mean_mode!r}")
    med, var = _restart_scales(Z, y, mean_mode)
    n_ls = Z.shape[1] if ard else 1
    scales = np.log([med] * n_ls + [var, var])

    def box(table):
        lo = np.log([table["length_scale"][0]] * n_ls + [table["signal_var"][0], table["noise_var"][0]])
        hi = np.log([table["length_scale"][1]] * n_ls + [table["signal_var"][1], table["noise_var"][1]])
        return lo + scales, hi + scales

    start_lo, start_hi = box(RESTART_BOX)
    bound_lo, bound_hi = box(OPT_BOUNDS)
    bounds = list(zip(bound_lo, bound_hi))

    def objective(theta):
        try:
            val, grad = log_marginal_likelihood(KernelParams.from_log(theta), Z, y, mean_mode, return_grad=True)
        except NumericError:
            return FAILED_OBJECTIVE, np.zeros_like(theta)
        if not np.isfinite(val):
            return FAILED_OBJECTIVE, np.zeros_like(theta)
        return -val, -grad

    rng = np.random.default_rng(seed)
    starts = rng.uniform(start_lo, start_hi, size=(restarts, start_lo.size))
    results = []
    for i, theta0 in enumerate(starts):
        res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and res.fun < FAILED_OBJECTIVE:
            results.append((float(res.fun), i, res.x))
        log.debug("restart %d: -lml=%.6g (%s)", i, res.fun, res.message)
    if not results:
        raise NumericError(f"all {restarts} GP restarts failed (n={y.size}, median distance={med:.3g}, var={var:.3g})")
    best_fun, _, best_theta = min(results, key=lambda t: (t[0], t[1]))
    return GaussianProcessModel.build(KernelParams.from_log(best_theta), Z, y, mean_mode, -best_fun)

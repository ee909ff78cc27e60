"""Truncated Karhunen-Loeve expansion of random-field blocks and column
standardization of the reduced input matrix."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import NumericError, UsageError
from .inputs import RandomFieldSpec, SampleMatrix, field_covariance

NEGATIVE_EIG_TOL = 1e-10


@dataclass(eq=False)
class KLEBasis:
    """Eigen-decomposition of a field covariance, truncated to ``n_trunc`` modes.

    ``eigenvalues`` holds the full (clamped, descending) spectrum so the
    explained-variance curve can be recomputed; ``vectors`` holds only the
    retained columns.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    mean: np.ndarray
    n_trunc: int
    explained: float
    name: str = "field"

    def explained_curve(self):
        total = self.eigenvalues.sum()
        if total <= 0:
            return np.ones_like(self.eigenvalues)
        return np.minimum(np.cumsum(self.eigenvalues) / total, 1.0)

    def save(self, path):
        path = Path(path)
        meta = {
            "name": self.name,
            "eigenvalues": self.eigenvalues.tolist(),
            "n_trunc": self.n_trunc,
            "explained": self.explained,
            "mean": self.mean.tolist(),
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        np.savetxt(path.with_suffix(".csv"), self.vectors, delimiter=",", fmt="%.17g")

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        vectors = np.loadtxt(path.with_suffix(".csv"), delimiter=",", ndmin=2)
        return cls(np.array(meta["eigenvalues"]), vectors, np.array(meta["mean"]),
                   meta["n_trunc"], meta["explained"], meta["name"])


def kle_fit(field_block=None, *, covariance=None, mean=None, threshold=0.95, max_order=None, name="field",
            order=None):
    """Fit a KLE basis from a known covariance or from sampled field rows.

    Exactly one of ``field_block`` (N x n_pts samples) or ``covariance``
    must be given. The order is the smallest one whose explained variance
    reaches ``threshold``, capped at ``max_order``; ``order`` fixes it
    outright (``order=n_pts`` keeps numerically null modes too).
    """
    if (field_block is None) == (covariance is None):
        raise UsageError("pass either field samples or a covariance matrix")
    if not 0.0 < threshold <= 1.0:
        raise UsageError(f"threshold must lie in (0, 1], got {threshold}")
    if covariance is not None:
        cov = np.asarray(covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise UsageError("covariance must be square")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14 * np.abs(cov).max()):
            raise UsageError("covariance must be symmetric")
        m = np.zeros(cov.shape[0]) if mean is None else np.asarray(mean, dtype=float)
    else:
        rows = np.asarray(field_block, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 2:
            raise UsageError("need at least two field samples to estimate a covariance")
        m = rows.mean(axis=0) if mean is None else np.asarray(mean, dtype=float)
        centered = rows - m
        cov = centered.T @ centered / rows.shape[0]
    cov = 0.5 * (cov + cov.T)
    if m.shape != (cov.shape[0],):
        raise UsageError("mean length does not match the field dimension")
    try:
        eigvals, eigvecs = linalg.eigh(cov)
    except linalg.LinAlgError as exc:
        raise NumericError(f"eigen-decomposition of {name} covariance failed: {exc}") from exc
    perm = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[perm], eigvecs[:, perm]
    top = max(eigvals[0], 0.0)
    if eigvals[-1] < -NEGATIVE_EIG_TOL * top:
        warnings.warn(f"{name}: covariance has eigenvalue {eigvals[-1]:.3g} below tolerance; clamped to 0")
    eigvals = np.clip(eigvals, 0.0, None)
    # deterministic sign: largest-magnitude entry of every mode is positive
    pivots = np.argmax(np.abs(eigvecs), axis=0)
    signs = np.sign(eigvecs[pivots, np.arange(eigvecs.shape[1])])
    eigvecs = eigvecs * np.where(signs == 0, 1.0, signs)

    total = eigvals.sum()
    curve = np.minimum(np.cumsum(eigvals) / total, 1.0) if total > 0 else np.ones_like(eigvals)
    if order is not None:
        if not 1 <= int(order) <= len(eigvals):
            raise UsageError(f"order must lie in [1, {len(eigvals)}]")
        n_trunc = int(order)
    else:
        n_trunc = min(int(np.searchsorted(curve, threshold - 1e-12) + 1), len(eigvals))
    if max_order is not None:
        n_trunc = min(n_trunc, int(max_order))
    n_trunc = max(n_trunc, 1)
    return KLEBasis(eigvals, eigvecs[:, :n_trunc].copy(), m, n_trunc, float(curve[n_trunc - 1]), name)


def kle_project(basis: KLEBasis, field_rows) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(field_rows, dtype=float))
    if rows.shape[1] != basis.mean.shape[0]:
        raise UsageError(f"field rows have {rows.shape[1]} points, basis expects {basis.mean.shape[0]}")
    return (rows - basis.mean) @ basis.vectors


def kle_reconstruct(basis: KLEBasis, coefficients) -> np.ndarray:
    return basis.mean + np.atleast_2d(coefficients) @ basis.vectors.T


@dataclass(eq=False)
class ReducedInputMatrix:
    """Standardized reduced inputs with the scalers needed for held-out rows."""

    data: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    zero_variance: np.ndarray
    labels: list = field(default_factory=list)

    @property
    def n_cols(self):
        return self.data.shape[1]

    def transform(self, matrix):
        out = (np.asarray(matrix, dtype=float) - self.means) / self.stds
        out[:, self.zero_variance] = 0.0
        return out


def standardize(matrix, labels=None) -> ReducedInputMatrix:
    """Zero mean, unit population standard deviation per column.

    Constant columns map to zero, keep a recorded std of 1 and are flagged.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise UsageError("standardization needs a 2-d matrix with at least two rows")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    scale = np.maximum(np.abs(means), np.abs(x).max(axis=0, initial=0.0))
    zero = stds <= 1e-13 * np.where(scale > 0, scale, 1.0)
    stds = np.where(zero, 1.0, stds)
    data = (x - means) / stds
    data[:, zero] = 0.0
    labels = list(labels) if labels is not None else [f"col{j}" for j in range(x.shape[1])]
    return ReducedInputMatrix(data, means, stds, zero, labels)


def reduce_inputs(samples: SampleMatrix, field_specs=None, threshold=0.95, max_order=None):
    """Uncorrelated columns followed by KLE coefficients of every field block,
    standardized column-wise. Returns ``(reduced, bases)``.

    A field's known covariance is used when its spec is supplied in
    ``field_specs`` (name -> RandomFieldSpec); otherwise the sample
    covariance is used.
    """
    field_specs = field_specs or {}
    uncorr_cols, uncorr_labels = [], []
    coeff_cols, coeff_labels, bases = [], [], {}
    for b in samples.layout:
        block = samples.block(b.name)
        if b.kind == "uncorrelated":
            uncorr_cols.append(block)
            uncorr_labels.append(f"uncorrelated:{b.name}")
            continue
        spec = field_specs.get(b.name)
        if isinstance(spec, RandomFieldSpec):
            basis = kle_fit(covariance=field_covariance(spec), mean=spec.mean,
                            threshold=threshold, max_order=max_order, name=b.name)
        else:
            basis = kle_fit(block, threshold=threshold, max_order=max_order, name=b.name)
        bases[b.name] = basis
        coeff_cols.append(kle_project(basis, block))
        coeff_labels += [f"kle:{b.name}:{k}" for k in range(basis.n_trunc)]
    matrix = np.hstack(uncorr_cols + coeff_cols)
    return standardize(matrix, uncorr_labels + coeff_labels), bases

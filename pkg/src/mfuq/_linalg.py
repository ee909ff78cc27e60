"""Cholesky factorization with an escalating diagonal jitter."""

import numpy as np
from scipy import linalg

from .errors import NumericError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def jittered_cholesky(matrix, name="matrix", start=JITTER_START, stop=JITTER_MAX):
    """Lower Cholesky factor of ``matrix + jitter * I``.

    The jitter starts at ``start * trace / n`` and grows by a factor of ten
    up to ``stop * trace / n``. Returns ``(L, jitter)``.
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    if not np.all(np.isfinite(matrix)):
        raise NumericError(f"{name} contains non-finite entries")
    scale = np.trace(matrix) / n
    if scale <= 0.0:
        raise NumericError(f"{name} has non-positive trace; cannot factorize")
    rel = start
    while rel <= stop * (1 + 1e-9):
        jitter = rel * scale
        try:
            chol = linalg.cholesky(matrix + jitter * np.eye(n), lower=True, check_finite=False)
            return chol, jitter
        except linalg.LinAlgError:
            rel *= 10.0
    raise NumericError(
        f"Cholesky factorization of {name} ({n}x{n}) failed with relative jitter up to {stop:g}"
    )


def strict_cholesky(matrix, name="matrix"):
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"{name} is not positive definite: {exc}") from exc

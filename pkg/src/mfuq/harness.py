"""Closed-form multi-fidelity model families standing in for expensive
solvers, HF budget accounting, reference densities and a loop-by-loop
posterior-statistics oracle."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bmfmc import SupportGrid
from .dimreduce import kle_fit
from .errors import ConfigurationError, UsageError
from .gp import GaussianProcessModel, posterior_cov, predict
from .inputs import RandomFieldSpec, SampleMatrix, ScalarDistribution, assemble_samples, field_covariance
from .metrics import kde_fit

REFERENCE_SEED = 424242
REFERENCE_N = 100_000
ORACLE_MAX_N = 100


class BudgetLedger:
    """Counts model evaluations (rows). Updates go through one lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self.hf_calls = 0
        self.lf_calls = 0

    def record(self, which, n):
        with self._lock:
            if which == "HF":
                self.hf_calls += int(n)
            else:
                self.lf_calls += int(n)

    def reset(self):
        with self._lock:
            self.hf_calls = 0
            self.lf_calls = 0


@dataclass(eq=False)
class SyntheticFamily:
    name: str
    hf_fn: Callable[[SampleMatrix], np.ndarray]
    lf_fn: Callable[[SampleMatrix], np.ndarray]
    blocks: list
    knobs: dict = field(default_factory=dict)
    hidden_dims: list = field(default_factory=list)
    ledger: BudgetLedger = field(default_factory=BudgetLedger)

    @property
    def dimension(self):
        return sum(b.n_pts if isinstance(b, RandomFieldSpec) else 1 for b in self.blocks)

    def check_layout(self, X: SampleMatrix):
        expected = [(b.name, b.n_pts if isinstance(b, RandomFieldSpec) else 1) for b in self.blocks]
        got = [(b.name, b.width) for b in X.layout]
        if expected != got:
            raise UsageError(f"family {self.name!r} expects input blocks {expected}, got {got}")


def evaluate(family: SyntheticFamily, which: str, X: SampleMatrix) -> np.ndarray:
    if which not in ("HF", "LF"):
        raise UsageError("which must be 'HF' or 'LF'")
    family.check_layout(X)
    fn = family.hf_fn if which == "HF" else family.lf_fn
    y = np.asarray(fn(X), dtype=float)
    family.ledger.record(which, X.n)
    return y


# --- family catalog ---------------------------------------------------------------

def default_blocks():
    """Four uniform scalars, an unrelated nuisance scalar and a short correlated field."""
    blocks = [ScalarDistribution.uniform(f"x{i}", -1.0, 1.0) for i in range(4)]
    blocks.append(ScalarDistribution.uniform("u", -1.0, 1.0))
    blocks.append(RandomFieldSpec.equispaced("field", 30, 0.0, 1.0, length_scale=0.25, amplitude=0.5))
    return blocks


def _base_response(X: SampleMatrix, lead=1.0):
    x = [X.block(f"x{i}")[:, 0] for i in range(4)]
    field_avg = X.block("field").mean(axis=1)
    return lead * x[0] + 0.6 * x[1] + 0.4 * np.sin(np.pi * x[2]) + 0.3 * x[3] ** 2 + 0.5 * field_avg


def _unrelated_response(X: SampleMatrix):
    u = X.block("u")[:, 0]
    return 1.2 * np.sin(0.5 * np.pi * u) + 0.2 * u**3


def blend_family(dependency=1.0, name=None):
    """HF is the base response; LF blends it with a response of an unrelated
    input. ``dependency=1`` makes LF identical to HF, ``0`` independent."""
    if not 0.0 <= dependency <= 1.0:
        raise ConfigurationError("dependency must lie in [0, 1]")

    def lf(X):
        if dependency == 1.0:
            return _base_response(X)
        return dependency * _base_response(X) + (1.0 - dependency) * _unrelated_response(X)

    label = name or ("identical" if dependency == 1.0 else "indep" if dependency == 0.0 else "blend")
    return SyntheticFamily(label, _base_response, lf, default_blocks(), {"dependency": dependency})


def noisy_linear_family(amplitude=0.1, frequency=12.0):
    """HF = LF + a deterministic high-frequency term in all scalar inputs."""

    def hf(X):
        s = sum(X.block(f"x{i}")[:, 0] for i in range(4))
        return _base_response(X) + amplitude * np.sin(frequency * s)

    return SyntheticFamily("noisy-linear", hf, _base_response, default_blocks(),
                           {"amplitude": amplitude, "frequency": frequency})


def hidden_bimodal_family(jump=0.5, lead=1.0):
    """HF = LF + jump * sign(x0): for a fixed LF output the HF output splits
    into two branches decided by ``x0``, the strongest LF driver."""

    def hf(X):
        return _base_response(X, lead) + jump * np.sign(X.block("x0")[:, 0])

    def lf(X):
        return _base_response(X, lead)

    return SyntheticFamily("hidden-bimodal", hf, lf, default_blocks(),
                           {"jump": jump, "lead": lead}, hidden_dims=[0])


def kle_field_family(n_pts=50, length_scale=0.15):
    """Responses driven by the leading KLE modes of a sampled field."""
    field_spec = RandomFieldSpec.equispaced("field", n_pts, 0.0, 1.0, length_scale=length_scale)
    basis = kle_fit(covariance=field_covariance(field_spec), mean=field_spec.mean, threshold=1.0, max_order=3)
    blocks = [field_spec, ScalarDistribution.uniform("x0", -1.0, 1.0)]

    def modes(X):
        c = (X.block("field") - basis.mean) @ basis.vectors
        return c / np.sqrt(basis.eigenvalues[:3])

    def lf(X):
        xi = modes(X)
        return xi[:, 0] + 0.5 * xi[:, 1] + 0.3 * X.block("x0")[:, 0] + 0.15 * xi[:, 0] ** 2

    def hf(X):
        xi = modes(X)
        return xi[:, 0] + 0.5 * xi[:, 1] + 0.3 * X.block("x0")[:, 0] + 0.3 * np.sin(2.0 * xi[:, 2])

    return SyntheticFamily("kle-field", hf, lf, blocks, {"n_pts": n_pts, "length_scale": length_scale},
                           hidden_dims=["kle:field:2"])


FAMILIES = {
    "identical": lambda **kw: blend_family(1.0, "identical"),
    "indep": lambda **kw: blend_family(0.0, "indep"),
    "blend": lambda dependency=0.5, **kw: blend_family(dependency),
    "noisy-linear": lambda **kw: noisy_linear_family(**kw),
    "hidden-bimodal": lambda **kw: hidden_bimodal_family(**kw),
    "kle-field": lambda **kw: kle_field_family(**kw),
}


def make_family(name, **knobs) -> SyntheticFamily:
    try:
        factory = FAMILIES[name]
    except KeyError:
        raise ConfigurationError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}") from None
    try:
        return factory(**knobs)
    except TypeError as exc:
        raise ConfigurationError(f"bad knobs for family {name!r}: {exc}") from None


# --- references and oracles -------------------------------------------------------

def reference_samples(family: SyntheticFamily, blocks=None, n_ref=REFERENCE_N, seed=REFERENCE_SEED):
    """Direct HF outputs for fresh inputs. Not charged to the HF budget."""
    X = assemble_samples(blocks or family.blocks, n_ref, seed)
    return np.asarray(family.hf_fn(X), dtype=float)


def reference_density(family: SyntheticFamily, blocks=None, n_ref=REFERENCE_N, seed=REFERENCE_SEED,
                      support: SupportGrid | None = None, bandwidth_mode="silverman"):
    """KDE of ``n_ref`` direct HF draws evaluated on ``support``."""
    y = reference_samples(family, blocks, n_ref, seed)
    if support is None:
        support = SupportGrid.covering(y)
    return kde_fit(y, bandwidth_mode)(support.points)


def _normal_pdf(y, mu, var):
    return np.exp(-0.5 * (y - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def _bivariate_pdf(point, mu, cov):
    diff = point - mu
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    return np.exp(-0.5 * diff @ inv @ diff) / (2.0 * np.pi * np.sqrt(det))


def nested_loop_oracle(model: GaussianProcessModel, Z_star, support: SupportGrid, min_bandwidth=None):
    """Plain nested loops over sample pairs and grid points.

    The term counter ``h`` counts accumulated pair terms, so the second moment
    is normalized by ``N**2``.
    """
    Z_star = np.atleast_2d(np.asarray(Z_star, dtype=float))
    n = Z_star.shape[0]
    if n > ORACLE_MAX_N:
        raise UsageError(f"oracle is quadratic; N={n} exceeds {ORACLE_MAX_N}")
    pred = predict(model, Z_star)
    m_star, v_star = pred.mean, pred.variance
    noise = model.noise
    K_post = posterior_cov(model, Z_star, Z_star)
    floor = 0.0 if not min_bandwidth else min_bandwidth**2

    p_mean = np.zeros(support.S)
    for j in range(n):
        for l, y in enumerate(support.points):
            p_mean[l] += _normal_pdf(y, m_star[j], max(v_star[j] + noise, floor))
    p_mean /= n

    p_var = np.zeros(support.S)
    h = 0
    for j, (mu1, v1) in enumerate(zip(m_star, v_star)):
        for i, (mu2, v2) in enumerate(zip(m_star, v_star)):
            k = K_post[i, j]
            sigma = np.array([[max(v1 + noise, floor), k], [k, max(v2 + noise, floor)]])
            mu = np.array([mu1, mu2])
            for l, y in enumerate(support.points):
                p_var[l] += _bivariate_pdf(np.array([y, y]), mu, sigma)
            h += 1
    p_var = p_var / h - p_mean**2
    return p_mean, p_var

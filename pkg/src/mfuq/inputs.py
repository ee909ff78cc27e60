"""Input uncertainty: scalar random variables, discretized Gaussian random
fields and seeded Monte Carlo sample matrices."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from ._linalg import jittered_cholesky
from .errors import ConfigurationError, NumericError, UsageError

SCALAR_KINDS = ("uniform", "normal", "lognormal")


@dataclass(frozen=True)
class ScalarDistribution:
    """Univariate input law.

    ``uniform`` uses ``(a, b) = (lo, hi)``; ``normal`` and ``lognormal`` use
    ``(a, b) = (mu, sigma2)``, for lognormal the parameters of the underlying
    normal.
    """

    name: str
    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in SCALAR_KINDS:
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ConfigurationError(f"{self.name}: parameters must be finite")
        if self.kind == "uniform" and not self.a < self.b:
            raise ConfigurationError(f"{self.name}: uniform requires lo < hi, got {self.a}, {self.b}")
        if self.kind in ("normal", "lognormal") and not self.b > 0:
            raise ConfigurationError(f"{self.name}: variance must be positive, got {self.b}")

    @classmethod
    def uniform(cls, name, lo, hi):
        return cls(name, "uniform", float(lo), float(hi))

    @classmethod
    def normal(cls, name, mu, sigma2):
        return cls(name, "normal", float(mu), float(sigma2))

    @classmethod
    def lognormal(cls, name, mu, sigma2):
        return cls(name, "lognormal", float(mu), float(sigma2))

    def to_dict(self):
        keys = ("low", "high") if self.kind == "uniform" else ("mu", "sigma2")
        return {"type": self.kind, "name": self.name, keys[0]: self.a, keys[1]: self.b}


ArrayOrFn = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def _on_grid(value, grid, what):
    if callable(value):
        out = np.asarray(value(grid), dtype=float)
    else:
        out = np.broadcast_to(np.asarray(value, dtype=float), (grid.shape[0],)).copy()
    if out.shape != (grid.shape[0],):
        raise ConfigurationError(f"{what} must evaluate to one value per grid point")
    return out


@dataclass(frozen=True, eq=False)
class RandomFieldSpec:
    """Gaussian random field discretized on an explicit grid.

    The covariance is a stationary squared exponential with length scale
    ``length_scale`` scaled pointwise by ``amplitude`` (the local standard
    deviation), which makes it non-stationary.
    """

    name: str
    grid: np.ndarray
    mean: np.ndarray
    amplitude: np.ndarray
    length_scale: float
    jitter: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        if grid.ndim != 2 or grid.shape[0] < 1:
            raise ConfigurationError(f"{self.name}: grid must be a non-empty list of points")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mean", _on_grid(self.mean, grid, "mean"))
        object.__setattr__(self, "amplitude", _on_grid(self.amplitude, grid, "amplitude"))
        if not self.length_scale > 0:
            raise ConfigurationError(f"{self.name}: length scale must be positive")
        if np.any(self.amplitude < 0):
            raise ConfigurationError(f"{self.name}: amplitude must be non-negative")
        if self.jitter is not None and not self.jitter > 0:
            raise ConfigurationError(f"{self.name}: jitter must be positive")

    @property
    def n_pts(self):
        return self.grid.shape[0]

    @classmethod
    def equispaced(cls, name, n_pts, lo=0.0, hi=1.0, *, length_scale, mean=0.0, amplitude=1.0, **kw):
        grid = np.linspace(lo, hi, int(n_pts))
        return cls(name, grid, mean, amplitude, float(length_scale), **kw)

    def correlation(self):
        """Stationary part of the kernel (unit diagonal)."""
        sq = np.sum((self.grid[:, None, :] - self.grid[None, :, :]) ** 2, axis=-1)
        return np.exp(-0.5 * sq / self.length_scale**2)

    def to_dict(self):
        out = {
            "type": "field",
            "name": self.name,
            "grid": self.grid[:, 0].tolist() if self.grid.shape[1] == 1 else self.grid.tolist(),
            "mean": self.mean.tolist(),
            "amplitude": self.amplitude.tolist(),
            "length_scale": self.length_scale,
        }
        if self.jitter is not None:
            out["jitter"] = self.jitter
        return out


def inflow_field(name="inflow", n_pts=200, height=0.41, u_max=1.5, rel_amplitude=0.125, length_scale=None):
    """Parabolic channel inflow profile with a 12.5 % relative random perturbation."""
    y = np.linspace(0.0, height, int(n_pts))
    mu = u_max * 4.0 * y * (height - y) / height**2
    ell = 0.08 * height if length_scale is None else length_scale
    return RandomFieldSpec(name, y, mu, rel_amplitude * mu, ell, meta={"preset": "inflow"})


Block = Union[ScalarDistribution, RandomFieldSpec]


# --- random streams -------------------------------------------------------------

def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def block_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream for one named block derived from the root seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


# --- operations -----------------------------------------------------------------

def sample_scalar(dist: ScalarDistribution, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ConfigurationError("sample count must be at least 1")
    rng = _as_rng(seed)
    if dist.kind == "uniform":
        return rng.uniform(dist.a, dist.b, size=n)
    if dist.kind == "normal":
        return rng.normal(dist.a, np.sqrt(dist.b), size=n)
    return rng.lognormal(dist.a, np.sqrt(dist.b), size=n)


def field_covariance(spec: RandomFieldSpec) -> np.ndarray:
    amp = spec.amplitude
    cov = spec.correlation() * np.outer(amp, amp)  # exact symmetry: a_i*a_j == a_j*a_i
    if not np.all(np.isfinite(cov)):
        raise NumericError(f"field {spec.name!r}: non-finite covariance entry")
    return cov


def field_factor(spec: RandomFieldSpec) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T`` equal to the field covariance (plus jitter).

    The stationary correlation is factorized and then scaled row-wise by the
    amplitude, so points with zero amplitude stay exactly deterministic.
    """
    corr = spec.correlation()
    if spec.jitter is None:
        chol, _ = jittered_cholesky(corr, name=f"correlation matrix of field {spec.name!r}")
    else:
        chol, _ = jittered_cholesky(corr, name=f"correlation matrix of field {spec.name!r}",
                                    start=spec.jitter, stop=spec.jitter)
    return spec.amplitude[:, None] * chol


def sample_field(spec: RandomFieldSpec, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ConfigurationError("sample count must be at least 1")
    rng = _as_rng(seed)
    if not np.any(spec.amplitude):
        return np.tile(spec.mean, (n, 1))
    chol = field_factor(spec)
    r = rng.standard_normal((n, spec.n_pts))
    return spec.mean[None, :] + r @ chol.T


# --- sample matrices ------------------------------------------------------------

@dataclass(frozen=True)
class BlockLayout:
    kind: str  # "uncorrelated" or "field"
    name: str
    width: int


@dataclass(eq=False)
class SampleMatrix:
    data: np.ndarray
    layout: list
    seed: int
    specs: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if sum(b.width for b in self.layout) != self.data.shape[1]:
            raise UsageError("block widths do not add up to the number of columns")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]

    def block_slice(self, name):
        start = 0
        for b in self.layout:
            if b.name == name:
                return slice(start, start + b.width)
            start += b.width
        raise UsageError(f"no block named {name!r}")

    def block(self, name):
        return self.data[:, self.block_slice(name)]

    def columns(self):
        cols = []
        for b in self.layout:
            cols += [f"{b.kind}:{b.name}:{i}" for i in range(b.width)]
        return cols

    def rows(self, indices):
        return SampleMatrix(self.data[np.asarray(indices)], self.layout, self.seed, self.specs)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for row in self.data:
                writer.writerow([repr(float(v)) for v in row])
        sidecar = {
            "layout": [{"kind": b.kind, "name": b.name, "width": b.width} for b in self.layout],
            "seed": self.seed,
            "specs": self.specs,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        sidecar = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        layout = [BlockLayout(**b) for b in sidecar["layout"]]
        return cls(data, layout, sidecar["seed"], sidecar.get("specs", []))


def assemble_samples(blocks: Sequence[Block], n: int, seed: int) -> SampleMatrix:
    """Draw ``n`` joint samples; every block uses its own named stream."""
    if not blocks:
        raise UsageError("at least one input block is required")
    names = [b.name for b in blocks]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"block names must be unique: {names}")
    parts, layout = [], []
    for b in blocks:
        rng = block_rng(seed, b.name)
        if isinstance(b, ScalarDistribution):
            parts.append(sample_scalar(b, n, rng)[:, None])
            layout.append(BlockLayout("uncorrelated", b.name, 1))
        elif isinstance(b, RandomFieldSpec):
            parts.append(sample_field(b, n, rng))
            layout.append(BlockLayout("field", b.name, b.n_pts))
        else:
            raise UsageError(f"unsupported block type {type(b).__name__}")
    return SampleMatrix(np.hstack(parts), layout, int(seed), [b.to_dict() for b in blocks])


# --- config helpers -------------------------------------------------------------

def _field_profile(value, grid, lo, hi):
    """Mean/amplitude descriptors accepted in JSON configs."""
    if isinstance(value, dict):
        kind = value.get("kind")
        if kind == "parabolic":
            peak = float(value.get("peak", 1.0))
            return peak * 4.0 * (grid - lo) * (hi - grid) / (hi - lo) ** 2
        raise ConfigurationError(f"unknown profile kind {kind!r}")
    return value


def block_from_dict(d: dict) -> Block:
    d = dict(d)
    kind = d.get("type")
    name = d.get("name")
    if not name:
        raise ConfigurationError("every input block needs a name")
    try:
        if kind == "uniform":
            return ScalarDistribution.uniform(name, d["low"], d["high"])
        if kind in ("normal", "lognormal"):
            return ScalarDistribution(name, kind, float(d["mu"]), float(d["sigma2"]))
        if kind == "field":
            if d.get("preset") == "inflow":
                return inflow_field(name=name, n_pts=d.get("n_pts", 200))
            if "grid" in d:
                grid = np.asarray(d["grid"], dtype=float)
                lo, hi = float(np.min(grid)), float(np.max(grid))
            else:
                lo, hi = map(float, d.get("domain", (0.0, 1.0)))
                grid = np.linspace(lo, hi, int(d["n_pts"]))
            mean = _field_profile(d.get("mean", 0.0), grid, lo, hi)
            amp = d.get("amplitude", 1.0)
            if isinstance(amp, dict) and "relative" in amp:
                amp = float(amp["relative"]) * np.asarray(mean, dtype=float)
            else:
                amp = _field_profile(amp, grid, lo, hi)
            return RandomFieldSpec(name, grid, mean, amp, float(d["length_scale"]), d.get("jitter"))
    except KeyError as exc:
        raise ConfigurationError(f"block {name!r} is missing parameter {exc}") from None
    raise ConfigurationError(f"unknown block type {kind!r}")

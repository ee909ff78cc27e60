"""Theoretical cost ratios for numerically relaxed solvers and the overall
multi-fidelity speed-up against plain high-fidelity Monte Carlo."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError, UsageError

DEFAULT_CFL_EXPONENT = 1.5


@dataclass(frozen=True)
class CostSpec:
    """Discretization and solver settings of one model version.

    ``precision`` is 1 for double and 2 for single precision; ``cfl_exponent``
    is the power of ``k`` in the CFL time-step restriction.
    """

    k: int
    h: float
    d: int
    tol: float
    precision: int = 1
    cfl_exponent: float = DEFAULT_CFL_EXPONENT

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("polynomial degree must be >= 1")
        if not self.h > 0:
            raise ConfigurationError("mesh size must be positive")
        if self.d not in (1, 2, 3):
            raise ConfigurationError("spatial dimension must be 1, 2 or 3")
        if not 0 < self.tol < 1:
            raise ConfigurationError("solver tolerance must lie in (0, 1)")
        if self.precision not in (1, 2):
            raise ConfigurationError("precision factor must be 1 or 2")
        if not 1 <= self.cfl_exponent <= 2:
            raise ConfigurationError("CFL exponent must lie in [1, 2]")


def relative_cost(spec: CostSpec) -> float:
    """DoFs x time steps x iterations / efficiency, up to a common constant."""
    dofs = ((spec.k + 1) / spec.h) ** spec.d
    steps = spec.k**spec.cfl_exponent / spec.h
    iterations = -math.log(spec.tol)
    return dofs * steps * iterations / spec.precision


def lf_speedup(hf: CostSpec, lf: CostSpec, allow_dimension_change=False) -> float:
    if hf.d != lf.d and not allow_dimension_change:
        raise UsageError(f"HF and LF spatial dimensions differ ({hf.d} vs {lf.d})")
    return relative_cost(hf) / relative_cost(lf)


def mf_speedup(f_hf_lf, n_mc, n_train) -> float:
    """Cost of ``n_mc`` HF runs over ``n_mc`` LF runs plus ``n_train`` HF runs."""
    if f_hf_lf <= 0 or n_mc <= 0 or n_train <= 0:
        raise UsageError("speed-up inputs must be positive")
    return n_mc * f_hf_lf / (n_mc + n_train * f_hf_lf)


def _spec(d):
    return d if isinstance(d, CostSpec) else CostSpec(**d)


def speedup_table(rows):
    """Rows of ``{label, n_mc, n_train}`` plus either ``f_hf_lf`` or ``hf``/``lf``
    cost specs. Returns one dict per row with the LF and MF speed-ups."""
    out = []
    for row in rows:
        if "f_hf_lf" in row:
            f = float(row["f_hf_lf"])
        elif "hf" in row and "lf" in row:
            f = lf_speedup(_spec(row["hf"]), _spec(row["lf"]), row.get("allow_dimension_change", False))
        else:
            raise ConfigurationError(f"row {row.get('label')!r} needs f_hf_lf or hf/lf cost specs")
        n_mc, n_train = int(row["n_mc"]), int(row["n_train"])
        out.append({"label": row.get("label", ""), "f_hf_lf": f, "n_mc": n_mc, "n_train": n_train,
                    "speedup_mf": mf_speedup(f, n_mc, n_train)})
    return out


def write_speedup_csv(table, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["LF model", "f_HF/LF", "N_MC", "n_train", "speed-up MF"])
        for r in table:
            w.writerow([r["label"], f"{r['f_hf_lf']:g}", r["n_mc"], r["n_train"], f"{r['speedup_mf']:.2f}"])


DEFAULT_SPEEDUP_ROWS = [
    {"label": "LF 1", "f_hf_lf": 4.5, "n_mc": 7000, "n_train": 50},
    {"label": "LF 2", "f_hf_lf": 10, "n_mc": 7000, "n_train": 50},
    {"label": "LF 3", "f_hf_lf": 28, "n_mc": 7000, "n_train": 50},
]

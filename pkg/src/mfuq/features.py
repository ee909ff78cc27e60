"""Informative-feature discovery, the extended feature space and diverse
subset selection of high-fidelity training inputs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dimreduce import ReducedInputMatrix
from .errors import UsageError
from .inputs import SampleMatrix

DEFAULT_N_GAMMA = 2
DEFAULT_N_GAMMA_PLUS = 5


@dataclass(eq=False)
class FeatureRanking:
    scores: np.ndarray
    order: np.ndarray
    eligible: np.ndarray  # False for zero-variance columns


def rank_features(reduced: ReducedInputMatrix, y_lf, standardize_y=True) -> FeatureRanking:
    """Score every reduced-input column by ``|X^T y|``.

    With standardized columns and ``standardize_y`` this is ``N`` times the
    absolute Pearson correlation. Ties go to the lower column index; constant
    columns are ranked last and are never eligible.
    """
    y = np.asarray(y_lf, dtype=float).ravel()
    if y.shape[0] != reduced.data.shape[0]:
        raise UsageError(f"y_lf has {y.shape[0]} rows, reduced inputs have {reduced.data.shape[0]}")
    if standardize_y:
        sd = y.std()
        y = (y - y.mean()) / (sd if sd > 0 else 1.0)
    scores = np.abs(reduced.data.T @ y)
    eligible = ~np.asarray(reduced.zero_variance, dtype=bool)
    idx = np.arange(scores.size)
    order = np.lexsort((idx, -scores, ~eligible))
    return FeatureRanking(scores, order, eligible)


@dataclass(eq=False)
class FeatureSpace:
    """``z_matrix`` = [y_LF, gamma_1..gamma_n] and the wider ``gamma_plus`` block."""

    z_matrix: np.ndarray
    gamma_plus: np.ndarray
    selected_cols: list
    n_gamma: int
    n_gamma_plus: int
    labels: list

    def manifest(self):
        return {
            "n_gamma": self.n_gamma,
            "n_gamma_plus": self.n_gamma_plus,
            "selected_cols": [int(c) for c in self.selected_cols],
            "labels": list(self.labels),
        }


def build_feature_space(ranking: FeatureRanking, reduced: ReducedInputMatrix, y_lf,
                        n_gamma=DEFAULT_N_GAMMA, n_gamma_plus=DEFAULT_N_GAMMA_PLUS) -> FeatureSpace:
    y = np.asarray(y_lf, dtype=float).ravel()
    if not 0 <= n_gamma <= n_gamma_plus:
        raise UsageError(f"need 0 <= n_gamma <= n_gamma_plus, got {n_gamma}, {n_gamma_plus}")
    n_eligible = int(np.count_nonzero(ranking.eligible))
    if n_gamma_plus > n_eligible:
        raise UsageError(
            f"n_gamma_plus={n_gamma_plus} exceeds the {n_eligible} usable reduced-input columns")
    if y.shape[0] != reduced.data.shape[0]:
        raise UsageError("y_lf length does not match the reduced inputs")
    cols = [int(c) for c in ranking.order[:n_gamma_plus]]
    gamma_plus = reduced.data[:, cols]
    z = np.column_stack([y, gamma_plus[:, :n_gamma]])
    labels = [reduced.labels[c] if c < len(reduced.labels) else f"col{c}" for c in cols]
    return FeatureSpace(z, gamma_plus, cols, n_gamma, n_gamma_plus, labels)


def select_diverse_subset(points, n_train) -> np.ndarray:
    """Greedy max-min (farthest point) subset of the rows of ``points``.

    Starts at the row nearest the coordinate-wise median and repeatedly adds
    the row farthest from the current selection. Deterministic, and the
    selection for a smaller ``n_train`` is a prefix of a larger one.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if not 1 <= n_train <= n:
        raise UsageError(f"cannot select {n_train} points out of {n}")
    median = np.median(pts, axis=0)
    first = int(np.argmin(np.sum((pts - median) ** 2, axis=1)))
    chosen = [first]
    dist = np.sum((pts - pts[first]) ** 2, axis=1)
    dist[first] = -1.0
    for _ in range(n_train - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
        dist[chosen] = -1.0
    return np.array(chosen, dtype=int)


def selection_space(feature_space: FeatureSpace) -> np.ndarray:
    """Points used for training selection: the standardized gamma-plus columns,
    or the standardized LF output when no features are requested."""
    if feature_space.n_gamma_plus > 0:
        return feature_space.gamma_plus
    y = feature_space.z_matrix[:, 0]
    sd = y.std()
    return ((y - y.mean()) / (sd if sd > 0 else 1.0))[:, None]


@dataclass(eq=False)
class TrainingSet:
    X: np.ndarray
    Z_LF: np.ndarray
    Y_HF: np.ndarray
    selection_indices: np.ndarray
    feature_manifest: dict

    @property
    def n_train(self):
        return self.Y_HF.shape[0]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, arr in (("X", self.X), ("Z_LF", self.Z_LF), ("Y_HF", self.Y_HF[:, None])):
            with (directory / f"{name}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                for row in arr:
                    w.writerow([repr(float(v)) for v in row])
        manifest = {"indices": [int(i) for i in self.selection_indices], **self.feature_manifest}
        (directory / "training_set.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = json.loads((directory / "training_set.json").read_text())
        X = np.loadtxt(directory / "X.csv", delimiter=",", ndmin=2)
        Z = np.loadtxt(directory / "Z_LF.csv", delimiter=",", ndmin=2)
        Y = np.loadtxt(directory / "Y_HF.csv", delimiter=",", ndmin=1)
        idx = np.array(manifest.pop("indices"), dtype=int)
        return cls(X, Z, Y, idx, manifest)


def assemble_training_set(samples: SampleMatrix, feature_space: FeatureSpace, indices, y_hf,
                          max_fraction=0.1) -> TrainingSet:
    """Gather the selected rows of inputs and features next to the HF outputs.

    ``max_fraction`` bounds ``n_train / N_sample`` (the small-data regime);
    pass ``None`` to disable the check.
    """
    idx = np.asarray(indices, dtype=int).ravel()
    y = np.asarray(y_hf, dtype=float).ravel()
    n = samples.n
    if y.shape[0] != idx.shape[0]:
        raise UsageError(f"{y.shape[0]} HF outputs supplied for {idx.shape[0]} selected inputs")
    if feature_space.z_matrix.shape[0] != n:
        raise UsageError("feature space and sample matrix have different row counts")
    if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
        raise UsageError("selection indices out of range")
    if np.unique(idx).size != idx.size:
        raise UsageError("selection indices must be distinct")
    if max_fraction is not None and idx.size > max_fraction * n:
        raise UsageError(f"n_train={idx.size} exceeds {max_fraction:g} * N_sample={n}")
    return TrainingSet(samples.data[idx], feature_space.z_matrix[idx], y, idx, feature_space.manifest())

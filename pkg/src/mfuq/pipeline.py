"""Staged, artifact-persisting orchestration of the multi-fidelity estimate.

Stages run in order ``sample -> lf -> select -> fit -> predict -> metrics``.
Each stage writes its outputs plus a manifest ``stage_<name>.json`` holding a
fingerprint of the config fields it depends on (chained through its
predecessor) and sha256 hashes of the files it wrote. A stage whose manifest
matches the current config and whose files are intact is skipped.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bmfmc import DensityPrediction, SupportGrid, posterior_statistics
from .dimreduce import reduce_inputs
from .errors import ConfigurationError, MissingArtifactError, UsageError
from .features import (TrainingSet, assemble_training_set, build_feature_space, rank_features,
                       select_diverse_subset, selection_space)
from .gp import GaussianProcessModel, fit, predict
from .harness import REFERENCE_N, REFERENCE_SEED, SyntheticFamily, evaluate, make_family, reference_samples
from .inputs import RandomFieldSpec, SampleMatrix, assemble_samples, block_from_dict
from .metrics import append_metric, kde_fit, kld, mc_standard_error, silverman_bandwidth

log = logging.getLogger(__name__)

VERSION = f"v{__version__}"
STAGES = ("sample", "lf", "select", "fit", "predict", "metrics")


@dataclass
class RunConfig:
    inputs: list | None = None
    model: dict = field(default_factory=lambda: {"family": "hidden-bimodal", "knobs": {}})
    n_sample: int = 10_000
    n_train: int = 50
    n_gamma: int = 2
    n_gamma_plus: int = 5
    n_variance: int = 500
    support: dict = field(default_factory=lambda: {"n_points": 200, "pad": 0.15})
    bandwidth_mode: str = "silverman"
    seed: int = 0
    gp_seed: int | None = None
    restarts: int = 8
    mean_mode: str = "lf-passthrough"
    ard: bool = False
    min_bandwidth: str | float | None = "auto"
    kle_threshold: float = 0.95
    kle_max_order: int | None = None
    reference_seed: int = REFERENCE_SEED
    n_ref: int = REFERENCE_N
    out: str = "mfuq_run"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n_sample", "n_train", "n_variance", "restarts", "n_ref"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_gamma < 0 or self.n_gamma_plus < 0:
            raise ConfigurationError("feature counts must be non-negative")
        if self.n_train > self.n_sample / 10:
            raise ConfigurationError(f"n_train={self.n_train} exceeds N_sample/10 = {self.n_sample / 10:g}")
        if self.n_gamma > self.n_gamma_plus:
            raise ConfigurationError(f"n_gamma={self.n_gamma} exceeds n_gamma_plus={self.n_gamma_plus}")
        if not isinstance(self.model, dict) or not ({"family"} <= self.model.keys() or {"csv"} <= self.model.keys()):
            raise ConfigurationError("model needs either a 'family' or a 'csv' entry")
        if "csv" in self.model and not self.inputs:
            raise ConfigurationError("external-CSV mode needs explicit input blocks")
        if self.bandwidth_mode not in ("silverman", "cv-grid"):
            raise ConfigurationError(f"unknown bandwidth mode {self.bandwidth_mode!r}")
        if not (self.min_bandwidth is None or self.min_bandwidth == "auto"
                or (isinstance(self.min_bandwidth, (int, float)) and self.min_bandwidth > 0)):
            raise ConfigurationError("min_bandwidth must be 'auto', null or a positive number")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(d)

    def config_hash(self):
        d = self.to_dict()
        d.pop("out")
        return _hash_json(d)


STAGE_KEYS = {
    "sample": ("inputs", "model", "n_sample", "seed"),
    "lf": ("model",),
    "select": ("model", "n_train", "n_gamma", "n_gamma_plus", "kle_threshold", "kle_max_order"),
    "fit": ("gp_seed", "restarts", "mean_mode", "ard"),
    "predict": ("support", "n_variance", "min_bandwidth", "bandwidth_mode", "n_ref", "reference_seed"),
    "metrics": (),
}


def _hash_json(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(path, payload):
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def fingerprint(config: RunConfig, stage: str) -> str:
    """Hash of the config fields a stage depends on, chained through its predecessors."""
    d = config.to_dict()
    prev = STAGES.index(stage)
    parent = fingerprint(config, STAGES[prev - 1]) if prev else ""
    fields = {k: d[k] for k in STAGE_KEYS[stage]}
    csv_path = config.model.get("csv")
    if stage in ("lf", "select") and csv_path and Path(csv_path).exists():
        fields["csv_sha256"] = _file_hash(csv_path)
    return _hash_json({"stage": stage, "parent": parent, "fields": fields})


# --- run context --------------------------------------------------------------

class Run:
    """Binds a config to its output directory."""

    def __init__(self, config: RunConfig, family: SyntheticFamily | None = None):
        self.config = config
        self.out = Path(config.out)
        self._family = family

    # model handle -----------------------------------------------------------
    @property
    def family(self):
        if "family" not in self.config.model:
            return None
        if self._family is None:
            self._family = make_family(self.config.model["family"], **self.config.model.get("knobs", {}))
        return self._family

    def blocks(self):
        if self.config.inputs:
            return [block_from_dict(b) for b in self.config.inputs]
        return self.family.blocks

    def field_specs(self):
        return {b.name: b for b in self.blocks() if isinstance(b, RandomFieldSpec)}

    def _external_column(self, column):
        spec = self.config.model
        path = Path(spec["csv"])
        if not path.exists():
            raise MissingArtifactError(f"external model CSV {path} not found")
        data = np.genfromtxt(path, delimiter=",", names=True)
        name = spec.get(column, column)
        if name not in data.dtype.names:
            raise ConfigurationError(f"external CSV {path} has no column {name!r}")
        values = np.asarray(data[name], dtype=float)
        if values.size != self.config.n_sample:
            raise UsageError(f"external CSV has {values.size} rows, N_sample is {self.config.n_sample}")
        return values

    def run_model(self, which, X: SampleMatrix, indices=None):
        """Evaluate the model for all rows (LF) or the selected rows (HF)."""
        if self.family is not None:
            return evaluate(self.family, which, X if indices is None else X.rows(indices))
        values = self._external_column("y_lf" if which == "LF" else "y_hf")
        values = values if indices is None else values[np.asarray(indices)]
        if not np.all(np.isfinite(values)):
            raise UsageError(f"external CSV lacks finite {which} values for the requested rows")
        return values

    # artifacts --------------------------------------------------------------
    def path(self, name):
        return self.out / name

    def manifest_path(self, stage):
        return self.path(f"stage_{stage}.json")

    def is_current(self, stage):
        mp = self.manifest_path(stage)
        if not mp.exists():
            return False
        m = json.loads(mp.read_text())
        if m.get("fingerprint") != fingerprint(self.config, stage):
            return False
        if m.get("parent_outputs") != self._parent_outputs(stage):
            return False
        return all(self.path(f).exists() and _file_hash(self.path(f)) == h for f, h in m["outputs"].items())

    def _parent_outputs(self, stage):
        i = STAGES.index(stage)
        if not i:
            return {}
        mp = self.manifest_path(STAGES[i - 1])
        return json.loads(mp.read_text())["outputs"] if mp.exists() else None

    def require(self, stage):
        if not self.is_current(stage):
            state = "missing" if not self.manifest_path(stage).exists() else "stale"
            raise MissingArtifactError(
                f"artifacts of stage '{stage}' in {self.out} are {state}; run `mfuq {stage}` first")

    def write_manifest(self, stage, outputs, **extra):
        payload = {
            "stage": stage,
            "fingerprint": fingerprint(self.config, stage),
            "config_hash": self.config.config_hash(),
            "version": VERSION,
            "outputs": {f: _file_hash(self.path(f)) for f in outputs},
            "parent_outputs": self._parent_outputs(stage),
            **extra,
        }
        _dump(self.manifest_path(stage), payload)
        return payload

    def stamp(self):
        return {"config_hash": self.config.config_hash(), "version": VERSION}


# --- stages -------------------------------------------------------------------

def stage_sample(run: Run):
    cfg = run.config
    X = assemble_samples(run.blocks(), cfg.n_sample, cfg.seed)
    X.to_csv(run.path("samples.csv"))
    return ["samples.csv", "samples.json"], {}


def stage_lf(run: Run):
    X = SampleMatrix.from_csv(run.path("samples.csv"))
    y_lf = run.run_model("LF", X)
    np.savetxt(run.path("y_lf.csv"), y_lf, fmt="%.17g")
    return ["y_lf.csv"], {"lf_mc_mean": float(np.mean(y_lf)), "lf_mc_std": float(np.std(y_lf, ddof=1))}


def stage_select(run: Run):
    cfg = run.config
    X = SampleMatrix.from_csv(run.path("samples.csv"))
    y_lf = np.loadtxt(run.path("y_lf.csv"), ndmin=1)
    reduced, bases = reduce_inputs(X, run.field_specs(), cfg.kle_threshold, cfg.kle_max_order)
    ranking = rank_features(reduced, y_lf)
    fs = build_feature_space(ranking, reduced, y_lf, cfg.n_gamma, cfg.n_gamma_plus)
    idx = select_diverse_subset(selection_space(fs), cfg.n_train)
    hf_before = run.family.ledger.hf_calls if run.family is not None else 0
    y_hf = run.run_model("HF", X, idx)
    hf_calls = (run.family.ledger.hf_calls - hf_before) if run.family is not None else int(idx.size)
    ts = assemble_training_set(X, fs, idx, y_hf)
    ts.save(run.path("training"))
    np.savetxt(run.path("z_lf.csv"), fs.z_matrix, delimiter=",", fmt="%.17g")
    _dump(run.path("features.json"), {
        **fs.manifest(),
        "scores": [float(s) for s in ranking.scores],
        "ranking": [int(i) for i in ranking.order],
        "reduced_labels": list(reduced.labels),
        "kle_orders": {name: b.n_trunc for name, b in sorted(bases.items())},
        **run.stamp(),
    })
    outputs = ["z_lf.csv", "features.json"] + [f"training/{f}" for f in
                                                ("X.csv", "Z_LF.csv", "Y_HF.csv", "training_set.json")]
    return outputs, {"hf_calls": hf_calls}


def stage_fit(run: Run):
    cfg = run.config
    ts = TrainingSet.load(run.path("training"))
    seed = cfg.seed if cfg.gp_seed is None else cfg.gp_seed
    model = fit(ts.Z_LF, ts.Y_HF, cfg.mean_mode, cfg.restarts, seed, cfg.ard)
    _dump(run.path("gp_model.json"), {**model.to_json(), **run.stamp()})
    return ["gp_model.json"], {"params": model.params.to_dict()}


def load_model(run: Run) -> GaussianProcessModel:
    return GaussianProcessModel.from_json(json.loads(run.path("gp_model.json").read_text()))


def build_support(spec: dict, y_lf, y_hf) -> SupportGrid:
    """Explicit ``lo``/``hi`` bounds, or a padded grid over the pooled LF and HF outputs."""
    spec = dict(spec or {})
    n_points = int(spec.get("n_points", 200))
    if "lo" in spec and "hi" in spec:
        return SupportGrid(np.linspace(float(spec["lo"]), float(spec["hi"]), n_points))
    return SupportGrid.covering(y_lf, y_hf, n_points=n_points, pad=float(spec.get("pad", 0.15)))


def resolve_min_bandwidth(setting, pred_mean):
    if setting == "auto":
        return float(silverman_bandwidth(pred_mean))
    return None if setting is None else float(setting)


def stage_predict(run: Run):
    cfg = run.config
    model = load_model(run)
    Z = np.loadtxt(run.path("z_lf.csv"), delimiter=",", ndmin=2)
    y_lf = np.loadtxt(run.path("y_lf.csv"), ndmin=1)
    pred = predict(model, Z)
    y_hf = np.loadtxt(run.path("training/Y_HF.csv"), ndmin=1)
    support = build_support(cfg.support, y_lf, y_hf)
    h_min = resolve_min_bandwidth(cfg.min_bandwidth, pred.mean)
    density = posterior_statistics(model, Z, support, cfg.n_variance, h_min)
    density.metadata.update({"min_bandwidth": h_min, "model_hash": model.content_hash(), **run.stamp()})
    density.save(run.path("density.json"))
    outputs = ["density.json"]
    reference = None
    if run.family is not None:
        y_ref = reference_samples(run.family, run.blocks(), cfg.n_ref, cfg.reference_seed)
        kde = kde_fit(y_ref, cfg.bandwidth_mode)
        reference = kde(support.points)
        _dump(run.path("reference.json"), {
            "support": support.points.tolist(), "density": reference.tolist(), "n_ref": cfg.n_ref,
            "seed": cfg.reference_seed, "bandwidth": kde.bandwidth, "bandwidth_mode": cfg.bandwidth_mode,
            **run.stamp(),
        })
        outputs.append("reference.json")
    density.write_plot_bundle(run.path("plot_bundle.csv"), reference)
    outputs.append("plot_bundle.csv")
    return outputs, {}


def stage_metrics(run: Run):
    cfg = run.config
    density = DensityPrediction.from_json(json.loads(run.path("density.json").read_text()))
    y_lf = np.loadtxt(run.path("y_lf.csv"), ndmin=1)
    ledger = run.path("metrics.jsonl")
    ledger.unlink(missing_ok=True)
    stamp = run.stamp()
    sd = float(np.std(y_lf, ddof=1))
    append_metric(ledger, "lf_mc_standard_error", mc_standard_error(sd, y_lf.size), y_lf, **stamp)
    append_metric(ledger, "mean_density_integral", density.integral(), density.mean, **stamp)
    append_metric(ledger, "variance_min_preclamp", density.metadata.get("variance_min_preclamp", 0.0),
                  density.variance, **stamp)
    ref_path = run.path("reference.json")
    if ref_path.exists():
        ref = np.array(json.loads(ref_path.read_text())["density"])
        append_metric(ledger, "kld_reference_vs_mean", kld(ref, density.mean, density.support),
                      ref, density.mean, **stamp)
    return ["metrics.jsonl"], {}


STAGE_FUNCS = {
    "sample": stage_sample, "lf": stage_lf, "select": stage_select,
    "fit": stage_fit, "predict": stage_predict, "metrics": stage_metrics,
}


def run_stage(run: Run, stage: str, force=False):
    """Run one stage if needed. Returns True when it recomputed."""
    if stage not in STAGE_FUNCS:
        raise UsageError(f"unknown stage {stage!r}")
    i = STAGES.index(stage)
    if i:
        run.require(STAGES[i - 1])
    if not force and run.is_current(stage):
        log.info("stage %s is up to date", stage)
        return False
    run.out.mkdir(parents=True, exist_ok=True)
    outputs, extra = STAGE_FUNCS[stage](run)
    run.write_manifest(stage, outputs, **extra)
    log.info("stage %s done", stage)
    return True


def run_pipeline(config: RunConfig, family: SyntheticFamily | None = None, force=False, until="metrics"):
    """Run every stage up to ``until``; returns the names of stages that recomputed."""
    run = Run(config, family)
    done = []
    for stage in STAGES[: STAGES.index(until) + 1]:
        if run_stage(run, stage, force=force):
            done.append(stage)
    return done

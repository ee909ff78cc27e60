import json

import numpy as np
import pytest

from mfuq.bmfmc import DensityPrediction
from mfuq.errors import ConfigurationError, MissingArtifactError, UsageError
from mfuq.harness import make_family
from mfuq.inputs import assemble_samples
from mfuq.pipeline import STAGES, Run, RunConfig, fingerprint, run_pipeline, run_stage

SMALL = dict(n_sample=2000, n_train=30, n_ref=20000, n_variance=200)


def small_config(tmp_path, name="run", **kw):
    return RunConfig(**{**SMALL, "out": str(tmp_path / name), **kw})


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    cfg = RunConfig(**{**SMALL, "out": str(tmp_path_factory.mktemp("p") / "run")})
    fam = make_family("hidden-bimodal")
    done = run_pipeline(cfg, family=fam)
    return cfg, fam, done


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ConfigurationError):
            RunConfig(n_sample=100, n_train=11)
        with pytest.raises(ConfigurationError):
            RunConfig(n_gamma=3, n_gamma_plus=2)
        with pytest.raises(ConfigurationError):
            RunConfig(n_variance=0)
        with pytest.raises(ConfigurationError):
            RunConfig(model={"csv": "x.csv"})
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict({"n_samples": 10})

    def test_load_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigurationError):
            RunConfig.load(bad)
        with pytest.raises(ConfigurationError):
            RunConfig.load(tmp_path / "absent.json")

    def test_hash_ignores_output_dir(self):
        assert RunConfig(out="a").config_hash() == RunConfig(out="b").config_hash()
        assert RunConfig(seed=1).config_hash() != RunConfig(seed=2).config_hash()

    def test_fingerprint_chaining(self):
        a, b = RunConfig(), RunConfig(restarts=4)
        assert fingerprint(a, "select") == fingerprint(b, "select")
        assert fingerprint(a, "fit") != fingerprint(b, "fit")
        assert fingerprint(a, "metrics") != fingerprint(b, "metrics")


class TestEndToEnd:
    def test_artifacts(self, finished_run):
        cfg, _, done = finished_run
        assert done == list(STAGES)
        out = Run(cfg).out
        for name in ("density.json", "plot_bundle.csv", "metrics.jsonl", "reference.json", "gp_model.json"):
            assert (out / name).exists()
        density = DensityPrediction.from_json(json.loads((out / "density.json").read_text()))
        assert density.metadata["config_hash"] == cfg.config_hash()
        assert density.metadata["version"].startswith("v")
        assert np.all(density.mean >= 0) and np.all(density.variance >= 0)
        header = (out / "plot_bundle.csv").read_text().splitlines()[0]
        assert header == "support,mean,lower,upper,reference"
        metrics = {json.loads(line)["metric"]: json.loads(line)
                   for line in (out / "metrics.jsonl").read_text().splitlines()}
        assert set(metrics) == {"lf_mc_standard_error", "mean_density_integral", "variance_min_preclamp",
                                "kld_reference_vs_mean"}
        assert 0.95 <= metrics["mean_density_integral"]["value"] <= 1.0 + 1e-9
        assert metrics["variance_min_preclamp"]["value"] >= -1e-8

    def test_hf_budget(self, finished_run):
        cfg, fam, _ = finished_run
        assert fam.ledger.hf_calls == cfg.n_train
        manifest = json.loads((Run(cfg).out / "stage_select.json").read_text())
        assert manifest["hf_calls"] == cfg.n_train

    def test_idempotent(self, finished_run):
        cfg, _, _ = finished_run
        out = Run(cfg).out
        before = {p.name: p.read_bytes() for p in out.rglob("*") if p.is_file()}
        fam = make_family("hidden-bimodal")
        assert run_pipeline(cfg, family=fam) == []
        assert fam.ledger.hf_calls == 0
        after = {p.name: p.read_bytes() for p in out.rglob("*") if p.is_file()}
        assert before == after

    def test_force_recomputes_identically(self, finished_run):
        cfg, _, _ = finished_run
        density = (Run(cfg).out / "density.json").read_bytes()
        assert run_stage(Run(cfg), "predict", force=True)
        assert (Run(cfg).out / "density.json").read_bytes() == density


class TestArtifactChecks:
    def test_missing_predecessor(self, tmp_path):
        with pytest.raises(MissingArtifactError, match="sample"):
            run_stage(Run(small_config(tmp_path)), "lf")

    def test_stale_after_config_change(self, tmp_path):
        cfg = small_config(tmp_path)
        run_pipeline(cfg, until="lf")
        changed = cfg.replace(seed=5)
        with pytest.raises(MissingArtifactError, match="stale"):
            run_stage(Run(changed), "select")

    def test_tampered_output(self, tmp_path):
        cfg = small_config(tmp_path)
        run_pipeline(cfg, until="lf")
        (tmp_path / "run" / "y_lf.csv").write_text("0\n")
        with pytest.raises(MissingArtifactError):
            run_stage(Run(cfg), "select")
        assert run_pipeline(cfg, until="lf") == ["lf"]

    def test_upstream_rerun_invalidates(self, tmp_path):
        cfg = small_config(tmp_path)
        run_pipeline(cfg, until="select")
        run_stage(Run(cfg), "lf", force=True)
        # same bytes, so select stays current
        assert Run(cfg).is_current("select")
        (tmp_path / "run" / "stage_lf.json").unlink()
        assert not Run(cfg).is_current("select")


def test_external_csv_matches_harness(tmp_path):
    fam = make_family("noisy-linear")
    harness_cfg = small_config(tmp_path, "harness", model={"family": "noisy-linear", "knobs": {}})
    run_pipeline(harness_cfg, until="predict")

    X = assemble_samples(fam.blocks, harness_cfg.n_sample, harness_cfg.seed)
    csv_path = tmp_path / "outputs.csv"
    np.savetxt(csv_path, np.column_stack([fam.lf_fn(X), fam.hf_fn(X)]), delimiter=",", fmt="%.17g",
               header="y_lf,y_hf", comments="")
    inputs = [b.to_dict() for b in fam.blocks]
    csv_cfg = small_config(tmp_path, "external", model={"csv": str(csv_path)}, inputs=inputs)
    run_pipeline(csv_cfg)

    a = json.loads((tmp_path / "harness" / "density.json").read_text())
    b = json.loads((tmp_path / "external" / "density.json").read_text())
    for key in ("support", "mean", "variance"):
        assert a[key] == b[key]
    assert not (tmp_path / "external" / "reference.json").exists()


def test_external_csv_row_mismatch(tmp_path):
    fam = make_family("noisy-linear")
    csv_path = tmp_path / "short.csv"
    csv_path.write_text("y_lf,y_hf\n1,2\n")
    cfg = small_config(tmp_path, model={"csv": str(csv_path)}, inputs=[b.to_dict() for b in fam.blocks])
    run_pipeline(cfg, until="sample")
    with pytest.raises(UsageError, match="rows"):
        run_stage(Run(cfg), "lf")


def test_external_csv_needs_hf_only_for_training_rows(tmp_path):
    fam = make_family("noisy-linear")
    harness_cfg = small_config(tmp_path, "harness", model={"family": "noisy-linear", "knobs": {}})
    run_pipeline(harness_cfg, until="select")
    chosen = json.loads((tmp_path / "harness" / "training" / "training_set.json").read_text())["indices"]

    X = assemble_samples(fam.blocks, harness_cfg.n_sample, harness_cfg.seed)
    y_lf, y_hf = fam.lf_fn(X), fam.hf_fn(X)
    keep = set(chosen)
    lines = ["y_lf,y_hf"] + [f"{float(a)!r}," + (repr(float(b)) if i in keep else "")
                             for i, (a, b) in enumerate(zip(y_lf, y_hf))]
    csv_path = tmp_path / "sparse.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    cfg = small_config(tmp_path, "sparse", model={"csv": str(csv_path)}, inputs=[b.to_dict() for b in fam.blocks])
    run_pipeline(cfg, until="fit")
    a = json.loads((tmp_path / "harness" / "training" / "training_set.json").read_text())
    b = json.loads((tmp_path / "sparse" / "training" / "training_set.json").read_text())
    assert a["indices"] == b["indices"]

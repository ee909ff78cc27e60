import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record a one-line pass/fail verdict; the lines are echoed at session end."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def fit_family_gp(family, n_sample=2000, n_train=40, n_gamma=0, n_gamma_plus=5, seed=0):
    """Sample, run LF, select training rows and fit the GP, all in memory."""
    from mfuq.dimreduce import reduce_inputs
    from mfuq.features import build_feature_space, rank_features, select_diverse_subset, selection_space
    from mfuq.gp import fit
    from mfuq.harness import evaluate
    from mfuq.inputs import RandomFieldSpec, assemble_samples

    X = assemble_samples(family.blocks, n_sample, seed)
    y_lf = evaluate(family, "LF", X)
    specs = {b.name: b for b in family.blocks if isinstance(b, RandomFieldSpec)}
    reduced, _ = reduce_inputs(X, specs)
    fs = build_feature_space(rank_features(reduced, y_lf), reduced, y_lf, n_gamma, n_gamma_plus)
    idx = select_diverse_subset(selection_space(fs), n_train)
    model = fit(fs.z_matrix[idx], evaluate(family, "HF", X.rows(idx)), seed=seed)
    return model, fs

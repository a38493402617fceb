import math
import os

import numpy as np
import pytest

from frag_explore.rng import SEED_ENV, derive_key, make_rng, resolve_seed
from frag_explore.stats import (EstimatorReport, bootstrap, hill_estimator, jackknife,
                                report_mean, tail_bracket)


def test_jackknife_mean_is_standard_error():
    x = np.random.default_rng(0).normal(size=500)
    est, se = jackknife(x, np.mean)
    assert est == pytest.approx(x.mean())
    assert se == pytest.approx(x.std(ddof=1) / math.sqrt(500))


def test_report_flags_truncation():
    r = report_mean(np.ones(200), truncated_fraction=0.5)
    assert not r.valid and "truncated" in r.note
    with pytest.raises(ValueError):
        EstimatorReport(1.0, -1.0, 3, None)


def test_bootstrap_drops_failed_replicates():
    def stat(x):
        if x.sum() > 5:
            raise RuntimeError("no root")
        return x.mean()
    _, _, reps = bootstrap(np.arange(10) % 2, stat, 100, rng=1)
    assert 0 < len(reps) < 100


def test_hill_on_pareto():
    x = np.random.default_rng(1).pareto(3.0, 200000) + 1.0
    idx, se, k = hill_estimator(x, 2.0)
    assert abs(idx - 3.0) < 4 * se
    lo, hi = tail_bracket(x, np.geomspace(2, 10, 5), 3.0)
    assert 0.8 < lo <= hi < 1.2


def test_streams(monkeypatch):
    assert derive_key(1, 2, 3) == derive_key(1, 2, 3)
    assert derive_key(1, 2, 3) != derive_key(1, 2, 4)
    assert make_rng(5, 1).random() == make_rng(5, 1).random()
    monkeypatch.setenv(SEED_ENV, "77")
    assert resolve_seed(42) == 77
    monkeypatch.delenv(SEED_ENV)
    assert resolve_seed(42) == 42

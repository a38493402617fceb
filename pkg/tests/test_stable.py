import math

import numpy as np
import pytest

from frag_explore.relations import DomainError
from frag_explore.rng import make_rng
from frag_explore.stable import (StableJumpLaw, compensator_drift, positivity_parameter,
                                 sample_jump_ppp, sample_path, terminal_values)


@pytest.fixture
def law():
    return StableJumpLaw(4 / 3, 0.5, 1.0)


def test_bad_laws():
    with pytest.raises(DomainError):
        StableJumpLaw(2.5, 1.0, 1.0)
    with pytest.raises(DomainError):
        StableJumpLaw(1.5, -1.0, 1.0)


def test_band_counts_match_ppp_mean(law):
    rng = make_rng(1, 0)
    n, T, cut = 2000, 1.0, 0.05
    counts = np.zeros(2)
    for _ in range(n):
        j = sample_jump_ppp(law, T, cut, rng=rng)
        counts[0] += np.count_nonzero(j["sign"] > 0)
        counts[1] += np.count_nonzero(j["sign"] < 0)
    for k, sign in enumerate((1, -1)):
        mean = law.band_mass(cut, math.inf, sign) * T * n
        assert abs(counts[k] - mean) < 4 * math.sqrt(mean)


def test_jumps_sorted_and_above_cut(law):
    j = sample_jump_ppp(law, 2.0, 0.01, rng=make_rng(2, 0))
    assert np.all(np.diff(j["time"]) >= 0)
    assert np.all(j["size"] >= 0.01)
    assert np.all((j["time"] > 0) & (j["time"] <= 2.0))


def test_path_is_compensated(law):
    p = sample_path(law, 1.0, 0.01, rng=make_rng(3, 0))
    assert p.drift_rate == pytest.approx(compensator_drift(law, 0.01))
    assert p.value_at(0.0) == 0.0
    assert p.terminal == pytest.approx(p.drift_rate + (p.jumps["size"] * p.jumps["sign"]).sum())


def test_terminal_mean_zero(law):
    x = terminal_values(law, 1.0, 0.01, 20000, seed=5)
    # infinite variance in principle; with a 20k sample the mean is still within a few s.e.
    assert abs(x.mean()) < 5 * x.std() / math.sqrt(len(x))


def test_terminal_values_replicate_isolation(law):
    a = terminal_values(law, 1.0, 0.02, 50, seed=9)
    b = terminal_values(law, 1.0, 0.02, 80, seed=9)
    assert np.array_equal(a, b[:50])


def test_positivity_parameter():
    a = 4 / 3
    assert positivity_parameter(1.0, a) == pytest.approx(0.5)
    assert positivity_parameter(0.0, a) == pytest.approx(1 - 1 / a)
    P = positivity_parameter(0.5, a)
    assert math.sin(math.pi * a * (1 - P)) == pytest.approx(0.5 * math.sin(math.pi * a * P))

import math

import numpy as np
import pytest

from frag_explore.explore import (DiskRates, disk_batch, disk_jump_rate, rn_weight,
                                  sample_disk_chordal, sample_disk_policy, total_jump_rate)
from frag_explore.relations import DomainError, derive_relations, intensity_split


@pytest.fixture
def rates():
    return DiskRates.from_kappa(3.0)


def test_rate_shape(rates):
    a1 = rates.alpha + 1
    y, l = 1.0, 0.1
    assert disk_jump_rate(rates, y, l, 1) == pytest.approx(rates.a_plus / (l ** a1 * 1.1 ** a1))
    assert disk_jump_rate(rates, y, l, -1) == pytest.approx(rates.a_minus / (l ** a1 * 0.9 ** a1))
    # follow-largest: a split never leaves less than half
    assert disk_jump_rate(rates, y, 0.6, -1) == 0.0
    with pytest.raises(DomainError):
        disk_jump_rate(rates, -1.0, 0.1, 1)


def test_rate_scaling(rates):
    # self-similar of index alpha: rate(c y, c l) = c^{-(alpha+1)} rate(y, l)
    for s in (1, -1):
        r1 = disk_jump_rate(rates, 1.0, 0.2, s)
        r2 = disk_jump_rate(rates, 3.0, 0.6, s)
        assert r2 == pytest.approx(r1 * 3.0 ** -(rates.alpha + 1))
    t1 = total_jump_rate(rates, 1.0, 0.05)
    t2 = total_jump_rate(rates, 2.0, 0.1)
    assert t2 == pytest.approx(t1 * 2.0 ** -rates.alpha, rel=1e-6)


def test_rn_weight(rates):
    assert rn_weight(rates, 2.0, 1.0) == pytest.approx(2.0 ** (rates.alpha + 1))


def test_policy_path(rates):
    p = sample_disk_policy(rates, 1.0, 1.0, 0.05, 0.01, seed=4)
    ev = p.events
    assert np.all(np.diff(ev["time"]) >= 0)
    assert np.all(ev["post"] > 0)
    assert p.end_reason in ("horizon", "floor")
    if p.end_reason == "floor":
        assert p.terminal[0] <= 0.05
    q = sample_disk_policy(rates, 1.0, 1.0, 0.05, 0.01, seed=4)
    assert np.array_equal(ev, q.events)


def test_chordal_path():
    rel = derive_relations(3.0)
    split = intensity_split(0.2, 1.0, rel)
    p = sample_disk_chordal(split, rel.alpha, 1.0, 0.5, 0.5, 0.01, seed=2)
    assert len(p.terminal) == 2
    assert p.end_reason in ("horizon", "floor", "target-swallowed")


def test_batch_is_prefix_stable(rates):
    a = disk_batch(rates, 1.0, 0.2, 0.01, 0.01, 40, seed=3)
    b = disk_batch(rates, 1.0, 0.2, 0.01, 0.01, 60, seed=3)
    assert np.array_equal(a.terminal, b.terminal[:40])


def test_bad_start(rates):
    with pytest.raises(DomainError):
        sample_disk_policy(rates, 0.01, 1.0, 0.05, 0.01, seed=1)

import math

import numpy as np
import pytest

from frag_explore.carpet import (cumulant_residual, cumulant_root, grow_ensemble,
                                 grow_ensemble_parallel, malthus_root_mc, merge_ensembles,
                                 moment_sum, ratio_jackknife, relative_bands)
from frag_explore.relations import derive_relations
from frag_explore.tree import StopRule


@pytest.mark.parametrize("kappa", [2.8, 3.0, 3.5, 3.9])
def test_cumulant_root_at_delta(kappa):
    rel = derive_relations(kappa)
    assert abs(cumulant_residual(rel.malthus_delta, rel)) < 1e-3
    assert abs(cumulant_root(rel) - rel.malthus_delta) < 5e-3


def test_cumulant_sign_change():
    rel = derive_relations(3.0)
    d = rel.malthus_delta
    assert cumulant_residual(d - 0.1, rel) * cumulant_residual(d + 0.1, rel) < 0


def test_ratio_jackknife_simple():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    b = np.ones(4)
    est, se = ratio_jackknife(a, b)
    assert est == pytest.approx(2.5)
    assert se == pytest.approx(a.std(ddof=1) / 2)


def test_relative_bands_cover_line():
    b = relative_bands(0.25)
    assert b.shape == (10, 2)
    assert np.all(b[:, 1] > b[:, 0])


KW = dict(kappa=3.0, seed=11, variant="Ttilde", stop_rule=StopRule.mass_floor(2 ** -5),
          q_fine=np.array([1.8, 2.0]), loop_eps=(2 ** -5,), stream=3)


def test_ensemble_index_ranges_merge():
    whole = grow_ensemble(n=12, **KW)
    parts = merge_ensembles([grow_ensemble(n=5, **KW), grow_ensemble(n=7, start=5, **KW)])
    for k in whole.moments:
        assert np.array_equal(whole.moments[k], parts.moments[k])
    assert np.array_equal(whole.loops[2 ** -5], parts.loops[2 ** -5])


def test_parallel_equals_serial():
    a = grow_ensemble_parallel(1, n=8, **KW)
    b = grow_ensemble_parallel(2, n=8, **KW)
    for k in a.moments:
        assert np.array_equal(a.moments[k], b.moments[k])


def test_area_and_malthus_small_ensemble():
    ens = grow_ensemble(3.0, 400, seed=5, stream=77)
    rep = moment_sum(ens, 2.0, None, "Ttilde")
    assert abs(rep.estimate - 1.0) < 5 * rep.std_error + 0.05
    small = moment_sum(ens, 2.0, None, "T")
    assert small.estimate < rep.estimate
    mr = malthus_root_mc(ens)
    assert abs(mr.mc_root - mr.analytic_delta) < 0.3
    assert set(mr.as_dict()) >= {"analytic_delta", "mc_root", "mc_root_se", "grid", "n"}

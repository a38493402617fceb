import numpy as np
import pytest

from frag_explore.carpet import line_moments, relative_bands
from frag_explore.explore import DiskRates
from frag_explore.rng import derive_key
from frag_explore.tree import (EV_LOOP, ORIGIN_NAMES, BranchPolicy, ResolutionError, StopRule,
                               count_jumps, grow_summary, grow_tree, stopping_line)

RATES = DiskRates.from_kappa(3.0)
POL = BranchPolicy()


def test_policy_parse():
    assert BranchPolicy.parse("largest").kind == "follow-largest"
    assert BranchPolicy.parse("q=2").q == 2.0
    with pytest.raises(ValueError):
        BranchPolicy.parse("random")


def test_tree_invariants():
    tree = grow_tree(RATES, POL, "Ttilde", 1.0, StopRule.mass_floor(2 ** -5), seed=3)
    p = tree.particles
    # parents precede children: connected and acyclic
    assert p["parent"][0] == -1
    assert np.all(p["parent"][1:] < np.arange(1, len(p)))
    assert np.all(p["parent"][1:] >= 0)
    assert np.all(p["birth_mass"] > 0)
    doc = tree.records()
    assert len(doc["particles"]) == tree.n_particles
    assert {d["origin"] for d in doc["particles"]} <= set(ORIGIN_NAMES)


def test_variant_T_has_no_loop_offspring():
    tree = grow_tree(RATES, POL, "T", 1.0, StopRule.mass_floor(2 ** -5), seed=4)
    assert "loop-offspring" not in {tree.particle(i).origin for i in range(tree.n_particles)}


def test_deterministic_by_key():
    a = grow_tree(RATES, POL, "Ttilde", 1.0, StopRule.exit_interval(), key=derive_key(1, 2))
    b = grow_tree(RATES, POL, "Ttilde", 1.0, StopRule.exit_interval(), key=derive_key(1, 2))
    assert np.array_equal(a.particles, b.particles)
    assert np.array_equal(a.events, b.events)


def test_exit_line_labels_outside_interval():
    tree = grow_tree(RATES, POL, "Ttilde", 1.0, StopRule.exit_interval(), seed=8)
    sl = stopping_line(tree)
    assert len(sl.labels) >= 1
    assert np.all(np.diff(sl.labels) <= 0)


def test_budget_truncation_is_reported():
    tree = grow_tree(RATES, POL, "Ttilde", 1.0, StopRule.mass_floor(2 ** -9), 50, seed=2)
    assert tree.truncated
    assert tree.truncated_fraction() > 0


def test_line_coarser_than_floor():
    tree = grow_tree(RATES, POL, "T", 1.0, StopRule.mass_floor(2 ** -4), seed=1)
    with pytest.raises(ResolutionError):
        stopping_line(tree, 2 ** -6)


@pytest.mark.parametrize("nest_max", [-1, 0])
@pytest.mark.parametrize("variant", ["T", "Ttilde"])
def test_lean_summary_matches_full_tree(variant, nest_max):
    alpha = RATES.alpha
    ql = np.array([alpha + 0.5, 2.0])
    cps = (2 ** -3, 2 ** -4, 2 ** -5)
    bands = np.concatenate([relative_bands(y) for y in (2 ** -4, 2 ** -6)])
    lb = np.array([[2 ** -6, 2 ** -5], [0.1, np.inf]])
    rule = StopRule.mass_floor(2 ** -6)
    for i in range(6):
        kw = dict(key=derive_key(7, i), checkpoints=cps, bands=bands, nest_max=nest_max)
        tr = grow_tree(RATES, POL, variant, 1.0, rule, **kw)
        full = grow_summary(RATES, POL, variant, 1.0, rule, q_lab=ql, loop_bands=lb, lean=False, **kw)
        lean = grow_summary(RATES, POL, variant, 1.0, rule, q_lab=ql, loop_bands=lb, **kw)
        assert np.array_equal(full.labels, lean.labels)
        assert np.array_equal(full.ghost, lean.ghost)
        assert lean.n_particles == tr.n_particles
        for y in list(cps) + [2 ** -6]:
            sl = stopping_line(tr, y)
            for ls in ("T", "Ttilde"):
                np.testing.assert_allclose(lean.moments(y, ls), line_moments(sl, ql, ls), rtol=1e-10)
            if y in (2 ** -4, 2 ** -6):
                np.testing.assert_allclose(lean.band_counts(y), sl.band_counts("T"), atol=1e-10)
        ev = tr.events
        outer = (ev["kind"] == EV_LOOP) & (tr.particles["nest"][ev["pid"]] == 0)
        assert lean.max_loop == (ev["size"][outer].max() if outer.any() else 0.0)
        assert lean.loops[0] == count_jumps(tr, (2 ** -6, 2 ** -5), 1, outermost=True)
        assert lean.loops[1] == count_jumps(tr, (0.1, None), 1, outermost=True)
        assert lean.top_label == stopping_line(tr).labels[0]

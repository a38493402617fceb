import math

import numpy as np
import pytest

from frag_explore.relations import (DomainError, beta_from_rho_prime, derive_relations,
                                    intensity_split, ladder_quantities, relations_table,
                                    rho_pair_from_beta, rho_prime_from_beta,
                                    wedge_bessel_dimension)


def test_kappa3_constants():
    rel = derive_relations(3.0)
    assert rel.alpha == pytest.approx(4 / 3)
    assert rel.u == pytest.approx(0.5, abs=1e-15)
    assert rel.malthus_delta == pytest.approx(11 / 6)
    assert rel.kappa_prime == pytest.approx(16 / 3)


@pytest.mark.parametrize("kappa", [8 / 3, 4.0, 2.0, 5.0])
def test_kappa_domain(kappa):
    with pytest.raises(DomainError):
        derive_relations(kappa)


@pytest.mark.parametrize("kappa", [2.7, 3.0, 3.5, 3.99])
def test_mean_ratio_and_side_ratio(kappa):
    rel = derive_relations(kappa)
    for beta in np.linspace(-0.99, 0.99, 41):
        rho, rho_r = rho_pair_from_beta(beta, rel)
        lq = ladder_quantities(rho, rel, rho_r)
        assert abs(lq.mean_ratio - rel.u) < 1e-9
        assert abs(lq.u_L / lq.u_R - (1 - beta) / (1 + beta)) < 1e-9


def test_endpoints_and_inverse():
    rel = derive_relations(3.0)
    k6 = rel.kappa_prime - 6
    assert rho_prime_from_beta(1.0, rel) == 0.0
    assert rho_prime_from_beta(-1.0, rel) == pytest.approx(k6, abs=1e-10)
    assert rho_prime_from_beta(0.0, rel) == pytest.approx(k6 / 2, abs=1e-10)
    for beta in (-0.7, -0.1, 0.4, 0.9):
        assert beta_from_rho_prime(rho_prime_from_beta(beta, rel), rel) == pytest.approx(beta, abs=1e-9)


def test_rho_monotone():
    rel = derive_relations(3.5)
    rows = relations_table(rel, 201)
    rho = np.array([r[1] for r in rows])
    assert len(rows) == 201
    assert np.all(np.diff(rho) > 0)


def test_split_intensities():
    rel = derive_relations(3.0)
    s = intensity_split(0.3, 2.0, rel)
    assert s.a_lp + s.a_rp == pytest.approx(s.a_plus)
    assert s.a_plus / s.a_minus == pytest.approx(rel.u)
    assert s.a_lp / s.a_rp == pytest.approx(0.7 / 1.3)
    with pytest.raises(DomainError):
        intensity_split(1.5, 1.0, rel)
    with pytest.raises(DomainError):
        intensity_split(0.0, 0.0, rel)


def test_positivity_parameters_sum():
    rel = derive_relations(3.0)
    rho, rho_r = rho_pair_from_beta(0.2, rel)
    lq = ladder_quantities(rho, rel, rho_r)
    assert rel.alpha * (1 - lq.P_L) == pytest.approx(1 + rho / 2)
    assert rel.alpha * (1 - lq.P_R) == pytest.approx(1 + rho_r / 2)


def test_wedge_dimension():
    rel = derive_relations(3.0)
    w = wedge_bessel_dimension(rel.gamma ** 2 / 2, rel)
    assert w.delta == pytest.approx(2.0)
    assert w.thick
    assert not wedge_bessel_dimension(0.1, rel).thick
    with pytest.raises(DomainError):
        wedge_bessel_dimension(-1.0, rel)

"""Exponent algebra: kappa -> (gamma, kappa', alpha, u, delta), the beta <-> rho'
correspondence, ladder-height quantities and intensity splits."""
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import bisect

KAPPA_MIN = 8.0 / 3.0
KAPPA_MAX = 4.0

RHO_TOL = 1e-16
RHO_MAXITER = 400


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class KappaRelations:
    kappa: float
    gamma: float
    kappa_prime: float
    alpha: float
    u: float
    malthus_delta: float

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AsymmetrySplit:
    beta: float
    p: float
    rho_prime: float
    a_lm: float
    a_rm: float
    a_lp: float
    a_rp: float
    a_plus: float
    a_minus: float

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LadderQuantities:
    P_L: float
    P_R: float
    u_L: float
    u_R: float
    delta_L: float
    delta_R: float

    @property
    def mean_ratio(self):
        return 0.5 * (self.u_L + self.u_R)

    def as_dict(self):
        d = asdict(self)
        d["mean_ratio"] = self.mean_ratio
        return d


@dataclass(frozen=True)
class WedgeDimension:
    weight: float
    delta: float

    @property
    def thick(self):
        return self.delta >= 2.0


def derive_relations(kappa):
    kappa = float(kappa)
    if not KAPPA_MIN < kappa < KAPPA_MAX:
        raise DomainError(f"kappa must lie strictly inside (8/3, 4), got {kappa!r}")
    alpha = 4.0 / kappa
    return KappaRelations(
        kappa=kappa,
        gamma=math.sqrt(kappa),
        kappa_prime=16.0 / kappa,
        alpha=alpha,
        u=-math.cos(math.pi * alpha),
        malthus_delta=alpha + 0.5,
    )


def _rho_bounds(rel):
    return rel.kappa_prime - 6.0, 0.0


def _solve_small_side(beta, rel):
    """rho' for beta >= 0, where it is the side that tends to 0."""
    k = rel.kappa_prime

    # cross-multiplied form avoids the pole of the sine ratio at rho' = kappa'-6
    def f(rho):
        return (1.0 + beta) * math.sin(-math.pi * rho / 2.0) - (1.0 - beta) * math.sin(
            -math.pi * (k - 6.0 - rho) / 2.0)

    lo, hi = _rho_bounds(rel)
    if beta == 1.0:
        return hi
    return bisect(f, lo, hi, xtol=RHO_TOL, rtol=4 * np.finfo(float).eps, maxiter=RHO_MAXITER)


def rho_pair_from_beta(beta, rel):
    """(rho', rho_R = kappa'-6-rho') with the smaller one solved directly.

    The equation is symmetric under beta -> -beta with the two sides
    swapped, so each side keeps full relative precision near its zero.
    """
    beta = float(beta)
    if not -1.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [-1, 1], got {beta!r}")
    k6 = rel.kappa_prime - 6.0
    if beta >= 0:
        rho = _solve_small_side(beta, rel)
        return rho, k6 - rho
    rho_r = _solve_small_side(-beta, rel)
    return k6 - rho_r, rho_r


def rho_prime_from_beta(beta, rel):
    """Solve (1-beta)/(1+beta) = sin(-pi rho'/2) / sin(-pi (kappa'-6-rho')/2)."""
    return rho_pair_from_beta(beta, rel)[0]


def beta_from_rho_prime(rho_prime, rel):
    lo, hi = _rho_bounds(rel)
    rho_prime = float(rho_prime)
    if not lo <= rho_prime <= hi:
        raise DomainError(f"rho' must lie in [{lo}, {hi}], got {rho_prime!r}")
    num = math.sin(-math.pi * rho_prime / 2.0)
    den = math.sin(-math.pi * (rel.kappa_prime - 6.0 - rho_prime) / 2.0)
    # beta = (den - num) / (den + num) is the inverse of the ratio equation
    return (den - num) / (den + num)


def ladder_quantities(rho_prime, rel, rho_right=None):
    """Ladder exponents of both sides.  ``rho_right`` (default
    kappa'-6-rho') can be passed when it is known more precisely."""
    lo, hi = _rho_bounds(rel)
    if not lo <= rho_prime <= hi:
        raise DomainError(f"rho' must lie in [{lo}, {hi}], got {rho_prime!r}")
    a = rel.alpha
    rho_r = rel.kappa_prime - 6.0 - rho_prime if rho_right is None else rho_right
    P_L = (a - rho_prime / 2.0 - 1.0) / a
    P_R = (a - rho_r / 2.0 - 1.0) / a

    def ratio(rho):
        # alpha (1 - P) = 1 + rho/2 exactly, so the numerator is -sin(pi rho/2);
        # going through P would lose the digits that matter when rho -> 0
        num = -math.sin(math.pi * rho / 2.0)
        den = math.sin(math.pi * (a - 1.0 - rho / 2.0))
        return num / den + 0.0

    return LadderQuantities(
        P_L=P_L,
        P_R=P_R,
        u_L=ratio(rho_prime),
        u_R=ratio(rho_r),
        delta_L=3.0 - a + rho_prime / 2.0,
        delta_R=a - rho_prime / 2.0,
    )


def intensity_split(beta, a_lm, rel):
    if not a_lm > 0:
        raise DomainError("a_lm must be positive")
    beta = float(beta)
    rho = rho_prime_from_beta(beta, rel)
    a_plus = -2.0 * a_lm * math.cos(math.pi * rel.alpha)
    return AsymmetrySplit(
        beta=beta,
        p=(1.0 + beta) / 2.0,
        rho_prime=rho,
        a_lm=a_lm,
        a_rm=a_lm,
        a_lp=(1.0 - beta) / 2.0 * a_plus,
        a_rp=(1.0 + beta) / 2.0 * a_plus,
        a_plus=a_plus,
        a_minus=2.0 * a_lm,
    )


def wedge_bessel_dimension(W, rel):
    if not W > 0:
        raise DomainError("wedge weight must be positive")
    return WedgeDimension(weight=W, delta=1.0 + 2.0 * W / rel.gamma ** 2)


TABLE_COLUMNS = ("beta", "rho_prime", "P_L", "P_R", "u_L", "u_R", "mean_ratio")


def relations_table(rel, n=201):
    """Rows of the beta sweep used by the CLI and the identity checks."""
    rows = []
    for beta in np.linspace(-1.0, 1.0, n):
        rho, rho_r = rho_pair_from_beta(beta, rel)
        lq = ladder_quantities(rho, rel, rho_r)
        rows.append((float(beta), rho, lq.P_L, lq.P_R, lq.u_L, lq.u_R, lq.mean_ratio))
    return rows

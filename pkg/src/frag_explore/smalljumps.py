"""Closed-form small-jump integrals for the disk jump kernels.

All kernels are written at unit state, in terms of the relative jump size
``x = l / y``::

    positive:  a_plus  * x**(-1-alpha) * (1 + x)**(-1-alpha)
    negative:  a_minus * x**(-1-alpha) * (1 - x)**(-1-alpha) * [x < 1/2]

and the reference stable kernel is ``a_pm * x**(-1-alpha)``.  Integrals over
``(0, c)`` are evaluated term by term from the binomial series of
``(1 +- x)**(-1-alpha)``, which converges geometrically for ``c <= 1/2``;
positive-side integrals beyond 1/2 fall back to Gauss-Legendre panels in
``log x``.
"""
import numpy as np
from numba import njit

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)

_SERIES_TOL = 1e-17
_SERIES_MAX = 400


@njit(cache=True)
def power_series(c, s, alpha, alternating, kmin):
    """sum_{k>=kmin} b_k c**(k+s-alpha) / (k+s-alpha), b_k the coefficients of
    (1 + x)**(-1-alpha) (``alternating``) or (1 - x)**(-1-alpha)."""
    if c <= 0.0:
        return 0.0
    coef = 1.0
    for k in range(1, kmin + 1):
        coef *= (alpha + k) / k
    total = 0.0
    ck = c ** (kmin + s - alpha)
    for k in range(kmin, kmin + _SERIES_MAX):
        e = k + s - alpha
        b = coef
        if alternating and (k % 2 == 1):
            b = -coef
        term = b * ck / e
        total += term
        if abs(term) < _SERIES_TOL * max(abs(total), 1e-300) and k > kmin + 3:
            break
        coef *= (alpha + k + 1) / (k + 1)
        ck *= c
    return total


@njit(cache=True)
def plus_kernel_integral(c0, c1, p, alpha):
    """int_{c0}^{c1} x**p (1 + x)**(-1-alpha) dx by log-panel Gauss-Legendre."""
    if c1 <= c0:
        return 0.0
    lo = np.log(c0)
    hi = np.log(c1)
    n_panels = int(np.ceil((hi - lo) / 0.5)) + 1
    h = (hi - lo) / n_panels
    total = 0.0
    for j in range(n_panels):
        a = lo + j * h
        for i in range(_GL_X.shape[0]):
            t = a + 0.5 * h * (_GL_X[i] + 1.0)
            x = np.exp(t)
            total += 0.5 * h * _GL_W[i] * x ** (p + 1.0) * (1.0 + x) ** (-1.0 - alpha)
    return total


@njit(cache=True)
def plus_drift_correction(c, alpha):
    """int_0^c x**(-alpha) ((1+x)**(-1-alpha) - 1) dx."""
    if c <= 0.5:
        return power_series(c, 1.0, alpha, True, 1)
    head = power_series(0.5, 1.0, alpha, True, 1)
    tail = plus_kernel_integral(0.5, c, -alpha, alpha)
    tail -= (c ** (1.0 - alpha) - 0.5 ** (1.0 - alpha)) / (1.0 - alpha)
    return head + tail


@njit(cache=True)
def minus_drift_correction(c, alpha):
    """int_0^c x**(-alpha) ((1-x)**(-1-alpha) [x<1/2] - 1) dx."""
    if c <= 0.5:
        return power_series(c, 1.0, alpha, False, 1)
    head = power_series(0.5, 1.0, alpha, False, 1)
    return head - (c ** (1.0 - alpha) - 0.5 ** (1.0 - alpha)) / (1.0 - alpha)


@njit(cache=True)
def compensator_unit(c, alpha, a_plus, a_minus):
    """Drift cancelling the mean of reference stable jumps of size >= c."""
    return -(a_plus - a_minus) * c ** (1.0 - alpha) / (alpha - 1.0)


@njit(cache=True)
def drift_correction(c, alpha, a_plus, a_minus):
    """int_0^c (signed x) (disk kernel - stable kernel) dx at unit state."""
    return a_plus * plus_drift_correction(c, alpha) - a_minus * minus_drift_correction(c, alpha)


@njit(cache=True)
def second_moment(c, alpha, a_plus, a_minus):
    """int_0^c x**2 (positive + negative disk kernel) dx at unit state."""
    if c <= 0.5:
        sp = power_series(c, 2.0, alpha, True, 0)
    else:
        sp = power_series(0.5, 2.0, alpha, True, 0) + plus_kernel_integral(0.5, c, 1.0 - alpha, alpha)
    sm = power_series(min(c, 0.5), 2.0, alpha, False, 0)
    return a_plus * sp + a_minus * sm


@njit(cache=True)
def stable_second_moment(c, alpha, a_plus, a_minus):
    return (a_plus + a_minus) * c ** (2.0 - alpha) / (2.0 - alpha)


@njit(cache=True)
def split_moment(q, c, alpha, a_minus):
    """int_0^c x**q (negative disk kernel) dx: expected sum of piece**q per unit
    Lamperti time for split pieces below the relative cut."""
    return a_minus * power_series(min(c, 0.5), q, alpha, False, 0)


@njit(cache=True)
def loop_moment(q, c, alpha, a_plus):
    """int_0^c x**q (positive disk kernel) dx."""
    if c <= 0.5:
        return a_plus * power_series(c, q, alpha, True, 0)
    return a_plus * (power_series(0.5, q, alpha, True, 0)
                     + plus_kernel_integral(0.5, c, q - 1.0 - alpha, alpha))


@njit(cache=True)
def disk_drift(y, delta, alpha, a_plus, a_minus):
    """Drift of the disk process between resolved jumps (cutoff ``delta``)."""
    c = delta / y
    return (compensator_unit(delta, alpha, a_plus, a_minus)
            + y ** (1.0 - alpha) * drift_correction(c, alpha, a_plus, a_minus))


@njit(cache=True)
def disk_variance_rate(y, delta, alpha, a_plus, a_minus):
    """Variance per unit time carried by the unresolved disk jumps."""
    return y ** (2.0 - alpha) * second_moment(delta / y, alpha, a_plus, a_minus)


@njit(cache=True)
def lamperti_drift(c, alpha, a_plus, a_minus):
    """Drift of log-mass in Lamperti time with relative cut ``c``.

    The unresolved jumps are replaced by a Brownian motion whose drift and
    variance match their first two moments in mass space, then mapped to log
    space by Ito's formula.
    """
    return (compensator_unit(c, alpha, a_plus, a_minus)
            + drift_correction(c, alpha, a_plus, a_minus)
            - 0.5 * second_moment(c, alpha, a_plus, a_minus))


@njit(cache=True)
def split_band_rate(lo, hi, alpha, a_minus):
    """int_lo^hi (negative disk kernel) dx for 0 < lo < hi <= 1/2."""
    if hi <= lo:
        return 0.0
    return a_minus * (power_series(hi, 0.0, alpha, False, 0) - power_series(lo, 0.0, alpha, False, 0))


TABLE_SIZE = 512
TABLE_CMIN = 1e-12


@njit(cache=True)
def cut_tables(c_max, q_grid, alpha, a_plus, a_minus):
    """Normalised small-jump integrals on a log grid of cuts in [TABLE_CMIN, c_max].

    Columns: drift correction / c**(2-alpha), second moment / c**(2-alpha),
    then split and loop moments / c**(q-alpha) for each q.  All columns are
    1 + O(c) smooth, so linear interpolation in log c is accurate.
    """
    nq = q_grid.shape[0]
    tab = np.empty((TABLE_SIZE, 2 + 2 * nq))
    lo = np.log(TABLE_CMIN)
    hi = np.log(c_max)
    for i in range(TABLE_SIZE):
        c = np.exp(lo + (hi - lo) * i / (TABLE_SIZE - 1))
        if i == TABLE_SIZE - 1:
            c = c_max
        n2 = c ** (2.0 - alpha)
        tab[i, 0] = drift_correction(c, alpha, a_plus, a_minus) / n2
        tab[i, 1] = second_moment(c, alpha, a_plus, a_minus) / n2
        for j in range(nq):
            nq_ = c ** (q_grid[j] - alpha)
            tab[i, 2 + j] = split_moment(q_grid[j], c, alpha, a_minus) / nq_
            tab[i, 2 + nq + j] = loop_moment(q_grid[j], c, alpha, a_plus) / nq_
    return tab


@njit(cache=True)
def table_row(tab, c, c_max, out):
    """Interpolate the table at cut ``c`` into ``out`` (un-normalised values
    are recovered by the caller)."""
    lo = np.log(TABLE_CMIN)
    hi = np.log(c_max)
    s = (np.log(c) - lo) / (hi - lo) * (TABLE_SIZE - 1)
    if s <= 0.0:
        k = 0
        w = 0.0
    elif s >= TABLE_SIZE - 1:
        k = TABLE_SIZE - 2
        w = 1.0
    else:
        k = int(s)
        w = s - k
    for j in range(tab.shape[1]):
        out[j] = (1.0 - w) * tab[k, j] + w * tab[k + 1, j]


COUNT_TABLE_SIZE = 4096


@njit(cache=True)
def split_count_table(alpha):
    """G(x) = x**alpha * int_x^... series, i.e. x**alpha * power_series(x, 0),
    on a log grid of x in [TABLE_CMIN, 1/2].  G is smooth and tends to
    -1/alpha as x -> 0."""
    tab = np.empty(COUNT_TABLE_SIZE)
    lo = np.log(TABLE_CMIN)
    hi = np.log(0.5)
    for i in range(COUNT_TABLE_SIZE):
        s = lo + (hi - lo) * i / (COUNT_TABLE_SIZE - 1)
        x = np.exp(s)
        if i == COUNT_TABLE_SIZE - 1:
            x = 0.5
        tab[i] = x ** alpha * power_series(x, 0.0, alpha, False, 0)
    return tab


@njit(cache=True)
def split_count_F(tab, s, alpha):
    """power_series(x, 0) at x = exp(s) from the table (s <= log 1/2)."""
    lo = np.log(TABLE_CMIN)
    hi = np.log(0.5)
    r = (s - lo) / (hi - lo) * (COUNT_TABLE_SIZE - 1)
    if r <= 0.0:
        g = tab[0]
    elif r >= COUNT_TABLE_SIZE - 1:
        g = tab[COUNT_TABLE_SIZE - 1]
    else:
        k = int(r)
        w = r - k
        g = (1.0 - w) * tab[k] + w * tab[k + 1]
    return np.exp(-alpha * s) * g

"""Malthusian exponent, cascade martingales and the carpet measure.

The analytic side is the cumulant of the log-mass cascade at unit state,

    kappa(q) = lim_{eps->0}  int_eps^inf u ((1+l)**q - 1) nu_+(l) dl
                           + int_eps^1/2 (l**q + (1-l)**q - 1) nu_-(l) dl
                           - q (u - 1) eps**(1-alpha) / (alpha - 1)

with nu_+(l) = l**(-1-alpha) (1+l)**(-1-alpha) and nu_-(l) = l**(-1-alpha)
(1-l)**(-1-alpha) (a_minus = 1, a_plus = u).  Its zero at q = alpha + 1/2 is
the Malthusian exponent.  The Monte Carlo side reduces ensembles of trees to
per-tree summaries on stopping lines.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import binom

from .explore import DiskRates
from .relations import DomainError
from .rng import derive_key
from .stats import MIN_REPLICATES, TRUNCATION_THRESHOLD, EstimatorReport, bootstrap, jackknife
from .tree import EV_LOOP, ResolutionError, StopRule, BranchPolicy, count_jumps, grow_summary, grow_tree, \
    stopping_line

EPS_LADDER = (1e-3, 1e-4, 1e-5)
QUAD_RTOL = 1e-9
EXTRAPOLATION_TOL = 1e-5
# mass-floor ensembles keep only the stack of pending particles, so the
# budget is a time limit rather than a memory one
LEAN_BUDGET = 5 * 10 ** 7


class QuadratureFailure(RuntimeError):
    pass


class ExtrapolationUnstable(RuntimeError):
    pass


class BracketFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# analytic cumulant


def _quad(f, a, b):
    val, err = quad(f, a, b, epsabs=0.0, epsrel=QUAD_RTOL / 10, limit=400)
    if not err <= QUAD_RTOL * abs(val) + 1e-14:
        raise QuadratureFailure(f"quadrature on ({a}, {b}) missed rtol {QUAD_RTOL}")
    return val


def _log_quad(g, a, b):
    # integrate g(l) dl in t = log l; the integrands are power laws near 0
    return _quad(lambda t: g(math.exp(t)) * math.exp(t), math.log(a), math.log(b))


def _cumulant_eps(q, alpha, u, eps, tilde):
    a1 = 1.0 + alpha

    def g_plus(l):
        # (1+l)**q - 1 written with expm1 keeps precision for small l
        w = math.expm1(q * math.log1p(l))
        if tilde:
            w += l ** q
        return u * w * l ** -a1 * (1.0 + l) ** -a1

    def g_minus(l):
        w = l ** q + math.expm1(q * math.log1p(-l))
        return w * l ** -a1 * (1.0 - l) ** -a1

    ip = _log_quad(g_plus, eps, 1.0) + _quad(g_plus, 1.0, math.inf)
    im = _log_quad(g_minus, eps, 0.5)
    return ip + im - q * (u - 1.0) * eps ** (1.0 - alpha) / (alpha - 1.0)


def _leading_modes(q, alpha, u, eps, tilde):
    """Exact leading small-eps terms of (finite part - truncated value):
    the eps**(2-alpha) term of the smooth integrands and the eps**(q-alpha)
    term of the l**q pieces."""
    p2 = binom(q - 1.0 - alpha, 2) - binom(-1.0 - alpha, 2)
    smooth = (u + 1.0) * p2 * eps ** (2.0 - alpha) / (2.0 - alpha)
    lq = (1.0 + (u if tilde else 0.0)) * eps ** (q - alpha) / (q - alpha)
    return smooth + lq


def _next_exponents(q, alpha):
    e = sorted({round(3.0 - alpha, 12), round(q + 1.0 - alpha, 12)})
    if len(e) == 1:
        e.append(4.0 - alpha)
    return e


def richardson(values, eps, exponents):
    """Two-level Richardson table for f(eps) = L + A eps**e1 + B eps**e2.

    ``values``/``eps`` hold three points.  Returns (final, level-one pair).
    """
    f = np.asarray(values, float)
    h = np.asarray(eps, float)
    e1, e2 = exponents
    lvl1 = []
    for i in range(2):
        r = (h[i] / h[i + 1]) ** e1
        lvl1.append((r * f[i + 1] - f[i]) / (r - 1.0))
    # the level-one values carry the e2 mode with eps-dependent weights
    w = [(h[i + 1] ** e2 * (h[i] / h[i + 1]) ** e1 - h[i] ** e2) / ((h[i] / h[i + 1]) ** e1 - 1.0)
         for i in range(2)]
    final = (w[1] * lvl1[0] - w[0] * lvl1[1]) / (w[1] - w[0])
    return final, lvl1


def cumulant_residual(q, rel, eps=EPS_LADDER, variant="T", details=False):
    """Cumulant of the log-mass cascade at exponent ``q``, eps -> 0.

    ``variant="Ttilde"`` adds the loop pieces u * l**q to the positive side.
    Leading eps-modes with known coefficients are added back exactly; the
    rest is removed by Richardson extrapolation over ``eps``.
    """
    alpha, u = rel.alpha, rel.u
    if not alpha < q < 2 * alpha + 1:
        raise DomainError(f"q must lie in (alpha, 2 alpha + 1), got {q}")
    eps = tuple(float(e) for e in eps)
    if len(eps) != 3 or not all(0 < e < 0.25 for e in eps):
        raise DomainError("need three eps values in (0, 1/4)")
    tilde = variant == "Ttilde"
    raw = [_cumulant_eps(q, alpha, u, e, tilde) for e in eps]
    fixed = [r + _leading_modes(q, alpha, u, e, tilde) for r, e in zip(raw, eps)]
    final, lvl1 = richardson(fixed, eps, _next_exponents(q, alpha))
    if abs(final - lvl1[1]) > EXTRAPOLATION_TOL:
        raise ExtrapolationUnstable(
            f"extrapolants {lvl1[1]:.3e} and {final:.3e} differ by more than {EXTRAPOLATION_TOL}")
    if details:
        return final, {"raw": raw, "mode_corrected": fixed, "level1": lvl1}
    return final


def cumulant_root(rel, lo=None, hi=None, variant="T", xtol=1e-10):
    """Bisection on the residual; default bracket (alpha + 0.3, alpha + 0.7)."""
    from scipy.optimize import bisect
    lo = rel.alpha + 0.3 if lo is None else lo
    hi = rel.alpha + 0.7 if hi is None else hi
    f = lambda q: cumulant_residual(q, rel, variant=variant)
    if f(lo) * f(hi) > 0:
        raise BracketFailure("residual has no sign change on the bracket")
    return bisect(f, lo, hi, xtol=xtol)


# --------------------------------------------------------------------------
# tree ensembles


def _ghost_on_grid(q_grid, g, qs):
    """Vectorised log-linear interpolation of an accumulator row in q."""
    if g is None or len(q_grid) == 0:
        return np.zeros(len(qs))
    if len(q_grid) == 1:
        if not np.allclose(qs, q_grid[0]):
            raise ValueError("single-exponent accumulator cannot be interpolated")
        return np.full(len(qs), float(g[0]))
    if qs.min() < q_grid[0] - 1e-12 or qs.max() > q_grid[-1] + 1e-12:
        raise ValueError("exponent outside the tree's accumulator grid")
    if np.all(g > 0):
        return np.exp(np.interp(qs, q_grid, np.log(g)))
    return np.interp(qs, q_grid, g)


def line_moments(sl, qs, label_set):
    """sum(label**q) over a stopping line for every q in ``qs``, unresolved
    pieces included."""
    lab = sl.select(label_set)
    qs = np.asarray(qs, float)
    # labels below 1 dominate; a log-space outer product avoids overflow
    res = np.exp(np.outer(np.log(lab), qs)).sum(axis=0) if len(lab) else np.zeros(len(qs))
    g = sl.ghost_T if label_set in ("T", "l") else sl.ghost_tilde
    return res + _ghost_on_grid(sl.q_grid, g, qs)


def line_key(y):
    return "own" if y is None else f"{y:.10g}"


@dataclass
class TreeEnsemble:
    """Per-tree reductions of an ensemble of independently grown trees.

    ``moments[(line, label_set)]`` is an (n, len(q_fine)) array of
    sum(label**q); ``bands[line]`` holds label counts per ``band_rows``
    (relative to the line); ``loops[eps]`` counts outermost loops with
    boundary length in [eps, 2 eps); ``big_loops[x]`` those of length >= x;
    ``top_label`` is the largest label on the tree's own line and
    ``max_loop`` the largest outermost loop (0 if none).
    """
    kappa: float
    alpha: float
    variant: str
    rule: str
    seed: int
    n: int
    q_fine: np.ndarray
    moments: dict
    truncated: np.ndarray
    n_particles: np.ndarray
    bands: dict = field(default_factory=dict)
    band_rows: np.ndarray = None
    loops: dict = field(default_factory=dict)
    big_loops: dict = field(default_factory=dict)
    top_label: np.ndarray = None
    max_loop: np.ndarray = None
    wall_time: float = 0.0

    def truncated_fraction(self):
        return float(self.truncated.mean()) if self.n else 0.0

    def mean_moment(self, q, line, label_set):
        """Per-tree moments at ``q`` by log-interpolation on the fine grid."""
        m = self.moments[(line_key(line) if not isinstance(line, str) else line, label_set)]
        qf = self.q_fine
        if q < qf[0] - 1e-12 or q > qf[-1] + 1e-12:
            raise ValueError(f"q={q} outside the ensemble grid [{qf[0]}, {qf[-1]}]")
        k = int(np.clip(np.searchsorted(qf, q) - 1, 0, len(qf) - 2))
        w = (q - qf[k]) / (qf[k + 1] - qf[k])
        a, b = m[:, k], m[:, k + 1]
        pos = (a > 0) & (b > 0)
        out = (1 - w) * a + w * b
        out[pos] = np.exp((1 - w) * np.log(a[pos]) + w * np.log(b[pos]))
        return out


def default_q_fine(alpha, top=3.0, n=121):
    return np.linspace(alpha + 0.05, top, n)


def relative_bands(y, n_bins=10):
    """Dyadic bins [2**-k, 2**-k+1) of u = label / y, k = 1..n_bins; the
    top bin is closed at u = 1 (labels equal to y from continuous passage)."""
    k = np.arange(1, n_bins + 1)
    lo = 2.0 ** -k
    hi = 2.0 ** (1 - k)
    hi[0] = 1.0 + 1e-9
    return np.column_stack([lo, hi]) * y


def grow_ensemble(kappa, n, seed, variant="Ttilde", stop_rule=None, *, lines=(None,),
                  label_sets=("T", "Ttilde"), q_fine=None, eta=None, nest_max=-1,
                  checkpoints=(), band_lines=(), n_bins=10, loop_eps=(), big_x=(),
                  policy=None, stream=0, budget=None, a_minus=1.0, progress=None, start=0):
    """Grow ``n`` trees with keys derived from (seed, stream, i) and keep only
    their line summaries.  Tree i is identical whatever ``n`` is, so
    ensembles over index ranges ``start .. start+n`` can be grown apart and
    joined with :func:`merge_ensembles`.

    Mass-floor ensembles never store their trees (see ``grow_summary``); the
    lines must then be checkpoints and moments are kept on ``q_fine`` only,
    so a short ``q_fine`` is much cheaper there.
    """
    import time
    from .relations import derive_relations
    from .tree import DEFAULT_BUDGET, DEFAULT_ETA, default_q_grid
    rel = derive_relations(kappa)
    rates = DiskRates.from_kappa(kappa, a_minus)
    stop_rule = StopRule.exit_interval() if stop_rule is None else stop_rule
    policy = BranchPolicy() if policy is None else policy
    eta = DEFAULT_ETA if eta is None else eta
    lean = stop_rule.kind == "mass-floor"
    if budget is None:
        budget = LEAN_BUDGET if lean else DEFAULT_BUDGET
    q_fine = default_q_fine(rel.alpha) if q_fine is None else np.asarray(q_fine, float)
    q_grid = np.unique(np.concatenate([default_q_grid(rel.alpha), [q_fine[0], q_fine[-1]]]))
    rows = [relative_bands(y, n_bins) for y in band_lines]
    bands = np.concatenate(rows) if rows else None
    keys = [(line_key(y), s) for y in lines for s in label_sets]
    moments = {k: np.zeros((n, len(q_fine))) for k in keys}
    band_out = {line_key(y): np.zeros((n, n_bins)) for y in band_lines}
    loops = {float(e): np.zeros(n, dtype=np.int64) for e in loop_eps}
    big = {float(x): np.zeros(n, dtype=np.int64) for x in big_x}
    trunc = np.zeros(n)
    n_part = np.zeros(n, dtype=np.int64)
    top = np.zeros(n)
    max_loop = np.zeros(n)
    if lean:
        floor = stop_rule.a
        checkpoints = tuple(checkpoints) + tuple(y for y in lines if y is not None) + tuple(band_lines)
        loop_rows = [(e, 2 * e) for e in loops] + [(x, math.inf) for x in big]
    t0 = time.time()
    for i in range(n):
        if lean:
            sm = grow_summary(rates, policy, variant, 1.0, stop_rule, budget,
                              key=derive_key(seed, stream, start + i), eta=eta, checkpoints=checkpoints,
                              q_grid=q_grid, bands=bands, nest_max=nest_max, q_lab=q_fine,
                              loop_bands=loop_rows)
            trunc[i] = sm.truncated_fraction
            n_part[i] = sm.n_particles
            top[i] = sm.top_label
            max_loop[i] = sm.max_loop
            for y in lines:
                for s in label_sets:
                    moments[(line_key(y), s)][i] = sm.moments(floor if y is None else y, s)
            for j, y in enumerate(band_lines):
                band_out[line_key(y)][i] = sm.band_counts(y)[j * n_bins:(j + 1) * n_bins]
            for j, e in enumerate(loops):
                loops[e][i] = sm.loops[j]
            for j, x in enumerate(big):
                big[x][i] = sm.loops[len(loops) + j]
            if progress is not None and (i + 1) % progress == 0:
                print(f"  {i + 1}/{n} trees, {time.time() - t0:.0f}s", flush=True)
            continue
        tree = grow_tree(rates, policy, variant, 1.0, stop_rule, budget,
                         key=derive_key(seed, stream, start + i), eta=eta, checkpoints=checkpoints,
                         q_grid=q_grid, bands=bands, nest_max=nest_max)
        trunc[i] = tree.truncated_fraction()
        n_part[i] = tree.n_particles
        for y in lines:
            sl = stopping_line(tree, y)
            if y is None:
                top[i] = sl.labels[0] if len(sl.labels) else 0.0
            for s in label_sets:
                moments[(line_key(y), s)][i] = line_moments(sl, q_fine, s)
        for j, y in enumerate(band_lines):
            sl = stopping_line(tree, y)
            cnt = sl.band_counts("T")
            band_out[line_key(y)][i] = cnt[j * n_bins:(j + 1) * n_bins]
        ev = tree.events
        outer = (ev["kind"] == EV_LOOP) & (tree.particles["nest"][ev["pid"]] == 0)
        max_loop[i] = ev["size"][outer].max() if outer.any() else 0.0
        for e in loops:
            loops[e][i] = count_jumps(tree, (e, 2 * e), +1, outermost=True)
        for x in big:
            big[x][i] = count_jumps(tree, (x, None), +1, outermost=True)
        if progress is not None and (i + 1) % progress == 0:
            print(f"  {i + 1}/{n} trees, {time.time() - t0:.0f}s", flush=True)
    return TreeEnsemble(kappa=float(kappa), alpha=rel.alpha, variant=variant,
                        rule=stop_rule.describe(), seed=int(seed), n=int(n), q_fine=q_fine,
                        moments=moments, truncated=trunc, n_particles=n_part, bands=band_out,
                        band_rows=bands, loops=loops, big_loops=big, top_label=top, max_loop=max_loop,
                        wall_time=time.time() - t0)


def merge_ensembles(parts):
    """Concatenate ensembles grown over consecutive index ranges (in order)."""
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cat = lambda xs: np.concatenate(xs, axis=0)
    return TreeEnsemble(
        kappa=first.kappa, alpha=first.alpha, variant=first.variant, rule=first.rule,
        seed=first.seed, n=sum(p.n for p in parts), q_fine=first.q_fine,
        moments={k: cat([p.moments[k] for p in parts]) for k in first.moments},
        truncated=cat([p.truncated for p in parts]),
        n_particles=cat([p.n_particles for p in parts]),
        bands={k: cat([p.bands[k] for p in parts]) for k in first.bands},
        band_rows=first.band_rows,
        loops={k: cat([p.loops[k] for p in parts]) for k in first.loops},
        big_loops={k: cat([p.big_loops[k] for p in parts]) for k in first.big_loops},
        top_label=cat([p.top_label for p in parts]), max_loop=cat([p.max_loop for p in parts]),
        wall_time=sum(p.wall_time for p in parts))


def _ensemble_chunk(args):
    kw, start, n = args
    return grow_ensemble(n=n, start=start, **kw)


def grow_ensemble_parallel(threads=1, **kw):
    """:func:`grow_ensemble` with the trees split over ``threads`` worker
    processes; the result does not depend on ``threads``."""
    n = kw.pop("n")
    threads = max(1, min(int(threads), n))
    if threads == 1:
        return grow_ensemble(n=n, **kw)
    from concurrent.futures import ProcessPoolExecutor
    kw.pop("progress", None)
    bounds = np.linspace(0, n, threads + 1).astype(int)
    jobs = [(kw, int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(threads) as pool:
        return merge_ensembles(pool.map(_ensemble_chunk, jobs))


# --------------------------------------------------------------------------
# Monte Carlo estimators


@dataclass
class CascadeState:
    depth: int
    M: float
    exponent: float
    line_rule: str

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("cascade value must be nonnegative")


@dataclass
class MalthusReport:
    analytic_delta: float
    mc_root: float
    mc_root_se: float
    cumulant_residual_at_delta: float
    grid: list
    n: int
    seed: int
    truncated_fraction: float
    valid: bool = True
    note: str = ""

    def as_dict(self):
        from dataclasses import asdict
        return asdict(self)


def moment_sum(ens, q, line=None, label_set="T", threshold=TRUNCATION_THRESHOLD):
    """Ê[sum label**q] on ``line`` with jackknife s.e."""
    if ens.n == 0:
        raise ValueError("empty ensemble")
    if not q > ens.alpha:
        raise DomainError("q must exceed alpha")
    x = ens.mean_moment(q, line_key(line) if not isinstance(line, str) else line, label_set)
    est, se = jackknife(x, np.mean)
    tf = ens.truncated_fraction()
    valid = tf < threshold and ens.n >= MIN_REPLICATES
    note = "" if valid else ("truncated" if tf >= threshold else f"only {ens.n} replicates")
    return EstimatorReport(float(est), float(se), ens.n, ens.seed, tf, valid, note)


def _root_of_mean(per_tree_q, qf):
    """Root of mean(q) - 1 on the fine grid, by bisection between grid
    points and log-linear interpolation inside a cell."""
    m = per_tree_q.mean(axis=0)
    f = m - 1.0
    if f[0] < 0:
        raise BracketFailure("moment sum below 1 next to alpha: simulation bug?")
    idx = np.nonzero(f < 0)[0]
    if len(idx) == 0:
        raise BracketFailure("moment sum never drops below 1 on the grid")
    k = idx[0] - 1
    a, b = math.log(m[k]), math.log(m[k + 1])
    return float(qf[k] + (qf[k + 1] - qf[k]) * a / (a - b))


def malthus_root_mc(ens, line=None, n_boot=200, label_set="T"):
    """Root of Ê[sum l**q] = 1 with common random numbers across q (the
    same trees at every q) and a bootstrap s.e. over trees."""
    from .relations import derive_relations
    rel = derive_relations(ens.kappa)
    key = (line_key(line) if not isinstance(line, str) else line, label_set)
    per = ens.moments[key]
    q0 = rel.alpha + 0.05
    if ens.mean_moment(q0, key[0], label_set).mean() < 1.0:
        raise BracketFailure("moment sum at alpha + 0.05 is below 1")
    root = _root_of_mean(per, ens.q_fine)
    valid = ens.n >= MIN_REPLICATES
    if valid:
        _, se, reps = bootstrap(per, lambda x: _root_of_mean(x, ens.q_fine), n_boot,
                                rng=derive_key(ens.seed, 99))
        dropped = n_boot - len(reps)
    else:
        se, dropped = math.nan, 0
    grid = []
    for q in np.linspace(rel.alpha + 0.05, min(2.0, ens.q_fine[-1]), 9):
        x = ens.mean_moment(q, key[0], label_set)
        grid.append((float(q), float(x.mean()), float(x.std(ddof=1) / math.sqrt(ens.n))
                     if ens.n > 1 else math.nan))
    delta = rel.alpha + 0.5
    tf = ens.truncated_fraction()
    return MalthusReport(analytic_delta=delta, mc_root=root, mc_root_se=float(se),
                         cumulant_residual_at_delta=cumulant_residual(delta, rel), grid=grid,
                         n=ens.n, seed=ens.seed, truncated_fraction=tf,
                         valid=valid and tf < TRUNCATION_THRESHOLD,
                         note=("" if valid else f"only {ens.n} replicates: s.e. unusable")
                         + (f"{dropped} bootstrap resamples had no root on the grid"
                            if dropped else ""))


def intrinsic_area(tree, delta, floors):
    """Cascade martingale sum(l**delta) along nested mass-floor lines of a
    tree (T labels, unresolved pieces included).  Returns the trajectory and
    the terminal estimate at the finest floor."""
    floors = sorted((float(y) for y in floors), reverse=True)
    if tree.rule.kind != "mass-floor":
        raise ResolutionError("intrinsic area needs a mass-floor tree")
    traj = []
    for y in floors:
        sl = stopping_line(tree, y)
        m = float((sl.select("T") ** delta).sum())
        if sl.ghost_T is not None:
            m += float(_ghost_on_grid(sl.q_grid, sl.ghost_T, np.array([delta]))[0])
        traj.append((y, m))
    return traj, traj[-1][1]


def loop_count_estimate(tree, eps_list, delta=None):
    """Per-tree eps**delta * N[eps, 2 eps) over outermost loops."""
    delta = tree.alpha + 0.5 if delta is None else delta
    return [(float(e), float(e) ** delta * count_jumps(tree, (e, 2 * e), +1, outermost=True))
            for e in eps_list]


def ratio_jackknife(a, b):
    """sum(a) / sum(b) with the closed-form delete-one jackknife s.e."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = len(a)
    A, B = a.sum(axis=0), b.sum()
    est = A / B
    if n < 2:
        return est, np.full_like(np.atleast_1d(est), math.nan)
    loo = (A - a) / (B - b)[:, None] if a.ndim == 2 else (A - a) / (B - b)
    se = np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return est, se


def empirical_line_measure(ens, y, m_inf, delta=None):
    """Binned nu-hat on the dyadic u-bins of :func:`relative_bands`:
    sum_trees y**delta * count_bin / sum_trees M_inf, with jackknife s.e.

    Returns (bin edges in u, estimate, s.e.).
    """
    if ens.n == 0:
        raise ValueError("empty ensemble")
    key = line_key(y)
    if key not in ens.bands:
        raise ResolutionError(f"ensemble has no band counts at line {y}")
    delta = ens.alpha + 0.5 if delta is None else delta
    counts = ens.bands[key] * y ** delta
    est, se = ratio_jackknife(counts, m_inf)
    n_bins = counts.shape[1]
    edges = relative_bands(1.0, n_bins)
    return edges, est, se

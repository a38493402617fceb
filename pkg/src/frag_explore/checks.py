"""The acceptance battery: one function per item, each returning a
:class:`CheckItem` (measured value, target, tolerance, pass flag) plus any
tables worth keeping as CSV.

Numerical outputs depend only on the master seed.  Wall times are returned
separately so the result files stay byte-identical across runs.
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import carpet
from .carpet import StopRule, cumulant_residual, cumulant_root, empirical_line_measure, \
    grow_ensemble_parallel, line_key, malthus_root_mc, moment_sum
from .explore import DiskRates, disk_batch, rate_recovery
from .relations import derive_relations, relations_table, rho_prime_from_beta, TABLE_COLUMNS
from .rng import make_rng
from .stable import StableJumpLaw, sample_jump_ppp, terminal_values
from .stats import hill_estimator, ks_two_sample, pooled_z, tail_bracket


@dataclass
class CheckItem:
    id: str
    name: str
    value: float
    target: str
    tolerance: str
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"id": self.id, "name": self.name, "value": _clean(self.value),
                "target": self.target, "tolerance": self.tolerance, "passed": bool(self.passed),
                "details": _clean(self.details)}


@dataclass
class CheckOutput:
    item: CheckItem
    tables: dict = field(default_factory=dict)   # file stem -> (header, rows)
    runtime: float = 0.0
    runtime_limit: float | None = None


def _clean(x):
    """JSON-safe copy: numpy scalars to python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


KAPPAS_IDENTITY = (2.7, 3.0, 3.5, 3.99)
KAPPAS_TREES = (3.0, 3.5)
KAPPAS_CUMULANT = (2.8, 3.0, 3.5, 3.9)


# --------------------------------------------------------------------------
# 1-2: exponent algebra


def check_identity(seed=None, threads=1):
    worst_mean = worst_ratio = 0.0
    tables = {}
    for kappa in KAPPAS_IDENTITY:
        rel = derive_relations(kappa)
        rows = relations_table(rel, 201)
        tables[f"relations_kappa{kappa:g}"] = (TABLE_COLUMNS, rows)
        for beta, rho, PL, PR, uL, uR, mean in rows:
            worst_mean = max(worst_mean, abs(mean + math.cos(math.pi * rel.alpha)))
            if -1.0 < beta < 1.0:
                worst_ratio = max(worst_ratio, abs(uL / uR - (1 - beta) / (1 + beta)))
    worst = max(worst_mean, worst_ratio)
    item = CheckItem("1", "exponent identity sweep", worst, "0", "1e-9", worst < 1e-9,
                     {"max_mean_ratio_error": worst_mean, "max_ratio_error": worst_ratio,
                      "kappas": KAPPAS_IDENTITY, "n_beta": 201})
    return CheckOutput(item, tables, runtime_limit=1.0)


def check_endpoints(seed=None, threads=1):
    worst = 0.0
    monotone = True
    rows = []
    for kappa in KAPPAS_IDENTITY:
        rel = derive_relations(kappa)
        k6 = rel.kappa_prime - 6.0
        errs = (abs(rho_prime_from_beta(1.0, rel)),
                abs(rho_prime_from_beta(-1.0, rel) - k6),
                abs(rho_prime_from_beta(0.0, rel) - k6 / 2))
        grid = [rho_prime_from_beta(b, rel) for b in np.linspace(-1, 1, 201)]
        inc = bool(np.all(np.diff(grid) > 0))
        monotone &= inc
        worst = max(worst, *errs)
        rows.append((kappa, *errs, int(inc)))
    item = CheckItem("2", "beta/rho' endpoints and monotonicity", worst, "0", "1e-10",
                     worst < 1e-10 and monotone, {"strictly_increasing": monotone})
    return CheckOutput(item, {"rho_endpoints": (("kappa", "err_beta1", "err_beta_m1", "err_beta0",
                                                 "increasing"), rows)}, runtime_limit=1.0)


# --------------------------------------------------------------------------
# 3: stable sampler


def check_stable(seed, threads=1, n_paths=10 ** 4, n_ks=2 * 10 ** 5, cut=0.01):
    rel = derive_relations(3.0)
    law = StableJumpLaw(rel.alpha, rel.u, 1.0)
    lo = cut * 2.0 ** np.arange(8)
    bands = [(a, 2 * a) for a in lo] + [(lo[-1] * 2, math.inf)]
    counts = np.zeros((2, len(bands)))
    for i in range(n_paths):
        jumps = sample_jump_ppp(law, 1.0, cut, rng=make_rng(seed, 3, i))
        for s, sign in enumerate((1, -1)):
            sizes = jumps["size"][jumps["sign"] == sign]
            counts[s] += [np.count_nonzero((sizes >= a) & (sizes < b)) for a, b in bands]
    rows = []
    z_max = 0.0
    for s, sign in enumerate((1, -1)):
        for b, (a, c) in enumerate(bands):
            mean = n_paths * law.band_mass(a, c, sign)
            z = (counts[s, b] - mean) / math.sqrt(mean)
            z_max = max(z_max, abs(z))
            rows.append((sign, a, c, int(counts[s, b]), mean, z))
    x1 = terminal_values(law, 1.0, cut, n_ks, seed, stream=31)
    x2 = terminal_values(law, 2.0, cut, n_ks, seed, stream=32) * 2.0 ** (-1.0 / rel.alpha)
    d, p = ks_two_sample(x1, x2)
    m, se = x1.mean(), x1.std(ddof=1) / math.sqrt(n_ks)
    z_mean = m / se
    ok = z_max <= 4 and p >= 0.01 and abs(z_mean) <= 4
    item = CheckItem("3", "stable sampler statistics", z_max, "PPP band means; KS p >= 0.01; mean 0",
                     "4 s.e. (bands, mean)", ok,
                     {"band_max_abs_z": z_max, "ks_statistic": d, "ks_pvalue": p,
                      "terminal_mean": m, "terminal_mean_se": se, "terminal_mean_z": z_mean,
                      "kappa": 3.0, "cutoff": cut, "n_paths": n_paths, "n_ks": n_ks})
    return CheckOutput(item, {"stable_bands": (("sign", "lo", "hi", "count", "mean", "z"), rows)},
                       runtime_limit=120.0)


# --------------------------------------------------------------------------
# 4: disk process


RN_FUNCTIONALS = (
    ("survival", lambda y: np.ones_like(y)),
    ("band_0.8_1.3", lambda y: ((y > 0.8) & (y < 1.3)).astype(float)),
    ("terminal_mass", lambda y: y),
)


def check_disk(seed, threads=1, n_rate=20000, n_rn=10 ** 5, rn_cut=0.004):
    rates = DiskRates.from_kappa(3.0)
    state_edges = np.geomspace(0.25, 2.0, 9)
    size_edges = np.array([0.03, 0.06, 0.12, 0.25, 0.5])
    obs, exp = rate_recovery(rates, 1.0, 1.0, 0.005, n_rate, seed, state_edges, size_edges,
                             stream=41)
    z = (obs - exp) / np.sqrt(np.maximum(exp, 1e-300))
    rows = []
    nx = len(size_edges) - 1
    for s in range(len(state_edges) - 1):
        for col in range(2 * nx):
            sign = -1 if col < nx else 1
            j = col % nx
            rows.append((state_edges[s], state_edges[s + 1], sign, size_edges[j], size_edges[j + 1],
                         int(obs[s, col]), exp[s, col], z[s, col]))
    z_rate = float(np.abs(z).max())
    # Y directly against X reweighted by (y0 / X_T)**(alpha+1) on survival
    T, floor = 0.25, 0.5
    bY = disk_batch(rates, 1.0, T, floor, rn_cut, n_rn, seed, stream=42)
    bX = disk_batch(rates, 1.0, T, floor, rn_cut, n_rn, seed, stream=43, reference=True)
    sY = bY.ends == 0
    sX = (bX.ends == 0) & ~bX.halved
    w = np.where(sX, (1.0 / np.where(sX, bX.terminal, 1.0)) ** (rates.alpha + 1.0), 0.0)
    rn_rows = []
    z_rn = 0.0
    for name, f in RN_FUNCTIONALS:
        a = np.where(sY, f(bY.terminal), 0.0)
        b = w * np.where(sX, f(bX.terminal), 0.0)
        sa, sb = a.std(ddof=1) / math.sqrt(n_rn), b.std(ddof=1) / math.sqrt(n_rn)
        zz = pooled_z(a.mean(), sa, b.mean(), sb)
        z_rn = max(z_rn, abs(zz))
        rn_rows.append((name, a.mean(), sa, b.mean(), sb, zz))
    ok = z_rate <= 3 and z_rn <= 3
    item = CheckItem("4", "disk process rates and h-transform", max(z_rate, z_rn), "agreement",
                     "3 s.e. (rates), 3 pooled s.e. (reweighting)", ok,
                     {"rate_max_abs_z": z_rate, "rate_bins": int(z.size),
                      "reweight_max_abs_z": z_rn, "rate_paths": n_rate, "rn_paths": n_rn,
                      "rn_cutoff": rn_cut, "rn_horizon": T, "rn_floor": floor})
    return CheckOutput(item, {
        "disk_rates": (("state_lo", "state_hi", "sign", "x_lo", "x_hi", "observed", "expected", "z"),
                       rows),
        "disk_reweighting": (("functional", "direct", "direct_se", "reweighted", "reweighted_se",
                              "z"), rn_rows)}, runtime_limit=600.0)


# --------------------------------------------------------------------------
# 5-6: area martingale and Malthusian root


def _exit_ensemble(kappa, seed, threads, n, stream):
    rel = derive_relations(kappa)
    q_fine = carpet.default_q_fine(rel.alpha)
    return grow_ensemble_parallel(threads, kappa=kappa, n=n, seed=seed, variant="Ttilde",
                                  stop_rule=StopRule.exit_interval(), q_fine=q_fine, stream=stream)


def _floor_ensemble(kappa, seed, threads, n, stream, big_x=()):
    return grow_ensemble_parallel(threads, kappa=kappa, n=n, seed=seed, variant="Ttilde",
                                  stop_rule=StopRule.mass_floor(2.0 ** -6),
                                  lines=(2.0 ** -4, 2.0 ** -6), checkpoints=(2.0 ** -4,),
                                  q_fine=np.array([2.0, 2.5]), stream=stream, big_x=big_x)


class TreeCache:
    """Ensembles shared between items, grown on first use."""

    def __init__(self, seed, threads, n_trees=10 ** 4):
        self.seed, self.threads, self.n = seed, threads, n_trees
        self._store = {}

    def get(self, name, kappa):
        key = (name, kappa)
        if key not in self._store:
            # one stream per (kind, kappa), shared by the battery and the CLI suites
            stream = 5000 + 10 * int(round(kappa * 1000)) + (0 if name == "exit" else 1)
            if name == "exit":
                ens = _exit_ensemble(kappa, self.seed, self.threads, self.n, stream)
            else:
                big = (1.0, 2.0, 4.0) if kappa == 3.0 else ()
                ens = _floor_ensemble(kappa, self.seed, self.threads, self.n, stream, big)
            self._store[key] = ens
        return self._store[key]


def check_area(seed, threads=1, cache=None, kappas=KAPPAS_TREES):
    cache = cache or TreeCache(seed, threads)
    rows = []
    ok = True
    worst = 0.0
    for kappa in kappas:
        for name, line in (("exit", None), ("floor", 2.0 ** -4), ("floor", 2.0 ** -6)):
            ens = cache.get(name, kappa)
            big = moment_sum(ens, 2.0, line, "Ttilde")
            small = moment_sum(ens, 2.0, line, "T")
            z = (big.estimate - 1.0) / big.std_error
            gap = (1.0 - small.estimate) / small.std_error
            good = abs(z) <= 3 and big.std_error <= 0.02 and gap > 3 and big.valid
            ok &= good
            worst = max(worst, abs(z))
            label = "exit(1/2,2)" if line is None else f"floor {line:g}"
            rows.append((kappa, label, big.estimate, big.std_error, z, small.estimate,
                         small.std_error, gap, big.truncated_fraction, int(good)))
    item = CheckItem("5", "area martingale", worst, "E[sum L^2] = 1; E[sum l^2] < 1",
                     "3 s.e., s.e. <= 0.02; gap > 3 s.e.", ok,
                     {"n_trees": cache.n, "lines": [r[1] for r in rows[:3]]})
    return CheckOutput(item, {"area_martingale": (
        ("kappa", "line", "L2_mean", "L2_se", "L2_z", "l2_mean", "l2_se", "l2_gap_in_se",
         "truncated_fraction", "passed"), rows)}, runtime_limit=600.0)


def check_malthus(seed, threads=1, cache=None, kappas=KAPPAS_TREES):
    cache = cache or TreeCache(seed, threads)
    rows = []
    ok = True
    worst = 0.0
    reports = {}
    for kappa in kappas:
        ens = cache.get("exit", kappa)
        rep = malthus_root_mc(ens)
        reports[kappa] = rep
        err = abs(rep.mc_root - rep.analytic_delta)
        worst = max(worst, err)
        ok &= err <= 0.03 and rep.valid
        rows.append((kappa, rep.mc_root, rep.mc_root_se, rep.analytic_delta, err, rep.n))
    item = CheckItem("6", "Malthusian exponent (Monte Carlo)", worst, "alpha + 1/2", "0.03", ok,
                     {"n_trees": cache.n,
                      "reports": {f"{k:g}": r.as_dict() for k, r in reports.items()}})
    return CheckOutput(item, {"malthus_mc": (("kappa", "mc_root", "bootstrap_se", "target",
                                              "abs_error", "n_trees"), rows)},
                       runtime_limit=900.0)


def check_cumulant(seed=None, threads=1):
    rows = []
    worst_res = worst_root = 0.0
    for kappa in KAPPAS_CUMULANT:
        rel = derive_relations(kappa)
        res = cumulant_residual(rel.malthus_delta, rel)
        root = cumulant_root(rel)
        worst_res = max(worst_res, abs(res))
        worst_root = max(worst_root, abs(root - rel.malthus_delta))
        rows.append((kappa, rel.malthus_delta, res, root))
    ok = worst_res < 1e-3 and worst_root < 5e-3
    item = CheckItem("7", "Malthusian exponent (cumulant)", worst_res, "0",
                     "1e-3 (residual), 5e-3 (root)", ok,
                     {"max_abs_residual": worst_res, "max_root_error": worst_root})
    return CheckOutput(item, {"cumulant": (("kappa", "delta", "residual", "bisection_root"), rows)},
                       runtime_limit=5.0)


# --------------------------------------------------------------------------
# 8-9: carpet measure


MEASURE_FLOOR = 2.0 ** -8
MEASURE_EPS = (2.0 ** -6, 2.0 ** -7, 2.0 ** -8)
MEASURE_LINES = (2.0 ** -6, 2.0 ** -8)


def measure_ensemble(kappa, n, seed, threads=1, stream=80, eps=MEASURE_EPS, floor=None,
                     progress=None):
    """T-tilde trees to a mass floor with loop counts at every eps and band
    counts at the two comparison lines.  Loop-offspring are frozen (only the
    outermost layer matters here)."""
    rel = derive_relations(kappa)
    floor = min(MEASURE_FLOOR, min(eps)) if floor is None else floor
    return grow_ensemble_parallel(
        threads, kappa=kappa, n=n, seed=seed, variant="Ttilde",
        stop_rule=StopRule.mass_floor(floor), lines=(None,), label_sets=("T",),
        checkpoints=MEASURE_LINES, nest_max=0, band_lines=MEASURE_LINES, loop_eps=tuple(eps),
        q_fine=np.array([rel.malthus_delta, 2.0]), stream=stream, progress=progress)


def intrinsic_area_per_tree(ens):
    return ens.mean_moment(ens.alpha + 0.5, "own", "T")


def check_measure(seed, threads=1, n=10 ** 4, kappa=3.0, eps=MEASURE_EPS, ens=None):
    ens = measure_ensemble(kappa, n, seed, threads, eps=eps) if ens is None else ens
    m_inf = intrinsic_area_per_tree(ens)
    d = ens.alpha + 0.5
    rows = []
    cvs = []
    for e in eps:
        r = e ** d * ens.loops[e]
        corr = float(np.corrcoef(r, m_inf)[0, 1])
        ratio = r / m_inf
        cv = float(ratio.std(ddof=1) / ratio.mean())
        cvs.append(cv)
        rows.append((e, corr, cv, float(r.sum() / m_inf.sum()), float(r.mean())))
    corr_fine = rows[-1][1]
    decreasing = all(b < a for a, b in zip(cvs, cvs[1:]))
    tf = ens.truncated_fraction()
    ok8 = corr_fine >= 0.9 and decreasing and tf < carpet.TRUNCATION_THRESHOLD
    item8 = CheckItem("8", "carpet-measure loop estimator", corr_fine, "corr >= 0.9; CV decreasing",
                      "strict", ok8, {"cv": cvs, "cv_strictly_decreasing": decreasing,
                                      "truncated_fraction": tf, "n_trees": n,
                                      "intrinsic_area_mean": float(m_inf.mean())})
    lo6, est6, se6 = empirical_line_measure(ens, MEASURE_LINES[0], m_inf)
    _, est8, se8 = empirical_line_measure(ens, MEASURE_LINES[1], m_inf)
    z = (est6 - est8) / np.hypot(se6, se8)
    nu_rows = [(lo6[b, 0], lo6[b, 1], est6[b], se6[b], est8[b], se8[b], z[b])
               for b in range(len(z))]
    zmax = float(np.abs(z).max())
    item9 = CheckItem("9", "stopping-line measure self-consistency", zmax, "equal bins",
                      "3 pooled s.e.", zmax <= 3,
                      {"z": z, "total_mass_y6": float(est6.sum()), "total_mass_y8": float(est8.sum())})
    tables = {"measure_loops": (("eps", "corr_with_M", "cv_ratio", "ratio_of_sums", "mean_rescaled"),
                                rows),
              "measure_nu": (("u_lo", "u_hi", "nu_y6", "se_y6", "nu_y8", "se_y8", "z"), nu_rows)}
    return (CheckOutput(item8, tables, runtime_limit=1200.0), CheckOutput(item9, {}))


# --------------------------------------------------------------------------
# 10: tails and counts


def check_tails(seed, threads=1, cache=None, n_exit=10 ** 6):
    cache = cache or TreeCache(seed, threads)
    rel = derive_relations(3.0)
    ens = cache.get("floor", 3.0)
    rows = []
    count_ok = True
    for x, c in ens.big_loops.items():
        m = c.mean()
        count_ok &= m <= 1.0 / x ** 2
        rows.append((x, m, c.std(ddof=1) / math.sqrt(len(c)), 1.0 / x ** 2))
    target = 2 * rel.alpha + 1
    big = grow_ensemble_parallel(threads, kappa=3.0, n=n_exit, seed=seed, variant="Ttilde",
                                 stop_rule=StopRule.exit_interval(), q_fine=np.array([2.0, 2.5]),
                                 stream=90)
    l0 = big.max_loop
    hill, hill_se, k = hill_estimator(l0, 2.0)
    xs = np.geomspace(2.0, 20.0, 10)
    c_lo, c_hi = tail_bracket(l0, xs, target)
    surv = [(x, float(np.mean(l0 >= x)), float(np.mean(l0 >= x)) * x ** target) for x in xs]
    hill_ok = abs(hill - target) <= 0.15
    ok = count_ok and hill_ok and c_lo > 0 and math.isfinite(c_hi)
    item = CheckItem("10", "tail and count bounds", hill, f"2 alpha + 1 = {target:.6g}",
                     "0.15 (Hill); counts <= 1/x^2", ok,
                     {"count_bound_ok": count_ok, "hill_se": hill_se, "hill_exceedances": k,
                      "bracket_c": c_lo, "bracket_C": c_hi, "n_exit_trees": n_exit,
                      "n_floor_trees": ens.n})
    return CheckOutput(item, {
        "loop_counts": (("x", "mean_count", "se", "bound"), rows),
        "loop_tail": (("x", "survival", "survival_times_x_pow"), surv)}, runtime_limit=300.0)


# --------------------------------------------------------------------------
# 11: replay


def check_replay(seed, threads=1):
    """In-process replay of a small suite; the full two-run comparison of
    ``check`` outputs is done by the test-suite."""
    import hashlib

    def digest():
        h = hashlib.sha256()
        for kappa in KAPPAS_IDENTITY:
            h.update(np.asarray(relations_table(derive_relations(kappa), 201)).tobytes())
        ens = grow_ensemble_parallel(threads, kappa=3.0, n=200, seed=seed, variant="Ttilde",
                                     stop_rule=StopRule.mass_floor(2.0 ** -5),
                                     q_fine=np.array([1.8, 2.0]), loop_eps=(2.0 ** -5,), stream=99)
        for k in sorted(ens.moments):
            h.update(ens.moments[k].tobytes())
        h.update(ens.loops[2.0 ** -5].tobytes())
        return h.hexdigest()

    a, b = digest(), digest()
    item = CheckItem("11", "reproducibility (in-process replay)", float(a == b), "identical digests",
                     "exact", a == b, {"digest": a})
    return CheckOutput(item)


def run_battery(seed, threads=1, only=None, log=None):
    """All items in order; ``only`` restricts to a set of ids."""
    cache = TreeCache(seed, threads)
    plan = [
        ("1", lambda: check_identity()),
        ("2", lambda: check_endpoints()),
        ("3", lambda: check_stable(seed, threads)),
        ("4", lambda: check_disk(seed, threads)),
        ("5", lambda: check_area(seed, threads, cache)),
        ("6", lambda: check_malthus(seed, threads, cache)),
        ("7", lambda: check_cumulant()),
        ("8", lambda: check_measure(seed, threads)),
        ("10", lambda: check_tails(seed, threads, cache)),
        ("11", lambda: check_replay(seed, threads)),
    ]
    out = []
    for cid, fn in plan:
        if only is not None and cid not in only and not (cid == "8" and "9" in only):
            continue
        t0 = time.perf_counter()
        res = fn()
        dt = time.perf_counter() - t0
        res = res if isinstance(res, tuple) else (res,)
        # items computed together share the wall time
        for r in res:
            r.runtime = dt
            if only is None or r.item.id in only:
                out.append(r)
                if log is not None:
                    log(r)
    return out

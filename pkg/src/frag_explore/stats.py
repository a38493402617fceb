"""Small Monte Carlo helpers: estimator reports, jackknife, bootstrap, tails."""
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

TRUNCATION_THRESHOLD = 1e-3
MIN_REPLICATES = 30


@dataclass(frozen=True)
class EstimatorReport:
    estimate: float
    std_error: float
    n: int
    seed: int | None
    truncated_fraction: float = 0.0
    valid: bool = True
    note: str = ""

    def __post_init__(self):
        if not self.std_error >= 0 and not math.isnan(self.std_error):
            raise ValueError("std_error must be nonnegative")

    def within(self, target, k=3.0):
        return abs(self.estimate - target) <= k * self.std_error

    def as_dict(self):
        return asdict(self)


def report_mean(x, seed=None, truncated_fraction=0.0, threshold=TRUNCATION_THRESHOLD):
    """Sample mean with the (delete-one) jackknife standard error.

    For the mean the jackknife reproduces the usual s / sqrt(n); it is kept
    general so ratio-type statistics can share the code path.
    """
    x = np.asarray(x, float)
    if x.size == 0:
        raise ValueError("empty sample")
    est, se = jackknife(x, np.mean)
    valid = truncated_fraction < threshold and x.size >= MIN_REPLICATES
    note = ""
    if truncated_fraction >= threshold:
        note = f"truncated fraction {truncated_fraction:.3g} above {threshold:g}"
    elif x.size < MIN_REPLICATES:
        note = f"only {x.size} replicates"
    return EstimatorReport(float(est), float(se), int(x.size), seed, float(truncated_fraction),
                           valid, note)


def jackknife(x, stat):
    """Point estimate and jackknife s.e. of ``stat`` over the first axis.

    ``stat=np.mean`` uses the closed form; anything else recomputes n times.
    """
    x = np.asarray(x, float)
    n = x.shape[0]
    est = stat(x)
    if n < 2:
        return est, math.nan
    if stat is np.mean:
        loo = (x.sum(axis=0) - x) / (n - 1)
    else:
        loo = np.array([stat(np.delete(x, i, axis=0)) for i in range(n)])
    se = np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return est, se


def bootstrap(x, stat, n_boot=200, rng=None):
    """Bootstrap replicates of ``stat`` resampling rows of ``x``.

    Returns (estimate, s.e., replicate array).  Failed replicates (stat
    raising ValueError or RuntimeError, e.g. a root that no longer
    brackets) are dropped.
    """
    x = np.asarray(x)
    rng = np.random.default_rng(rng)
    n = x.shape[0]
    reps = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        try:
            reps.append(stat(x[idx]))
        except (ValueError, RuntimeError):
            continue
    reps = np.asarray(reps, float)
    se = reps.std(ddof=1) if len(reps) > 1 else math.nan
    return stat(x), se, reps


def hill_estimator(sample, x_min):
    """Hill estimate of the tail index from the observations >= x_min,
    with its asymptotic s.e. (index / sqrt(k))."""
    s = np.asarray(sample, float)
    tail = s[s >= x_min]
    k = tail.size
    if k < 2:
        return math.nan, math.nan, k
    # k / sum is the MLE for a Pareto tail started at the fixed threshold
    idx = k / np.log(tail / x_min).sum()
    return float(idx), float(idx / math.sqrt(k)), int(k)


def tail_bracket(sample, xs, index):
    """Smallest and largest ratio of the empirical survival function to
    ``x**-index`` over ``xs`` (zero-count points are skipped)."""
    s = np.sort(np.asarray(sample, float))
    n = s.size
    ratios = []
    for x in xs:
        p = (n - np.searchsorted(s, x, side="left")) / n
        if p > 0:
            ratios.append(p * x ** index)
    if not ratios:
        return math.nan, math.nan
    return float(min(ratios)), float(max(ratios))


def ks_two_sample(a, b):
    res = sps.ks_2samp(a, b)
    return float(res.statistic), float(res.pvalue)


def pooled_z(m1, s1, m2, s2):
    se = math.hypot(s1, s2)
    return (m1 - m2) / se if se > 0 else (0.0 if m1 == m2 else math.inf)

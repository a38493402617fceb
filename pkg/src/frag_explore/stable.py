"""Asymmetric alpha-stable processes built from compensated Poisson jumps."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from . import smalljumps
from .relations import DomainError
from .rng import as_rng, make_rng

JUMP_DTYPE = np.dtype([
    ("time", "f8"),
    ("size", "f8"),
    ("sign", "i1"),
    ("side", "i1"),
    ("kind", "i1"),
])

SIDE_NONE, SIDE_LEFT, SIDE_RIGHT = 0, 1, 2
KIND_PLAIN, KIND_SPLIT, KIND_LOOP = 0, 1, 2
SIDE_NAMES = {SIDE_NONE: "none", SIDE_LEFT: "left", SIDE_RIGHT: "right"}
KIND_NAMES = {KIND_PLAIN: "plain", KIND_SPLIT: "split", KIND_LOOP: "loop"}


@dataclass(frozen=True)
class StableJumpLaw:
    """Jump intensity ``a_plus dl / l**(1+alpha)`` up and ``a_minus`` down."""
    alpha: float
    a_plus: float
    a_minus: float

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise DomainError(f"alpha must lie in (1, 2), got {self.alpha}")
        if self.a_plus < 0 or self.a_minus < 0:
            raise DomainError("jump intensities must be nonnegative")

    def band_mass(self, lo, hi, sign):
        """Expected number of jumps per unit time with size in [lo, hi)."""
        a = self.a_plus if sign > 0 else self.a_minus
        hi_term = 0.0 if math.isinf(hi) else hi ** -self.alpha
        return a / self.alpha * (lo ** -self.alpha - hi_term)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    size: float
    sign: int
    side: str = "none"
    kind: str = "plain"


def events_from_table(table):
    return [JumpEvent(float(r["time"]), float(r["size"]), int(r["sign"]),
                      SIDE_NAMES[int(r["side"])], KIND_NAMES[int(r["kind"])]) for r in table]


@dataclass
class SkeletonPath:
    """Resolved jumps plus the linear compensating drift.

    With ``small_jumps="gaussian"`` the unresolved jumps are replaced by a
    Brownian motion with matched variance, sampled at the jump times and at
    the horizon (``noise``); the path is then exact only at those times.
    """
    horizon: float
    cutoff: float
    jumps: np.ndarray
    drift_rate: float
    start_value: float
    diffusion: float = 0.0
    noise: np.ndarray = field(default=None, repr=False)

    def _jump_sum(self, t):
        idx = np.searchsorted(self.jumps["time"], t, side="right")
        signed = self.jumps["size"][:idx] * self.jumps["sign"][:idx]
        return signed.sum()

    def value_at(self, t):
        if not 0.0 <= t <= self.horizon:
            raise ValueError("t outside [0, horizon]")
        v = self.start_value + self.drift_rate * t + self._jump_sum(t)
        if self.noise is not None and len(self.noise):
            times = np.append(self.jumps["time"], self.horizon)
            v += np.interp(t, np.concatenate([[0.0], times]), np.concatenate([[0.0], self.noise]))
        return float(v)

    @property
    def terminal(self):
        return self.value_at(self.horizon)

    @property
    def events(self):
        return events_from_table(self.jumps)


def compensator_drift(law, delta_cut):
    if not delta_cut > 0:
        raise DomainError("delta_cut must be positive")
    return -(law.a_plus - law.a_minus) * delta_cut ** (1.0 - law.alpha) / (law.alpha - 1.0)


def _truncated_power_sizes(rng, n, alpha, lo, cap):
    u = rng.random(n)
    if math.isinf(cap):
        return lo * u ** (-1.0 / alpha)
    # inverse transform of the density proportional to l**(-1-alpha) on [lo, cap)
    a, b = lo ** -alpha, cap ** -alpha
    return (a - u * (a - b)) ** (-1.0 / alpha)


def sample_jump_ppp(law, T, delta_cut, cap=math.inf, rng=None):
    """Jumps of size in [delta_cut, cap) on (0, T], sorted by time."""
    if not T > 0:
        raise DomainError("horizon must be positive")
    if not 0 < delta_cut < cap:
        raise DomainError("need 0 < delta_cut < cap")
    rng = as_rng(rng)
    parts = []
    for sign, a in ((1, law.a_plus), (-1, law.a_minus)):
        if a == 0:
            continue
        mean = law.band_mass(delta_cut, cap, sign) * T
        n = rng.poisson(mean)
        block = np.zeros(n, dtype=JUMP_DTYPE)
        block["size"] = _truncated_power_sizes(rng, n, law.alpha, delta_cut, cap)
        # (0, T]: flip the half-open interval of random()
        block["time"] = T * (1.0 - rng.random(n))
        block["sign"] = sign
        parts.append(block)
    if not parts:
        return np.zeros(0, dtype=JUMP_DTYPE)
    table = np.concatenate(parts)
    # ties (only possible through rounding) broken by sign, then size
    order = np.lexsort((table["size"], -table["sign"], table["time"]))
    return table[order]


def small_jump_variance(law, delta_cut):
    return smalljumps.stable_second_moment(delta_cut, law.alpha, law.a_plus, law.a_minus)


def sample_path(law, T, delta_cut, start=0.0, rng=None, small_jumps="drop"):
    """Compensated truncated stable path.

    ``small_jumps="drop"`` returns the pure skeleton; ``"gaussian"`` adds a
    Brownian component with the variance of the discarded jumps.
    """
    rng = as_rng(rng)
    jumps = sample_jump_ppp(law, T, delta_cut, rng=rng)
    drift = compensator_drift(law, delta_cut)
    path = SkeletonPath(horizon=T, cutoff=delta_cut, jumps=jumps, drift_rate=drift,
                        start_value=float(start))
    if small_jumps == "gaussian":
        var = small_jump_variance(law, delta_cut)
        times = np.append(jumps["time"], T)
        dt = np.diff(np.concatenate([[0.0], times]))
        path.diffusion = var
        path.noise = np.cumsum(rng.normal(0.0, 1.0, len(dt)) * np.sqrt(var * dt))
    elif small_jumps != "drop":
        raise ValueError(f"unknown small_jumps mode {small_jumps!r}")
    return path


def terminal_values(law, T, delta_cut, n, seed, small_jumps="gaussian", stream=0):
    """X_T for ``n`` replicates; replicate i uses stream (seed, stream, i)."""
    out = np.empty(n)
    drift = compensator_drift(law, delta_cut) * T
    sd = math.sqrt(small_jump_variance(law, delta_cut) * T)
    for i in range(n):
        rng = make_rng(seed, stream, i)
        total = drift
        for sign, a in ((1, law.a_plus), (-1, law.a_minus)):
            if a == 0:
                continue
            k = rng.poisson(law.band_mass(delta_cut, math.inf, sign) * T)
            total += sign * (delta_cut * rng.random(k) ** (-1.0 / law.alpha)).sum()
        if small_jumps == "gaussian":
            total += sd * rng.normal()
        out[i] = total
    return out


def positivity_parameter(u, alpha):
    """P in [1 - 1/alpha, 1/alpha] with u = sin(pi alpha (1-P)) / sin(pi alpha P)."""
    if u < 0:
        raise DomainError("jump ratio must be nonnegative")
    if not 1.0 < alpha < 2.0:
        raise DomainError("alpha must lie in (1, 2)")
    lo, hi = 1.0 - 1.0 / alpha, 1.0 / alpha
    if u == 0:
        return lo
    if math.isinf(u):
        return hi

    def g(P):
        return math.sin(math.pi * alpha * (1.0 - P)) - u * math.sin(math.pi * alpha * P)

    return bisect(g, lo, hi, xtol=1e-14, maxiter=200)

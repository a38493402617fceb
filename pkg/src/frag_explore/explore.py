"""Boundary-length processes of explorations.

Half-plane pairs (L, R) of independent stable processes, the disk process Y
with state-dependent rates (follow-largest policy) and the chordal disk pair
obtained from the half-plane pair by the ``Delta**-(alpha+1)`` h-transform.

Disk paths are simulated in real time by thinning against the homogeneous
stable intensity.  Between proposals the state moves by Euler steps of the
drift ``b(y)`` plus a Gaussian term carrying the variance of the unresolved
jumps below ``delta_cut``.
"""
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.integrate import quad

from . import smalljumps as sj
from .relations import DomainError, derive_relations, intensity_split
from .rng import as_rng, derive_key, key_from_rng, child_key, new_state, next_exponential, \
    next_normal, next_uniform
from .stable import JUMP_DTYPE, KIND_LOOP, KIND_SPLIT, SIDE_LEFT, SIDE_NONE, SIDE_RIGHT, \
    StableJumpLaw, sample_path

MODE_POLICY, MODE_STABLE, MODE_CHORDAL = 0, 1, 2
MODES = ("chordal-left", "chordal-right", "policy")

END_HORIZON, END_FLOOR, END_SWALLOWED, END_LIMIT = 0, 1, 2, 3
END_NAMES = ("horizon", "floor", "target-swallowed", "event-limit")

PATH_EVENT_DTYPE = np.dtype([
    ("time", "f8"), ("pre", "f8"), ("size", "f8"), ("sign", "i1"),
    ("side", "i1"), ("kind", "i1"), ("post", "f8"),
])

EULER_CAP = 0.01
MIN_STEP = 1e-14


class QuadratureError(RuntimeError):
    pass


class StepUnderflowError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# half-plane pair


@dataclass(frozen=True)
class HalfPlaneConfig:
    split: object
    law_L: StableJumpLaw
    law_R: StableJumpLaw

    @classmethod
    def from_split(cls, split, alpha):
        return cls(split, StableJumpLaw(alpha, split.a_lp, split.a_lm),
                   StableJumpLaw(alpha, split.a_rp, split.a_rm))

    @classmethod
    def from_kappa(cls, kappa, beta, a_lm=1.0):
        rel = derive_relations(kappa)
        return cls.from_split(intensity_split(beta, a_lm, rel), rel.alpha)


def sample_halfplane(config, T, delta_cut, rng=None, small_jumps="drop"):
    """Independent L and R paths plus the merged, tagged jump table.

    Tags: L-down = cut on the left, R-down = cut on the right, L-up = loop
    left of the trunk, R-up = loop right of the trunk.
    """
    if not T > 0:
        raise DomainError("horizon must be positive")
    rng = as_rng(rng)
    rng_L, rng_R = rng.spawn(2)
    path_L = sample_path(config.law_L, T, delta_cut, rng=rng_L, small_jumps=small_jumps)
    path_R = sample_path(config.law_R, T, delta_cut, rng=rng_R, small_jumps=small_jumps)
    tagged = []
    for path, side in ((path_L, SIDE_LEFT), (path_R, SIDE_RIGHT)):
        block = path.jumps.copy()
        block["side"] = side
        block["kind"] = np.where(block["sign"] > 0, KIND_LOOP, KIND_SPLIT)
        path.jumps["side"] = side
        path.jumps["kind"] = block["kind"]
        tagged.append(block)
    table = np.concatenate(tagged) if tagged else np.zeros(0, dtype=JUMP_DTYPE)
    table = table[np.lexsort((table["size"], -table["sign"], table["time"]))]
    return path_L, path_R, table


# --------------------------------------------------------------------------
# disk rates


@dataclass(frozen=True)
class DiskRates:
    alpha: float
    a_plus: float
    a_minus: float
    mode: str = "policy"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 1.0 < self.alpha < 2.0:
            raise DomainError("alpha must lie in (1, 2)")
        if self.a_plus < 0 or self.a_minus < 0:
            raise DomainError("intensities must be nonnegative")

    @classmethod
    def from_kappa(cls, kappa, a_minus=1.0):
        """Policy-mode rates with a_plus = u * a_minus."""
        rel = derive_relations(kappa)
        return cls(rel.alpha, rel.u * a_minus, a_minus, "policy")

    @classmethod
    def chordal(cls, split, alpha, side):
        if side == "left":
            return cls(alpha, split.a_lp, split.a_lm, "chordal-left")
        return cls(alpha, split.a_rp, split.a_rm, "chordal-right")


def disk_jump_rate(rates, y, l, sign, side_length=None):
    """Jump intensity density at state ``y`` for a jump of size ``l``.

    Chordal modes take ``side_length`` (the length on the jumping side,
    default ``y``): downward jumps at least that large have rate 0.
    """
    if not (y > 0 and l > 0):
        raise DomainError("need y > 0 and l > 0")
    a1 = rates.alpha + 1.0
    if sign > 0:
        return rates.a_plus * y ** a1 / (l ** a1 * (y + l) ** a1)
    if rates.mode == "policy":
        if l >= y / 2:
            return 0.0
    else:
        side = y if side_length is None else side_length
        if l >= side or l >= y:
            return 0.0
    return rates.a_minus * y ** a1 / (l ** a1 * (y - l) ** a1)


def total_jump_rate(rates, y, delta, side_length=None, rtol=1e-8):
    """Integrated intensity of jumps of size >= delta, both signs."""
    if not 0 < delta < y / 2:
        raise DomainError("need 0 < delta < y/2")
    pieces = []
    if rates.a_plus > 0:
        pieces += [((delta, y), 1), ((y, math.inf), 1)]
    if rates.a_minus > 0:
        top = y / 2 if rates.mode == "policy" else min(y, y if side_length is None else side_length)
        pieces.append(((delta, top), -1))
    total = 0.0
    for (lo, hi), s in pieces:
        f = lambda l, s=s: disk_jump_rate(rates, y, l, s, side_length)
        val, err = quad(f, lo, hi, epsrel=rtol / 10, epsabs=0.0, limit=200)
        if not err <= rtol * abs(val) + 1e-300:
            raise QuadratureError(f"rate integral on ({lo}, {hi}) did not reach rtol {rtol}")
        total += val
    return total


def rn_weight(rates, delta0, delta_t):
    """Radon-Nikodym factor (delta0 / delta_t)**(alpha+1) of the h-transform."""
    if not (delta0 > 0 and delta_t > 0):
        raise DomainError("boundary lengths must be positive")
    return (delta0 / delta_t) ** (rates.alpha + 1.0)


# --------------------------------------------------------------------------
# compiled real-time kernel


@njit(cache=True)
def _continuous(mode, y, alpha, a_p, a_m, delta):
    """Drift and small-jump variance per unit time at state y."""
    if mode == 1:
        b = sj.compensator_unit(delta, alpha, a_p, a_m)
        v = sj.stable_second_moment(delta, alpha, a_p, a_m)
        return b, v
    return sj.disk_drift(y, delta, alpha, a_p, a_m), sj.disk_variance_rate(y, delta, alpha, a_p, a_m)


@njit(cache=True)
def _bridge_below(y0, y1, lv, var):
    if y1 <= lv:
        return 1.0
    if var <= 0.0:
        return 0.0
    return np.exp(-2.0 * (y0 - lv) * (y1 - lv) / var)


@njit(cache=True)
def _spread(occ, lo, hi, s0, s1, dt):
    """Add time ``dt`` to log-state bins, spread uniformly along [s0, s1]."""
    n = occ.shape[0]
    w = (hi - lo) / n
    a = min(s0, s1)
    b = max(s0, s1)
    if b - a < 1e-12 * w:
        k = int((s0 - lo) / w)
        if 0 <= k < n:
            occ[k] += dt
        return
    ka = max(int(np.floor((a - lo) / w)), 0)
    kb = min(int(np.floor((b - lo) / w)), n - 1)
    for k in range(ka, kb + 1):
        e0 = max(a, lo + k * w)
        e1 = min(b, lo + (k + 1) * w)
        if e1 > e0:
            occ[k] += dt * (e1 - e0) / (b - a)


@njit(cache=True)
def _disk_path(mode, alpha, aLp, aLm, aRp, aRm, L0, R0, horizon, floor, delta, key,
               record, max_events, occ_lo, occ_hi, occ, cnt_state_edges, cnt_size_edges, counts):
    """One disk path.  Returns (end code, terminal L, terminal R, time, halved
    flag, n_events, events).  Occupation (time per fine log-state bin) and
    accepted jump counts per (state bin, signed relative size bin) are added
    into ``occ`` and ``counts`` when those arrays are non-empty."""
    a1 = alpha + 1.0
    two_a1 = 2.0 ** a1
    state = new_state(key)
    L = L0
    R = R0
    chordal = mode == 2
    t = 0.0
    halved = False
    n_ev = 0
    events = np.empty((max_events if record else 1, 7))
    n_occ = occ.shape[0]
    n_sb = counts.shape[0] if counts.shape[0] > 0 else 0
    n_xb = cnt_size_edges.shape[0] - 1
    end = 0
    # dominating intensity of each proposal class at cut delta
    dpow = delta ** (-alpha) / alpha
    if chordal:
        lam_lp = aLp * dpow
        lam_rp = aRp * dpow
    else:
        lam_lp = aLp * dpow
        lam_rp = 0.0
    wait = next_exponential(state)
    while True:
        y = L + R if chordal else L
        if chordal:
            bL, vL = _continuous(0, y, alpha, aLp, aLm, delta)
            bR, vR = _continuous(0, y, alpha, aRp, aRm, delta)
            b = bL + bR
            v = vL + vR
        else:
            b, v = _continuous(mode, y, alpha, aLp, aLm, delta)
            bL = b
            vL = v
            bR = 0.0
            vR = 0.0
        h = EULER_CAP
        if abs(b) > 0 and 0.01 * y / abs(b) < h:
            h = 0.01 * y / abs(b)
        if v > 0 and 0.01 * y * y / v < h:
            h = 0.01 * y * y / v
        if h < MIN_STEP:
            return -1, L, R, t, halved, n_ev, events
        if horizon - t < h:
            h = horizon - t
        # dominating rate of downward proposals at this state
        if chordal:
            wL = two_a1
            if L > y / 2:
                wL = (y / R) ** a1 if R > 0 else np.inf
            wR = two_a1
            if R > y / 2:
                wR = (y / L) ** a1 if L > 0 else np.inf
            lam_lm = aLm * wL * dpow
            lam_rm = aRm * wR * dpow
        elif mode == 0:
            lam_lm = aLm * two_a1 * dpow
            lam_rm = 0.0
        else:
            lam_lm = aLm * dpow
            lam_rm = 0.0
        lam = lam_lp + lam_lm + lam_rp + lam_rm
        step = h
        jump_now = False
        if lam > 0 and wait / lam <= h:
            step = wait / lam
            jump_now = True
        # continuous move over `step`
        z = next_normal(state)
        if chordal:
            z2 = next_normal(state)
            L1 = L + bL * step + np.sqrt(vL * step) * z
            R1 = R + bR * step + np.sqrt(vR * step) * z2
            y1 = L1 + R1
        else:
            L1 = L + b * step + np.sqrt(v * step) * z
            R1 = 0.0
            y1 = L1
        if n_occ > 0 and y1 > 0:
            _spread(occ, occ_lo, occ_hi, np.log(y), np.log(y1), step)
        ub = next_uniform(state)
        crossed = False
        if floor > 0:
            crossed = ub < _bridge_below(y, y1, floor, v * step)
        if crossed:
            t += step
            if chordal:
                s = floor / y
                L = L * s
                R = R * s
            else:
                L = floor
            end = 1
            break
        if chordal and (L1 <= 0 or R1 <= 0):
            t += step
            L = L1
            R = R1
            end = 2
            break
        L = L1
        R = R1
        t += step
        if jump_now:
            wait = next_exponential(state)
        else:
            wait -= lam * step
            if t >= horizon:
                end = 0
                break
            continue
        # resolved jump proposal at the current state
        y = L + R if chordal else L
        pick = next_uniform(state) * lam
        ua = next_uniform(state)
        l = delta * next_uniform(state) ** (-1.0 / alpha)
        sign = 1
        side = 1
        if pick < lam_lp:
            sign = 1
            side = 1
        elif pick < lam_lp + lam_lm:
            sign = -1
            side = 1
        elif pick < lam_lp + lam_lm + lam_rp:
            sign = 1
            side = 2
        else:
            sign = -1
            side = 2
        if mode == 1:
            acc = 1.0
        elif sign > 0:
            acc = (y / (y + l)) ** a1
        elif mode == 0:
            acc = (y / (y - l)) ** a1 / two_a1 if l < y / 2 else 0.0
        else:
            own = L if side == 1 else R
            wmax = wL if side == 1 else wR
            acc = (y / (y - l)) ** a1 / wmax if l < own else 0.0
        if acc > 1.0 + 1e-12:
            return -2, L, R, t, halved, n_ev, events
        if ua >= acc:
            continue
        pre = y
        if mode == 1 and sign < 0 and l >= y / 2:
            halved = True
        if sign > 0:
            if side == 1:
                L += l
            else:
                R += l
        else:
            if side == 1:
                L -= l
            else:
                R -= l
        post = L + R if chordal else L
        if n_sb > 0:
            ks = np.searchsorted(cnt_state_edges, pre) - 1
            x = l / pre
            kx = np.searchsorted(cnt_size_edges, x) - 1
            if 0 <= ks < n_sb and 0 <= kx < n_xb:
                counts[ks, kx + (n_xb if sign > 0 else 0)] += 1
        if record:
            if n_ev >= max_events:
                end = 3
                break
            events[n_ev, 0] = t
            events[n_ev, 1] = pre
            events[n_ev, 2] = l
            events[n_ev, 3] = sign
            events[n_ev, 4] = side if chordal else 0
            events[n_ev, 5] = 2 if sign > 0 else 1
            events[n_ev, 6] = post
        n_ev += 1
        if post <= floor:
            end = 1
            break
        if not chordal and post <= 0:
            end = 1
            break
    return end, L, R, t, halved, n_ev, events


_EMPTY_F = np.zeros(0)
_EMPTY_C = np.zeros((0, 0), dtype=np.int64)


@dataclass
class DiskPath:
    start: tuple
    events: np.ndarray
    floor: float
    absorbed: bool
    end_reason: str
    end_time: float
    terminal: tuple
    horizon: float
    delta_cut: float

    @property
    def jump_events(self):
        from .stable import JumpEvent, KIND_NAMES, SIDE_NAMES
        return [JumpEvent(float(e["time"]), float(e["size"]), int(e["sign"]),
                          SIDE_NAMES[int(e["side"])], KIND_NAMES[int(e["kind"])]) for e in self.events]


def _events_table(raw, n):
    out = np.zeros(n, dtype=PATH_EVENT_DTYPE)
    for i, name in enumerate(PATH_EVENT_DTYPE.names):
        out[name] = raw[:n, i]
    return out


def _check_end(end):
    if end == -1:
        raise StepUnderflowError("Euler step underflow: state collapsing faster than the guard")
    if end == -2:
        raise AssertionError("thinning domination violated")


def _run_single(mode, alpha, aLp, aLm, aRp, aRm, L0, R0, horizon, floor, delta, key, max_events):
    end, L, R, t, halved, n, ev = _disk_path(
        mode, alpha, aLp, aLm, aRp, aRm, float(L0), float(R0), float(horizon), float(floor),
        float(delta), np.uint64(key), True, int(max_events), 0.0, 1.0, _EMPTY_F, _EMPTY_F,
        _EMPTY_F, _EMPTY_C)
    _check_end(end)
    return end, L, R, t, halved, _events_table(ev, n)


def _kernel_key(rng, seed, key):
    if key is not None:
        return int(key)
    if seed is not None:
        return derive_key(seed, 0)
    return key_from_rng(rng)


def sample_disk_policy(rates, y0, horizon, floor, delta_cut, rng=None, *, seed=None, key=None,
                       max_events=10 ** 6):
    """Follow-largest disk process started at ``y0`` until ``horizon`` or the
    first passage below ``floor``."""
    if rates.mode != "policy":
        raise ValueError("policy-mode rates required")
    if not y0 > floor >= 0:
        raise DomainError("need y0 > floor >= 0")
    if not delta_cut > 0:
        raise DomainError("delta_cut must be positive")
    k = _kernel_key(rng, seed, key)
    end, L, _, t, _, ev = _run_single(MODE_POLICY, rates.alpha, rates.a_plus, rates.a_minus, 0.0,
                                      0.0, y0, 0.0, horizon, floor, delta_cut, k, max_events)
    return DiskPath((float(y0),), ev, float(floor), end != END_HORIZON, END_NAMES[end], t, (L,),
                    float(horizon), float(delta_cut))


def sample_disk_chordal(split, alpha, L0, R0, horizon, delta_cut, rng=None, *, floor=0.0,
                        seed=None, key=None, max_events=10 ** 6):
    """Chordal disk pair: half-plane per-side rates reweighted by
    ``(Delta / Delta_after)**(alpha+1)``, downward jumps bounded by their side."""
    if not (L0 > 0 and R0 > 0):
        raise DomainError("need L0, R0 > 0")
    k = _kernel_key(rng, seed, key)
    end, L, R, t, _, ev = _run_single(MODE_CHORDAL, alpha, split.a_lp, split.a_lm, split.a_rp,
                                      split.a_rm, L0, R0, horizon, floor, delta_cut, k, max_events)
    return DiskPath((float(L0), float(R0)), ev, float(floor), end != END_HORIZON, END_NAMES[end], t,
                    (L, R), float(horizon), float(delta_cut))


# --------------------------------------------------------------------------
# batches


@njit(cache=True)
def _batch(mode, alpha, aLp, aLm, aRp, aRm, L0, R0, horizon, floor, delta, master, n,
           occ_lo, occ_hi, occ, s_edges, x_edges, counts):
    ends = np.empty(n, dtype=np.int64)
    term = np.empty(n)
    halved = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        key = child_key(master, i)
        e, L, R, t, hv, ne, ev = _disk_path(mode, alpha, aLp, aLm, aRp, aRm, L0, R0, horizon,
                                            floor, delta, key, False, 0, occ_lo, occ_hi, occ,
                                            s_edges, x_edges, counts)
        ends[i] = e
        term[i] = L + R
        halved[i] = hv
    return ends, term, halved


@dataclass
class DiskBatch:
    ends: np.ndarray
    terminal: np.ndarray
    halved: np.ndarray
    occupation: np.ndarray | None = None
    counts: np.ndarray | None = None


def disk_batch(rates, y0, horizon, floor, delta_cut, n, seed, stream=0, reference=False,
               occupation=None, count_grid=None):
    """Terminal states of ``n`` independent disk paths.

    ``reference=True`` simulates the stable process X with the same jump
    constants instead of Y (jumps of at least half the state are flagged in
    ``halved``).  ``occupation=(lo, hi, n_bins)`` accumulates time per fine
    log-state bin; ``count_grid=(state_edges, size_edges)`` counts accepted
    jumps per (state bin, relative size bin), negative sizes first.
    """
    mode = MODE_STABLE if reference else MODE_POLICY
    master = np.uint64(derive_key(seed, stream))
    if occupation is not None:
        occ_lo, occ_hi, nb = math.log(occupation[0]), math.log(occupation[1]), int(occupation[2])
        occ = np.zeros(nb)
    else:
        occ_lo, occ_hi, occ = 0.0, 1.0, _EMPTY_F
    if count_grid is not None:
        s_edges = np.asarray(count_grid[0], float)
        x_edges = np.asarray(count_grid[1], float)
        counts = np.zeros((len(s_edges) - 1, 2 * (len(x_edges) - 1)), dtype=np.int64)
    else:
        s_edges, x_edges, counts = _EMPTY_F, _EMPTY_F, _EMPTY_C
    ends, term, halved = _batch(mode, rates.alpha, rates.a_plus, rates.a_minus, 0.0, 0.0,
                                float(y0), 0.0, float(horizon), float(floor), float(delta_cut),
                                master, int(n), occ_lo, occ_hi, occ, s_edges, x_edges, counts)
    for e in (-1, -2):
        if np.any(ends == e):
            _check_end(e)
    return DiskBatch(ends, term, halved, occ if occupation is not None else None,
                     counts if count_grid is not None else None)


def rate_recovery(rates, y0, horizon, delta_cut, n, seed, state_edges, size_edges, n_fine=64,
                  stream=1, floor=None):
    """Observed jump counts against the compensator from the occupation
    histogram, per (state bin, signed relative size bin).

    Returns (observed, expected) with negative-size columns first.  Paths
    stop below ``floor`` (default: half the lowest state edge).
    """
    state_edges = np.asarray(state_edges, float)
    size_edges = np.asarray(size_edges, float)
    nb = (len(state_edges) - 1) * n_fine
    lo, hi = state_edges[0], state_edges[-1]
    if not np.allclose(np.diff(np.log(state_edges)), np.log(hi / lo) / (len(state_edges) - 1)):
        raise ValueError("state edges must be geometric")
    floor = 0.5 * state_edges[0] if floor is None else floor
    batch = disk_batch(rates, y0, horizon, floor, delta_cut, n, seed, stream,
                       occupation=(lo, hi, nb), count_grid=(state_edges, size_edges))
    fine_edges = np.exp(np.linspace(np.log(lo), np.log(hi), nb + 1))
    centres = np.sqrt(fine_edges[:-1] * fine_edges[1:])
    coarse = np.searchsorted(state_edges, centres) - 1
    nx = len(size_edges) - 1
    expected = np.zeros_like(batch.counts, dtype=float)
    for f, y in enumerate(centres):
        s = coarse[f]
        if not 0 <= s < len(state_edges) - 1 or batch.occupation[f] == 0:
            continue
        for j in range(nx):
            for col, sign in ((j, -1), (j + nx, 1)):
                g = lambda x: y * disk_jump_rate(rates, y, x * y, sign)
                val = quad(g, size_edges[j], size_edges[j + 1], epsrel=1e-10, points=[0.5]
                           if size_edges[j] < 0.5 < size_edges[j + 1] else None)[0]
                expected[s, col] += batch.occupation[f] * val
    return batch.counts, expected

"""Growth-fragmentation trees T and T-tilde grown from the disk process.

Each particle's mass evolves as the follow-largest (or q-weighted) disk
process, simulated in its own Lamperti clock where log-mass is a Levy
process: jumps above the relative cut ``c = min(eta, delta_cut / mass)`` are
drawn exactly by thinning, the rest are replaced by a Brownian motion with
matched mean and variance.  Pieces below ``delta_cut`` are never
materialised; their expected contribution to ``sum(label**q)`` on a fixed
exponent grid (and to counts in fixed mass bands) is accumulated per
particle and reported with every stopping line.
"""
import functools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import smalljumps as sj
from .rng import child_key, derive_key, key_from_rng, new_state, next_exponential, next_normal, \
    next_uniform

ORIGIN_ROOT, ORIGIN_SPLIT, ORIGIN_LOOP = 0, 1, 2
ORIGIN_NAMES = ("root", "split-offspring", "loop-offspring")

STATUS_FROZEN, STATUS_STOPPED, STATUS_TRUNCATED = 0, 1, 2
STATUS_NAMES = ("frozen-at-birth", "stopped-at-line", "truncated-by-budget")

EV_LOOP, EV_SPLIT, EV_CROSS, EV_EXIT = 0, 1, 3, 4
EV_NAMES = {EV_LOOP: "loop", EV_SPLIT: "split", EV_CROSS: "cross", EV_EXIT: "exit"}

PROV_SPLIT, PROV_LOOP, PROV_TERMINAL = 0, 1, 2
PROV_NAMES = ("discarded-split-piece", "loop-jump", "terminal-label")

RULE_FLOOR, RULE_EXIT, RULE_FIRST_POSITIVE = 0, 1, 2

PARTICLE_FIELDS = ("parent", "origin", "birth_mass", "birth_depth", "nest", "status",
                   "birth_time", "birth_event", "ev_start", "ev_end")
EVENT_FIELDS = ("pid", "time", "pre", "size", "sign", "kind", "post", "child", "level", "ghost")

PARTICLE_DTYPE = np.dtype([
    ("id", "i8"), ("parent", "i8"), ("origin", "i1"), ("birth_mass", "f8"),
    ("birth_depth", "i4"), ("nest", "i4"), ("status", "i1"), ("birth_time", "f8"),
    ("birth_event", "i8"), ("ev_start", "i8"), ("ev_end", "i8"),
])

EVENT_DTYPE = np.dtype([
    ("pid", "i8"), ("time", "f8"), ("pre", "f8"), ("size", "f8"), ("sign", "i1"),
    ("kind", "i1"), ("post", "f8"), ("child", "i8"), ("level", "i4"), ("ghost", "i8"),
])

DEFAULT_ETA = 0.1
DEFAULT_BUDGET = 10 ** 6
DEFAULT_FLOOR = 2.0 ** -10


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class BranchPolicy:
    kind: str = "follow-largest"
    q: float = math.inf

    def __post_init__(self):
        if self.kind not in ("follow-largest", "q-weighted", "chordal-none"):
            raise ValueError(f"unknown branch policy {self.kind!r}")
        if self.kind == "q-weighted" and not (self.q > 0 and math.isfinite(self.q)):
            raise ValueError("q-weighted policy needs a finite q")

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text in ("largest", "follow-largest"):
            return cls()
        if text.startswith("q="):
            return cls("q-weighted", float(text[2:]))
        if text in ("none", "chordal-none"):
            return cls("chordal-none")
        raise ValueError(f"cannot parse branch policy {text!r}")

    def label(self):
        if self.kind == "follow-largest":
            return "largest"
        return f"q={self.q!r}" if self.kind == "q-weighted" else "none"


@dataclass(frozen=True)
class StopRule:
    kind: str
    a: float = 0.0
    b: float = 0.0

    @classmethod
    def mass_floor(cls, y=DEFAULT_FLOOR):
        return cls("mass-floor", float(y))

    @classmethod
    def exit_interval(cls, lo=0.5, hi=2.0):
        return cls("exit-interval", float(lo), float(hi))

    @classmethod
    def first_positive_jump(cls):
        return cls("first-positive-jump")

    def code(self):
        return {"mass-floor": RULE_FLOOR, "exit-interval": RULE_EXIT,
                "first-positive-jump": RULE_FIRST_POSITIVE}[self.kind]

    def describe(self):
        if self.kind == "mass-floor":
            return f"mass-floor({self.a!r})"
        if self.kind == "exit-interval":
            return f"exit-interval({self.a!r},{self.b!r})"
        return self.kind


@dataclass(frozen=True)
class Particle:
    id: int
    parent: int | None
    origin: str
    birth_mass: float
    birth_depth: int
    status: str


@dataclass
class FragTree:
    """Result of :func:`grow_tree`; treat as immutable.

    ``ghost[r]`` is a particle's unresolved-piece accumulator at the event
    whose ``ghost`` column is ``r``: expected sums of piece**q over split
    pieces then loops for each ``q_grid`` entry, then expected split-piece
    counts per ``bands`` row.
    """
    variant: str
    policy: BranchPolicy
    rule: StopRule
    root_mass: float
    alpha: float
    particles: np.ndarray
    events: np.ndarray
    ghost: np.ndarray
    q_grid: np.ndarray
    bands: np.ndarray
    checkpoints: np.ndarray
    delta_cut: float
    eta: float
    nest_max: int
    truncated: bool = False
    line_labels: object = None

    @property
    def n_particles(self):
        return len(self.particles)

    def particle(self, i):
        r = self.particles[i]
        return Particle(int(r["id"]), None if r["parent"] < 0 else int(r["parent"]),
                        ORIGIN_NAMES[r["origin"]], float(r["birth_mass"]),
                        int(r["birth_depth"]), STATUS_NAMES[r["status"]])

    def truncated_fraction(self, q=2.0):
        """Share of root_mass**q carried by particles cut off by the budget."""
        p = self.particles
        mask = p["status"] == STATUS_TRUNCATED
        return float((p["birth_mass"][mask] ** q).sum() / self.root_mass ** q)

    def events_of(self, pid):
        r = self.particles[pid]
        if r["ev_start"] < 0:
            return self.events[:0]
        return self.events[r["ev_start"]:r["ev_end"]]

    def records(self):
        """Plain-python view used for tree.json."""
        parts = [{k: (v.item() if hasattr(v, "item") else v) for k, v in zip(PARTICLE_DTYPE.names, r)}
                 for r in self.particles]
        for d in parts:
            d["origin"] = ORIGIN_NAMES[d["origin"]]
            d["status"] = STATUS_NAMES[d["status"]]
            d["parent"] = None if d["parent"] < 0 else d["parent"]
        evs = [{k: (v.item() if hasattr(v, "item") else v) for k, v in zip(EVENT_DTYPE.names, r)}
               for r in self.events]
        for e in evs:
            e["kind"] = EV_NAMES[e["kind"]]
            e["child"] = None if e["child"] < 0 else e["child"]
            e["level"] = None if e["level"] < 0 else e["level"]
            e.pop("ghost")
        return {"variant": self.variant, "policy": self.policy.label(),
                "rule": self.rule.describe(), "root_mass": self.root_mass,
                "delta_cut": self.delta_cut, "eta": self.eta, "truncated": self.truncated,
                "truncated_fraction": self.truncated_fraction(),
                "particles": parts, "events": evs}


@dataclass
class StoppingLineResult:
    labels: np.ndarray
    provenance: np.ndarray
    particle_ids: np.ndarray
    nest: np.ndarray
    rule: str
    y: float | None
    q_grid: np.ndarray
    bands: np.ndarray
    ghost_T: np.ndarray | None
    ghost_tilde: np.ndarray | None
    band_ghost_T: np.ndarray | None
    truncated_fraction: float = 0.0

    def provenance_names(self):
        return [PROV_NAMES[p] for p in self.provenance]

    def select(self, label_set):
        """Labels of the T-line (``"T"``) or the full T-tilde line (``"Ttilde"``)."""
        if label_set in ("T", "l"):
            return self.labels[self.provenance != PROV_LOOP]
        if label_set in ("Ttilde", "L"):
            return self.labels
        raise ValueError(f"unknown label set {label_set!r}")

    def unresolved(self, q, label_set):
        """Expected sum of piece**q over pieces below the simulation cut."""
        g = self.ghost_T if label_set in ("T", "l") else self.ghost_tilde
        if g is None:
            return None
        return _interp_ghost(self.q_grid, g, q)

    def moment(self, q, label_set, include_unresolved=True):
        total = float((self.select(label_set) ** q).sum())
        if include_unresolved:
            extra = self.unresolved(q, label_set)
            if extra is not None:
                total += extra
        return total

    def band_counts(self, label_set="T", include_unresolved=True):
        """Label counts per ``bands`` row, plus expected unresolved pieces."""
        lab = self.select(label_set)
        out = np.array([np.count_nonzero((lab >= lo) & (lab < hi)) for lo, hi in self.bands],
                       dtype=float)
        if include_unresolved and self.band_ghost_T is not None and label_set in ("T", "l"):
            out += self.band_ghost_T
        return out


def _interp_ghost(q_grid, g, q):
    if len(q_grid) == 0:
        return None
    k = np.argmin(np.abs(q_grid - q))
    if abs(q_grid[k] - q) < 1e-12:
        return float(g[k])
    if q < q_grid[0] or q > q_grid[-1]:
        raise ValueError(f"exponent {q} outside the tree's exponent grid")
    if np.all(g > 0):
        # smooth and exponential-like in q: interpolate the logarithm
        return float(np.exp(np.interp(q, q_grid, np.log(g))))
    return float(np.interp(q, q_grid, g))


def choose_branch(policy, l, total, rng):
    """'follow-l' or 'follow-other' at a split of ``total`` into l, total - l."""
    if not 0 < l < total:
        raise ValueError("need 0 < l < total")
    if policy.kind == "follow-largest":
        return "follow-l" if l > total - l else "follow-other"
    if policy.kind == "q-weighted":
        return "follow-l" if rng.random() < branch_probability(policy.q, l, total) else "follow-other"
    raise ValueError("chordal-none policy does not branch")


def branch_probability(q, l, total):
    # ratio form stays finite for large q
    return 1.0 / (1.0 + ((total - l) / l) ** q)


# --------------------------------------------------------------------------
# compiled growth kernel


@njit(cache=True)
def _grow_rows(a, n):
    if n < a.shape[0]:
        return a
    b = np.empty((2 * a.shape[0] + 16,) + a.shape[1:], dtype=a.dtype)
    b[:a.shape[0]] = a
    return b


@njit(cache=True)
def _grow_vec(a, n):
    if n < a.shape[0]:
        return a
    b = np.empty(2 * a.shape[0] + 16, dtype=a.dtype)
    b[:a.shape[0]] = a
    return b


@njit(cache=True)
def _push_row(evs, n_e, pid, t, pre, size, sign, kind, post, child, level, grow):
    evs = _grow_rows(evs, n_e)
    evs[n_e, 0] = pid
    evs[n_e, 1] = t
    evs[n_e, 2] = pre
    evs[n_e, 3] = size
    evs[n_e, 4] = sign
    evs[n_e, 5] = kind
    evs[n_e, 6] = post
    evs[n_e, 7] = child
    evs[n_e, 8] = level
    evs[n_e, 9] = grow
    return evs


@njit(cache=True)
def _snapshot(ghost, n_g, acc):
    ghost = _grow_rows(ghost, n_g)
    ghost[n_g] = acc
    return ghost


@njit(cache=True)
def _add_label(line_lab, k0, k1, val, is_t, q_lab, bands, powq):
    """Label ``val`` on lines k0..k1-1, stored as a difference array with
    columns [T q-moments | T-tilde q-moments | T band counts]."""
    if k1 <= k0:
        return
    nql = q_lab.shape[0]
    lv = np.log(val)
    for i in range(nql):
        powq[i] = np.exp(q_lab[i] * lv)
    for i in range(nql):
        line_lab[k0, nql + i] += powq[i]
        line_lab[k1, nql + i] -= powq[i]
    if is_t:
        for i in range(nql):
            line_lab[k0, i] += powq[i]
            line_lab[k1, i] -= powq[i]
        for b in range(bands.shape[0]):
            if bands[b, 0] <= val < bands[b, 1]:
                line_lab[k0, 2 * nql + b] += 1.0
                line_lab[k1, 2 * nql + b] -= 1.0


@njit(cache=True)
def _add_crossing(line_gh, k, acc, outer, nq):
    """Unresolved accumulators of a particle stopped at line k; layout
    [T q-moments | T-tilde q-moments | T band counts]."""
    n_acc = acc.shape[0]
    for i in range(nq):
        line_gh[k, nq + i] += acc[i] + acc[nq + i]
    if outer:
        for i in range(nq):
            line_gh[k, i] += acc[i]
        for i in range(2 * nq, n_acc):
            line_gh[k, i] += acc[i]


@njit(cache=True)
def _grow_kernel(alpha, a_plus, a_minus, q_branch, tilde, nest_max, rule, rule_a, rule_b,
                 checkpoints, root_mass, eta, lam, q_grid, bands, tab, tree_key,
                 max_particles, max_events, max_steps, log_edges, band_edge, ftab,
                 lean, q_lab, loop_bands):
    """Depth-first growth in the Lamperti clock of every particle.

    Cut for resolved jumps at state y: c = min(eta, lam / y).  Ghost
    accumulator layout: [split q-moments | loop q-moments | split band counts].

    For mass-floor rules the line sums at every checkpoint are accumulated
    on the fly.  ``lean`` keeps only the particles still to be grown (the
    stack itself), so memory no longer scales with the tree size; the random
    stream is consumed identically either way.
    """
    nq = q_grid.shape[0]
    nb = bands.shape[0]
    n_acc = 2 * nq + nb
    n_edge = log_edges.shape[0]
    edge_f = np.empty(n_edge)
    # column 10: first checkpoint the particle can still stop at
    parts = np.empty((1024, 11))
    keys = np.empty(1024, dtype=np.uint64)
    evs = np.empty((4096, 10))
    ghost = np.empty((256, n_acc))
    stack = np.empty(1024, dtype=np.int64)
    acc = np.zeros(n_acc)
    row = np.empty(tab.shape[1])
    truncated = False
    nql = q_lab.shape[0]
    n_lin = checkpoints.shape[0] if rule == 0 else 0
    line_lab = np.zeros((n_lin + 1, 2 * nql + nb))
    line_gh = np.zeros((n_lin, n_acc))
    powq = np.empty(nql)
    n_lb = loop_bands.shape[0]
    loop_cnt = np.zeros(n_lb)
    max_loop = 0.0
    top_lab = 0.0
    trunc_m2 = 0.0
    n_made = 1

    parts[0, 0] = -1
    parts[0, 1] = 0
    parts[0, 2] = root_mass
    parts[0, 3] = 0
    parts[0, 4] = 0
    parts[0, 5] = 1
    parts[0, 6] = 0.0
    parts[0, 7] = -1
    parts[0, 8] = -1
    parts[0, 9] = -1
    parts[0, 10] = 0
    keys[0] = np.uint64(tree_key)
    n_p = 1
    n_e = 0
    n_g = 0
    stack[0] = 0
    n_s = 1

    finite_q = q_branch < np.inf
    two_a1 = 2.0 ** (alpha + 1.0)
    two_a = 2.0 ** alpha
    n_check = checkpoints.shape[0]
    log_checks = np.log(checkpoints)
    floor = checkpoints[n_check - 1]
    log_lo = np.log(rule_a) if rule == 1 else -np.inf
    log_hi = np.log(rule_b) if rule == 1 else np.inf
    chord = 2.0 * (two_a1 - 1.0)
    half_pow1 = 0.5 ** (1.0 - alpha)
    sw_coef = 0.0
    if finite_q:
        sw_coef = a_minus * two_a1 * 2.0 ** q_branch / (q_branch - alpha)

    while n_s > 0:
        n_s -= 1
        pid = stack[n_s]
        m = parts[pid, 2]
        if truncated:
            trunc_m2 += m * m
            if not lean:
                parts[pid, 5] = 2
            continue
        kp = keys[pid]
        if not lean:
            parts[pid, 8] = n_e
        state = new_state(kp)
        n_child = 0
        z = np.log(m)
        t = parts[pid, 6]
        nest = int(parts[pid, 4])
        depth = int(parts[pid, 3])
        acc[:] = 0.0
        j = int(parts[pid, 10])
        if rule == 0:
            while j < n_check and checkpoints[j] > m:
                j += 1
            if parts[pid, 0] < 0:
                # a root above some checkpoints is itself a label there
                _add_label(line_lab, 0, j, m, True, q_lab, bands, powq)
        steps = 0
        alive = True
        while alive:
            steps += 1
            if steps > max_steps or n_e + n_check + 2 > max_events:
                truncated = True
                trunc_m2 += m * m
                if not lean:
                    parts[pid, 5] = 2
                break
            y = np.exp(z)
            c = eta
            if lam / y < eta:
                c = lam / y
            sj.table_row(tab, c, eta, row)
            n2 = c ** (2.0 - alpha)
            d = (sj.compensator_unit(c, alpha, a_plus, a_minus) + (row[0] - 0.5 * row[1]) * n2)
            v = row[1] * n2
            c_pow = c ** (-alpha)
            r_pos = a_plus * c_pow / alpha
            # negative proposals from x**(-1-alpha) * (1 + chord * x) on (c, 1/2),
            # which dominates the split kernel since (1-x)**(-1-alpha) is convex
            r_neg1 = 0.0
            r_neg2 = 0.0
            c_pow1 = c ** (1.0 - alpha)
            if c < 0.5:
                r_neg1 = a_minus * (c_pow - two_a) / alpha
                r_neg2 = a_minus * chord * (c_pow1 - half_pow1) / (alpha - 1.0)
            r_neg = r_neg1 + r_neg2
            r_sw = 0.0
            if finite_q:
                r_sw = sw_coef * c ** (q_branch - alpha)
            r_tot = r_pos + r_neg + r_sw
            tau = next_exponential(state) / r_tot
            sd = np.sqrt(v * tau)
            z1 = z + d * tau + sd * next_normal(state)
            dz = z1 - z
            u_bridge = next_uniform(state)
            # first passages of the continuous part
            if rule == 0:
                while j < n_check:
                    lv = log_checks[j]
                    crossed = z1 <= lv
                    if not crossed and sd > 0:
                        crossed = u_bridge < np.exp(-2.0 * (z - lv) * (z1 - lv) / (sd * sd))
                    if not crossed:
                        break
                    _add_label(line_lab, j, j + 1, checkpoints[j], nest == 0, q_lab, bands, powq)
                    _add_crossing(line_gh, j, acc, nest == 0, nq)
                    if j == n_check - 1 and checkpoints[j] > top_lab:
                        top_lab = checkpoints[j]
                    if not lean:
                        ghost = _snapshot(ghost, n_g, acc)
                        evs = _push_row(evs, n_e, pid, t, checkpoints[j], 0.0, 0, 3,
                                        checkpoints[j], -1, j, n_g)
                        n_g += 1
                        n_e += 1
                    j += 1
                if j >= n_check:
                    break
            elif rule == 1:
                hit = 0
                if z1 <= log_lo:
                    hit = -1
                elif z1 >= log_hi:
                    hit = 1
                elif sd > 0:
                    p_lo = np.exp(-2.0 * (z - log_lo) * (z1 - log_lo) / (sd * sd))
                    p_hi = np.exp(-2.0 * (log_hi - z) * (log_hi - z1) / (sd * sd))
                    if u_bridge < p_lo:
                        hit = -1
                    elif u_bridge < p_lo + p_hi:
                        hit = 1
                if hit != 0:
                    level = rule_a if hit < 0 else rule_b
                    ghost = _snapshot(ghost, n_g, acc)
                    evs = _push_row(evs, n_e, pid, t, level, 0.0, 0, 4, level, -1, -1, n_g)
                    n_g += 1
                    n_e += 1
                    break
            # unresolved pieces and elapsed real time over the segment
            for i in range(nq):
                qq = q_grid[i]
                x = qq * dz
                f = 1.0 if abs(x) < 1e-12 else np.expm1(x) / x
                seg = tau * np.exp(qq * z) * f * c ** (qq - alpha)
                acc[i] += row[2 + i] * seg
                acc[nq + i] += row[2 + nq + i] * seg
            if nb > 0:
                # expected unresolved split pieces per band: F at each distinct
                # band edge below the cut, F(c) for edges above it
                zm = z + 0.5 * dz
                s_cut = np.log(c)
                f_cut = sj.split_count_F(ftab, s_cut, alpha)
                for e in range(n_edge):
                    s_e = log_edges[e] - zm
                    edge_f[e] = f_cut if s_e >= s_cut else sj.split_count_F(ftab, s_e, alpha)
                for b in range(nb):
                    i_lo = band_edge[b, 0]
                    if log_edges[i_lo] - zm >= s_cut:
                        continue
                    acc[2 * nq + b] += tau * a_minus * (edge_f[band_edge[b, 1]] - edge_f[i_lo])
            xa = alpha * dz
            fa = 1.0 if abs(xa) < 1e-12 else np.expm1(xa) / xa
            t += tau * np.exp(alpha * z) * fa
            z = z1
            y = np.exp(z)
            # resolved jump proposal
            pick = next_uniform(state) * r_tot
            u_acc = next_uniform(state)
            u_x = next_uniform(state)
            kind = -1
            post = 0.0
            off = 0.0
            if pick < r_pos:
                x = c * u_x ** (-1.0 / alpha)
                if u_acc < (1.0 + x) ** (-1.0 - alpha):
                    kind = 0
                    off = y * x
                    post = y + off
            elif pick < r_pos + r_neg:
                if pick < r_pos + r_neg1:
                    x = (c_pow - u_x * (c_pow - two_a)) ** (-1.0 / alpha)
                else:
                    x = (c_pow1 - u_x * (c_pow1 - half_pow1)) ** (1.0 / (1.0 - alpha))
                if u_acc * (1.0 + chord * x) < (1.0 - x) ** (-1.0 - alpha):
                    kind = 1
                    small = y * x
                    follow_small = False
                    if finite_q:
                        ratio = ((1.0 - x) / x) ** q_branch
                        follow_small = next_uniform(state) < 1.0 / (1.0 + ratio)
                    if follow_small:
                        post = small
                    else:
                        post = y - small
                    off = y - post
            else:
                x = c * u_x ** (1.0 / (q_branch - alpha))
                accept = (2.0 * (1.0 - x)) ** (-1.0 - alpha) / (
                    2.0 ** q_branch * (x ** q_branch + (1.0 - x) ** q_branch))
                if u_acc < accept:
                    kind = 1
                    post = y * x
                    off = y - post
            if kind < 0:
                continue
            z = np.log(post)
            # pieces below the label resolution only feed the accumulators
            small_piece = off < lam
            if small_piece:
                col = 0 if kind == 1 else nq
                for i in range(nq):
                    acc[col + i] += off ** q_grid[i]
                if kind == 1:
                    for b in range(nb):
                        if bands[b, 0] <= off < bands[b, 1]:
                            acc[2 * nq + b] += 1.0
            if kind == 0 and not small_piece and nest == 0:
                if off > max_loop:
                    max_loop = off
                for b in range(n_lb):
                    if loop_bands[b, 0] <= off < loop_bands[b, 1]:
                        loop_cnt[b] += 1.0
            # record the jump and its offspring
            child = -1
            if small_piece:
                pass
            elif kind == 1 or tilde:
                if n_made >= max_particles:
                    truncated = True
                    trunc_m2 += m * m
                    if not lean:
                        parts[pid, 5] = 2
                    break
                c_nest = nest + (1 if kind == 0 else 0)
                evolve = rule == 0 and off >= floor
                if kind == 0 and nest_max >= 0 and c_nest > nest_max:
                    evolve = False
                ck = child_key(kp, n_child)
                n_child += 1
                n_made += 1
                k1 = n_check
                if rule == 0:
                    if evolve:
                        k1 = j
                        while k1 < n_check and checkpoints[k1] > off:
                            k1 += 1
                    _add_label(line_lab, j, k1, off, kind == 1 and nest == 0, q_lab, bands, powq)
                    if k1 == n_check and off > top_lab:
                        top_lab = off
                if evolve or not lean:
                    child = n_s if lean else n_p
                    parts = _grow_rows(parts, child)
                    keys = _grow_vec(keys, child)
                    parts[child, 0] = pid
                    parts[child, 1] = 1 if kind == 1 else 2
                    parts[child, 2] = off
                    parts[child, 3] = depth + 1
                    parts[child, 4] = c_nest
                    parts[child, 6] = t
                    parts[child, 7] = n_e
                    parts[child, 8] = -1
                    parts[child, 9] = -1
                    parts[child, 10] = k1 if rule == 0 else 0
                    keys[child] = ck
                    if not lean:
                        n_p += 1
                    if evolve:
                        stack = _grow_vec(stack, n_s)
                        stack[n_s] = child
                        n_s += 1
                        parts[child, 5] = 1
                    else:
                        parts[child, 5] = 0
                    if lean:
                        child = -1
            if not small_piece and not lean:
                evs = _push_row(evs, n_e, pid, t, y, off, 1 if kind == 0 else -1, kind, post,
                                child, -1, -1)
                n_e += 1
            # first passages caused by the jump
            if rule == 0:
                while j < n_check and post < checkpoints[j]:
                    _add_label(line_lab, j, j + 1, post, nest == 0, q_lab, bands, powq)
                    _add_crossing(line_gh, j, acc, nest == 0, nq)
                    if j == n_check - 1 and post > top_lab:
                        top_lab = post
                    if not lean:
                        ghost = _snapshot(ghost, n_g, acc)
                        evs = _push_row(evs, n_e, pid, t, post, 0.0, 0, 3, post, -1, j, n_g)
                        n_g += 1
                        n_e += 1
                    j += 1
                if j >= n_check:
                    alive = False
            elif (rule == 1 and (post <= rule_a or post >= rule_b)) or (rule == 2 and kind == 0):
                ghost = _snapshot(ghost, n_g, acc)
                evs = _push_row(evs, n_e, pid, t, post, 0.0, 0, 4, post, -1, -1, n_g)
                n_g += 1
                n_e += 1
                alive = False
        if not lean:
            parts[pid, 9] = n_e
    if truncated and not lean:
        for i in range(n_p):
            if parts[i, 5] == 1 and parts[i, 8] < 0:
                parts[i, 5] = 2
    for k in range(1, n_lin):
        line_lab[k] += line_lab[k - 1]
    summary = (line_lab[:n_lin], line_gh, loop_cnt, max_loop, top_lab, trunc_m2, n_made)
    return parts[:n_p], evs[:n_e], ghost[:n_g], truncated, summary


def default_q_grid(alpha):
    grid = list(np.linspace(alpha + 0.05, 3.0, 8)) + [2.0, alpha + 0.5]
    return np.unique(np.round(grid, 12))


@functools.lru_cache(maxsize=32)
def _tables(alpha, a_plus, a_minus, eta, q_key):
    return sj.cut_tables(eta, np.array(q_key), alpha, a_plus, a_minus)


@functools.lru_cache(maxsize=8)
def _count_table(alpha):
    return sj.split_count_table(alpha)


def _kernel_args(rates, policy, variant, root_mass, stop_rule, budget, rng, seed, key,
                 delta_cut, eta, checkpoints, q_grid, bands, nest_max, max_events, max_steps):
    if variant not in ("T", "Ttilde"):
        raise ValueError("variant must be 'T' or 'Ttilde'")
    if policy.kind == "chordal-none":
        raise ValueError("trees are grown from policy-mode explorations only")
    if rates.mode != "policy":
        raise ValueError("trees need policy-mode rates")
    if not root_mass > 0:
        raise ValueError("root_mass must be positive")
    if not budget > 0:
        raise ValueError("budget must be positive")
    if policy.kind == "q-weighted" and not policy.q > rates.alpha:
        raise ValueError("q-weighted policy needs q > alpha")
    if not 0 < eta <= 0.25:
        raise ValueError("eta must lie in (0, 1/4]")
    code = stop_rule.code()
    if code == RULE_FLOOR:
        if not stop_rule.a > 0:
            raise ValueError("mass floor must be positive")
        cps = sorted({float(c) for c in checkpoints if c > stop_rule.a} | {stop_rule.a}, reverse=True)
    else:
        if checkpoints:
            raise ValueError("checkpoints need a mass-floor rule")
        cps = [stop_rule.a if code == RULE_EXIT else 0.0]
        if code == RULE_EXIT and not 0 < stop_rule.a < root_mass < stop_rule.b:
            raise ValueError("exit interval must contain the root mass")
    cps = np.asarray(cps, dtype=float)
    if delta_cut is None:
        delta_cut = 0.5 * cps[-1] if code == RULE_FLOOR else eta * root_mass
        if code == RULE_EXIT:
            delta_cut = eta * stop_rule.a
    if not delta_cut > 0:
        raise ValueError("delta_cut must be positive")
    if code == RULE_FLOOR and delta_cut > cps[-1]:
        raise ValueError("delta_cut above the mass floor would leave pieces unexplored")
    if key is None:
        key = derive_key(seed, 0) if seed is not None else key_from_rng(rng)
    q_grid = default_q_grid(rates.alpha) if q_grid is None else np.unique(np.asarray(q_grid, float))
    if np.any(q_grid <= rates.alpha):
        raise ValueError("exponent grid must lie above alpha")
    bands = np.zeros((0, 2)) if bands is None else np.asarray(bands, float).reshape(-1, 2)
    if len(bands) and not np.all((bands[:, 0] > 0) & (bands[:, 1] > bands[:, 0])):
        raise ValueError("bands need 0 < lo < hi")
    tab = _tables(rates.alpha, rates.a_plus, rates.a_minus, float(eta), tuple(q_grid.tolist()))
    q_branch = policy.q if policy.kind == "q-weighted" else math.inf
    edges, inv = np.unique(bands.ravel(), return_inverse=True)
    band_edge = inv.reshape(-1, 2).astype(np.int64)
    ftab = _count_table(rates.alpha)
    args = (rates.alpha, rates.a_plus, rates.a_minus, q_branch, variant == "Ttilde", int(nest_max),
            code, float(stop_rule.a), float(stop_rule.b), cps, float(root_mass), float(eta),
            float(delta_cut), q_grid, bands, tab, np.uint64(key), int(budget),
            int(max_events if max_events is not None else 64 * budget), int(max_steps),
            np.log(edges), band_edge, ftab)
    return args, cps, q_grid, bands, float(delta_cut)


def grow_tree(rates, policy, variant, root_mass, stop_rule, budget=DEFAULT_BUDGET, rng=None,
              *, seed=None, key=None, delta_cut=None, eta=DEFAULT_ETA, checkpoints=(),
              q_grid=None, bands=None, nest_max=-1, max_events=None, max_steps=10 ** 7):
    """Grow one tree from a policy-mode :class:`~frag_explore.explore.DiskRates`.

    The kernel stream comes from ``key`` (64-bit), else ``seed``, else
    ``rng``; offspring streams are derived from their parent's key and birth
    order.  ``checkpoints`` adds coarser mass-floor lines at which first
    passages and unresolved accumulators are recorded.  ``delta_cut`` is the
    absolute size below which pieces are not materialised (default half the
    floor).  ``nest_max >= 0`` freezes loop-offspring deeper than that.
    """
    args, cps, q_grid, bands, delta_cut = _kernel_args(
        rates, policy, variant, root_mass, stop_rule, budget, rng, seed, key, delta_cut, eta,
        checkpoints, q_grid, bands, nest_max, max_events, max_steps)
    parts, evs, ghost, truncated, _ = _grow_kernel(*args, False, q_grid[:1], np.zeros((0, 2)))
    particles = np.zeros(len(parts), dtype=PARTICLE_DTYPE)
    particles["id"] = np.arange(len(parts))
    for i, name in enumerate(PARTICLE_FIELDS):
        particles[name] = parts[:, i]
    events = np.zeros(len(evs), dtype=EVENT_DTYPE)
    for i, name in enumerate(EVENT_FIELDS):
        events[name] = evs[:, i]
    return FragTree(variant=variant, policy=policy, rule=stop_rule, root_mass=float(root_mass),
                    alpha=rates.alpha, particles=particles, events=events, ghost=ghost,
                    q_grid=q_grid, bands=bands, checkpoints=cps, delta_cut=delta_cut,
                    eta=float(eta), nest_max=int(nest_max), truncated=bool(truncated))


@dataclass
class TreeSummary:
    """Line sums of one mass-floor tree, without the tree.

    ``labels[k]`` holds, for checkpoint k, sum(label**q) over ``q_lab`` for
    the T labels, then for all T-tilde labels, then T label counts per
    ``bands`` row.  ``ghost[k]`` is the matching unresolved part on
    ``q_grid`` (same three blocks).  ``loops`` counts outermost loop jumps
    per ``loop_bands`` row.
    """
    checkpoints: np.ndarray
    q_lab: np.ndarray
    q_grid: np.ndarray
    bands: np.ndarray
    labels: np.ndarray
    ghost: np.ndarray
    loop_bands: np.ndarray
    loops: np.ndarray
    max_loop: float
    top_label: float
    n_particles: int
    truncated: bool
    truncated_fraction: float

    def level(self, y):
        hits = np.nonzero(np.isclose(self.checkpoints, y, rtol=1e-12, atol=0))[0]
        if not len(hits):
            raise ResolutionError(f"no checkpoint at {y}")
        return int(hits[0])

    def moments(self, y, label_set, qs=None):
        """sum(label**q) on the line at ``y`` for q in ``qs`` (default
        ``q_lab``), unresolved pieces included."""
        k = self.level(y)
        nql, nq = len(self.q_lab), len(self.q_grid)
        tilde = label_set in ("Ttilde", "L")
        lab = self.labels[k, nql:2 * nql] if tilde else self.labels[k, :nql]
        g = self.ghost[k, nq:2 * nq] if tilde else self.ghost[k, :nq]
        qs = self.q_lab if qs is None else np.asarray(qs, float)
        if not np.allclose(qs, self.q_lab):
            raise ValueError("summary moments exist only on q_lab")
        extra = np.array([_interp_ghost(self.q_grid, g, q) for q in qs])
        return lab + extra

    def band_counts(self, y, include_unresolved=True):
        k = self.level(y)
        nql, nq = len(self.q_lab), len(self.q_grid)
        out = self.labels[k, 2 * nql:].copy()
        if include_unresolved:
            out += self.ghost[k, 2 * nq:]
        return out


def grow_summary(rates, policy, variant, root_mass, stop_rule, budget=DEFAULT_BUDGET, rng=None,
                 *, seed=None, key=None, delta_cut=None, eta=DEFAULT_ETA, checkpoints=(),
                 q_grid=None, bands=None, nest_max=-1, max_steps=10 ** 7, q_lab=None,
                 loop_bands=None, lean=True):
    """Grow a mass-floor tree keeping only its line sums (see
    :class:`TreeSummary`).  With the same key the tree is the one
    :func:`grow_tree` would build; ``lean=False`` builds it in full."""
    if stop_rule.code() != RULE_FLOOR:
        raise ValueError("summaries need a mass-floor rule")
    args, cps, q_grid, bands, delta_cut = _kernel_args(
        rates, policy, variant, root_mass, stop_rule, budget, rng, seed, key, delta_cut, eta,
        checkpoints, q_grid, bands, nest_max, 2 ** 62, max_steps)
    q_lab = q_grid if q_lab is None else np.asarray(q_lab, float).ravel()
    loop_bands = np.zeros((0, 2)) if loop_bands is None else \
        np.asarray(loop_bands, float).reshape(-1, 2)
    _, _, _, truncated, out = _grow_kernel(*args, bool(lean), q_lab, loop_bands)
    lab, gh, loops, max_loop, top, trunc_m2, n_made = out
    return TreeSummary(checkpoints=cps, q_lab=q_lab, q_grid=q_grid, bands=bands, labels=lab,
                       ghost=gh, loop_bands=loop_bands, loops=loops.astype(np.int64),
                       max_loop=float(max_loop), top_label=float(top), n_particles=int(n_made),
                       truncated=bool(truncated),
                       truncated_fraction=float(trunc_m2 / root_mass ** 2))


# --------------------------------------------------------------------------
# stopping lines


@njit(cache=True)
def _line_kernel(parent, birth_mass, birth_event, status, nest, origin, ev_start, ev_end,
                 ev_pre, ev_post, ev_kind, ev_level, ev_ghost, y, level_idx, own_rule):
    n = parent.shape[0]
    inline = np.zeros(n, dtype=np.bool_)
    boundary = np.zeros(n, dtype=np.int64)
    labels = np.empty(n)
    prov = np.empty(n, dtype=np.int8)
    ids = np.empty(n, dtype=np.int64)
    ghost_rows = np.full(n, -1, dtype=np.int64)
    k = 0
    for p in range(n):
        if parent[p] < 0:
            inline[p] = True
        else:
            q = parent[p]
            inline[p] = inline[q] and birth_event[p] < boundary[q]
        if not inline[p]:
            continue
        simulated = status[p] != 0 and ev_start[p] >= 0
        if (not own_rule and birth_mass[p] < y) or not simulated:
            labels[k] = birth_mass[p]
            if nest[p] > 0 or origin[p] == 2:
                prov[k] = 1
            elif origin[p] == 0:
                prov[k] = 2
            else:
                prov[k] = 0
            ids[k] = p
            k += 1
            boundary[p] = -1
            continue
        lab = -1.0
        bnd = ev_end[p]
        grow = -1
        for e in range(ev_start[p], ev_end[p]):
            if own_rule:
                if ev_kind[e] == 4 or (ev_kind[e] == 3 and ev_level[e] == level_idx):
                    lab = ev_post[e]
                    bnd = e
                    grow = ev_ghost[e]
                    break
            elif level_idx >= 0:
                if ev_kind[e] == 3 and ev_level[e] == level_idx:
                    lab = ev_post[e]
                    bnd = e
                    grow = ev_ghost[e]
                    break
            else:
                if ev_pre[e] < y:
                    lab = y
                    bnd = e
                    break
                if ev_kind[e] <= 1 and ev_post[e] < y:
                    lab = ev_post[e]
                    bnd = e + 1
                    break
        boundary[p] = bnd
        if lab < 0:
            # truncated before reaching the line: report its last known mass
            lab = ev_post[ev_end[p] - 1] if ev_end[p] > ev_start[p] else birth_mass[p]
        labels[k] = lab
        prov[k] = 1 if nest[p] > 0 else 2
        ids[k] = p
        ghost_rows[p] = grow
        k += 1
    return labels[:k], prov[:k], ids[:k], ghost_rows


def _line_level(tree, y):
    hits = np.nonzero(np.isclose(tree.checkpoints, y, rtol=1e-12, atol=0))[0]
    return int(hits[0]) if len(hits) else -1


def stopping_line(tree, y=None):
    """Labels on the first-passage line below ``y`` (or the tree's own line).

    Without ``y`` the line is the one the tree was grown to (exit interval,
    first positive jump or its mass floor).  Lines at recorded checkpoints
    are exact and carry the unresolved accumulators; other ``y`` use the
    recorded jump states and report none.
    """
    p, ev = tree.particles, tree.events
    own = y is None
    level_idx = -1
    if tree.rule.kind == "mass-floor":
        floor = tree.checkpoints[-1]
        if own:
            y = floor
        if y < floor * (1 - 1e-12):
            raise ResolutionError(f"tree floor {floor} is coarser than requested line {y}")
        level_idx = _line_level(tree, y)
        own = False
    elif not own:
        raise ResolutionError("mass-floor lines need a tree grown with a mass-floor rule")
    labels, prov, ids, ghost_rows = _line_kernel(
        p["parent"], p["birth_mass"], p["birth_event"], p["status"], p["nest"], p["origin"],
        p["ev_start"], p["ev_end"], ev["pre"], ev["post"], ev["kind"], ev["level"], ev["ghost"],
        float(y if y is not None else 0.0), level_idx, own)
    nq, nb = len(tree.q_grid), len(tree.bands)
    ghost_T = ghost_tilde = band_T = None
    if own or level_idx >= 0:
        rows = ghost_rows[ids]
        ok = rows >= 0
        g = tree.ghost[rows[ok]] if ok.any() else np.zeros((0, 2 * nq + nb))
        outer = p["nest"][ids[ok]] == 0
        ghost_T = g[outer, :nq].sum(axis=0)
        ghost_tilde = g[:, :nq].sum(axis=0) + g[:, nq:2 * nq].sum(axis=0)
        band_T = g[outer, 2 * nq:].sum(axis=0)
    order = np.argsort(-labels, kind="stable")
    trunc = p["status"][ids] == STATUS_TRUNCATED
    tf = float((p["birth_mass"][ids][trunc] ** 2).sum() / tree.root_mass ** 2)
    return StoppingLineResult(labels=labels[order], provenance=prov[order],
                              particle_ids=ids[order], nest=p["nest"][ids[order]],
                              rule=tree.rule.describe() if y is None else f"mass-floor({y!r})",
                              y=y, q_grid=tree.q_grid, bands=tree.bands, ghost_T=ghost_T,
                              ghost_tilde=ghost_tilde, band_ghost_T=band_T,
                              truncated_fraction=tf)


# --------------------------------------------------------------------------
# jump counting


def _line_limits(tree, y):
    """Per-particle event index bound for 'before the line at y'
    (-1 for particles not reached before the line)."""
    res = stopping_line(tree, y)
    p, ev = tree.particles, tree.events
    limit = np.full(len(p), -1, dtype=np.int64)
    lev = _line_level(tree, y)
    for pid in res.particle_ids:
        r = p[pid]
        if r["ev_start"] < 0 or r["birth_mass"] < y:
            continue
        lo, hi = r["ev_start"], r["ev_end"]
        seg = ev[lo:hi]
        if lev >= 0:
            hit = np.nonzero((seg["kind"] == EV_CROSS) & (seg["level"] == lev))[0]
            limit[pid] = lo + hit[0] if len(hit) else hi
        else:
            cont = np.nonzero(seg["pre"] < y)[0]
            jump = np.nonzero((seg["kind"] <= EV_SPLIT) & (seg["post"] < y))[0]
            b = hi
            if len(cont):
                b = min(b, lo + cont[0])
            if len(jump):
                b = min(b, lo + jump[0] + 1)
            limit[pid] = b
    return limit


def count_jumps(tree, band, sign, scope="whole-tree", y=None, outermost=False):
    """Number of recorded jumps with size in ``[x, hi)`` for ``band=(x, hi)``
    (``hi=None`` for no upper end).

    ``outermost=True`` keeps particles outside every loop-offspring (nesting
    level 0), i.e. the T part of a T-tilde tree.
    """
    lo, hi = band
    hi = math.inf if hi is None else hi
    if not lo > 0:
        raise ValueError("band must start above 0")
    if lo < tree.delta_cut * (1 - 1e-12):
        raise ResolutionError(f"band start {lo} below the tree cutoff {tree.delta_cut}")
    ev = tree.events
    s = 1 if sign in (1, "+") else -1
    mask = (ev["kind"] <= EV_SPLIT) & (ev["sign"] == s) & (ev["size"] >= lo) & (ev["size"] < hi)
    if outermost:
        mask &= tree.particles["nest"][ev["pid"]] == 0
    if scope == "whole-tree":
        return int(mask.sum())
    if scope != "before-line":
        raise ValueError(f"unknown scope {scope!r}")
    if y is None:
        raise ValueError("before-line scope needs y")
    limit = _line_limits(tree, y)
    idx = np.arange(len(ev))
    return int((mask & (idx < limit[ev["pid"]])).sum())

"""Command line: experiment suites, the acceptance battery and a few
single-object samplers.  Results go to ``--out-dir`` as CSV (tables) and
JSON (summaries), with a manifest of sha256 digests per run.

Exit codes: 0 pass, 1 acceptance failure, 2 config error, 3 internal error.
"""
import argparse
import csv
import hashlib
import json
import math
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .rng import SEED_ENV, resolve_seed

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3

SUITES = ("relations-sweep", "stable-checks", "disk-checks", "tree-martingales", "malthus",
          "measure")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` maps field names to messages."""

    def __init__(self, errors):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.errors.items()))


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    suite: str = "relations-sweep"
    kappa: float = 3.0
    beta: float = 0.0
    a_lm: float = 1.0
    variant: str = "Ttilde"
    policy: str = "largest"
    horizon: float = 1.0
    floor: float = 2.0 ** -8
    cutoff: float = 0.01
    eps: list = field(default_factory=lambda: [2.0 ** -6, 2.0 ** -7, 2.0 ** -8])
    replicates: int = 10 ** 4
    master_seed: int = 42
    out_dir: str = "results"

    def validate(self):
        from .relations import KAPPA_MAX, KAPPA_MIN
        err = {}
        if self.suite not in SUITES:
            err["suite"] = f"unknown suite {self.suite!r}; choose from {', '.join(SUITES)}"
        if not (isinstance(self.kappa, (int, float)) and KAPPA_MIN < self.kappa < KAPPA_MAX):
            err["kappa"] = f"must lie strictly inside (8/3, 4), got {self.kappa!r}"
        if not -1.0 <= self.beta <= 1.0:
            err["beta"] = f"must lie in [-1, 1], got {self.beta!r}"
        if not self.a_lm > 0:
            err["a_lm"] = "must be positive"
        if self.variant not in ("T", "Ttilde"):
            err["variant"] = "must be 'T' or 'Ttilde'"
        try:
            from .tree import BranchPolicy
            BranchPolicy.parse(self.policy)
        except ValueError as e:
            err["policy"] = str(e)
        for name in ("horizon", "floor", "cutoff"):
            if not getattr(self, name) > 0:
                err[name] = "must be positive"
        if not (isinstance(self.eps, list) and self.eps and all(0 < e < 1 for e in self.eps)):
            err["eps"] = "must be a non-empty list of values in (0, 1)"
        if not (isinstance(self.replicates, int) and self.replicates >= 1):
            err["replicates"] = "must be a positive integer"
        if not (isinstance(self.master_seed, int) and 0 <= self.master_seed < 2 ** 64):
            err["master_seed"] = "must be a 64-bit nonnegative integer"
        if err:
            raise ConfigError(err)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError({k: "unknown field" for k in unknown})
        kw = {}
        err = {}
        for k, v in d.items():
            default = known[k].default
            try:
                if k == "eps":
                    kw[k] = [parse_number(x) for x in (v.split(",") if isinstance(v, str) else v)]
                elif isinstance(default, bool) or k in ("suite", "variant", "policy", "out_dir"):
                    kw[k] = str(v)
                elif k in ("replicates", "master_seed"):
                    if isinstance(v, float) and not v.is_integer():
                        raise ValueError("not an integer")
                    kw[k] = int(v)
                else:
                    kw[k] = parse_number(v)
            except (TypeError, ValueError) as e:
                err[k] = f"cannot parse {v!r} ({e})"
        if err:
            raise ConfigError(err)
        return cls(**kw).validate()

    @classmethod
    def from_toml(cls, path):
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError({"config": str(e)})
        return cls.from_dict(data.get("experiment", data))


def parse_number(text):
    """Floats, plus powers written like ``2^-6``."""
    if isinstance(text, (int, float)):
        return float(text)
    text = str(text).strip()
    if "^" in text:
        base, exp = text.split("^", 1)
        return float(base) ** float(exp)
    return float(text)


# --------------------------------------------------------------------------
# manifest and reports


@dataclass
class RunManifest:
    config: dict
    tool_version: str
    wall_time: float
    suites: dict                     # suite -> passed (None when not an acceptance run)
    files: dict                      # relative path -> sha256
    items: list = field(default_factory=list)
    runtimes: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def verify(self, root):
        """Every referenced file exists and matches its digest."""
        for rel, digest in self.files.items():
            p = os.path.join(root, rel)
            if not os.path.exists(p) or sha256(p) != digest:
                return False
        return True


REPORT_SCHEMA = {
    "type": "object",
    "required": ["tool_version", "passed", "items"],
    "properties": {
        "tool_version": {"type": "string"},
        "passed": {"type": "boolean"},
        "items": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "name", "value", "target", "tolerance", "passed"],
                "properties": {
                    "id": {"type": "string"},
                    "name": {"type": "string"},
                    "value": {"type": ["number", "string", "null"]},
                    "target": {"type": "string"},
                    "tolerance": {"type": "string"},
                    "passed": {"type": "boolean"},
                    "runtime_s": {"type": "number"},
                },
            },
        },
    },
}


def manifest_passed(manifest):
    """An empty run is not a pass."""
    return bool(manifest.items) and all(it["passed"] for it in manifest.items)


def emit_report(manifest, fmt="text"):
    items = [dict(it, runtime_s=manifest.runtimes.get(it["id"], 0.0)) for it in manifest.items]
    passed = manifest_passed(manifest)
    if fmt == "json":
        import jsonschema
        doc = {"tool_version": manifest.tool_version, "passed": passed, "items": items}
        jsonschema.validate(doc, REPORT_SCHEMA)
        return json.dumps(doc, indent=2)
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = []
    for it in items:
        v = it["value"]
        vs = f"{v:.6g}" if isinstance(v, (int, float)) else str(v)
        lines.append(f"[{'PASS' if it['passed'] else 'FAIL'}] {it['id']:>2} {it['name']}: "
                     f"value {vs}, target {it['target']}, tolerance {it['tolerance']} "
                     f"({it['runtime_s']:.1f}s)")
    if not items:
        lines.append("no acceptance items were run")
    lines.append(f"overall: {'PASS' if passed else 'FAIL'} ({len(items)} items, "
                 f"wall time {manifest.wall_time:.1f}s)")
    return "\n".join(lines)


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class OutputDir:
    """Collects the files of one run; everything is removed if the run fails."""

    def __init__(self, root):
        self.root = root
        self.files = []
        self._created = not os.path.exists(root)
        os.makedirs(root, exist_ok=True)

    def path(self, name):
        return os.path.join(self.root, name)

    def write_csv(self, name, header, rows):
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.files.append(name)
        return p

    def write_json(self, name, obj):
        p = self.path(name)
        with open(p, "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=False)
            fh.write("\n")
        self.files.append(name)
        return p

    def digests(self):
        return {f: sha256(self.path(f)) for f in self.files}

    def discard(self):
        for f in self.files:
            try:
                os.remove(self.path(f))
            except OSError:
                pass
        if self._created:
            shutil.rmtree(self.root, ignore_errors=True)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _jsonable(x):
    from .checks import _clean
    return _clean(x)


# --------------------------------------------------------------------------
# suites


def _items_to_outputs(results, out):
    items, runtimes = [], {}
    for r in results:
        for stem, (header, rows) in r.tables.items():
            out.write_csv(f"{stem}.csv", header, rows)
        items.append(r.item.as_dict())
        runtimes[r.item.id] = round(r.runtime, 3)
    return items, runtimes


def _suite_relations(cfg, out, threads):
    from .checks import CheckItem, CheckOutput
    from .relations import TABLE_COLUMNS, derive_relations, relations_table
    rel = derive_relations(cfg.kappa)
    rows = relations_table(rel, 201)
    target = -math.cos(math.pi * rel.alpha)
    err = max(abs(r[6] - target) for r in rows)
    out.write_json("relations.json", rel.as_dict())
    item = CheckItem("relations", "mean ladder ratio equals -cos(pi alpha)", err, f"{target:.12g}",
                     "1e-9", err < 1e-9, {"kappa": cfg.kappa, "rows": len(rows)})
    return [CheckOutput(item, {"relations_sweep": (TABLE_COLUMNS, rows)})]


def _suite_stable(cfg, out, threads):
    from .checks import check_stable
    return [check_stable(cfg.master_seed, threads, n_paths=cfg.replicates,
                         n_ks=20 * cfg.replicates, cut=cfg.cutoff)]


def _suite_disk(cfg, out, threads):
    from .checks import check_disk
    return [check_disk(cfg.master_seed, threads, n_rate=max(2 * cfg.replicates, 1000),
                       n_rn=10 * cfg.replicates)]


def _suite_trees(cfg, out, threads):
    from .checks import TreeCache, check_area
    cache = TreeCache(cfg.master_seed, threads, cfg.replicates)
    return [check_area(cfg.master_seed, threads, cache, kappas=(cfg.kappa,))]


def _suite_malthus(cfg, out, threads):
    from .checks import TreeCache, check_malthus
    cache = TreeCache(cfg.master_seed, threads, cfg.replicates)
    res = check_malthus(cfg.master_seed, threads, cache, kappas=(cfg.kappa,))
    out.write_json("malthus_report.json", res.item.details["reports"][f"{cfg.kappa:g}"])
    return [res]


def _suite_measure(cfg, out, threads):
    from .checks import MEASURE_LINES, check_measure, intrinsic_area_per_tree, measure_ensemble
    from .carpet import ratio_jackknife
    eps = tuple(sorted(cfg.eps, reverse=True))
    floor = min(cfg.floor, min(eps), MEASURE_LINES[-1])   # the finest comparison line must resolve
    ens = measure_ensemble(cfg.kappa, cfg.replicates, cfg.master_seed, threads, eps=eps,
                           floor=floor)
    m_inf = intrinsic_area_per_tree(ens)
    d = ens.alpha + 0.5
    rows = []
    summary = {"kappa": cfg.kappa, "trees": ens.n, "floor": floor,
               "truncated_fraction": ens.truncated_fraction(), "constant": {}}
    for i in range(ens.n):
        for e in eps:
            rows.append((i, m_inf[i], e, e ** d * ens.loops[e][i]))
    for e in eps:
        c, se = ratio_jackknife(e ** d * ens.loops[e], m_inf)
        summary["constant"][f"{e:.10g}"] = {"estimate": float(c), "se": float(np.ravel(se)[0])}
    out.write_csv("measure_per_tree.csv", ("tree_id", "M_inf_hat", "eps", "rescaled_count"), rows)
    item8, item9 = check_measure(cfg.master_seed, threads, n=cfg.replicates, kappa=cfg.kappa,
                                 eps=eps, ens=ens)
    summary["checks"] = [item8.item.as_dict(), item9.item.as_dict()]
    out.write_json("measure_summary.json", summary)
    return [item8, item9]


SUITE_RUNNERS = {
    "relations-sweep": _suite_relations,
    "stable-checks": _suite_stable,
    "disk-checks": _suite_disk,
    "tree-martingales": _suite_trees,
    "malthus": _suite_malthus,
    "measure": _suite_measure,
}


def run_experiment(config, threads=1, out_root=None):
    """Run the configured suite into ``<out_dir>/<suite>/`` and return its
    manifest.  Identical config and seed give identical result files."""
    config.validate()
    root = os.path.join(out_root or config.out_dir, config.suite)
    out = OutputDir(root)
    t0 = time.perf_counter()
    try:
        out.write_json("config.json", config.to_dict())
        results = SUITE_RUNNERS[config.suite](config, out, threads)
        items, runtimes = _items_to_outputs(results, out)
        out.write_json("results.json", items)
    except BaseException:
        out.discard()
        raise
    manifest = RunManifest(config=config.to_dict(), tool_version=__version__,
                           wall_time=round(time.perf_counter() - t0, 3),
                           suites={config.suite: all(it["passed"] for it in items)},
                           files=out.digests(), items=items, runtimes=runtimes)
    with open(out.path("manifest.json"), "w") as fh:
        json.dump(_jsonable(manifest.to_dict()), fh, indent=2)
        fh.write("\n")
    return manifest


def run_check(seed, threads=1, out_root="results", only=None, log=None):
    """The full acceptance battery into ``<out_root>/check/``."""
    from .checks import run_battery
    out = OutputDir(os.path.join(out_root, "check"))
    t0 = time.perf_counter()
    try:
        results = run_battery(seed, threads, only=only, log=log)
        items, runtimes = _items_to_outputs(results, out)
        out.write_json("results.json", items)
        out.write_csv("results.csv", ("id", "name", "value", "target", "tolerance", "passed"),
                      [(it["id"], it["name"], it["value"], it["target"], it["tolerance"],
                        int(it["passed"])) for it in items])
    except BaseException:
        out.discard()
        raise
    limits = {r.item.id: r.runtime_limit for r in results if r.runtime_limit is not None}
    manifest = RunManifest(config={"master_seed": seed, "only": sorted(only) if only else None,
                                   "runtime_limits_s": limits},
                           tool_version=__version__, wall_time=round(time.perf_counter() - t0, 3),
                           suites={"check": all(it["passed"] for it in items) and bool(items)},
                           files=out.digests(), items=items, runtimes=runtimes)
    with open(out.path("manifest.json"), "w") as fh:
        json.dump(_jsonable(manifest.to_dict()), fh, indent=2)
        fh.write("\n")
    return manifest


# --------------------------------------------------------------------------
# single-object commands


def _print_json(obj):
    print(json.dumps(_jsonable(obj), indent=2))


def _cmd_relations(args, seed, out_root):
    from .relations import (TABLE_COLUMNS, derive_relations, intensity_split, ladder_quantities,
                            relations_table)
    rel = derive_relations(args.kappa)
    if args.table:
        rows = relations_table(rel, args.n)
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        if args.out:
            _write_csv(args.out, TABLE_COLUMNS, rows)
        return EXIT_PASS
    summary = rel.as_dict()
    if args.beta is not None:
        split = intensity_split(args.beta, args.a_lm, rel)
        summary["split"] = split.as_dict()
        summary["ladder"] = ladder_quantities(split.rho_prime, rel).as_dict()
    if args.out:
        _write_json(args.out, summary)
    _print_json(summary)
    return EXIT_PASS


def _cmd_sample_stable(args, seed, out_root):
    from .rng import make_rng
    from .stable import StableJumpLaw, compensator_drift, sample_path
    law = StableJumpLaw(args.alpha, args.a_plus, args.a_minus)
    path = sample_path(law, args.horizon, args.cutoff, rng=make_rng(seed, 0),
                       small_jumps=args.small_jumps)
    out = args.out or os.path.join(out_root, "sample-stable", "path.csv")
    _write_csv(out, ("time", "size", "sign"),
               [(j["time"], j["size"], int(j["sign"])) for j in path.jumps])
    summary = {"alpha": law.alpha, "a_plus": law.a_plus, "a_minus": law.a_minus,
               "horizon": args.horizon, "cutoff": args.cutoff, "count": len(path.jumps),
               "compensator_drift": compensator_drift(law, args.cutoff),
               "small_jumps": args.small_jumps, "terminal": path.terminal, "seed": seed}
    _write_json(os.path.splitext(out)[0] + ".json", summary)
    _print_json(summary)
    return EXIT_PASS


def _cmd_sample_disk(args, seed, out_root):
    from .explore import DiskRates, sample_disk_chordal, sample_disk_policy
    from .relations import derive_relations, intensity_split
    from .stable import KIND_NAMES, SIDE_NAMES
    if args.mode == "policy":
        rates = DiskRates.from_kappa(args.kappa, args.a_minus)
        path = sample_disk_policy(rates, args.y0, args.horizon, args.floor, args.cutoff, seed=seed)
    else:
        rel = derive_relations(args.kappa)
        split = intensity_split(args.beta, args.a_lm, rel)
        r0 = args.y0 if args.r0 is None else args.r0
        path = sample_disk_chordal(split, rel.alpha, args.y0, r0, args.horizon, args.cutoff,
                                   floor=args.floor, seed=seed)
    out = args.out or os.path.join(out_root, "sample-disk", "events.csv")
    _write_csv(out, ("time", "pre_state", "size", "sign", "side", "kind", "post_state"),
               [(e["time"], e["pre"], e["size"], int(e["sign"]), SIDE_NAMES[int(e["side"])],
                 KIND_NAMES[int(e["kind"])], e["post"]) for e in path.events])
    summary = {"mode": args.mode, "start": path.start, "horizon": args.horizon,
               "floor": args.floor, "cutoff": args.cutoff, "end_reason": path.end_reason,
               "end_time": path.end_time, "terminal": path.terminal,
               "n_events": len(path.events), "seed": seed}
    _write_json(os.path.splitext(out)[0] + ".json", summary)
    _print_json(summary)
    return EXIT_PASS


def _write_csv(path, header, rows):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _write_json(path, obj):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def parse_rule(text):
    from .tree import StopRule
    text = text.strip()
    if text.startswith("floor:"):
        return StopRule.mass_floor(parse_number(text[6:]))
    if text == "exit" or text.startswith("exit:"):
        if ":" in text:
            lo, hi = (parse_number(x) for x in text[5:].split(","))
            return StopRule.exit_interval(lo, hi)
        return StopRule.exit_interval()
    if text == "first-positive":
        return StopRule.first_positive_jump()
    raise ValueError(f"cannot parse stop rule {text!r} (floor:Y, exit[:lo,hi], first-positive)")


def _cmd_grow_tree(args, seed, out_root):
    from .explore import DiskRates
    from .tree import BranchPolicy, StopRule, grow_tree, stopping_line
    rates = DiskRates.from_kappa(args.kappa, args.a_minus)
    rule = parse_rule(args.rule) if args.rule else StopRule.mass_floor(args.floor * args.root_mass)
    tree = grow_tree(rates, BranchPolicy.parse(args.policy), args.variant, args.root_mass, rule,
                     args.budget, seed=seed, nest_max=args.nest_max)
    sl = stopping_line(tree)
    doc = tree.records()
    doc["seed"] = seed
    doc["kappa"] = args.kappa
    doc["stopping_line"] = [{"particle": int(i), "label": float(l), "provenance": p, "nest": int(n)}
                            for i, l, p, n in zip(sl.particle_ids, sl.labels,
                                                  sl.provenance_names(), sl.nest)]
    out = args.out or os.path.join(out_root, "grow-tree", "tree.json")
    _write_json(out, doc)
    summary = {"variant": tree.variant, "rule": rule.describe(), "n_particles": tree.n_particles,
               "n_events": len(tree.events), "truncated": tree.truncated,
               "truncated_fraction": tree.truncated_fraction(), "n_labels": len(sl.labels),
               "sum_l2": sl.moment(2.0, "T"), "seed": seed, "out": out}
    if tree.variant == "Ttilde":
        summary["sum_L2"] = sl.moment(2.0, "Ttilde")
    _print_json(summary)
    return EXIT_PASS


def _suite_command(suite):
    def run(args, seed, out_root):
        cfg = args.config_obj if args.config_obj is not None else ExperimentConfig()
        overrides = {"suite": suite, "master_seed": seed, "out_dir": out_root}
        for name in ("kappa", "replicates", "floor"):
            v = getattr(args, name, None)
            if v is not None:
                overrides[name] = v
        if getattr(args, "eps", None):
            overrides["eps"] = [parse_number(x) for x in args.eps.split(",")]
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
        manifest = run_experiment(cfg, args.threads, out_root)
        if suite == "malthus" and args.format == "json":
            with open(os.path.join(out_root, suite, "malthus_report.json")) as fh:
                print(fh.read(), end="")
        else:
            print(emit_report(manifest, args.format))
        return EXIT_PASS if manifest_passed(manifest) else EXIT_FAIL
    return run


def _cmd_suite(args, seed, out_root):
    cfg = args.config_obj
    if cfg is None:
        raise ConfigError({"config": "the run command needs --config FILE"})
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "master_seed": seed, "out_dir": out_root})
    manifest = run_experiment(cfg, args.threads, out_root)
    print(emit_report(manifest, args.format))
    return EXIT_PASS if manifest_passed(manifest) else EXIT_FAIL


def _cmd_check(args, seed, out_root):
    only = set(args.only.split(",")) if args.only else None

    def log(r):
        it = r.item
        print(f"  item {it.id:>2}: {'pass' if it.passed else 'FAIL'} "
              f"(value {it.value:.6g}, {r.runtime:.1f}s)", file=sys.stderr, flush=True)

    manifest = run_check(seed, args.threads, out_root, only=only, log=log)
    print(emit_report(manifest, args.format))
    return EXIT_PASS if manifest_passed(manifest) else EXIT_FAIL


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # accepted before or after the subcommand
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help=f"master seed (default 42, or the config's; {SEED_ENV} overrides)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes for tree ensembles (default: all cores)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output root (default: results)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML experiment config")
    common.add_argument("--format", choices=("text", "json"), default=argparse.SUPPRESS,
                        help="report format")

    p = argparse.ArgumentParser(prog="frag-explore", description=__doc__.splitlines()[0],
                                parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    s = cmd("relations", "derived exponents; --table for the beta sweep CSV")
    s.add_argument("--kappa", type=float, default=3.0)
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--a-lm", type=float, default=1.0)
    s.add_argument("--table", action="store_true")
    s.add_argument("--n", type=int, default=201, help="beta grid size for --table")
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_relations)

    s = cmd("sample-stable", "one compensated stable path (jumps CSV + summary JSON)")
    s.add_argument("--alpha", type=float, default=4.0 / 3.0)
    s.add_argument("--a-plus", type=float, default=0.5)
    s.add_argument("--a-minus", type=float, default=1.0)
    s.add_argument("--horizon", type=float, default=1.0)
    s.add_argument("--cutoff", type=float, default=0.01)
    s.add_argument("--small-jumps", choices=("drop", "gaussian"), default="drop")
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_sample_stable)

    s = cmd("sample-disk", "one disk exploration path (events CSV + summary JSON)")
    s.add_argument("--mode", choices=("policy", "chordal"), default="policy")
    s.add_argument("--kappa", type=float, default=3.0)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--a-lm", type=float, default=1.0)
    s.add_argument("--a-minus", type=float, default=1.0)
    s.add_argument("--y0", type=float, default=1.0, help="start (left side in chordal mode)")
    s.add_argument("--r0", type=float, default=None, help="right side in chordal mode")
    s.add_argument("--horizon", type=float, default=1.0)
    s.add_argument("--floor", type=float, default=0.01)
    s.add_argument("--cutoff", type=float, default=0.005)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_sample_disk)

    s = cmd("grow-tree", "one fragmentation tree as tree.json")
    s.add_argument("--kappa", type=float, default=3.0)
    s.add_argument("--a-minus", type=float, default=1.0)
    s.add_argument("--variant", choices=("T", "Ttilde"), default="Ttilde")
    s.add_argument("--policy", default="largest", help="largest | q=VAL")
    s.add_argument("--root-mass", type=float, default=1.0)
    s.add_argument("--floor", type=parse_number, default=2.0 ** -10,
                   help="mass floor relative to the root mass")
    s.add_argument("--rule", default=None,
                   help="override the stopping rule: floor:Y | exit[:lo,hi] | first-positive")
    s.add_argument("--budget", type=int, default=10 ** 6)
    s.add_argument("--nest-max", type=int, default=-1)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_grow_tree)

    s = cmd("malthus", "Monte Carlo Malthusian root from exit-line trees")
    s.add_argument("--kappa", type=float, default=None)
    s.add_argument("--trees", dest="replicates", type=int, default=None)
    s.set_defaults(func=_suite_command("malthus"))

    s = cmd("measure", "loop-count estimator of the intrinsic area")
    s.add_argument("--kappa", type=float, default=None)
    s.add_argument("--trees", dest="replicates", type=int, default=None)
    s.add_argument("--eps", default=None, help="comma list, e.g. 2^-6,2^-7,2^-8")
    s.add_argument("--floor", type=parse_number, default=None)
    s.set_defaults(func=_suite_command("measure"))

    s = cmd("run", "run the suite named in --config")
    s.set_defaults(func=_cmd_suite)

    s = cmd("check", "the full acceptance battery")
    s.add_argument("--only", default=None, help="comma list of item ids")
    s.set_defaults(func=_cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", None), ("threads", os.cpu_count() or 1), ("out_dir", None),
                          ("config", None), ("format", "text")):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        args.config_obj = ExperimentConfig.from_toml(args.config) if args.config else None
        seed = args.seed
        if seed is None:
            seed = args.config_obj.master_seed if args.config_obj is not None else 42
        seed = resolve_seed(seed)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError({"seed": "must be a 64-bit nonnegative integer"})
        if args.threads < 1:
            raise ConfigError({"threads": "must be at least 1"})
        out_root = args.out_dir or (args.config_obj.out_dir if args.config_obj else "results")
        return args.func(args, seed, out_root)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        # domain errors raised while validating user input
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - reported with its type, exit code 3
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    cccn run      --config PATH [--seed N|A..B|A,B] [--mode M] [--set k=v] [--out DIR]
    cccn sweep    --axis {cache,rate} --values LIST [--config PATH] [--modes ...] [--out DIR]
    cccn analyze  --topology PATH [--sources A,B] [--gateways R1,R2]
    cccn plotdata FILE [FILE ...] [--out DIR]

Exit status: 0 success, 1 configuration or input error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .coding import (build_system_matrices, compute_transfer_matrix, draw_coefficients,
                     feasibility_bound, symbolic_degree, symbolic_transfer_matrices,
                     verify_full_rank)
from .gf import GF
from .netgraph import (CyclicDeliveryGraph, InvalidParameters, Topology, build_line_graph,
                       coding_points, expand_units, max_flow_min_cut, read_edge_list,
                       shortest_path_dag, topological_order)
from .protocol import MODES
from .sim import CSV_HEADER, ConfigError, ExperimentConfig, csv_row, run_experiment, size_value

log = logging.getLogger("cccn")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# keys a config file may carry on top of ExperimentConfig's own
SWEEP_KEYS = ("axis", "values", "modes", "seeds")
AXES = {"cache": "cache_bytes", "rate": "rate"}
PLOT_FILES = {
    "delay_vs_cache.dat": ("cache", "avg_download_delay_s"),
    "usage_vs_rate.dat": ("rate", "avg_link_usage"),
    "interests_vs_rate.dat": ("rate", "avg_interest_load"),
}


class UsageError(Exception):
    """Bad flags or input files; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# -- value parsing ---------------------------------------------------------------



def parse_size(text: str) -> float:
    """``200MB`` -> 2e8; plain numbers pass through (decimal units)."""
    try:
        return size_value(text)
    except ValueError:
        raise UsageError(f"cannot parse size {text!r}") from None


def parse_seeds(text: str) -> list[int]:
    """``3``, ``1..5`` or ``1,4,9``."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise UsageError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"cannot parse seeds {text!r}") from None


def parse_values(axis: str, text: str) -> list[float]:
    if ".." in text and axis == "rate":
        # 10..100:10
        rng, _, step = text.partition(":")
        a, b = rng.split("..", 1)
        lo, hi, st = float(a), float(b), float(step or 10)
        n = int(math.floor((hi - lo) / st + 1e-9)) + 1
        return [lo + i * st for i in range(n)]
    vals = [parse_size(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise UsageError("no sweep values")
    return vals


def parse_modes(text: str) -> list[str]:
    modes = [m.strip().upper() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise UsageError(f"unknown mode(s) {','.join(bad) or text!r}; expected {','.join(MODES)}")
    return modes


# -- plan -------------------------------------------------------------------

def read_config(path: str | None) -> tuple[dict[str, str], str]:
    """Split a key=value file into simulator keys and sweep keys."""
    if path is None:
        return {}, ""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    return kv, text


def build_plan(kv: dict[str, str], overrides: list[str], axis=None, values=None, modes=None,
               seeds=None):
    """Resolve config + flags into (base config, axis, values, modes, seeds)."""
    kv = dict(kv)
    for item in overrides or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        kv[k] = v
    sweep = {k: kv.pop(k) for k in SWEEP_KEYS if k in kv}
    axis = axis or sweep.get("axis")
    if axis is not None and axis not in AXES:
        raise ConfigError("axis", f"must be one of {', '.join(AXES)}")
    if values is None and "values" in sweep:
        if axis is None:
            raise ConfigError("values", "given without an axis")
        values = parse_values(axis, sweep["values"])
    if axis is not None and not values:
        raise ConfigError("values", "a sweep needs values")
    if modes is None:
        modes = parse_modes(sweep["modes"]) if "modes" in sweep else None
    if seeds is None and "seeds" in sweep:
        seeds = parse_seeds(sweep["seeds"])
    base = ExperimentConfig.from_mapping(kv)
    modes = modes or [base.mode]
    seeds = seeds or [base.seed]
    return base, axis, values, modes, seeds


def plan_runs(base: ExperimentConfig, axis, values, modes, seeds):
    out = []
    for val in (values if axis else [None]):
        for mode in modes:
            for seed in seeds:
                kw = {"mode": mode, "seed": seed}
                if axis:
                    kw[AXES[axis]] = float(val)
                out.append((axis or "none", val, base.replace(**kw).validate()))
    return out


def _one(cfg_and_log):
    cfg, want_log = cfg_and_log
    if want_log:
        rep, rl = run_experiment(cfg, log_events=True, return_log=True)
        return rep, rl.lines
    return run_experiment(cfg), None


def _fmt_axis(val) -> str:
    if val is None:
        return ""
    if isinstance(val, float) and val.is_integer():
        return str(int(val))
    return repr(val)


def resolved_text(base: ExperimentConfig, axis, values, modes, seeds) -> str:
    text = base.to_text()
    if axis:
        text += f"axis = {axis}\nvalues = {','.join(_fmt_axis(v) for v in values)}\n"
    text += f"modes = {','.join(modes)}\nseeds = {','.join(map(str, seeds))}\n"
    return text


def execute(base, axis, values, modes, seeds, out: Path, verbose: int, jobs: int,
            config_path: str | None) -> int:
    runs = plan_runs(base, axis, values, modes, seeds)
    out.mkdir(parents=True, exist_ok=True)
    want_log = verbose >= 2
    work = [(cfg, want_log) for _, _, cfg in runs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, work))
    else:
        results = []
        for i, w in enumerate(work, 1):
            log.info("run %d/%d: mode=%s seed=%d %s", i, len(work), w[0].mode, w[0].seed,
                     f"{runs[i - 1][0]}={_fmt_axis(runs[i - 1][1])}" if axis else "")
            results.append(_one(w))
    rows = [CSV_HEADER]
    for (ax, val, cfg), (rep, _) in zip(runs, results):
        rows.append(csv_row(rep, ax, _fmt_axis(val), cfg.seed))
        if rep.incomplete:
            log.warning("mode=%s seed=%d: %d requests incomplete", cfg.mode, cfg.seed,
                        rep.incomplete)
    files = {"metrics.csv": "\n".join(rows) + "\n",
             "resolved.cfg": resolved_text(base, axis, values, modes, seeds)}
    if want_log:
        parts = []
        for (ax, val, cfg), (_, lines) in zip(runs, results):
            parts.append(f"# mode={cfg.mode} seed={cfg.seed} {ax}={_fmt_axis(val)}\n")
            parts.extend(line + "\n" for line in lines)
        files["events.log"] = "".join(parts)
    hashes = {}
    for name, text in files.items():
        (out / name).write_text(text)
        hashes[name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = {
        "tool": f"cccn {__version__}",
        "config_path": str(config_path) if config_path else None,
        "config": {**base.__dict__, "axis": axis, "values": values, "modes": modes,
                   "seeds": seeds},
        "output_dir": str(out),
        "files": hashes,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(files["metrics.csv"], end="")
    return EXIT_OK


# -- commands ----------------------------------------------------------------------

def cmd_run(args) -> int:
    kv, _ = read_config(args.config)
    modes = parse_modes(args.mode) if args.mode else None
    seeds = parse_seeds(args.seed) if args.seed else None
    plan = build_plan(kv, args.set, modes=modes, seeds=seeds)
    return execute(*plan, Path(args.out), args.verbose, args.jobs, args.config)


def cmd_sweep(args) -> int:
    kv, _ = read_config(args.config)
    values = parse_values(args.axis, args.values)
    modes = parse_modes(args.modes) if args.modes else list(MODES)
    seeds = parse_seeds(args.seed) if args.seed else None
    plan = build_plan(kv, args.set, axis=args.axis, values=values, modes=modes, seeds=seeds)
    return execute(*plan, Path(args.out), args.verbose, args.jobs, args.config)


def _resolve_nodes(t: Topology, text: str) -> list[int]:
    lookup = {n: i for i, n in enumerate(t.names or ())}
    out = []
    for tok in (s.strip() for s in text.split(",")):
        if not tok:
            continue
        if tok in lookup:
            out.append(lookup[tok])
        elif tok.isdigit() and int(tok) < t.node_count:
            out.append(int(tok))
        else:
            raise UsageError(f"unknown node {tok!r}")
    return out


def analyze(t: Topology, sources: list[int], gateways: list[int], m: int = 8,
            samples: int = 1000, seed: int = 1) -> list[str]:
    """Min-cuts, coding points, polynomial degree and a sampled full-rank check."""
    nm = t.name
    K = len(sources)
    lines = [f"nodes {t.node_count}, links {len(t.edges)}, {'directed' if t.directed else 'undirected'}",
             "sources: " + " ".join(f"{nm(s)}[seg {i}]" for i, s in enumerate(sources)) + f"  K={K}"]
    ug = expand_units(t)
    cuts, reach = {}, []
    for g in gateways:
        cuts[g] = max_flow_min_cut(ug, sources, g)
        if cuts[g] == 0:
            note = "  unreachable"
        elif cuts[g] < K:
            note = "  below K, cannot decode"
        else:
            # every group of sources needs as many disjoint paths as it has segments
            short = [S for r in range(1, K) for S in itertools.combinations(sources, r)
                     if max_flow_min_cut(ug, S, g) < r] if K <= 12 else []
            note = ("  source subset " + ",".join(nm(v) for v in short[0]) + " below its size"
                    if short else "")
            if not short:
                reach.append(g)
        lines.append(f"gateway {nm(g)}: min-cut {cuts[g]}{note}")
    arcs = t.arcs() if t.directed else shortest_path_dag(t, sources, gateways)
    # keep arcs that lie on some source-to-gateway route
    arcs = _on_routes(t.node_count, arcs, sources, gateways)
    topological_order(t.node_count, arcs)      # raises on cycles
    cps = coding_points(arcs, gateways)
    lines.append("coding points: " + (" ".join(nm(v) for v in cps) if cps else "none"))
    lg = build_line_graph(arcs, t.node_count)
    field = GF(m)
    mats = symbolic_transfer_matrices(lg, sources, reach, field) if reach else {}
    d, exact = symbolic_degree(mats, K) if mats else (None, True)
    if d is None:
        lines.append("polynomial degree d: undefined (no decodable gateway)")
    else:
        bound = feasibility_bound(d, m)
        lines.append(f"polynomial degree d: {d}{'' if exact else ' (upper bound)'}")
        lines.append(f"feasibility bound d/2^m (m={m}): {bound:.6g}")
    if reach:
        ok = {g: 0 for g in reach}
        for s in range(samples):
            ca = draw_coefficients(lg, sources, reach, field=field, seed=seed * 1_000_003 + s,
                                   unit_io=True)
            sm = build_system_matrices(lg, ca, sources, reach)
            for g in reach:
                ok[g] += verify_full_rank(compute_transfer_matrix(sm, g))
        both = " ".join(f"{nm(g)} {ok[g]}/{samples}" for g in reach)
        verdict = "full rank" if all(v == samples for v in ok.values()) else "rank deficiency seen"
        lines.append(f"sampled full rank: {both}  ({verdict})")
    return lines


def _on_routes(n, arcs, sources, sinks):
    succ, pred = {}, {}
    for u, v in arcs:
        succ.setdefault(u, []).append(v)
        pred.setdefault(v, []).append(u)

    def closure(start, nxt):
        seen, stack = set(), list(start)
        while stack:
            x = stack.pop()
            if x not in seen:
                seen.add(x)
                stack.extend(nxt.get(x, ()))
        return seen
    keep = closure(sources, succ) & closure(sinks, pred)
    return [(u, v) for u, v in arcs if u in keep and v in keep]


def cmd_analyze(args) -> int:
    try:
        t = read_edge_list(args.topology)
    except OSError as e:
        raise UsageError(f"cannot read topology {args.topology}: {e.strerror}") from None
    except InvalidParameters as e:
        raise UsageError(str(e)) from None
    outdeg = {e.u for e in t.edges}
    indeg = {e.v for e in t.edges}
    if args.sources:
        sources = _resolve_nodes(t, args.sources)
    elif t.directed:
        sources = sorted(set(range(t.node_count)) - indeg)
    else:
        raise UsageError("undirected topology: pass --sources")
    if args.gateways:
        gateways = _resolve_nodes(t, args.gateways)
    elif t.directed:
        gateways = sorted(set(range(t.node_count)) - outdeg - set(sources))
    else:
        raise UsageError("undirected topology: pass --gateways")
    if not sources or not gateways:
        raise UsageError("need at least one source and one gateway")
    if set(sources) & set(gateways):
        raise UsageError("a node cannot be both source and gateway")
    print(f"topology: {args.topology}")
    for line in analyze(t, sources, gateways, args.field_m, args.samples, args.seed):
        print(line)
    return EXIT_OK


def aggregate(rows: list[dict]) -> dict[str, list[str]]:
    """Per-figure columnar text: x, then mean and std for each mode."""
    out = {}
    for fname, (axis, metric) in PLOT_FILES.items():
        sel = [r for r in rows if r["axis_name"] == axis]
        if not sel:
            continue
        groups: dict[tuple[float, str], list[float]] = {}
        for r in sel:
            groups.setdefault((float(r["axis_value"]), r["mode"]), []).append(float(r[metric]))
        xs = sorted({x for x, _ in groups})
        modes = [m for m in MODES if any(k[1] == m for k in groups)]
        lines = [f"# {metric} vs {axis}; mean and sample std over seeds",
                 "# x " + " ".join(f"{m}_mean {m}_std {m}_n" for m in modes)]
        for x in xs:
            cols = [f"{x:g}"]
            for m in modes:
                v = groups.get((x, m))
                if not v:
                    cols += ["NaN", "NaN", "0"]
                    continue
                sd = statistics.stdev(v) if len(v) > 1 else 0.0
                cols += [f"{statistics.fmean(v):.9g}", f"{sd:.9g}", str(len(v))]
            lines.append(" ".join(cols))
        out[fname] = lines
    return out


def cmd_plotdata(args) -> int:
    header = CSV_HEADER.split(",")
    rows = []
    for f in args.files:
        try:
            with open(f, newline="") as fh:
                rd = csv.DictReader(fh)
                if rd.fieldnames != header:
                    raise UsageError(f"{f}: header {rd.fieldnames} does not match {header}")
                for lineno, r in enumerate(rd, 2):
                    if None in r or any(v is None for v in r.values()):
                        raise UsageError(f"{f}:{lineno}: wrong number of columns")
                    rows.append(r)
        except OSError as e:
            raise UsageError(f"cannot read {f}: {e.strerror}") from None
    try:
        data = aggregate(rows)
    except ValueError as e:
        raise UsageError(f"non-numeric field: {e}") from None
    if not data:
        raise UsageError("no cache or rate sweep rows found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fname, lines in data.items():
        (out / fname).write_text("\n".join(lines) + "\n")
        print(f"wrote {out / fname} ({len(lines) - 2} points)")
    return EXIT_OK


# -- entry ------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cccn", description="Coded content-centric networking simulator")
    p.add_argument("--version", action="version", version=f"cccn {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key=value experiment file")
        sp.add_argument("--seed", help="N, A..B or A,B,C")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--out", default=".", help="output directory (default .)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        sp.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v progress, -vv also writes events.log")

    r = sub.add_parser("run", help="run one experiment (or the sweep the config describes)")
    common(r)
    r.add_argument("--mode", help="IP, CCN, CCCN or a comma list")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep cache size or request rate")
    common(s)
    s.add_argument("--axis", required=True, choices=sorted(AXES))
    s.add_argument("--values", required=True,
                   help="comma list (cache accepts 200MB,1GB,...; rate accepts 10..100:10)")
    s.add_argument("--modes", help="comma list, default all three")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("analyze", help="min-cuts, coding points and rank checks for a topology")
    a.add_argument("--topology", required=True, help="edge-list file")
    a.add_argument("--sources", help="comma list of names or ids; node i holds segment i")
    a.add_argument("--gateways", help="comma list of names or ids")
    a.add_argument("--field-m", type=int, default=8, choices=(4, 8, 16))
    a.add_argument("--samples", type=int, default=1000)
    a.add_argument("--seed", type=int, default=1)
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("plotdata", help="turn metrics CSVs into gnuplot-ready columns")
    d.add_argument("files", nargs="+")
    d.add_argument("--out", default=".")
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as e:       # usage errors, --help, --version
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 1)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CyclicDeliveryGraph as e:
        print(f"error: delivery graph has a cycle: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:      # anything the simulator throws
        log.debug("traceback", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

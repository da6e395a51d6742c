"""Command-line entry point: run, plot, sweep-m and validate."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

from . import conic
from .errors import ScenarioError
from .sim import Scenario, VARIANTS, builtin_path, load_scenario, run_episode

RUN_COLUMNS = ["seed", "variant", "M", "avg_cost", "tracking_err", "qp_ms", "sdp_ms", "collision_free",
               "min_clearance"]
SWEEP_COLUMNS = RUN_COLUMNS + ["identity_compression"]

log = logging.getLogger("cool_drmc")


def parse_seeds(text: str) -> List[int]:
    """'3', '0-9' or '1,4,7' (ranges inclusive)."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        a, _, b = part.partition("-")
        out.extend(range(int(a), int(b) + 1) if b else [int(a)])
    if not out:
        raise ValueError("empty seed list")
    return out


def _resolve(path: str) -> str:
    """Scenario path, or the name of a bundled scenario."""
    if os.path.exists(path):
        return path
    bundled = builtin_path(path)
    if os.path.exists(bundled):
        return bundled
    raise FileNotFoundError(path)


def _load(path: str) -> Scenario:
    return load_scenario(_resolve(path))


def _overrides(sc: Scenario, args) -> Scenario:
    return sc.with_overrides(variant=args.variant, M=args.M, alpha=args.alpha, alpha_u=args.alpha_u,
                             alpha_obs=args.alpha_l)


def _threads(n_jobs: int) -> int:
    cap = os.environ.get("COOL_DRMC_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_jobs))


def _run_one(sc: Scenario):
    return run_episode(sc)


def _map(scenarios: Sequence[Scenario], serial: bool = False):
    workers = 1 if serial else _threads(len(scenarios))
    if workers == 1:
        return [run_episode(s) for s in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, scenarios))


def _atomic_write(path: str, text: str):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _row(res, M, extra=None):
    m = res.metrics
    row = {"seed": res.seed, "variant": res.variant, "M": M, "avg_cost": m["avg_cost"],
           "tracking_err": m["tracking_err"], "qp_ms": m["qp_ms"], "sdp_ms": m["sdp_ms"],
           "collision_free": m["collision_free"], "min_clearance": m["min_clearance"]}
    row.update(extra or {})
    return row


def _csv(rows, columns) -> str:
    import io

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def cmd_run(args) -> int:
    sc = _overrides(_load(args.scenario), args)
    seeds = parse_seeds(args.seeds) if args.seeds else [sc.seed]
    out = args.out
    os.makedirs(os.path.join(out, "traces"), exist_ok=True)
    if args.dump_sdp:
        conic.set_dump_dir(args.dump_sdp)
    try:
        results = _map([sc.with_overrides(seed=s) for s in seeds], serial=bool(args.dump_sdp))
    finally:
        conic.set_dump_dir(None)
    rows, summary = [], []
    for res in results:
        name = f"{sc.name}_{res.variant}_{res.seed}.jsonl"
        _atomic_write(os.path.join(out, "traces", name), res.trace_lines(timing=not args.no_timing))
        rows.append(_row(res, sc.M))
        summary.append(res.summary())
    _atomic_write(os.path.join(out, "metrics.csv"), _csv(rows, RUN_COLUMNS))
    _atomic_write(os.path.join(out, "summary.json"), json.dumps({"episodes": summary}, indent=2) + "\n")
    failed = [r for r in results if r.failed]
    for r in failed:
        print(f"episode seed {r.seed} failed: {r.error}", file=sys.stderr)
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    sc = _overrides(_load(args.scenario), args)
    seeds = parse_seeds(args.seeds) if args.seeds else [sc.seed]
    Ms = sorted(set(int(m) for m in args.Ms.split(",") if m.strip()))
    if not Ms or min(Ms) < 1:
        raise ValueError("M values must be positive")
    jobs = [(M, sc.with_overrides(M=M, seed=s)) for s in seeds for M in Ms]
    results = _map([j[1] for j in jobs])
    rows = []
    for (M, _), res in zip(jobs, results):
        identity = res.metrics["m_max"] <= M
        rows.append(_row(res, M, {"identity_compression": identity}))
    text = _csv(rows, SWEEP_COLUMNS)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 1 if any(r.failed for r in results) else 0


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    print(f"{args.scenario}: ok ({len(sc.robots)} robots, {len(sc.obstacles)} obstacles, T={sc.T})")
    return 0


def cmd_plot(args) -> int:
    from .plot import plot_file

    plot_file(args.input, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cool-drmc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON path or bundled scenario name")
        sp.add_argument("--seeds", help="seed list, e.g. 0-9 or 1,3,5 (default: scenario seed)")
        sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--M", type=int, dest="M")
        sp.add_argument("--alpha", type=float, help="overall confidence, split evenly")
        sp.add_argument("--alpha-u", type=float, dest="alpha_u")
        sp.add_argument("--alpha-l", type=float, dest="alpha_l")

    r = sub.add_parser("run", help="run episodes and write summary, metrics and traces")
    common(r)
    r.add_argument("--out", default="out")
    r.add_argument("--dump-sdp", dest="dump_sdp", metavar="DIR", help="write every hyperplane SDP in SDPA format")
    r.add_argument("--no-timing", action="store_true", help="zero solve times in traces (byte-stable output)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep-m", help="sweep the compression cap M")
    common(s)
    s.add_argument("--Ms", default="1,5,10,20,66", help="comma-separated M values")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="schema check only")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    pl = sub.add_parser("plot", help="render a trace (.jsonl) or sweep CSV to SVG")
    pl.add_argument("input")
    pl.add_argument("output")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"{getattr(args, 'scenario', '')}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

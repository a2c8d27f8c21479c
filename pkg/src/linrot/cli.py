"""Command-line entry point: ``linrot {verify,train,bench,spectral,tasks}``.

Exit codes: 0 success, 1 a check or experiment failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("linrot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed (overrides config seeds)")
    p.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs")
    p.add_argument("--precision", choices=("f32", "f64"), default=argparse.SUPPRESS)
    p.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS, help="resolve and print, do not run")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="linrot", description="Linear attention with rotary state transitions: verification, training and benchmarks.", parents=[common])
    parser.add_argument("--version", action="version", version=f"linrot {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{verify,train,bench,spectral,tasks}", parser_class=_Parser)

    from .verify import SUITES

    p = sub.add_parser("verify", parents=[common], help="run numerical certification suites")
    p.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    p.add_argument("--report", help="write the JSON report here (default: stdout)")
    p.add_argument("--csv", metavar="DIR", help="write tables (rff convergence, theorem mse) as CSV files in DIR")
    p.add_argument("--inject-angle-fault", type=float, default=0.0, metavar="EPS", help="debug hook: corrupt rotation angles by EPS per step")

    p = sub.add_parser("train", parents=[common], help="train from a config file")
    p.add_argument("config", help="path to an experiment config")

    from .bench import MODES

    p = sub.add_parser("bench", parents=[common], help="time the scan and attention paths")
    p.add_argument("--mode", choices=MODES + ("all",), default="all")
    p.add_argument("-T", "--T", dest="lengths", type=int, nargs="+", default=[256, 512, 1024, 2048, 4096, 8192])
    p.add_argument("-d", "--d", dest="dim", type=int, default=16)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--slopes", action="store_true", help="also print log-log slopes per mode")

    p = sub.add_parser("spectral", parents=[common], help="windowed spectra of an off-grid tone")
    ssub = p.add_subparsers(dest="action", metavar="{demo}", parser_class=_Parser)
    d = ssub.add_parser("demo", parents=[common])
    d.add_argument("--tone", type=float, default=7.3, help="tone frequency in bins")
    d.add_argument("-N", type=int, default=64)
    d.add_argument("--alpha", type=float, default=4.0, help="Poisson window decay")
    d.add_argument("--spectrum", action="store_true", help="emit per-bin magnitudes instead of per-window metrics")

    p = sub.add_parser("tasks", parents=[common], help="inspect task generators")
    tsub = p.add_subparsers(dest="action", metavar="{dump}", parser_class=_Parser)
    d = tsub.add_parser("dump", parents=[common])
    d.add_argument("--kind", required=True, choices=("parity", "a3", "mqar", "copy"))
    d.add_argument("--n", type=int, default=4)
    d.add_argument("--length", type=int, default=None)
    return parser


def _opt(args, name, default=None):
    return getattr(args, name, default)


# ----------------------------------------------------------------- commands


def cmd_verify(args) -> int:
    from . import verify

    if _opt(args, "dry_run"):
        print(json.dumps({"suite": args.suite, "angle_fault": args.inject_angle_fault}))
        return EXIT_OK
    tables = {} if args.csv else None
    report = verify.run(args.suite, angle_fault=args.inject_angle_fault, tables=tables)
    if args.csv:
        Path(args.csv).mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in tables.items():
            _emit_csv(rows, header, Path(args.csv) / f"{name}.csv")
    text = json.dumps(report, indent=2)
    target = args.report
    if target is None and _opt(args, "out_dir"):
        target = str(Path(args.out_dir) / f"verify-{args.suite}.json")
    if target:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        Path(target).write_text(text)
    else:
        print(text)
    for c in report["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['suite']}/{c['name']}: {c['measured']:.3e} {c['relation']} {c['tolerance']:.3e}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _resolve(args):
    from . import config as C

    cfg = C.load(args.config)
    if _opt(args, "precision"):
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, precision=args.precision))
    if _opt(args, "seed") is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seeds=(args.seed,)))
    if _opt(args, "out_dir"):
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, out_dir=args.out_dir))
    return cfg


def cmd_train(args) -> int:
    from . import config as C
    from . import training

    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = _resolve(args)
    resolved = C.render(cfg)
    if _opt(args, "dry_run"):
        print(resolved, end="")
        return EXIT_OK
    run_dir = Path(cfg.run.out_dir) / cfg.run.name
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(resolved)
    manifest = {
        "run_id": cfg.run.name,
        "config_hash": cfg.digest(),
        "started": _now(),
        "finished": None,
        "artifacts": ["config.ini"],
        "checks": {},
    }
    extrap = []
    for seed in cfg.train.seeds:
        sub = run_dir / f"seed{seed}"
        res = training.train(cfg.model, cfg.task, cfg.train, seed=seed, run_id=cfg.run.name, out_dir=sub,
                             progress=lambda r: log.info("seed %d step %d %s loss %.4f acc %.4f", r.seed, r.step, r.split, r.loss, r.accuracy))
        recs = training.eval_lengths(res.model, cfg.task, cfg.train.eval_lengths, cfg.train.eval_samples,
                                     run_id=cfg.run.name, step=res.best_step)
        extrap.extend(dataclasses.replace(r, seed=seed) for r in recs)
        manifest["artifacts"] += [f"{sub.name}/{n}" for n in ("best.ckpt", "metrics.csv", "summary.json")]
        manifest["checks"][f"seed{seed}/completed"] = not res.aborted
        for r in recs:
            print(f"seed {seed} length {r.length}: accuracy {r.accuracy:.4f} loss {r.loss:.4f}")
    training.write_metrics_csv(run_dir / "extrapolation.csv", extrap)
    manifest["artifacts"].append("extrapolation.csv")
    manifest["finished"] = _now()
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(run_dir)
    return EXIT_OK if all(manifest["checks"].values()) else EXIT_FAIL


def _emit_csv(rows, header, out_path: Path | None):
    fh = open(out_path, "w", newline="") if out_path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out_path:
            fh.close()


def cmd_bench(args) -> int:
    from . import bench

    modes = bench.MODES if args.mode == "all" else (args.mode,)
    if _opt(args, "dry_run"):
        print(json.dumps({"modes": modes, "T": args.lengths, "d": args.dim, "reps": args.reps}))
        return EXIT_OK
    seed = _opt(args, "seed", 0)
    timings = []
    for mode in modes:
        for T in args.lengths:
            timings.append(bench.time_mode(mode, T, args.dim, args.reps, seed))
    out = Path(args.out_dir) / "bench.csv" if _opt(args, "out_dir") else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
    _emit_csv([t.row() for t in timings], bench.CSV_HEADER, out)
    if args.slopes and len(args.lengths) > 1:
        for mode in modes:
            slope = bench.loglog_slope([t for t in timings if t.mode == mode])
            print(f"# {mode} log-log slope {slope:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_spectral(args) -> int:
    from . import spectral

    if args.action != "demo":
        raise UsageError("spectral: choose an action from {demo}")
    if _opt(args, "dry_run"):
        print(json.dumps({"tone": args.tone, "N": args.N, "alpha": args.alpha}))
        return EXIT_OK
    rows, metrics = spectral.spectral_demo(args.tone, args.N, args.alpha)
    out = Path(args.out_dir) / "spectral.csv" if _opt(args, "out_dir") else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
    if args.spectrum:
        _emit_csv([(w, b, f"{m:.10g}") for w, b, m in rows], ("window", "bin", "magnitude"), out)
    else:
        header = ("window", "alpha", "peak_bin", "peak_bin_error", "sidelobe_ratio")
        _emit_csv([(m["window"], m["alpha"], m["peak_bin"], m["peak_bin_error"], f"{m['sidelobe_ratio']:.6f}") for m in metrics], header, out)
    return EXIT_OK


def cmd_tasks(args) -> int:
    from . import tasks

    if args.action != "dump":
        raise UsageError("tasks: choose an action from {dump}")
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    vocab = {"parity": 2, "a3": 3, "mqar": 64, "copy": tasks.COPY_ALPHABET + 2}[args.kind]
    length = args.length or {"parity": 16, "a3": 16, "mqar": 64, "copy": 8}[args.kind]
    spec = tasks.TaskSpec(args.kind, vocab, length, length, max(length + 1, 256))
    if _opt(args, "dry_run"):
        print(json.dumps(dataclasses.asdict(spec)))
        return EXIT_OK
    batch = tasks.generate(spec, args.n, length, _opt(args, "seed", 0))
    for i in range(args.n):
        print(json.dumps({
            "kind": args.kind,
            "inputs": batch.inputs[i].tolist(),
            "targets": batch.targets[i].tolist(),
            "mask": np.asarray(batch.mask[i], dtype=int).tolist(),
        }))
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "train": cmd_train, "bench": cmd_bench, "spectral": cmd_spectral, "tasks": cmd_tasks}


def main(argv=None) -> int:
    from .config import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError(f"linrot: error: a subcommand is required: {', '.join(COMMANDS)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())

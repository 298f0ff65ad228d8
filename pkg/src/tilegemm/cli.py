"""Command-line entry point: preload, run, sweep, roofline, verify.

Exit codes: 0 success, 2 invalid input, 3 scratchpad overflow, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import best_index, emit_report, emit_roofline
from .arch import load_config, load_config_file, reference_config, serialize
from .engine import SimReport, trace_to_csv, verify
from .errors import SpmOverflow, TileGemmError
from .layout import read_preload, write_preload
from .pipeline import compile_plan, run_plan
from .schedule import load_schedule_file, parse_schedule

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SPM = 3
EXIT_VERIFY = 4

LAYOUT_DEFAULTS = {"split": "1x1", "channels": "1"}


class CliError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _arch(args):
    if args.arch:
        return load_config_file(args.arch)
    return reference_config(args.grid)


def _matrices(preload):
    matrices, _ = read_preload(preload)
    for name in ("A", "B"):
        if name not in matrices:
            raise CliError(f"preload {preload} has no matrix {name}")
    return matrices


# -- preload ------------------------------------------------------------------

def cmd_preload(args) -> int:
    plan = load_schedule_file(args.schedule)
    m, n, k = plan.shape.m, plan.shape.n, plan.shape.k
    if args.a or args.b:
        if not (args.a and args.b):
            raise CliError("--a and --b must be given together")
        a, b = np.load(args.a), np.load(args.b)
        if a.shape != (m, k) or b.shape != (k, n):
            raise CliError(f"inputs are {a.shape} and {b.shape}, schedule needs {(m, k)} and {(k, n)}")
    else:
        rng = np.random.default_rng(args.seed)
        if args.integer:
            a = rng.integers(-8, 9, size=(m, k)).astype(np.float64)
            b = rng.integers(-8, 9, size=(k, n)).astype(np.float64)
        else:
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n))
    manifest = write_preload({"A": a, "B": b}, plan.layouts, args.out)
    for entry in manifest.entries:
        print(entry.to_line())
    return EXIT_OK


# -- run ----------------------------------------------------------------------

def cmd_run(args) -> int:
    arch = _arch(args)
    plan = load_schedule_file(args.schedule)
    # capacity and validity are checked before any preload data is touched
    program = compile_plan(plan, arch)
    matrices = _matrices(args.preload)
    result = run_plan(plan, arch, matrices, program)
    if args.trace:
        Path(args.trace).write_text(trace_to_csv(result.trace))
    if args.result:
        np.save(args.result, result.c)
    if args.out:
        Path(args.out).write_text(emit_report([(result.report.label, result.report)], arch))
    sys.stdout.write(result.report.to_text())
    if args.verify:
        check = verify(result.c, matrices["A"], matrices["B"])
        print(f"verify={'pass' if check.passed else 'fail'} max_abs_error={check.max_abs_error!r}")
        if not check.passed:
            return EXIT_VERIFY
    return EXIT_OK


# -- sweep --------------------------------------------------------------------

def expand_candidates(path, shape=None) -> list[tuple[str, str]]:
    """Candidates file -> ``[(label, schedule text), ...]`` in file order.

    Each line is either a schedule file path (relative to the candidates file)
    or ``grid key=v1,v2 ...`` whose comma-separated alternatives expand to
    their cartesian product. Grid lines default missing ``shape.*`` keys to
    ``shape`` and missing layout keys to a single-channel 1x1 split.
    """
    path = Path(path)
    out = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not line.startswith("grid"):
            sched = Path(line) if Path(line).is_absolute() else path.parent / line
            out.append((sched.stem, sched.read_text()))
            continue
        axes = {}
        for token in line.split()[1:]:
            if "=" not in token:
                raise CliError(f"{path}:{lineno}: expected key=values, got {token!r}")
            key, values = token.split("=", 1)
            axes[key] = [v for v in values.split(",") if v]
        if shape is not None:
            for key, value in zip(("shape.m", "shape.n", "shape.k"), shape):
                axes.setdefault(key, [str(value)])
        for name in ("A", "B", "C"):
            for key, value in LAYOUT_DEFAULTS.items():
                axes.setdefault(f"layout.{name}.{key}", [value])
        keys = list(axes)
        varied = [k for k in keys if len(axes[k]) > 1]
        for combo in itertools.product(*(axes[k] for k in keys)):
            values = dict(zip(keys, combo))
            tag = ";".join(f"{k}={values[k]}" for k in varied)
            label = f"L{lineno}" + (f"[{tag}]" if tag else "")
            out.append((label, "".join(f"{k} = {v}\n" for k, v in values.items())))
    return out


def _sweep_one(arch_text, label, sched_text, preload):
    """Run one candidate in isolation; returns (label, report text or None, reason)."""
    try:
        arch = load_config(arch_text)
        plan = parse_schedule(sched_text, label=label)
        plan = replace(plan, label=label)
        result = run_plan(plan, arch, _matrices(preload))
    except (TileGemmError, CliError) as exc:
        return label, None, f"{type(exc).__name__}: {exc}"
    return label, result.report.to_text(), ""


def run_sweep(arch, candidates, preload, jobs=1):
    """Returns ``(ranked [(label, SimReport)], skipped [(label, reason)])``."""
    arch_text = serialize(arch)
    tasks = [(arch_text, label, text, str(preload)) for label, text in candidates]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_one, *zip(*tasks)))
    else:
        outcomes = [_sweep_one(*t) for t in tasks]
    done, skipped = [], []
    for label, text, reason in outcomes:
        if text is None:
            skipped.append((label, reason))
        else:
            done.append((label, SimReport.from_text(text)))
    order = sorted(range(len(done)), key=lambda i: (done[i][1].total_cycles, i))
    return [done[i] for i in order], skipped


def cmd_sweep(args) -> int:
    arch = _arch(args)
    matrices = _matrices(args.preload)
    shape = (matrices["A"].shape[0], matrices["B"].shape[1], matrices["A"].shape[1])
    candidates = expand_candidates(args.candidates, shape)
    if not candidates:
        raise CliError("candidates file lists nothing")
    jobs = args.jobs or min(len(candidates), os.cpu_count() or 1)
    ranked, skipped = run_sweep(arch, candidates, args.preload, jobs)
    for label, reason in skipped:
        print(f"skipped {label}: {reason}", file=sys.stderr)
    if not ranked:
        raise CliError("no valid candidates")
    table = emit_report(ranked, arch)
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    best = ranked[best_index(ranked)]
    print(f"best={best[0]} cycles={best[1].total_cycles}")
    return EXIT_OK


# -- roofline / verify --------------------------------------------------------

def cmd_roofline(args) -> int:
    arch = _arch(args)
    reports = []
    for path in args.reports:
        rep = SimReport.from_text(Path(path).read_text())
        reports.append((rep.label or Path(path).stem, rep))
    text = emit_roofline(reports, arch)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    matrices = _matrices(args.preload)
    c = np.load(args.result)
    check = verify(c, matrices["A"], matrices["B"], rtol=args.rtol, atol=args.atol)
    print(f"verify={'pass' if check.passed else 'fail'} max_abs_error={check.max_abs_error!r}")
    return EXIT_OK if check.passed else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilegemm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def arch_opts(p):
        p.add_argument("--arch", help="architecture key=value file (default: reference config)")
        p.add_argument("--grid", type=int, default=None, help="scale the reference config to an NxN mesh")

    p = sub.add_parser("preload", help="write a preload manifest and channel binaries")
    p.add_argument("--schedule", required=True, help="schedule file giving shape and layouts")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--integer", action="store_true", help="small integer entries in [-8, 8]")
    p.add_argument("--a", help="A as .npy instead of generated data")
    p.add_argument("--b", help="B as .npy instead of generated data")
    p.set_defaults(func=cmd_preload)

    p = sub.add_parser("run", help="compile a schedule and simulate it")
    arch_opts(p)
    p.add_argument("--schedule", required=True)
    p.add_argument("--preload", required=True)
    p.add_argument("--trace", help="write the per-op trace here")
    p.add_argument("--verify", action="store_true", help="check C against the oracle")
    p.add_argument("--out", help="write the comma-separated report here")
    p.add_argument("--result", help="save C as .npy")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="simulate every candidate and rank by cycles")
    arch_opts(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--preload", required=True)
    p.add_argument("--jobs", type=int, default=0, help="worker processes (default: one per candidate, capped at CPUs)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("roofline", help="roofline coordinates from saved reports")
    arch_opts(p)
    p.add_argument("reports", nargs="+", help="key=value report files written by run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_roofline)

    p = sub.add_parser("verify", help="compare a saved C against the oracle")
    p.add_argument("--preload", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--rtol", type=float, default=1e-9)
    p.add_argument("--atol", type=float, default=1e-12)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpmOverflow as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPM
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TileGemmError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

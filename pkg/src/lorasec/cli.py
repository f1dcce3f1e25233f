"""Command-line front end: validate scenarios, run replicates, compare result directories."""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .sim.engine import run
from .sim.metrics import MetricsReport, aggregate, aggregate_csv, coverage_report, read_aggregate_csv
from .sim.presets import preset, preset_names
from .sim.scenario import Scenario, ScenarioError, dump_scenario, load_scenario

OUT_ENV = "LORASEC_OUT"
DEFAULT_OUT = "runs"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_RUNTIME = 4
EXIT_IO = 5

AGGREGATE_FILE = "aggregate.csv"


class CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def resolve_scenario(ref: str) -> Scenario:
    """A scenario file path, or the name of a built-in preset."""
    path = Path(ref)
    if path.exists():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {ref}: {exc.strerror}") from exc
        try:
            return load_scenario(text)
        except ScenarioError as exc:
            raise CliError(EXIT_INVALID, "\n".join(f"{ref}: {d}" for d in exc.diagnostics)) from exc
    if ref in preset_names():
        return preset(ref)
    raise CliError(EXIT_IO, f"{ref}: no such file or preset")


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_replicate(scenario: Scenario, seed: int) -> tuple[int, str, MetricsReport]:
    sc = scenario.with_seed(seed)
    log = run(sc)
    return seed, log.text(), coverage_report(log, sc)


def replicate_seeds(base: int, replicates: int) -> list[int]:
    return [base + k for k in range(replicates)]


def execute(scenario: Scenario, seeds: list[int], workers: int) -> list[tuple[int, str, MetricsReport]]:
    """Run every seed; at most ``workers`` runs at a time, results in seed order."""
    if workers <= 1 or len(seeds) == 1:
        return [run_replicate(scenario, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
        return list(pool.map(run_replicate, [scenario] * len(seeds), seeds))


def write_results(out_dir: Path, results: list[tuple[int, str, MetricsReport]]) -> Path:
    """Write logs, reports and the aggregate under ``out_dir``; nothing is left behind on failure."""
    created = not out_dir.exists()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for seed, log_text, report in results:
            rep = out_dir / f"seed-{seed}"
            rep.mkdir(exist_ok=True)
            _write_atomic(rep / "events.log", log_text)
            _write_atomic(rep / "metrics.csv", report.to_csv())
        _write_atomic(out_dir / AGGREGATE_FILE, aggregate_csv(aggregate([r for _, _, r in results])))
    except OSError as exc:
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        else:
            for seed, _, _ in results:
                shutil.rmtree(out_dir / f"seed-{seed}", ignore_errors=True)
        raise CliError(EXIT_IO, f"cannot write results to {out_dir}: {exc.strerror or exc}") from exc
    return out_dir


def compare_rows(base: dict[str, float], treat: dict[str, float]) -> list[tuple[str, float, float, float, float | None]]:
    missing = sorted(set(base) ^ set(treat))
    if missing:
        raise CliError(EXIT_INVALID, "metric keys differ: " + ", ".join(missing))
    rows = []
    for key in base:
        b, t = base[key], treat[key]
        rows.append((key, b, t, t - b, None if b == 0 else t / b))
    return rows


def _aggregate_of(ref: str) -> dict[str, float]:
    path = Path(ref)
    if path.is_dir():
        path = path / AGGREGATE_FILE
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror}") from exc
    try:
        return read_aggregate_csv(text)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, f"{path}: {exc}") from exc


def _fmt(v: float | None) -> str:
    if v is None:
        return ""
    return f"{v:.4f}".rstrip("0").rstrip(".")


# -- commands ----------------------------------------------------------------


def _checked(ref: str) -> Scenario:
    sc = resolve_scenario(ref)
    problems = sc.check()
    if problems:
        raise CliError(EXIT_INVALID, "\n".join(f"{ref}: {d}" for d in problems))
    return sc


def cmd_validate(args: argparse.Namespace) -> int:
    sc = _checked(args.scenario)
    print(f"{args.scenario}: OK ({len(sc.devices)} devices, {len(sc.gateways)} gateways, {len(sc.attacks)} attacks)")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    if args.replicates < 1:
        raise CliError(EXIT_USAGE, "--replicates must be >= 1")
    sc = _checked(args.scenario)
    base_seed = sc.seed if args.seed is None else args.seed
    seeds = replicate_seeds(base_seed, args.replicates)
    try:
        results = execute(sc, seeds, args.workers)
    except Exception as exc:  # noqa: BLE001 - any engine failure is a runtime error
        raise CliError(EXIT_RUNTIME, f"run failed: {exc}") from exc
    out_root = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out_dir = write_results(out_root / sc.name, results)
    if args.format == "summary":
        for seed, _, report in results:
            print(f"# {sc.name} seed={seed}")
            print(report.summary())
        if len(results) > 1:
            print(f"# {sc.name} aggregate over {len(results)} replicates")
            print(aggregate_csv(aggregate([r for _, _, r in results])), end="")
    else:
        print(aggregate_csv(aggregate([r for _, _, r in results])), end="")
    print(f"results in {out_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    rows = compare_rows(_aggregate_of(args.baseline), _aggregate_of(args.treatment))
    if args.format == "summary":
        width = max(len(k) for k, *_ in rows)
        for key, b, t, d, r in rows:
            unit = " pp" if key.endswith("_pct") else ""
            ratio = "" if r is None else f"  x{_fmt(r)}"
            print(f"{key:<{width}}  {_fmt(b)} -> {_fmt(t)}  {'+' if d >= 0 else ''}{_fmt(d)}{unit}{ratio}")
    else:
        print("metric,baseline,treatment,delta,ratio")
        for key, b, t, d, r in rows:
            print(f"{key},{_fmt(b)},{_fmt(t)},{_fmt(d)},{_fmt(r)}")
    return EXIT_OK


def cmd_presets(args: argparse.Namespace) -> int:
    if args.name:
        print(dump_scenario(resolve_scenario(args.name)), end="")
    else:
        print("\n".join(preset_names()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lorasec", description="LoRaWAN smart-lighting attack simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file or preset")
    v.add_argument("--scenario", required=True, help="scenario YAML file or preset name")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run replicates and write logs and metrics")
    r.add_argument("--scenario", required=True, help="scenario YAML file or preset name")
    r.add_argument("--seed", type=int, help="first seed (overrides the scenario's own)")
    r.add_argument("--replicates", type=int, default=1, help="number of seeds, counting up from --seed")
    r.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    r.add_argument("--format", choices=("csv", "summary"), default="csv")
    r.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel runs")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="per-metric deltas between two result directories")
    c.add_argument("baseline", help="result directory or aggregate CSV")
    c.add_argument("treatment", help="result directory or aggregate CSV")
    c.add_argument("--format", choices=("csv", "summary"), default="csv")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("presets", help="list presets, or print one as YAML")
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"lorasec: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

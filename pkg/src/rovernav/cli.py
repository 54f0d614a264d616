"""Command-line experiment harness: run scenarios over seeds and modes, summarize."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .sim import MODES, SimConfig, run_scenario
from .terrain import ScenarioSpec, load_scenario

log = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"
SUMMARY_FIELDS = ("total_path_cost", "n_collisions", "total_time", "total_distance")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str | Path
    modes: tuple[str, ...] = MODES
    n_runs: int = 3
    seed: int | None = None  # None: use the scenario's own seed as the base
    out_dir: str | Path = "runs"
    dump_costmaps: bool = False

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ValueError(f"modes must be a nonempty subset of {MODES}, got {self.modes}")


def resolve_scenario(name: str | Path) -> Path:
    """A path to a YAML file, or the name of a bundled scenario (e.g. ``small_rocks``)."""
    p = Path(name)
    if p.is_file():
        return p
    bundled = SCENARIO_DIR / f"{p.stem}.yaml"
    if bundled.is_file():
        return bundled
    raise FileNotFoundError(f"scenario not found: {name}")


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


def _mean(xs):
    return sum(xs) / len(xs) if xs else float("nan")


def run_experiment(e: ExperimentSpec) -> dict:
    """Run every (mode, seed) pair; write per-run files and summary.json.

    Returns the summary dict. Failed runs are recorded under ``errors`` and
    left out of the means.
    """
    spec = load_scenario(resolve_scenario(e.scenario))
    out = Path(e.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = spec.seed if e.seed is None else int(e.seed)
    seeds = list(range(base, base + e.n_runs))
    cfg = SimConfig.from_dict(spec.config)

    runs: dict[str, list[dict]] = {m: [] for m in e.modes}
    errors = []
    for mode in e.modes:
        for seed in seeds:
            run_spec: ScenarioSpec = dataclasses.replace(spec, seed=seed)
            stem = f"{spec.name}_{mode}_seed{seed}"
            dump = out / f"{stem}_costmaps" if e.dump_costmaps else None
            try:
                res = run_scenario(run_spec, mode, cfg, dump_dir=dump)
            except Exception as exc:  # noqa: BLE001 - reported, not swallowed
                log.error("%s failed: %s", stem, exc)
                errors.append({"mode": mode, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                continue
            res.write(out / f"{stem}_trace.csv", out / f"{stem}_metrics.json")
            runs[mode].append(res.metrics.to_dict())

    rows = []
    for mode in e.modes:
        ms = runs[mode]
        row = {"mode": mode, "n_runs": len(ms)}
        for f in SUMMARY_FIELDS:
            row[f] = _mean([r[f] for r in ms])
        row["outcomes"] = {o: sum(r["outcome"] == o for r in ms)
                           for o in sorted({r["outcome"] for r in ms})}
        rows.append(row)
    summary = {"scenario": spec.name, "seeds": seeds, "rows": rows, "errors": errors}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def format_table(summary: dict) -> str:
    head = ("mode", "runs", "path_cost", "collisions", "time_s", "distance_m", "outcomes")
    body = []
    for r in summary["rows"]:
        outcomes = " ".join(f"{k}={v}" for k, v in r["outcomes"].items())
        body.append((r["mode"], str(r["n_runs"]), f"{r['total_path_cost']:.2f}",
                     f"{r['n_collisions']:.2f}", f"{r['total_time']:.2f}",
                     f"{r['total_distance']:.2f}", outcomes))
    widths = [max(len(row[k]) for row in [head, *body]) for k in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head, *body]]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rovernav",
                                description="Run baseline vs. replanning rover navigation experiments.")
    p.add_argument("--scenario", required=True,
                   help=f"scenario YAML path or bundled name ({', '.join(bundled_scenarios())})")
    p.add_argument("--mode", choices=("baseline", "replan", "both"), default="both")
    p.add_argument("--runs", type=int, default=3, help="runs per mode (default 3)")
    p.add_argument("--seed", type=int, default=None, help="seed base (default: scenario seed)")
    p.add_argument("--out", default="runs", help="output directory (default ./runs)")
    p.add_argument("--dump-costmaps", action="store_true",
                   help="write per-cycle global/local costmaps, paths and arc scores")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    modes = MODES if args.mode == "both" else (args.mode,)
    try:
        e = ExperimentSpec(args.scenario, modes, args.runs, args.seed, args.out, args.dump_costmaps)
        summary = run_experiment(e)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(format_table(summary))
    for err in summary["errors"]:
        print(f"run failed: mode={err['mode']} seed={err['seed']}: {err['error']}", file=sys.stderr)
    return 1 if summary["errors"] else 0


if __name__ == "__main__":
    sys.exit(main())

"""Command line runner: Monte Carlo batches with hashed output artifacts."""

from __future__ import annotations

import argparse
import hashlib
import json
import pathlib
import sys

from . import core, simgen


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a tracker comparison batch")
    run.add_argument("--scenario", required=True,
                     help="scenario name, e.g. s1 or s4-6")
    run.add_argument("--trackers", required=True,
                     help="comma-separated tracker names")
    run.add_argument("--runs", type=int, default=100)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--config", default=None,
                     help="JSON file with setting overrides")
    return p


def _sha256(path: pathlib.Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_dat(path: pathlib.Path, header_cols, columns, steps) -> None:
    """Whitespace-separated table with a comment header, for plotting tools."""
    lines = ["# " + " ".join(header_cols)]
    for i in range(steps):
        lines.append(" ".join(simgen._fmt(col[i]) for col in columns))
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def emit_report(report: simgen.RunReport, out_dir) -> dict:
    """Write metrics.csv, plot tables, runtime.json, and a manifest with
    sha256 digests of every deterministic artifact."""
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = report.config.steps
    time_col = list(range(1, steps + 1))

    files = {}
    (out / "metrics.csv").write_bytes(report.to_csv_text().encode("utf-8"))
    files["metrics.csv"] = _sha256(out / "metrics.csv")

    if report.trackers:
        names = report.trackers
        tables = {
            "d_tracks.dat": [report.d_tracks_mean[n] for n in names],
            "d_center.dat": [report.d_center_mean[n] for n in names],
            "gospa_total.dat": [report.mean_gospa[n]["total"] for n in names],
        }
        for fname, cols in tables.items():
            _write_dat(out / fname, ["time"] + names, [time_col] + cols, steps)
            files[fname] = _sha256(out / fname)
        comp_header = ["time"]
        comp_cols = [time_col]
        for n in names:
            for f in ("localization", "missed", "false"):
                comp_header.append(f"{n}_{f}")
                comp_cols.append(report.mean_gospa[n][f])
        _write_dat(out / "gospa_components.dat", comp_header, comp_cols, steps)
        files["gospa_components.dat"] = _sha256(out / "gospa_components.dat")

    (out / "runtime.json").write_text(
        json.dumps(report.runtime_json(), indent=2) + "\n", encoding="utf-8"
    )

    manifest = {
        "scenario": report.config.scenario,
        "trackers": report.trackers,
        "runs": report.runs,
        "seed": report.seed,
        "config": json.loads(report.config.to_json()),
        "files": files,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def _cmd_run(args) -> int:
    names = [s.strip() for s in args.trackers.split(",") if s.strip()]
    bad = [n for n in names if n not in simgen.TRACKERS]
    if bad:
        print(
            f"unknown tracker(s): {', '.join(bad)}; "
            f"available: {', '.join(sorted(simgen.TRACKERS))}",
            file=sys.stderr,
        )
        return 1

    overrides = {}
    if args.config is not None:
        try:
            overrides = json.loads(pathlib.Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
            return 1
    overrides = dict(overrides)
    overrides["scenario"] = args.scenario
    try:
        cfg = core.validate_config(overrides)
    except core.InvalidConfig as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1

    report = simgen.run_monte_carlo(cfg, names, runs=args.runs, seed=args.seed)
    emit_report(report, args.out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())

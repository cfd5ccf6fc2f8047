"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 some cells failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, SynthPanel, load_config
from .dataset import describe_panel, load_csv, write_csv
from .exceptions import ConfigError, DataError
from .harness import ExperimentConfig, run_experiment
from .metrics import assemble_report, write_dm, write_report, write_summary
from .records import read_records, write_records
from .synth import SynthSpec, generate_with_info, panel

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 2, 3, 4
DESCRIBE_SCHEMA = "#schema=sfb.describe/1"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_describe(args) -> int:
    stats = describe_panel(load_csv(args.input), year=args.year)
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        fh.write(DESCRIBE_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "min", "max", "mean", "std_dev", "cv", "total", "share",
                    "cumulative_share"])
        for s in stats:
            w.writerow([s.region, f"{s.min:.2f}", f"{s.max:.2f}", f"{s.mean:.2f}",
                        f"{s.std_dev:.2f}", f"{s.cv:.2f}", f"{s.total:.0f}",
                        f"{s.share:.2f}", f"{s.cumulative_share:.2f}"])
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.panel:
        series = panel(args.panel, args.n, args.seed)
        clipped = 0
    else:
        amps = tuple(float(a) for a in args.amplitudes.split(",")) if args.amplitudes else (0.0,) * 12
        try:
            spec = SynthSpec(n=args.n, base=args.base, trend=args.trend, amplitudes=amps,
                             sigma=args.sigma, phi=args.phi, seed=args.seed,
                             region=args.region, start=args.start)
        except ValueError as exc:
            raise ConfigError("synth", str(exc)) from None
        res = generate_with_info(spec)
        series, clipped = [res.series], res.clipped
    write_csv(series, args.out)
    if clipped:
        print(f"clipped {clipped} values at 1", file=sys.stderr)
    return EXIT_OK


def _load_inputs(input_path, synth: SynthPanel | None):
    if input_path:
        return load_csv(input_path), {"path": str(Path(input_path).resolve()),
                                      "sha256": _sha256(input_path)}
    if synth is None:
        raise ConfigError("input", "give --input or a [synth] section in the config")
    return panel(synth.regions, synth.n, synth.seed), {"synth": vars(synth).copy()}


def _write_outputs(result, out: Path, config: ExperimentConfig, source: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_records(result.records, out / "records.csv")
    write_report(result.report, out / "report.csv")
    write_dm(result.report, out / "dm.csv")
    write_summary(result.report, out / "summary.csv")
    manifest = dict(result.manifest)
    manifest["input"] = source
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _execute(config: ExperimentConfig, dataset, source, out, workers) -> int:
    def progress(res):
        print(f"{res.region} {res.model_id} {res.seconds:.1f}s", file=sys.stderr, flush=True)

    result = run_experiment(dataset, config, workers=workers, progress=progress)
    _write_outputs(result, Path(out), config, source)
    if result.failures:
        print(f"{len(result.failures)} cell failure(s):", file=sys.stderr)
        for err in result.failures:
            print(f"  {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_run(args) -> int:
    if args.manifest:
        with open(args.manifest, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema") != "sfb.manifest/1":
            raise ConfigError("manifest", "not an sfb.manifest/1 document")
        try:
            config = ExperimentConfig.from_dict(doc["config"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("manifest.config", str(exc)) from None
        source = doc.get("input", {})
        if "synth" in source:
            dataset, source = _load_inputs(None, SynthPanel(**source["synth"]))
        else:
            path = args.input or source.get("path")
            if not path or not os.path.exists(path):
                raise DataError(f"manifest input {path!r} not found (pass --input)")
            if _sha256(path) != source.get("sha256"):
                raise DataError(f"{path}: contents differ from the manifest's input")
            dataset, source = _load_inputs(path, None)
    else:
        if not args.config:
            raise ConfigError("config", "give --config or --manifest")
        rc: RunConfig = load_config(args.config)
        config = rc.experiment
        if args.fast:
            config = ExperimentConfig.from_dict({**config.to_dict(), "fast": True})
        dataset, source = _load_inputs(args.input, rc.synth)
    return _execute(config, dataset, source, args.out, args.workers)


def cmd_report(args) -> int:
    records = read_records(args.records)
    eval_window = None if args.eval_window == 0 else args.eval_window
    report = assemble_report(records, eval_window, args.dm_loss, args.dm_critical)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.csv")
    write_dm(report, out / "dm.csv")
    write_summary(report, out / "summary.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfb", description="Seasonal forecasting benchmark: SVR, neural networks and ARMA.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="descriptive statistics per region")
    p.add_argument("input", help="arrivals CSV (date,region,arrivals)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--year", type=int, help="compute totals and shares for this year only")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("synth", help="write synthetic seasonal series in the input format")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--panel", type=int, default=0, metavar="N",
                   help="write a panel of N varied regions instead of a single series")
    p.add_argument("--n", type=int, default=183, help="months per series (>= 24)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base", type=float, default=1000.0)
    p.add_argument("--trend", type=float, default=0.0, help="level change per month")
    p.add_argument("--amplitudes", help="12 comma-separated seasonal offsets, January first")
    p.add_argument("--sigma", type=float, default=0.0, help="noise scale")
    p.add_argument("--phi", type=float, default=0.0, help="AR(1) noise coefficient (0 = white)")
    p.add_argument("--region", default="SYN")
    p.add_argument("--start", default="1999-01", help="first month, YYYY-MM")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the forecasting experiment")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--manifest", help="replay the run recorded in this manifest.json")
    p.add_argument("--input", help="arrivals CSV; otherwise the config's [synth] panel is used")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--fast", action="store_true",
                   help="freeze hyperparameters after the first origin (development only)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: SFB_THREADS or the CPU count)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="rebuild report, DM and summary CSVs from records.csv")
    p.add_argument("--records", required=True, help="records.csv from a previous run")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eval-window", type=int, default=11,
                   help="score the last N test months per region (0 = all)")
    p.add_argument("--dm-loss", choices=("ape", "squared"), default="ape")
    p.add_argument("--dm-critical", type=float, default=None,
                   help="override the significance threshold")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver: ``mimoprec run <spec-file> --out results.csv``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import (ExperimentError, aggregate, emit_csv, load_experiment,
                         parse_stream_pattern, run_experiment, spec_from_mapping)


def _csv_list(text, conv=str):
    return [conv(x) for x in text.split(",") if x.strip()]


def build_parser():
    ap = argparse.ArgumentParser(prog="mimoprec",
                                 description="Multiuser MIMO linear precoding experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment spec and write CSV")
    run.add_argument("spec", help="TOML experiment file")
    run.add_argument("--out", help="output CSV path (overrides 'out' in the spec)")
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--algs", help="comma-separated list, e.g. pmse,dpc,bd")
    run.add_argument("--snr", help="comma-separated SNR grid in dB")
    run.add_argument("--modulation", choices=["off", "naive", "prob"])
    run.add_argument("--ber-target", type=float)
    run.add_argument("--force-streams", help="per-user stream counts, e.g. 3,1")
    run.add_argument("--workers", type=int)
    run.add_argument("--timing", action="store_true",
                     help="include per-row wall time (output no longer reproducible)")
    run.add_argument("-q", "--quiet", action="store_true", help="skip the summary table")
    return ap


def _apply_overrides(doc, args):
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.trials is not None:
        doc["trials"] = args.trials
    if args.algs is not None:
        doc["algs"] = _csv_list(args.algs)
    if args.snr is not None:
        try:
            doc["snr"] = _csv_list(args.snr, float)
        except ValueError:
            raise ExperimentError(f"snr: cannot parse {args.snr!r}")
    if args.modulation is not None:
        doc["modulation"] = args.modulation
    if args.ber_target is not None:
        doc["ber_target"] = args.ber_target
    if args.force_streams is not None:
        doc["force_streams"] = list(parse_stream_pattern(args.force_streams))
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.out is not None:
        doc["out"] = args.out
    return doc


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_mapping(_apply_overrides(load_experiment(args.spec), args))
    except OSError as exc:
        print(f"error: cannot read {args.spec}: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not spec.out:
        print("error: out: no output path (use --out)", file=sys.stderr)
        return 2

    rows = run_experiment(spec)
    try:
        emit_csv(rows, spec.out, timing=args.timing)
    except OSError as exc:
        print(f"error: cannot write {spec.out}: {exc}", file=sys.stderr)
        return 1
    failed = sum(r.status != "ok" for r in rows)
    if not args.quiet:
        print(f"{'K':>3} {'M':>3} {'SNR':>6} {'algorithm':<10} {'mean':>9} {'stderr':>8} {'n':>5}")
        for a in aggregate(rows):
            print(f"{a['K']:>3} {a['M']:>3} {a['snr_db']:>6g} {a['algorithm']:<10} "
                  f"{a['mean']:>9.4f} {a['stderr']:>8.4f} {a['n']:>5}")
    print(f"wrote {len(rows)} rows to {spec.out} ({failed} failed)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

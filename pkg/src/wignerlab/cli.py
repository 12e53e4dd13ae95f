"""Configuration-driven experiment runner.

    wignerlab run <experiment> [--config PATH] [--seed S] [--out DIR]
                  [--workers W] [--no-figures] [key=value]...
    wignerlab list
    wignerlab describe <experiment>

Config files are flat ``key = value`` lines ('#' comments); every key has a
default, and command-line ``key=value`` pairs override the file.  Outputs land
in ``out/<experiment>/<config-hash>/`` as report.json, one CSV (and PNG) per
series, and manifest.json with artifact checksums.  All writes are atomic and
a rerun of the same manifest reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time

from .verify import EXPERIMENTS, describe, run_experiment


def parse_config_file(path):
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def _atomic_write(path, data):
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".")
    os.close(fd)
    with open(tmp, mode) as f:
        f.write(data)
    os.replace(tmp, path)


def _write_csv(path, series):
    lines = [",".join(series["columns"])]
    for row in series["rows"]:
        lines.append(",".join(repr(float(v)) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_artifacts(report, out_root, figures=True):
    outdir = os.path.join(out_root, report.experiment, report.hash)
    os.makedirs(outdir, exist_ok=True)
    _atomic_write(os.path.join(outdir, "report.json"),
                  json.dumps(report.to_json_dict(), indent=1, sort_keys=True) + "\n")
    for name in sorted(report.series):
        _write_csv(os.path.join(outdir, f"{name}.csv"), report.series[name])
    if figures:
        from .plotting import render_report
        render_report(report, outdir)
    artifacts = {}
    for fn in sorted(os.listdir(outdir)):
        if fn != "manifest.json":
            artifacts[fn] = _sha256(os.path.join(outdir, fn))
    manifest = {
        "experiment": report.experiment,
        "config": report.config,
        "config_hash": report.hash,
        "master_seed": report.master_seed,
        "artifacts": artifacts,
    }
    _atomic_write(os.path.join(outdir, "manifest.json"),
                  json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return outdir


def cmd_run(args):
    overrides = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    for pair in args.overrides:
        if "=" not in pair:
            raise SystemExit(f"override {pair!r} is not of the form key=value")
        key, _, val = pair.partition("=")
        overrides[key.strip()] = val.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    start = time.time()
    try:
        report = run_experiment(args.experiment, overrides)
    except KeyError as err:
        raise SystemExit(str(err))
    outdir = write_artifacts(report, args.out, figures=not args.no_figures)
    for line in report.summary_lines():
        print(line)
    print(f"artifacts: {outdir}")
    print(f"wall time: {time.time() - start:.1f}s")
    return 0 if report.passed else 1


def cmd_list(_args):
    for name in EXPERIMENTS:
        print(f"{name}: {EXPERIMENTS[name][2]}")
    return 0


def cmd_describe(args):
    try:
        print(describe(args.experiment))
    except KeyError as err:
        raise SystemExit(str(err))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wignerlab",
        description="Spectral-statistics experiments for deformed mean-field ensembles")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run one experiment and write its artifacts")
    runp.add_argument("experiment", choices=list(EXPERIMENTS))
    runp.add_argument("--config", help="key = value config file")
    runp.add_argument("--seed", type=int, help="master seed override")
    runp.add_argument("--out", default="out", help="output root (default: out)")
    runp.add_argument("--workers", type=int, help="parallel sampling workers")
    runp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    runp.add_argument("overrides", nargs="*", metavar="key=value")
    runp.set_defaults(fn=cmd_run)

    lst = sub.add_parser("list", help="list experiments")
    lst.set_defaults(fn=cmd_list)

    desc = sub.add_parser("describe", help="describe one experiment")
    desc.add_argument("experiment")
    desc.set_defaults(fn=cmd_describe)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: simulate, run, verify, plot."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness.config import ConfigError, ExperimentConfig, load_json, parse_dataset, resolve_out_dir
from .harness.plot import plot_results
from .harness.runner import read_results_csv, run_experiment, write_outputs
from .harness.verify import VerifyConfig, run_checks, write_reports
from .scm import sample


def _common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required, help="JSON config file")
    p.add_argument("--out-dir", help="output directory (overrides $PCFAIR_OUT_DIR and the config)")
    p.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcfair", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw datasets and write them as CSV")
    _common(p, config_required=False)
    p.add_argument("--preset", help="dataset preset, used when no config is given")
    p.add_argument("--n", type=int, default=None, help="records per dataset")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")

    p = sub.add_parser("run", help="run an experiment grid")
    _common(p)

    p = sub.add_parser("verify", help="run the theory-verification suite")
    _common(p)

    p = sub.add_parser("plot", help="Error-vs-TE scatter plot from a results file")
    p.add_argument("--input", required=True, help="results.csv")
    p.add_argument("--output", default=None, help="SVG path (default: next to the input)")
    p.add_argument("--x", default="te")
    p.add_argument("--y", default="error")
    p.add_argument("--group-by", default="method", help="comma-separated columns naming a series")
    p.add_argument("--title", default="")
    return parser


def _simulate(args) -> int:
    raw = load_json(args.config) if args.config else {}
    if args.preset:
        raw["datasets"] = [args.preset]
    if "datasets" not in raw:
        raw["datasets"] = [raw.get("dataset", "linear-reg")]
    seeds = args.seed or raw.get("seeds", [0])
    n = args.n or raw.get("n_train", 10_000)
    out = resolve_out_dir(args.out_dir, raw.get("out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    for entry in raw["datasets"]:
        ds = parse_dataset(entry)
        for s in seeds:
            seed = int(s) + args.seed_offset
            data = sample(ds.spec, n, [seed, 0])
            stem = out / f"{ds.name}_seed{seed}"
            if args.format == "json":
                cols = {"x": data.x.tolist(), "a": data.a.tolist(), "y": data.y.tolist(),
                        "u": data.u.tolist(), "x_cf": data.x_cf.tolist()}
                Path(f"{stem}.json").write_text(json.dumps(cols) + "\n")
            else:
                data.to_csv(f"{stem}.csv")
            print(f"{stem}.{args.format}")
    return 0


def _run(args) -> int:
    raw = load_json(args.config)
    cfg = ExperimentConfig.from_dict(raw)
    out = resolve_out_dir(args.out_dir, cfg.out_dir)
    result = run_experiment(cfg, seed_offset=args.seed_offset, jobs=args.jobs)
    paths = write_outputs(result, out, args.format, raw)
    print(f"{len(result.rows)} rows -> {paths['results']}")
    if result.errors:
        print(f"{len(result.errors)} failed cells, see {paths['errors']}", file=sys.stderr)
    return 0


def _verify(args) -> int:
    raw = load_json(args.config)
    cfg = VerifyConfig.from_dict(raw)
    if args.seed_offset:
        cfg.seeds = tuple(s + args.seed_offset for s in cfg.seeds)
    out = resolve_out_dir(args.out_dir, cfg.out_dir, "verify")
    results = run_checks(cfg)
    failures = write_reports(results, out)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if not r.applicable:
            status = "SKIP"
        print(f"{status} {r.dataset} {r.check}")
    if failures:
        print(json.dumps(failures))
        return 1
    return 0


def _plot(args) -> int:
    rows = read_results_csv(args.input)
    group = [c.strip() for c in args.group_by.split(",") if c.strip()]
    output = args.output or str(Path(args.input).with_suffix(".svg"))
    plot_results(rows, output, args.x, args.y, group, args.title)
    print(output)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"simulate": _simulate, "run": _run, "verify": _verify, "plot": _plot}[args.command]
    try:
        return handler(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

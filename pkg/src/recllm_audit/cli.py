"""Command-line entry point: ``recllm-audit <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import FORMATS, dataset_stats, load_interactions
from .errors import AuditError
from .report import render_report
from .runner import ExperimentConfig, Manifest, git_blob_sha1, load_config, prepare, recompute, run_experiment


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "provider", None):
        overrides["provider.kind"] = args.provider
    if getattr(args, "seed", None) is not None:
        overrides.update({"provider.seed": args.seed, "stats.seed": args.seed})
    if getattr(args, "out", None):
        overrides["output.dir"] = args.out
    return load_config(args.config, overrides)


def _dataset_from_args(args):
    if args.config:
        return prepare(_config_from_args(args)).dataset
    if not args.data:
        raise AuditError("pass --config or --data")
    return load_interactions(args.data, args.format, args.items)


def cmd_ingest(args) -> int:
    ds = _dataset_from_args(args)
    report = dataset_stats(ds)
    print(f"ok: {report.n_users} users, {report.n_items} items, {report.n_interactions} interactions "
          f"({ds.domain})")
    return 0


def cmd_stats(args) -> int:
    ds = _dataset_from_args(args)
    text = dataset_stats(ds).to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    result = run_experiment(config, out_dir=config.output.dir, resume=args.resume)
    failed = [c for c, e in result.manifest["cells"].items() if e["status"] != "complete"]
    print(f"{result.calls_made} completion calls; results in {result.out_dir}")
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_recompute(args) -> int:
    config = _config_from_args(args) if args.config else None
    recompute(args.out, config)
    print(f"metrics and report rebuilt in {args.out}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    files = render_report(out)
    manifest = Manifest.load(out / "manifest.json")
    for rel, text in files.items():
        manifest.data["outputs"][rel] = git_blob_sha1(text.encode("utf-8"))
    manifest.save()
    if args.format == "md":
        sys.stdout.write(files["report/tables.md"])
    elif args.format == "json":
        sys.stdout.write(json.dumps(json.loads(files["report/tables.json"]), indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recllm-audit", description="Audit LLM recommenders offline or live.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (("ingest", cmd_ingest, "validate a dataset and print a one-line summary"),
                            ("stats", cmd_stats, "dataset statistics as key,value CSV")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment config (its dataset section is used)")
        p.add_argument("--data", help="ratings file or dataset directory")
        p.add_argument("--format", choices=FORMATS, default="movielens_csv")
        p.add_argument("--items", help="movies.csv location when not beside the ratings")
        if name == "stats":
            p.add_argument("--out", help="write the CSV here instead of stdout")
        p.set_defaults(fn=fn)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="results directory (overrides output.dir)")
    p.add_argument("--provider", choices=("live", "mock", "replay"))
    p.add_argument("--seed", type=int, help="seed for the provider and the bootstrap")
    p.add_argument("--resume", action="store_true", help="continue an interrupted run in --out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("recompute", help="rebuild metrics and tables from transcripts")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="override the config stored in the results directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_recompute)

    p = sub.add_parser("report", help="render report tables for a results directory")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("md", "json", "none"), default="md", help="what to echo to stdout")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (AuditError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

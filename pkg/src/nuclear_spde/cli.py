"""Command line: ``nspde run | validate | compare``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .runner import RunManifest, compare_manifests, run_scenario, summary_table, validate_scenario
from .scenario import CHECKS, ScenarioError, load_scenario, resolve_scenario, shipped_scenarios

OUT_ENV = "NSPDE_OUT_DIR"


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nspde", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a scenario's checks and write artifacts")
    run.add_argument("--config", required=True,
                     help="scenario YAML file or shipped scenario name")
    run.add_argument("--seed", type=int, help="override ensemble.seed")
    run.add_argument("--paths", type=int, help="override ensemble.paths")
    run.add_argument("--workers", type=int, help="override ensemble.workers")
    run.add_argument("--check", action="append", choices=CHECKS,
                     help="run only these checks (repeatable)")
    run.add_argument("--out", type=Path,
                     help=f"output directory (default ${OUT_ENV}/<name> or runs/<name>)")
    run.add_argument("--dump-paths", type=int, default=0, metavar="N",
                     help="also write paths.tsv/jumps.tsv for the first N paths")

    val = sub.add_parser("validate", help="load and validate a scenario without running it")
    val.add_argument("--config", required=True)

    cmp_ = sub.add_parser("compare", help="diff two run manifests")
    cmp_.add_argument("a", type=Path)
    cmp_.add_argument("b", type=Path)

    sub.add_parser("list", help="list shipped scenarios")
    return ap


def _manifest_path(p: Path) -> Path:
    return p / "manifest.json" if p.is_dir() else p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list":
            for name, path in shipped_scenarios().items():
                print(f"{name}\t{path}")
            return 0
        if args.verb == "compare":
            a = RunManifest.from_json(_manifest_path(args.a).read_text())
            b = RunManifest.from_json(_manifest_path(args.b).read_text())
            diff = compare_manifests(a, b)
            print(diff.report())
            return 0 if diff.empty else 1
        s = load_scenario(resolve_scenario(args.config))
        if args.verb == "validate":
            validate_scenario(s)
            print(f"{s.name}: ok (digest {s.digest()})")
            return 0
        s = s.with_overrides(seed=args.seed, paths=args.paths, checks=args.check,
                             workers=args.workers)
        out = args.out or Path(os.environ.get(OUT_ENV, "runs")) / s.name
        manifest = run_scenario(s, out, dump_paths=args.dump_paths)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    sys.stdout.write(summary_table(manifest.results))
    print(f"{'PASS' if manifest.passed else 'FAIL'}: {s.name} -> {out}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())

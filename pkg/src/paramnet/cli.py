"""Command-line entry point: ``paramnet {gen,train,recalib,report,gradcheck,run}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config, preset_names
from .experiments import MissingInputError, stage_gen, stage_recalib, stage_train
from .nn_core import gradcheck_suite
from .persist import write_csv
from .pnn import DivergenceError
from .report import IncompleteRunError, build_report

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_DIVERGED, EXIT_MISSING = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paramnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate train/test task files",
        "train": "train one model per configured cell",
        "recalib": "recalibrate on test tasks, score models and baselines",
        "report": "collect a run directory into tables and figure data",
        "gradcheck": "compare backprop against finite differences on random networks",
        "run": "gen, train, recalib and report in one go",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="config JSON path or preset:<name>")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        if name == "gradcheck":
            sp.add_argument("--models", type=int, default=20)
            sp.add_argument("--h", type=float, default=1e-6)
            sp.add_argument("--tol", type=float, default=1e-5)
    sub.add_parser("presets", help="list bundled config presets")
    return p


def _resolve(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config).with_overrides(seed=args.seed)
    out = args.out or cfg.output_dir
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir")
    return cfg.with_overrides(output_dir=out), Path(out)


def _gradcheck(args) -> int:
    out = Path(args.out or ".")
    results = gradcheck_suite(args.models, args.h, args.tol, seed=args.seed or 0)
    rows = [(s, "-".join(map(str, dims)), r.n_checked, r.max_rel_error, int(r.passed)) for s, dims, r in results]
    write_csv(out / "gradcheck.csv", ["model_seed", "layer_dims", "n_checked", "max_rel_error", "passed"], rows)
    worst = max(r.max_rel_error for _, _, r in results)
    ok = all(r.passed for _, _, r in results)
    print(f"gradcheck: {len(results)} models, worst relative error {worst:.2e} -> {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "presets":
            print("\n".join(preset_names()))
            return EXIT_OK
        if args.command == "gradcheck":
            return _gradcheck(args)
        if args.command == "report" and not args.config:
            if not args.out:
                raise ConfigError("report needs --out <run dir> or --config")
            build_report(Path(args.out))
            return EXIT_OK
        cfg, out = _resolve(args)
        if args.command in ("gen", "run"):
            stage_gen(cfg, out)
        if args.command in ("train", "run"):
            stage_train(cfg, out)
        if args.command in ("recalib", "run"):
            stage_recalib(cfg, out)
        if args.command in ("report", "run"):
            build_report(out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except IncompleteRunError as exc:
        print("missing cells:", file=sys.stderr)
        for m in exc.missing:
            print(f"  {m}", file=sys.stderr)
        return EXIT_MISSING
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())

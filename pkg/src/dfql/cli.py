"""Command-line entry point.

Every failure exits nonzero after printing one line to stderr of the form
``error: <kind>: <message>``.  ``DFQL_LOG_LEVEL`` sets the log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .mdp import OfflineDataset

log = logging.getLogger("dfql")

EXIT_CONFIG, EXIT_INPUT, EXIT_RUNTIME = 2, 3, 4


def _load_config(path, overrides=None) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(path)
    if overrides:
        doc = {**cfg.to_dict(), **{k: v for k, v in overrides.items() if v is not None}}
        cfg = harness.ExperimentConfig.from_dict(doc)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    K = args.K if args.K is not None else cfg.K[0]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    instance = harness.build_instance(cfg)
    data, moments = harness.generate_data(instance, K, seed, cfg.algorithm)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_csv(out)
    print(out)
    if moments is not None:
        extra = out.with_name(out.stem + "_moments" + out.suffix)
        moments.save_csv(extra)
        print(extra)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config, {"output_dir": args.output_dir})
    K = args.K if args.K is not None else cfg.K[0]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.data is None:
        report = harness.run_cell(cfg, K, seed, out_dir)
    else:
        instance = harness.build_instance(cfg)
        data = OfflineDataset.load_csv(args.data)
        data.check_against(instance.mdp)
        moments = None
        if cfg.algorithm == "vafql":
            if args.data_moments is None:
                raise harness.ConfigError("vafql needs --data-moments alongside --data")
            moments = OfflineDataset.load_csv(args.data_moments)
            moments.check_against(instance.mdp)
        featmap = harness.build_features(cfg, instance.mdp)
        model = harness.build_model(cfg.model, featmap, instance.mdp.horizon)
        K = data.num_episodes
        beta = harness.resolve_beta(cfg, model.param_dim, instance.mdp.horizon, K)
        stack = harness.run_algorithm(cfg, data, moments, model, featmap, beta, seed)
        report = harness.evaluate(instance, stack, K, seed)
        if cfg.save_stacks:
            harness.save_stack(stack, out_dir / f"stack_K{K}_seed{seed}")
    text = harness.results_to_csv([report])
    (out_dir / "results.csv").write_text(text)
    sys.stdout.write(text)
    return 0 if report.status == "ok" else EXIT_RUNTIME


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, {"output_dir": args.output_dir, "workers": args.workers})
    reports = harness.sweep(cfg)
    failed = sum(r.status != "ok" for r in reports)
    print(Path(cfg.output_dir) / "results.csv")
    if failed:
        log.warning("%d of %d cells failed", failed, len(reports))
    return 0


def cmd_report(args) -> int:
    summary = harness.summarize(harness.read_results(args.results))
    if args.json:
        print(json.dumps(summary, indent=2))
        return 0
    print(f"{'K':>8} {'n':>4} {'mean_gap':>14} {'stderr':>12}")
    for row in summary["rows"]:
        print(f"{row['K']:>8} {row['n']:>4} {row['mean_gap']:>14.6g} {row['stderr']:>12.4g}")
    if summary["slope"] is not None:
        print(f"slope {summary['slope']:.4f} (se {summary['slope_stderr']:.4f})")
    else:
        print(f"slope unavailable: {summary.get('slope_error', '')}")
    return 0


def cmd_plot(args) -> int:
    print(harness.plot(args.results, args.kind, args.out))
    return 0


def cmd_check_assumptions(args) -> int:
    result = harness.check_assumptions(_load_config(args.config), n_probes=args.probes)
    print(json.dumps(result, indent=2, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfql", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="roll out the behavior policy and write a dataset CSV")
    p.add_argument("config")
    p.add_argument("--K", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run one (K, seed) cell")
    p.add_argument("config")
    p.add_argument("--K", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset CSV to use instead of generating one")
    p.add_argument("--data-moments", help="second dataset CSV for vafql moment fits")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every (K, seed) cell of a config")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a results CSV per K with the log-log slope")
    p.add_argument("results")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="render an SVG plot from a CSV")
    p.add_argument("results")
    p.add_argument("--kind", required=True, choices=harness.PLOT_KINDS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("check-assumptions", help="realizability, coverage and concentrability diagnostics")
    p.add_argument("config")
    p.add_argument("--probes", type=int, default=20)
    p.set_defaults(func=cmd_check_assumptions)
    return parser


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    level = os.environ.get("DFQL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (FileNotFoundError, IsADirectoryError, KeyError) as exc:
        return _fail("input", exc, EXIT_INPUT)
    except ValueError as exc:
        return _fail("input", exc, EXIT_INPUT)
    except (RuntimeError, ArithmeticError) as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())

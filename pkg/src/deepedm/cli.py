"""Command-line entry point: ``deepedm <command> [options]``.

Exit status is 0 on success, 2 for usage or configuration errors and 1
for failures while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .dynamics import DEFAULT_DT, DEFAULT_STEPS, build_synthetic_suite
from .harness import ConfigError, ExperimentConfig


GLOBAL_FLAGS = ("seed", "config", "out", "threads", "verbose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the command; SUPPRESS keeps
    # the subcommand parser from clobbering a value given before it
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="single seed overriding the config's seed list")
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help=f"output directory (default ${harness.OUT_ENV} or ./runs)")
    common.add_argument("--threads", type=int, help="worker processes for independent seeds")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--data", help="dataset CSV (overrides the config)")
    data.add_argument("--horizon", type=int, help="forecast length H (lookback defaults to 2H)")
    data.add_argument("--epochs", type=int)
    data.add_argument("--delta-t", type=int, dest="delta_t")

    p = _Parser(prog="deepedm", description="DeepEDM forecasting toolkit", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="write the synthetic dataset suite")
    s.add_argument("--dt", type=float, default=DEFAULT_DT)
    s.add_argument("--steps", type=int, default=DEFAULT_STEPS)

    sub.add_parser("train", parents=[common, data], help="train DeepEDM and evaluate it with the baselines")
    sub.add_parser("baseline", parents=[common, data], help="evaluate Simplex and Naive only")

    f = sub.add_parser("forecast", parents=[common], help="forecast from a checkpoint")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--input", required=True, help="series CSV; its last lookback steps are used")
    f.add_argument("--output", help="forecast CSV (default <out>/forecast.csv)")

    e = sub.add_parser("evaluate", parents=[common], help="score a forecast CSV against truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--forecast", required=True)
    e.add_argument("--insample", help="history preceding the truth, for MASE and OWA")

    r = sub.add_parser("recall", parents=[common], help="neighbour recall of delay and latent embeddings")
    r.add_argument("--checkpoint", action="append", default=[], help="add latent rows from this model")
    r.add_argument("--ks", type=_int_list, default=[1])
    r.add_argument("--delta-ts", type=_int_list, default=[1, 5, 10], dest="delta_ts")
    r.add_argument("--dt", type=float, default=0.001)
    r.add_argument("--steps", type=int, default=1000)

    a = sub.add_parser("ablate", parents=[common, data], help="sweep one model setting")
    a.add_argument("--param", required=True, choices=harness.ABLATION_PARAMS)
    a.add_argument("--values", required=True, type=_int_list)
    return p


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else harness.default_output_dir()


def _experiment_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        d = ExperimentConfig.from_json(args.config).to_dict()
        d.pop("resolved")
    if args.data:
        d["dataset"] = args.data
        d.pop("synthetic", None)
    if d.get("dataset") is None and d.get("synthetic") is None:
        raise ConfigError("no dataset: pass --data or a config with 'dataset' or 'synthetic'")
    if args.horizon:
        d["eval_horizons"] = [args.horizon]
    if args.epochs:
        d["train"] = {**d.get("train", {}), "epochs": args.epochs}
    if args.delta_t:
        d["model"] = {**d.get("model", {}), "delta_t": args.delta_t}
    if args.seed is not None:
        d["seeds"] = [args.seed]
    if args.threads:
        d["threads"] = args.threads
    if args.out or not d.get("output_dir"):
        d["output_dir"] = str(_out_dir(args))
    return ExperimentConfig.from_dict(d)


def _print_rows(rows, fields) -> None:
    print(",".join(fields))
    for r in rows:
        print(",".join(harness._fmt(r[f]) for f in fields))


def run(args) -> None:
    cmd = args.command
    if cmd == "simulate":
        paths = build_synthetic_suite(_out_dir(args), dt=args.dt, n_steps=args.steps,
                                      base_seed=args.seed or 0)
        print(f"wrote {len(paths)} datasets to {_out_dir(args)}")
    elif cmd in ("train", "baseline"):
        cfg = _experiment_config(args)
        if cmd == "baseline":
            cfg.models = ["simplex", "naive"]
        res = harness.run_experiment(cfg)
        print(f"metrics: {res.metrics_csv}")
        print(f"summary: {res.summary_csv}")
    elif cmd == "forecast":
        out = Path(args.output) if args.output else _out_dir(args) / "forecast.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        harness.forecast_csv(args.checkpoint, args.input, out)
        print(f"forecast: {out}")
    elif cmd == "evaluate":
        truth = harness.load_csv(args.truth)
        fc = harness.load_csv(args.forecast)
        ins = harness.load_csv(args.insample).values if args.insample else None
        scores = harness.evaluate_forecast(truth.values, fc.values, ins)
        out = _out_dir(args)
        out.mkdir(parents=True, exist_ok=True)
        fields = harness.SCORE_FIELDS
        harness.write_rows(out / "evaluation.csv", fields, [scores])
        _print_rows([scores], fields)
    elif cmd == "recall":
        exp = harness.RecallExperiment(dt=args.dt, n_steps=args.steps, seed=args.seed or 0,
                                       ks=args.ks, delta_ts=args.delta_ts)
        encoders = {}
        for i, path in enumerate(args.checkpoint):
            model = harness.load_model(path)
            start = (model.cfg.delta_t - 1) * model.cfg.tau_delay
            encoders[f"latent_{i}" if len(args.checkpoint) > 1 else "latent"] = (model.latents, start)
        out = _out_dir(args)
        out.mkdir(parents=True, exist_ok=True)
        rows = harness.run_recall(exp, encoders, out / "recall.csv")
        _print_rows(rows, harness.RECALL_FIELDS)
    elif cmd == "ablate":
        cfg = _experiment_config(args)
        rows = harness.run_ablation(cfg, args.param, args.values)
        _print_rows(rows, harness.ABLATION_FIELDS)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    for name in GLOBAL_FLAGS:
        if not hasattr(args, name):
            setattr(args, name, False if name == "verbose" else None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    try:
        run(args)
    except (ConfigError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

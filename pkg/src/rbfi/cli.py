"""Command-line front end.

Exit codes: 0 success, 2 usage/config error, 3 training diverged,
4 input mismatch, 5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io as rio
from .beamforming import DFT, SINUSOIDAL, make_codebook
from .evaluation import (
    OraclePredictor,
    PipelineMismatch,
    compare_baseline,
    evaluate,
    fit_model,
    generate_dataset,
    mmse_study,
    sweep_codebook,
    sweep_scatterers,
)
from .infostats import feasibility_report
from .learner import TrainConfig, TrainingDiverged
from .scenario import ConfigError, ScenarioConfig, build_scenario, parse_scenario_section, read_config_file

log = logging.getLogger("rbfi")

EXIT_USAGE, EXIT_DIVERGED, EXIT_MISMATCH, EXIT_INVARIANT = 2, 3, 4, 5

TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}
FEATURE_KEYS = {"levels", "input_mode", "cbs"}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def load_config(path):
    """Parse a config file into (scenario config, train overrides, feature overrides)."""
    if path is None:
        return ScenarioConfig(), {}, {}
    sections = read_config_file(path)
    unknown = set(sections) - {"scenario", "train", "features"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    scenario = parse_scenario_section(sections.get("scenario", {}))
    train = {}
    for key, raw in sections.get("train", {}).items():
        if key not in TRAIN_KEYS:
            raise ConfigError(f"unknown train key {key!r}")
        default = getattr(TrainConfig, key)
        if key == "loss_kind":
            train[key] = raw.strip()
        elif key == "hidden_dim":
            train[key] = int(raw) if raw.strip().lower() not in ("", "none") else None
        else:
            train[key] = type(default)(raw)
    feats = {}
    for key, raw in sections.get("features", {}).items():
        if key not in FEATURE_KEYS:
            raise ConfigError(f"unknown features key {key!r}")
        if key == "levels":
            feats[key] = int(raw)
        elif key == "cbs":
            feats[key] = _int_list(raw)
        else:
            feats[key] = raw.strip()
    return scenario, train, feats


def _hyper(args, overrides) -> TrainConfig:
    kw = dict(overrides)
    for name in ("lr", "batch_size", "max_epochs", "patience", "lambda_reg", "momentum", "hidden_dim", "loss_kind"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "train_seed", None) is not None:
        kw["seed"] = args.train_seed
    return TrainConfig(**kw)


def _feature_opts(args, overrides):
    levels = args.levels if args.levels is not None else overrides.get("levels", 8)
    cbs = args.cbs if args.cbs is not None else overrides.get("cbs", [0])
    mode = args.input_mode if args.input_mode is not None else overrides.get("input_mode", "values")
    return (levels or None), tuple(cbs), mode


def _add_train_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=_positive_int)
    p.add_argument("--max-epochs", dest="max_epochs", type=_positive_int)
    p.add_argument("--patience", type=_positive_int)
    p.add_argument("--lambda", dest="lambda_reg", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--hidden", dest="hidden_dim", type=_positive_int)
    p.add_argument("--loss", dest="loss_kind", choices=["binary", "categorical"])
    p.add_argument("--train-seed", dest="train_seed", type=int)
    p.add_argument("--levels", type=int, help="quantiser levels (0 disables quantisation)")
    p.add_argument("--cbs", type=_int_list, help="CBS indices feeding the network, e.g. 0,1")
    p.add_argument("--input-mode", dest="input_mode", choices=["values", "indices"])
    p.add_argument("--config")


def _manifest(out, command, args, inputs, outputs, started, config=None):
    rio.write_manifest(f"{out}.manifest.json", command, vars(args), inputs, outputs,
                       {"wall_clock": round(time.perf_counter() - started, 3)}, config)


# --- commands --------------------------------------------------------------------------

def cmd_gen(args):
    started = time.perf_counter()
    config, _, _ = load_config(args.config)
    if args.seed is not None:
        config = config.with_updates(seed=args.seed)
    scenario = build_scenario(config)
    n_tbs = scenario.tbs.num_elements
    size = args.codebook_size or n_tbs
    codebook = make_codebook(args.codebook, size, n_tbs)
    ds = generate_dataset(scenario, codebook, args.samples, config.seed, keep_cbs_channels=args.keep_cbs_channels)
    rio.write_dataset(args.out, ds)
    hist = np.bincount(ds.labels, minlength=codebook.size)
    print(f"wrote {len(ds)} samples to {args.out}")
    print("label histogram: " + " ".join(f"{k}:{c}" for k, c in enumerate(hist)))
    _manifest(args.out, "gen", args, [args.config] if args.config else [], [args.out], started, config)


def cmd_train(args):
    started = time.perf_counter()
    _, train_over, feat_over = load_config(args.config)
    ds = rio.read_dataset(args.dataset)
    levels, cbs, mode = _feature_opts(args, feat_over)
    model, report = fit_model(ds, cbs, levels, _hyper(args, train_over), mode)
    rio.write_model(args.out, model)
    report_path = args.report or f"{args.out}.train.csv"
    rio.write_csv(report_path, report.rows(), ["epoch", "train_loss", "val_loss", "val_accuracy"])
    print(f"epochs {report.epochs} (best {report.best_epoch}), test accuracy {report.test_accuracy}")
    _manifest(args.out, "train", args, [args.dataset], [args.out, report_path], started, ds.config)


def cmd_eval(args):
    started = time.perf_counter()
    ds = rio.read_dataset(args.dataset)
    if args.oracle:
        predictor = OraclePredictor()
    elif args.model:
        predictor = rio.read_model(args.model)
    else:
        raise UsageError("eval needs --model or --oracle")
    rep = evaluate(predictor, ds, args.topk, power=not args.amplitude)
    idx = ds.split["test"]
    rows = ({"index": int(i), "label": int(ds.labels[i]), "strength": float(s), "strength_top1": float(s1),
             "vs_mrt": float(v)} for i, s, s1, v in zip(idx, rep.strengths, rep.strengths_top1, rep.vs_mrt))
    rio.write_csv(args.out, rows, ["index", "label", "strength", "strength_top1", "vs_mrt"])
    cdf_path = f"{args.out}.cdf.csv"
    rio.write_csv(cdf_path, ({"strength": float(g), "cdf": float(c)} for g, c in zip(rep.cdf_grid, rep.cdf)),
                  ["strength", "cdf"])
    summary_path = f"{args.out}.summary.txt"
    rio.write_summary(summary_path, {"normalization": "codebook optimum (strength), |h|^2 (vs_mrt)",
                                     **rep.summary()})
    print(f"top1 {rep.top1_accuracy:.4f} top{args.topk} {rep.topk_accuracy:.4f} mean {rep.mean_normalized:.4f}")
    inputs = [args.dataset] + ([args.model] if args.model and not args.oracle else [])
    _manifest(args.out, "eval", args, inputs, [args.out, cdf_path, summary_path], started, ds.config)


def cmd_mi(args):
    started = time.perf_counter()
    ds = rio.read_dataset(args.dataset)
    rows = feasibility_report(ds, args.sizes, args.pca_k, args.levels, args.cbs, args.shuffle_labels)
    rio.write_csv(args.out, (r.as_dict() for r in rows))
    for r in rows:
        print(f"size {r.codebook_size}: H {r.h_label_bits:.4f} MI {r.mi_bits:.4f} corr {r.max_abs_corr:.4f}")
    _manifest(args.out, "mi", args, [args.dataset], [args.out], started, ds.config)


def cmd_sweep_codebook(args):
    started = time.perf_counter()
    config, train_over, feat_over = load_config(args.config)
    levels, cbs, _ = _feature_opts(args, feat_over)
    config = config.with_updates(num_cbs=max(config.num_cbs, max(cbs) + 1))
    rows = sweep_codebook(config, args.sizes, args.samples, args.seed, cbs, _hyper(args, train_over), levels)
    rio.write_csv(args.out, (r.as_dict() for r in rows))
    _manifest(args.out, "sweep-codebook", args, [args.config] if args.config else [], [args.out], started, config)


def cmd_sweep_scatterers(args):
    started = time.perf_counter()
    config, train_over, feat_over = load_config(args.config)
    levels, _, _ = _feature_opts(args, feat_over)
    rows = sweep_scatterers(config, args.counts, args.samples, args.seed, tuple(args.cbs_counts),
                            tuple(args.topks), _hyper(args, train_over), levels)
    rio.write_csv(args.out, (r.as_dict() for r in rows))
    _manifest(args.out, "sweep-scatterers", args, [args.config] if args.config else [], [args.out], started, config)


def cmd_baseline(args):
    started = time.perf_counter()
    config, train_over, feat_over = load_config(args.config)
    levels, _, _ = _feature_opts(args, feat_over)
    rows = compare_baseline(config, args.k_db, args.cbs_counts, args.samples, args.seed,
                            _hyper(args, train_over), levels, args.topk)
    rio.write_csv(args.out, (r.as_dict() for r in rows))
    _manifest(args.out, "baseline", args, [args.config] if args.config else [], [args.out], started, config)


def cmd_mmse(args):
    started = time.perf_counter()
    ds = rio.read_dataset(args.dataset)
    predictor = OraclePredictor() if args.oracle else rio.read_model(args.model)
    rep = mmse_study(predictor, ds, args.pairs, args.noise_power, args.seed)
    rows = ({"pair": i // 2, "ue": i % 2, "sinr_perfect": float(a), "sinr_quantized": float(b),
             "sinr_inferred": float(c), "norm_quantized": float(b / a), "norm_inferred": float(c / a)}
            for i, (a, b, c) in enumerate(zip(rep.sinr_perfect, rep.sinr_quantized, rep.sinr_inferred)))
    rio.write_csv(args.out, rows, ["pair", "ue", "sinr_perfect", "sinr_quantized", "sinr_inferred",
                                   "norm_quantized", "norm_inferred"])
    med = rep.medians()
    rio.write_summary(f"{args.out}.summary.txt", {"noise_power": rep.noise_power, **{f"median_{k}": v for k, v in med.items()}})
    print(f"median normalised SINR: quantized {med['quantized']:.4f} inferred {med['inferred']:.4f}")
    inputs = [args.dataset] + ([] if args.oracle else [args.model])
    _manifest(args.out, "mmse", args, inputs, [args.out, f"{args.out}.summary.txt"], started, ds.config)


def cmd_verify_manifest(args):
    problems = rio.verify_manifest(args.manifest)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return EXIT_INVARIANT
    print("manifest OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbfi", description="Remote beamforming inference experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labelled dataset")
    p.add_argument("config", nargs="?")
    p.add_argument("out")
    p.add_argument("--samples", type=_positive_int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--codebook", choices=[DFT, SINUSOIDAL], default=DFT)
    p.add_argument("--codebook-size", dest="codebook_size", type=_positive_int)
    p.add_argument("--keep-cbs-channels", dest="keep_cbs_channels", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a classifier on a dataset")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--report")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on the test split")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--model")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--topk", type=_positive_int, default=1)
    p.add_argument("--amplitude", action="store_true", help="amplitude instead of power ratios")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mi", help="mutual-information feasibility report")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--sizes", type=_int_list, default=[2, 4, 8, 16, 32])
    p.add_argument("--pca-k", dest="pca_k", type=_positive_int, default=3)
    p.add_argument("--levels", type=_positive_int, default=8)
    p.add_argument("--cbs", type=_int_list)
    p.add_argument("--shuffle-labels", dest="shuffle_labels", type=int, metavar="SEED")
    p.set_defaults(func=cmd_mi)

    p = sub.add_parser("sweep-codebook", help="accuracy / quantisation loss vs codebook size")
    p.add_argument("config", nargs="?")
    p.add_argument("out")
    p.add_argument("--sizes", type=_int_list, default=[8, 16, 32, 64])
    p.add_argument("--samples", type=_positive_int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_codebook)

    p = sub.add_parser("sweep-scatterers", help="performance vs number of scatterers")
    p.add_argument("config", nargs="?")
    p.add_argument("out")
    p.add_argument("--counts", type=_int_list, default=[0, 2, 5, 10, 15, 20, 25])
    p.add_argument("--samples", type=_positive_int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cbs-counts", dest="cbs_counts", type=_int_list, default=[1, 2])
    p.add_argument("--topks", type=_int_list, default=[1, 2])
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_scatterers)

    p = sub.add_parser("baseline", help="NN vs exact-location beamforming")
    p.add_argument("config", nargs="?")
    p.add_argument("out")
    p.add_argument("--k-db", dest="k_db", type=_float_list, default=[0.0, 10.0, 20.0])
    p.add_argument("--cbs-counts", dest="cbs_counts", type=_int_list, default=[1, 2])
    p.add_argument("--samples", type=_positive_int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topk", type=_positive_int, default=1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("mmse", help="two-UE MMSE SINR study")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--model")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--pairs", type=_positive_int, default=1000)
    p.add_argument("--noise-power", dest="noise_power", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mmse)

    p = sub.add_parser("verify-manifest", help="re-hash the files listed in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_verify_manifest)
    return parser


def _thread_limit():
    threads = os.environ.get("RBFI_THREADS")
    if not threads:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(threads))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "mmse" and not (args.model or args.oracle):
        parser.error("mmse needs --model or --oracle")
    try:
        with _thread_limit():
            return args.func(args) or 0
    except (UsageError, ConfigError) as exc:
        print(f"rbfi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"rbfi: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PipelineMismatch, rio.FormatError, OSError) as exc:
        print(f"rbfi: input mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (AssertionError, FloatingPointError) as exc:
        print(f"rbfi: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

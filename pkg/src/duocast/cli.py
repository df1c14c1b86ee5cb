"""Command-line entry point.

Subcommands: run, sweep, ablate, export-embeddings, plot-pca, make-data.
Options can come from a YAML config file (--config), with command-line flags
taking precedence. Exit codes: 0 success, 1 config error, 2 data error,
3 training failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    EXIT_TRAINING,
    ConfigError,
    DataError,
    DuocastError,
    TrainingDivergenceError,
)

logger = logging.getLogger(__name__)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file mirroring RunConfig fields")
    parser.add_argument("--dataset", dest="dataset_path", help="path to the dataset CSV")
    parser.add_argument("--dataset-name", dest="dataset_name")
    parser.add_argument("--split-convention", dest="split_convention",
                        choices=["auto", "ett_hourly", "ett_minutely", "ratio_70_10_20"])
    parser.add_argument("--lookback", type=int)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--patch-len", dest="patch_len", type=int)
    parser.add_argument("--stride", type=int)
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--n-learn", dest="n_learn", type=int)
    parser.add_argument("--d-llm", dest="d_llm", type=int)
    parser.add_argument("--d-model", dest="d_model", type=int)
    parser.add_argument("--backend", choices=["pretrained", "stub"])
    parser.add_argument("--llm-layers", dest="llm_layers", type=int)
    parser.add_argument("--llm-weights-dir", dest="llm_weights_dir")
    parser.add_argument("--llm-random-init", dest="llm_random_init", action="store_true",
                        default=None, help="build the pretrained architecture without weights")
    parser.add_argument("--head", choices=["full", "lowrank"])
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--few-shot-ratio", dest="few_shot_ratio", type=float)
    parser.add_argument("--ablate", action="append",
                        choices=["scale", "align", "learnable-prompt", "scale+align"],
                        help="repeatable; maps to the standard ablation variants")
    parser.add_argument("--seeds", help="comma-separated seed list, e.g. 2021,2022,2023")
    parser.add_argument("--out", dest="out_dir", help="output directory for result files")


def _collect_overrides(args: argparse.Namespace) -> dict:
    skip = {"config", "command", "func", "verbose", "axis", "values", "checkpoint",
            "embeddings", "out_file", "length", "channels", "period", "noise", "seed",
            "variants"}
    overrides = {}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        overrides[key] = value
    if "seeds" in overrides:
        overrides["seeds"] = tuple(int(s) for s in str(overrides["seeds"]).split(",") if s)
    if "ablate" in overrides:
        overrides["ablate"] = tuple(overrides["ablate"])
    return overrides


def _build_config(args: argparse.Namespace):
    from .config import config_from_mapping, load_config

    overrides = _collect_overrides(args)
    if args.config:
        return load_config(args.config, overrides)
    if "dataset_path" not in overrides:
        raise ConfigError("either --config or --dataset is required")
    return config_from_mapping(overrides)


def _print_results(results) -> None:
    for res in results:
        mse = "n/a" if res.avg_mse is None else f"{res.avg_mse:.6f}"
        mae = "n/a" if res.avg_mae is None else f"{res.avg_mae:.6f}"
        print(
            f"{res.config.dataset_name} L={res.config.lookback} H={res.config.horizon} "
            f"lambda={res.config.lam} ablation={res.ablation_label} "
            f"avg_mse={mse} avg_mae={mae} "
            f"trainable={res.params_trainable} total={res.params_total}"
        )


def _cmd_run(args) -> int:
    from .bench import report, run_experiment

    config = _build_config(args)
    result = run_experiment(config)
    report([result], config.out_dir)
    _print_results([result])
    if not result.ok_seeds:
        raise TrainingDivergenceError("every seed failed; see logs")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .bench import report, sweep

    config = _build_config(args)
    values = [v for v in str(args.values).split(",") if v]
    if not values:
        raise ConfigError("--values must list at least one point")
    parsed = [float(v) if args.axis == "lambda" else int(v) for v in values]
    results = sweep(config, args.axis, parsed)
    report(results, config.out_dir)
    _print_results(results)
    if not any(r.ok_seeds for r in results):
        raise TrainingDivergenceError("every sweep run failed; see logs")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .bench import report, run_experiment

    config = _build_config(args)
    variants = args.variants or ["scale+align", "align", "scale", "learnable-prompt"]
    results = [run_experiment(dataclasses.replace(config, ablate=()))]
    for variant in variants:
        results.append(run_experiment(dataclasses.replace(config, ablate=(variant,))))
    report(results, config.out_dir)
    _print_results(results)
    if not any(r.ok_seeds for r in results):
        raise TrainingDivergenceError("every ablation run failed; see logs")
    return EXIT_OK


def _cmd_export_embeddings(args) -> int:
    from .bench import build_model, export_batch, export_embeddings, prepare_data
    from .checkpoint import load_checkpoint

    config = _build_config(args)
    data = prepare_data(config)
    model = build_model(config, data.table.n_channels, config.seeds[0])
    if args.checkpoint:
        load_checkpoint(args.checkpoint, model)
    batch = export_batch(data, config)
    out = Path(config.out_dir) / "embeddings.csv"
    export_embeddings(model, batch, out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_plot_pca(args) -> int:
    from .bench import plot_pca

    out = plot_pca(args.embeddings, args.out_file)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_make_data(args) -> int:
    from .synthetic import make_sine_table, write_csv

    table = make_sine_table(
        name=Path(args.out_file).stem,
        length=args.length,
        n_channels=args.channels,
        period=args.period,
        noise_std=args.noise,
        seed=args.seed,
    )
    write_csv(table, args.out_file)
    print(f"wrote {args.out_file} ({table.length} rows, {table.n_channels} channels)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duocast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one configuration")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="vary one config axis over a value list")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=["lookback", "text_len", "lambda"])
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_abl = sub.add_parser("ablate", help="run the standard ablation panel")
    _add_config_flags(p_abl)
    p_abl.add_argument("--variants", action="append",
                       choices=["scale", "align", "learnable-prompt", "scale+align"],
                       help="restrict to these variants (default: all four)")
    p_abl.set_defaults(func=_cmd_ablate)

    p_exp = sub.add_parser("export-embeddings", help="dump pooled embeddings to CSV")
    _add_config_flags(p_exp)
    p_exp.add_argument("--checkpoint", help="restore trainable weights before exporting")
    p_exp.set_defaults(func=_cmd_export_embeddings)

    p_pca = sub.add_parser("plot-pca", help="2-component PCA plot of exported embeddings")
    p_pca.add_argument("--embeddings", required=True, help="embeddings.csv from export-embeddings")
    p_pca.add_argument("--out", dest="out_file", required=True, help="output image path")
    p_pca.set_defaults(func=_cmd_plot_pca)

    p_mk = sub.add_parser("make-data", help="write a synthetic sinusoid dataset CSV")
    p_mk.add_argument("--out", dest="out_file", required=True)
    p_mk.add_argument("--length", type=int, default=2000)
    p_mk.add_argument("--channels", type=int, default=3)
    p_mk.add_argument("--period", type=int, default=24)
    p_mk.add_argument("--noise", type=float, default=0.1)
    p_mk.add_argument("--seed", type=int, default=7)
    p_mk.set_defaults(func=_cmd_make_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TrainingDivergenceError as exc:
        logger.error("training failure: %s", exc)
        return EXIT_TRAINING
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        logger.error("file error: %s", exc)
        return EXIT_DATA
    except DuocastError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

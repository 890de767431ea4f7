"""Command-line front end: init-config, gen, train, eval, export.

Every command is a deterministic function of (config, data bytes, seed).
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    TRAIN_FRACTION,
    load_config,
    sim_config_from,
    write_default_config,
)
from .errors import ConfigError, DataError, TrainingError
from .estimator import CGameRegressor
from .evalkit import evaluate_many, export_curve, export_heatmap, write_report
from .model import load_model, predict_od, save_model
from .simkit import Dataset, generate_dataset, load_dataset, save_dataset


def _cmd_init_config(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise ConfigError(f"{out} already exists (use --force to overwrite)")
    write_default_config(out)
    print(f"wrote default config to {out}")
    return 0


def _cmd_gen(args) -> int:
    config = load_config(args.config)
    sim = sim_config_from(config)
    seed = config["sim"]["seed"] if args.seed is None else args.seed
    out = Path(args.out) if args.out else Path(config["paths"]["data_dir"])

    dataset = generate_dataset(sim, seed)
    save_dataset(dataset, out)
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"generated {dataset.n_items} items into {out}")
    print(f"  counts shape {dataset.n_links}x{dataset.n_timeslices}, "
          f"od shape {dataset.n_spots}x{dataset.n_spots}")
    print(f"  split {len(dataset.train_indices)} train / {len(dataset.val_indices)} val")
    print(f"  sha256 {manifest['sha256']}")
    return 0


def _check_dims(config: dict, dataset: Dataset) -> None:
    net, sim = config["network"], config["sim"]
    n_spots = net["rows"] * net["cols"]
    n_links = 2 * (net["rows"] * (net["cols"] - 1) + net["cols"] * (net["rows"] - 1))
    if (dataset.n_spots, dataset.n_links, dataset.n_timeslices) != (
        n_spots,
        n_links,
        sim["n_timeslices"],
    ):
        raise DataError(
            f"dataset dims (spots={dataset.n_spots}, links={dataset.n_links}, "
            f"slices={dataset.n_timeslices}) do not match the config "
            f"(spots={n_spots}, links={n_links}, slices={sim['n_timeslices']})"
        )


def _regressor(config: dict, seed: int, ablation: bool) -> CGameRegressor:
    model, train = config["model"], config["train"]
    return CGameRegressor(
        n_features=model["n_features"],
        n_hidden=model["n_hidden"],
        n_structures=model["n_structures"],
        structures_per_step=model["structures_per_step"],
        refresh_substeps=model["refresh_substeps"],
        discount=model["discount"],
        update_interval=model["update_interval"],
        gate_mode=model["gate_mode"],
        literal_cosine=model["literal_cosine"],
        leaky_slope=model["leaky_slope"],
        lr=train["lr"],
        momentum=train["momentum"],
        batch_size=train["batch_size"],
        max_iters=train["max_iters"],
        loss=train["loss"],
        ablation=ablation,
        validation_fraction=1.0 - TRAIN_FRACTION,
        random_state=seed,
    )


def _cmd_train(args) -> int:
    config = load_config(args.config)
    dataset = load_dataset(args.data)
    _check_dims(config, dataset)
    seeds = [args.seed] if args.seed is not None else config["train"]["seeds"]
    out = Path(args.out) if args.out else Path(config["paths"]["models_dir"])
    prefix = "ablation" if args.ablation else "model"

    for seed in seeds:
        reg = _regressor(config, seed, args.ablation)
        reg.fit(
            dataset.counts,
            dataset.ods,
            train_indices=dataset.train_indices,
            val_indices=dataset.val_indices,
        )
        model_dir = out / f"{prefix}_seed{seed}"
        save_model(reg.model_, model_dir)
        curves = out / "curves"
        export_curve(reg.history_.train_loss, curves / f"{prefix}_train_loss_seed{seed}.csv")
        export_curve(
            list(zip(reg.history_.val_iterations, reg.history_.val_loss)),
            curves / f"{prefix}_val_loss_seed{seed}.csv",
        )
        print(
            f"seed {seed}: best val loss {reg.history_.best_val_loss:.6f} "
            f"at iteration {reg.history_.best_iteration}; saved to {model_dir}"
        )
    return 0


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    models = [load_model(d) for d in args.models]
    for model in models:
        if (model.dims.n_spots, model.dims.n_links, model.dims.n_timeslices) != (
            dataset.n_spots,
            dataset.n_links,
            dataset.n_timeslices,
        ):
            raise DataError(
                f"model dims (spots={model.dims.n_spots}, links={model.dims.n_links}, "
                f"slices={model.dims.n_timeslices}) do not match the dataset "
                f"(spots={dataset.n_spots}, links={dataset.n_links}, "
                f"slices={dataset.n_timeslices})"
            )
    report = evaluate_many(models, dataset, split="val")
    out = Path(args.out)
    write_report(report, out)
    print(f"evaluated {len(models)} model(s) on {len(dataset.val_indices)} validation items")
    for name in ("rmse", "mae", "accuracy", "r2", "var_score", "hotspot_recall"):
        mean = getattr(report, name)
        shown = "n/a" if mean is None else f"{mean:.4f} +- {report.std[name]:.4f}"
        print(f"  {name}: {shown}")
    print(f"wrote {out}")
    return 0


def _cmd_export(args) -> int:
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    if not 0 <= args.item < dataset.n_items:
        raise DataError(f"item {args.item} out of range for {dataset.n_items} items")
    out = Path(args.out)
    true_od = dataset.ods[args.item]
    pred_od = predict_od(model, dataset.counts[args.item])
    written = []
    for name, matrix in (
        ("true_od", true_od),
        ("predicted_od", pred_od),
        ("abs_error", np.abs(true_od - pred_od)),
    ):
        written.extend(export_heatmap(matrix, out / f"item{args.item}_{name}"))
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgame",
        description="Synthetic grid-traffic OD estimation: generate data, "
        "train the matching-gate model, evaluate, and export heatmaps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", help="write the default config file")
    p.add_argument("--out", default="config.json")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=_cmd_init_config)

    p = sub.add_parser("gen", help="generate and store a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="dataset directory (default from config)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train one model per configured seed")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", default=None, help="models directory (default from config)")
    p.add_argument("--seed", type=int, default=None, help="train only this seed")
    p.add_argument(
        "--ablation", action="store_true", help="freeze the gate at the identity"
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate model(s) on the validation split")
    p.add_argument("models", nargs="+", help="model directories")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export", help="export true/predicted/error OD heatmaps")
    p.add_argument("model", help="model directory")
    p.add_argument("--data", required=True)
    p.add_argument("--item", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
celldir CLI Tool for Cell Migration Direction Estimation
Synthetic data generation, probing-CNN training and evaluation, configuration sweeps,
test-time augmentation and the quadrant baseline calculator
"""

import csv
import io
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from config import get_config, get_config_value
from modules.circular_module import TWO_PI, wrap
from modules.data_module import (
    CELL_PRESETS,
    generate_cell,
    generate_dataset,
    labels_from_tracks,
    load_dataset,
    load_tracks_csv,
    make_folds,
    read_pgm,
    save_dataset,
)
from modules.network_module import gradcheck, load_checkpoint, probing_cnn, save_checkpoint
from modules.report_module import render_sweep_table, render_tta_table
from modules.training_module import (
    NINE_CONFIGURATIONS,
    QUADRANT_PRESETS,
    QuadrantBaseline,
    e_deg,
    load_run_config,
    quadrant_baseline,
    sweep,
    train,
    write_sweep_outputs,
)
from modules.tta_module import TtaConfig, tta_eval, tta_predict, tta_table
from modules.utils_module import (
    EXIT_OK,
    EXIT_USAGE,
    CellDirError,
    ConfigError,
    DegenerateOutputError,
    NumericError,
    exit_code_for,
    log_event,
    save_metadata,
    to_degrees,
)


@click.group()
def cli():
    """Estimate cell migration direction from single images"""
    pass


def _folds_for(dataset, seed):
    return make_folds(dataset.ids, k=get_config_value("training.folds", 4), seed=seed)


# ============================================================================
# DATA
# ============================================================================

@cli.command("gen")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output dataset directory")
@click.option("--count", default=lambda: get_config_value("data.count", 2000), type=int, help="Number of cells")
@click.option("--size", default=lambda: get_config_value("data.size", 64), type=int, help="Image side in pixels")
@click.option("--seed", required=True, type=int, help="Base random seed")
@click.option("--preset", default=lambda: get_config_value("data.preset", "standard"),
              type=click.Choice(sorted(CELL_PRESETS)), help="Cell morphology preset")
def gen_cmd(out, count, size, seed, preset):
    """Generate a synthetic dataset of polarized cells"""
    click.echo(f"🚀 Generating {count} cells ({size}x{size}, preset {preset}, seed {seed})")
    dataset = generate_dataset(count, size, seed, preset)
    save_dataset(dataset, out, provenance={"count": count, "size": size, "seed": seed, "preset": preset})
    log_event("gen", {"out": out, "count": count, "size": size, "seed": seed, "preset": preset})
    click.echo(f"✅ Dataset written to {out}")


@cli.command("tracks")
@click.option("--tracks", "tracks_path", required=True, type=click.Path(dir_okay=False),
              help="CSV with id,frame,x_um,y_um")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output labels CSV")
@click.option("--min-displacement", default=5.0, type=float, show_default=True,
              help="Reject cells that moved at most this far (µm)")
def tracks_cmd(tracks_path, out, min_displacement):
    """Derive direction labels from cell tracks"""
    tracks = load_tracks_csv(tracks_path)
    labels, rejected = labels_from_tracks(tracks, min_displacement)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["id", "angle_rad"])
    for cell_id, angle in labels.items():
        writer.writerow([cell_id, repr(angle)])
    with open(out, "w", newline="") as f:
        f.write(buffer.getvalue())

    click.echo(f"✅ {len(labels)} labels written to {out}")
    if rejected:
        click.echo(f"⚠️ {len(rejected)} cell(s) moved ≤ {min_displacement} µm and were rejected", err=True)


# ============================================================================
# TRAINING AND PREDICTION
# ============================================================================

@cli.command("train")
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="JSON run configuration")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Checkpoint path")
@click.option("--fold", default=0, type=int, show_default=True, help="Fold index to train on")
@click.option("--report", type=click.Path(dir_okay=False), help="Report JSON path (default: <out>.json)")
def train_cmd(data, config_path, out, fold, report):
    """Train the probing CNN on one fold"""
    run_config = load_run_config(config_path)
    dataset = load_dataset(data)
    folds = _folds_for(dataset, run_config.seed)
    if not 0 <= fold < len(folds):
        raise click.BadParameter(f"fold must be in [0, {len(folds) - 1}]", param_hint="--fold")

    click.echo(f"🚀 Training {run_config.label} on fold {fold} ({len(dataset)} images, seed {run_config.seed})")
    result = train(run_config, dataset, folds[fold], verbose=True)
    if not result["success"]:
        raise NumericError(f"training diverged at epoch {result['epoch']}: {result['error']}")

    summary = {key: result[key] for key in ("config", "fold", "best_epoch", "val_e_deg", "test_e_deg", "history")}
    save_checkpoint(result["model"], out, extra={"config": result["config"], "fold": fold})
    save_metadata(report or f"{out}.json", summary)
    click.echo(f"✅ Test E_deg {result['test_e_deg']:.2f}° (best epoch {result['best_epoch']})")
    click.echo(f"📋 Checkpoint: {out}")


@cli.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint")
@click.option("--image", required=True, type=click.Path(dir_okay=False), help="8-bit PGM image")
def predict_cmd(model_path, image):
    """Predict the migration direction of one cell image"""
    model, _ = load_checkpoint(model_path)
    pixels = read_pgm(image)
    if pixels.shape != (model.input_size, model.input_size):
        raise ConfigError(f"image is {pixels.shape[1]}x{pixels.shape[0]}, model expects "
                          f"{model.input_size}x{model.input_size}")
    angles, degenerate = model.predict_angles(pixels[None])
    if degenerate[0]:
        raise DegenerateOutputError("network output is too close to the origin to give a direction")
    angle = float(angles[0])
    click.echo(f"angle_rad={angle!r} angle_deg={to_degrees(angle)!r}")


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint")
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory")
@click.option("--tta", "tta_n", default=1, type=click.IntRange(min=1), show_default=True,
              help="Predictions per image (original + n-1 rotations)")
@click.option("--seed", default=0, type=int, show_default=True, help="Base seed for TTA rotations")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Per-image results CSV")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), help="Summary JSON")
def eval_cmd(model_path, data, tta_n, seed, csv_path, json_path):
    """Evaluate a checkpoint on every image of a dataset"""
    model, _ = load_checkpoint(model_path)
    dataset = load_dataset(data)
    if dataset.size != model.input_size:
        raise ConfigError(f"dataset images are {dataset.size}px, model expects {model.input_size}px")

    if tta_n == 1:
        predictions, degenerate = model.predict_angles(dataset.pixels)
    else:
        predictions = np.array([tta_predict(model, px, TtaConfig(tta_n, seed + i))
                                for i, px in enumerate(dataset.pixels)])
        degenerate = np.zeros(len(predictions), dtype=bool)
    score = e_deg(predictions, dataset.labels)

    if csv_path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["id", "n", "angle_rad", "target_rad", "error_deg"])
        for item_id, p, t in zip(dataset.ids, predictions, dataset.labels):
            writer.writerow([item_id, tta_n, repr(float(p)), repr(float(t)), repr(e_deg([p], [t]))])
        with open(csv_path, "w", newline="") as f:
            f.write(buffer.getvalue())
    if json_path:
        save_metadata(json_path, {"e_deg": score, "n": tta_n, "seed": seed, "count": len(dataset),
                                  "degenerate": int(degenerate.sum())})

    if degenerate.any():
        click.echo(f"⚠️ {int(degenerate.sum())} degenerate output(s) decoded as 0 rad", err=True)
    click.echo(f"✅ E_deg {score:.2f}° over {len(dataset)} images (n={tta_n})")


# ============================================================================
# EXPERIMENTS
# ============================================================================

@cli.command("sweep")
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory")
@click.option("--seed", required=True, type=int, help="Seed for folds, initialization and augmentation")
@click.option("--out", default="sweep_results", show_default=True, type=click.Path(file_okay=False),
              help="Output directory")
@click.option("--epochs", type=click.IntRange(min=0), help="Override training.epochs")
@click.option("--scale", type=click.Choice(["desk", "paper"]), help="Override training.scale")
@click.option("--jobs", default=lambda: get_config_value("sweep.jobs", 1), type=click.IntRange(min=1),
              help="Parallel training runs")
def sweep_cmd(data, seed, out, epochs, scale, jobs):
    """Train all nine encoding/activation/loss configurations on every fold"""
    config = get_config()
    dataset = load_dataset(data)
    folds = _folds_for(dataset, seed)

    result = sweep(dataset, folds, seed=seed, jobs=jobs,
                   epochs=epochs if epochs is not None else config.get("training.epochs"),
                   scale=scale or config.get("training.scale"),
                   batch_size=config.get("training.batch_size"),
                   augment_multiplier=config.get("training.augment_multiplier"),
                   learning_rate=config.get("training.learning_rate"),
                   optimizer=config.get("training.optimizer"))
    paths = write_sweep_outputs(result, out, seed)

    click.echo("")
    click.echo(render_sweep_table(result["rows"]))
    click.echo(f"📋 Results: {paths['csv']}, {paths['json']}, {paths['table']}")
    if not result["success"]:
        raise NumericError("every sweep run failed")


@cli.command("tta")
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="JSON run configuration")
@click.option("--out", default="tta_results", show_default=True, type=click.Path(file_okay=False),
              help="Output directory")
@click.option("--jobs", default=1, type=click.IntRange(min=1), help="Parallel TTA predictions")
def tta_cmd(data, config_path, out, jobs):
    """Train on every fold and compare test E_deg across TTA sizes"""
    run_config = load_run_config(config_path)
    dataset = load_dataset(data)
    folds = _folds_for(dataset, run_config.seed)
    grid = [int(n) for n in get_config_value("tta.grid", [1, 2, 6, 10, 14])]
    base_seed = get_config_value("tta.seed", 0)

    per_fold = []
    for fold in folds:
        click.echo(f"🔄 Fold {fold.fold_index}: training {run_config.label}")
        result = train(run_config, dataset, fold)
        if not result["success"]:
            click.echo(f"⚠️ Fold {fold.fold_index} diverged at epoch {result['epoch']}", err=True)
            continue
        pixels, labels = dataset.select(fold.test)
        per_fold.append(tta_eval(result["model"], pixels, labels, grid, seed=base_seed, jobs=jobs))

    if not per_fold:
        raise NumericError("training diverged on every fold")
    rows = tta_table(per_fold)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["encoding", "activation", "loss", "fold", "n", "e_deg"])
    cfg = run_config.to_dict()
    for fold_index, fold_rows in enumerate(per_fold):
        for row in fold_rows:
            writer.writerow([cfg["encoding"], cfg["activation"], cfg["loss"], fold_index, row["n"],
                             repr(float(row["e_deg"]))])
    with open(out_dir / "tta.csv", "w", newline="") as f:
        f.write(buffer.getvalue())
    save_metadata(out_dir / "tta.json", {"config": cfg, "tta_seed": base_seed, "rows": rows})
    table = render_tta_table(rows)
    with open(out_dir / "tta_table.md", "w", newline="") as f:
        f.write(table)

    click.echo("")
    click.echo(table)
    click.echo(f"📋 Results: {out_dir}")


@cli.command("baseline")
@click.option("--accuracy", type=click.FloatRange(0.0, 1.0), help="Correct-quadrant accuracy")
@click.option("--neighbors", nargs=2, type=float, help="Miss fractions of the two neighboring quadrants")
@click.option("--opposite", type=float, help="Miss fraction of the opposite quadrant")
@click.option("--dataset", "dataset_name", type=click.Choice(sorted(QUADRANT_PRESETS)),
              help="Use a published quadrant accuracy")
def baseline_cmd(accuracy, neighbors, opposite, dataset_name):
    """Best possible angular error of a 4-quadrant classifier"""
    if dataset_name:
        if accuracy is not None:
            raise click.UsageError("use either --accuracy or --dataset")
        accuracy = QUADRANT_PRESETS[dataset_name]["accuracy"]
    if accuracy is None:
        raise click.UsageError("--accuracy or --dataset is required")

    if neighbors or opposite is not None:
        if not neighbors or opposite is None:
            raise click.UsageError("--neighbors and --opposite must be given together")
        b = QuadrantBaseline(accuracy, neighbors[0], neighbors[1], opposite)
    else:
        b = QuadrantBaseline.equal_split(accuracy)

    result = quadrant_baseline(b)
    click.echo(f"📋 Quadrant accuracy {b.accuracy:.4f} (misses {b.neighbor1:.4f}, {b.neighbor2:.4f}, {b.opposite:.4f})")
    click.echo(f"avg_inaccuracy_deg={result['avg_inaccuracy_deg']:.2f}")
    click.echo(f"max_inaccuracy_deg={result['max_inaccuracy_deg']:.2f}")


@cli.command("gradcheck")
@click.option("--input-size", default=lambda: get_config_value("gradcheck.input_size", 32),
              type=int, help="Input image size (32, 64 or 128)")
@click.option("--seed", default=0, type=int, show_default=True, help="Seed for weights and samples")
def gradcheck_cmd(input_size, seed):
    """Verify analytic gradients for all nine configurations against finite differences"""
    settings = get_config().get("gradcheck")
    failures = []

    for encoding, activation, loss_kind in NINE_CONFIGURATIONS:
        label = f"{encoding.value}/{activation.value}/{loss_kind.value}"
        report = None
        for attempt in range(settings["attempts"]):
            sample_seed = seed + attempt
            model = probing_cnn(input_size, "desk", encoding.arity, activation, seed=sample_seed)
            direction = wrap(np.random.default_rng([sample_seed, 2]).uniform(0.0, TWO_PI))
            cell = generate_cell(input_size, direction, sample_seed)
            report = gradcheck(model, loss_kind, (cell.pixels, cell.label), step=settings["step"],
                               tolerance=settings["tolerance"], atol=settings["atol"], margin=settings["margin"])
            if not report["skipped"]:
                break

        if report["skipped"]:
            failures.append(label)
            click.echo(f"❌ {label}: no smooth sample in {settings['attempts']} attempts ({report['reason']})")
        elif report["passed"]:
            click.echo(f"✅ {label}: max rel err {report['max_rel_err']:.2e} "
                       f"({report['checked']} checked, {report['skipped_params']} excluded)")
        else:
            failures.append(label)
            click.echo(f"❌ {label}: max rel err {report['max_rel_err']:.2e} at {report['worst_param']}")

    log_event("gradcheck", {"input_size": input_size, "seed": seed, "failures": failures})
    if failures:
        raise NumericError(f"gradient check failed for {', '.join(failures)}")


# ============================================================================
# CONFIGURATION
# ============================================================================

@cli.group("config")
def config_group():
    """Show or change user defaults"""
    pass


@config_group.command("show")
def config_show():
    """Print the merged configuration"""
    config = get_config()
    click.echo(f"📋 Configuration ({config.config_path}):")
    click.echo(yaml.dump(config.config, default_flow_style=False).rstrip())

    errors, warnings = config.validate()
    for warning in warnings:
        click.echo(f"⚠️ {warning}", err=True)
    for error in errors:
        click.echo(f"❌ {error}", err=True)


@config_group.command("set")
@click.argument("key")
@click.argument("value")
def config_set(key, value):
    """Persist a dot-path value, e.g. training.epochs 20"""
    config = get_config()
    config.set(key, yaml.safe_load(value))
    errors, _ = config.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    config.save_config()
    click.echo(f"✅ {key} = {config.get(key)!r}")


# ============================================================================
# ENTRY POINT
# ============================================================================

def run(argv=None) -> int:
    """Run the CLI and return its exit code instead of exiting"""
    try:
        cli.main(args=argv, prog_name="celldir", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("❌ Aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except CellDirError as e:
        click.echo(f"❌ {e}", err=True)
        return exit_code_for(e)
    return EXIT_OK


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""
Training and evaluation module.
Run configurations, the E_deg metric, the per-fold training loop, the nine-configuration
sweep and the quadrant-classification baseline calculator.
"""

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
import jsonschema
import numpy as np

from modules.circular_module import cyclic_distance_array
from modules.data_module import AugmentConfig, Dataset, FoldSplit, augment_arrays
from modules.losses_module import ActivationKind, LossKind, loss_terms
from modules.network_module import PROBING_SCALES, Model, make_optimizer, optimizer_step, probing_cnn
from modules.report_module import render_sweep_table
from modules.utils_module import (
    ConfigError,
    ContractError,
    NumericError,
    ParseError,
    log_event,
    save_metadata,
    to_degrees,
)

# Import from parent directory
import sys
sys.path.append(str(Path(__file__).parent.parent))
from config import get_config_value

SWEEP_CSV_COLUMNS = ("encoding", "activation", "loss", "fold", "e_deg")


class Encoding(Enum):
    ONE_NEURON = "1N"
    TWO_NEURON = "2N"

    @property
    def arity(self) -> int:
        return 1 if self is Encoding.ONE_NEURON else 2


# The only (encoding, activation, loss) combinations that make sense together
NINE_CONFIGURATIONS = (
    (Encoding.ONE_NEURON, ActivationKind.CYCLIC, LossKind.LINEAR),
    (Encoding.ONE_NEURON, ActivationKind.CYCLIC, LossKind.LINEAR_SQ),
    (Encoding.ONE_NEURON, ActivationKind.CYCLIC, LossKind.CYCLIC),
    (Encoding.ONE_NEURON, ActivationKind.CYCLIC, LossKind.CYCLIC_SQ),
    (Encoding.ONE_NEURON, ActivationKind.CYCLIC, LossKind.COS),
    (Encoding.TWO_NEURON, ActivationKind.IDENTITY, LossKind.DIST),
    (Encoding.TWO_NEURON, ActivationKind.IDENTITY, LossKind.DIST_SQ),
    (Encoding.TWO_NEURON, ActivationKind.SIGMOID, LossKind.DIST),
    (Encoding.TWO_NEURON, ActivationKind.SIGMOID, LossKind.DIST_SQ),
)

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["encoding", "activation", "loss"],
    "properties": {
        "encoding": {"enum": [e.value for e in Encoding]},
        "activation": {"enum": [a.value for a in ActivationKind]},
        "loss": {"enum": [l.value for l in LossKind]},
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "scale": {"enum": sorted(PROBING_SCALES)},
        "augment_multiplier": {"type": "integer", "minimum": 1},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "optimizer": {"enum": ["adam", "sgd"]},
    },
}

# Accuracies of the 4-class quadrant formulation on the two reference datasets
QUADRANT_PRESETS = {
    "nih3t3": {"accuracy": 0.8789, "description": "NIH3T3 fibroblasts"},
    "u373": {"accuracy": 0.8176, "description": "U373 glioblastoma (value stated in the text)"},
    "u373-formula": {"accuracy": 0.8186, "description": "U373 glioblastoma (value used in the worked formula)"},
}


# ============================================================================
# RUN CONFIGURATION
# ============================================================================

@dataclass(frozen=True)
class RunConfig:
    encoding: Encoding
    activation: ActivationKind
    loss: LossKind
    epochs: int = 12
    batch_size: int = 32
    seed: int = 0
    scale: str = "desk"
    augment_multiplier: int = 2
    learning_rate: float = 1e-3
    optimizer: str = "adam"

    def __post_init__(self):
        if (self.encoding, self.activation, self.loss) not in NINE_CONFIGURATIONS:
            raise ConfigError(f"invalid combination {self.encoding.value}/{self.activation.value}/"
                              f"{self.loss.value}; see the nine valid configurations")
        if self.scale not in PROBING_SCALES:
            raise ConfigError(f"unknown model scale {self.scale!r}")

    @property
    def label(self) -> str:
        return f"{self.encoding.value}/{self.activation.value}/{self.loss.value}"

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d.update(encoding=self.encoding.value, activation=self.activation.value, loss=self.loss.value)
        return d


def run_config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Validate a run configuration dict and fill missing fields from the user configuration"""
    try:
        jsonschema.validate(data, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        location = ".".join(str(p) for p in e.absolute_path) or "run config"
        raise ConfigError(f"{location}: {e.message}")

    return RunConfig(
        encoding=Encoding(data["encoding"]),
        activation=ActivationKind(data["activation"]),
        loss=LossKind(data["loss"]),
        epochs=data.get("epochs", get_config_value("training.epochs", 12)),
        batch_size=data.get("batch_size", get_config_value("training.batch_size", 32)),
        seed=data.get("seed", 0),
        scale=data.get("scale", get_config_value("training.scale", "desk")),
        augment_multiplier=data.get("augment_multiplier", get_config_value("training.augment_multiplier", 2)),
        learning_rate=data.get("learning_rate", get_config_value("training.learning_rate", 1e-3)),
        optimizer=data.get("optimizer", get_config_value("training.optimizer", "adam")),
    )


def load_run_config(path) -> RunConfig:
    """Read a JSON run configuration file"""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read run config {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(path, e.pos, f"invalid JSON: {e.msg}")
    return run_config_from_dict(data)


# ============================================================================
# METRIC AND REPORTS
# ============================================================================

def e_deg(predictions: Sequence[float], targets: Sequence[float]) -> float:
    """Mean cyclic deviation between predictions and targets, in degrees"""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0 or p.size != t.size:
        raise ContractError(f"e_deg needs equal non-zero lengths, got {p.size} and {t.size}")
    return to_degrees(math.fsum(cyclic_distance_array(p, t)) / p.size)


@dataclass
class EvalReport:
    """Per-fold E_deg with its across-fold mean, population std and mean + 3·std bound"""
    per_fold: List[float]
    mean: float = field(init=False)
    std: float = field(init=False)
    max_error_bound: float = field(init=False)

    def __post_init__(self):
        if not self.per_fold:
            raise ContractError("an evaluation report needs at least one fold")
        values = np.asarray(self.per_fold, dtype=np.float64)
        self.mean = math.fsum(values) / len(values)
        self.std = float(np.sqrt(math.fsum((values - self.mean) ** 2) / len(values)))
        self.max_error_bound = self.mean + 3.0 * self.std

    def to_dict(self) -> Dict[str, Any]:
        return {"per_fold": list(self.per_fold), "mean": self.mean, "std": self.std,
                "max_error_bound": self.max_error_bound}


def evaluate_model(model: Model, pixels: np.ndarray, labels: np.ndarray) -> float:
    """E_deg of a model on a split; degenerate 2N outputs count as predicting 0"""
    angles, _ = model.predict_angles(pixels)
    return e_deg(angles, labels)


# ============================================================================
# TRAINING
# ============================================================================

def _run_epoch(model: Model, optimizer, config: RunConfig, pixels, targets, rng) -> float:
    order = rng.permutation(len(pixels))
    total, count = 0.0, 0
    for start in range(0, len(order), config.batch_size):
        rows = order[start:start + config.batch_size]
        outputs = model.forward(pixels[rows])
        values, grads = loss_terms(config.loss, outputs, targets[rows])
        batch_loss = math.fsum(values)
        if not math.isfinite(batch_loss):
            raise NumericError("non-finite training loss")
        model.backward(grads / len(rows))
        optimizer_step(optimizer, model)
        total += batch_loss
        count += len(rows)
    return total / count


def train(config: RunConfig, dataset: Dataset, fold: FoldSplit, verbose: bool = False) -> Dict[str, Any]:
    """Train the probing CNN on one fold and keep the epoch with the best validation E_deg.

    Epoch 0 is the untrained model. Returns a result dict; on divergence success is False
    and epoch names the epoch that failed.
    """
    if not fold.train or not fold.val or not fold.test:
        raise ContractError("fold must have non-empty train, val and test splits")

    train_pixels, train_labels = dataset.select(fold.train)
    val_pixels, val_labels = dataset.select(fold.val)
    test_pixels, test_labels = dataset.select(fold.test)

    rng = np.random.default_rng([config.seed, fold.fold_index])
    train_pixels, train_labels = augment_arrays(train_pixels, train_labels, config.augment_multiplier,
                                                AugmentConfig(seed=config.seed), rng)

    model = probing_cnn(dataset.size, config.scale, config.encoding.arity, config.activation, seed=config.seed)
    targets = model.targets_for(train_labels)
    optimizer = make_optimizer(config.optimizer, config.learning_rate, get_config_value("optimizers", {}))

    best_e_deg = evaluate_model(model, val_pixels, val_labels)
    best_epoch = 0
    best_params = model.snapshot()
    history = [{"epoch": 0, "train_loss": None, "val_e_deg": best_e_deg}]

    for epoch in range(1, config.epochs + 1):
        try:
            train_loss = _run_epoch(model, optimizer, config, train_pixels, targets, rng)
            val_e_deg = evaluate_model(model, val_pixels, val_labels)
        except NumericError as e:
            log_event("train_diverged", {"config": config.label, "fold": fold.fold_index, "epoch": epoch})
            return {"success": False, "error": str(e), "epoch": epoch, "config": config.to_dict(),
                    "fold": fold.fold_index, "history": history}

        history.append({"epoch": epoch, "train_loss": train_loss, "val_e_deg": val_e_deg})
        if verbose:
            click.echo(f"   epoch {epoch}/{config.epochs}: loss {train_loss:.4f}, val E_deg {val_e_deg:.2f}°")
        if val_e_deg < best_e_deg:
            best_e_deg, best_epoch, best_params = val_e_deg, epoch, model.snapshot()

    model.restore(best_params)
    test_e_deg = evaluate_model(model, test_pixels, test_labels)

    log_event("train", {"config": config.label, "fold": fold.fold_index, "test_e_deg": test_e_deg,
                        "best_epoch": best_epoch})
    return {
        "success": True,
        "model": model,
        "config": config.to_dict(),
        "fold": fold.fold_index,
        "best_epoch": best_epoch,
        "val_e_deg": best_e_deg,
        "test_e_deg": test_e_deg,
        "history": history,
    }


# ============================================================================
# SWEEP
# ============================================================================

def nine_run_configs(seed: int, **overrides) -> List[RunConfig]:
    return [RunConfig(encoding, activation, loss, seed=seed, **overrides)
            for encoding, activation, loss in NINE_CONFIGURATIONS]


def sweep(dataset: Dataset, folds: Sequence[FoldSplit], configs: Optional[Sequence[RunConfig]] = None,
          seed: int = 0, jobs: int = 1, **overrides) -> Dict[str, Any]:
    """Train every configuration on every fold; failed runs are recorded and skipped.

    Runs are independent and may execute on `jobs` worker threads; results keep input order.
    """
    configs = list(configs) if configs is not None else nine_run_configs(seed, **overrides)
    tasks = [(config, fold) for config in configs for fold in folds]

    click.echo(f"🚀 Sweeping {len(configs)} configurations x {len(folds)} folds ({jobs} job(s))")

    def run(task):
        config, fold = task
        result = train(config, dataset, fold)
        status = f"E_deg {result['test_e_deg']:.2f}°" if result["success"] else f"failed at epoch {result['epoch']}"
        click.echo(f"🔄 {config.label} fold {fold.fold_index}: {status}")
        return result

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    runs, rows = [], []
    for index, config in enumerate(configs):
        config_results = results[index * len(folds):(index + 1) * len(folds)]
        per_fold = [r["test_e_deg"] for r in config_results if r["success"]]
        failures = [{"fold": r["fold"], "epoch": r["epoch"], "error": r["error"]}
                    for r in config_results if not r["success"]]
        row = {"encoding": config.encoding.value, "activation": config.activation.value,
               "loss": config.loss.value, "failures": failures, "best": False}
        row.update(EvalReport(per_fold).to_dict() if per_fold else
                   {"per_fold": [], "mean": None, "std": None, "max_error_bound": None})
        rows.append(row)
        runs.extend({"encoding": row["encoding"], "activation": row["activation"], "loss": row["loss"],
                     "fold": r["fold"], "e_deg": r["test_e_deg"]} for r in config_results if r["success"])

    scored = [row for row in rows if row["mean"] is not None]
    if scored:
        min(scored, key=lambda r: r["mean"])["best"] = True

    log_event("sweep", {"configs": len(configs), "folds": len(folds), "failed_runs": len(results) - len(runs)})
    return {"success": bool(scored), "rows": rows, "runs": runs}


def sweep_csv(runs: Sequence[Dict[str, Any]]) -> str:
    """Per-run results as CSV text, E_deg in degrees"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SWEEP_CSV_COLUMNS)
    for run in runs:
        writer.writerow([run["encoding"], run["activation"], run["loss"], run["fold"], repr(float(run["e_deg"]))])
    return buffer.getvalue()


def write_sweep_outputs(result: Dict[str, Any], out_dir, seed: int) -> Dict[str, Path]:
    """results.csv, summary.json and table.md in out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / "results.csv", "json": out_dir / "summary.json", "table": out_dir / "table.md"}

    with open(paths["csv"], "w", newline="") as f:
        f.write(sweep_csv(result["runs"]))
    save_metadata(paths["json"], {"seed": seed, "configurations": result["rows"]})
    with open(paths["table"], "w", newline="") as f:
        f.write(render_sweep_table(result["rows"]))
    return paths


# ============================================================================
# QUADRANT BASELINE
# ============================================================================

@dataclass(frozen=True)
class QuadrantBaseline:
    """Correct-quadrant accuracy and how the misses split over the other three quadrants"""
    accuracy: float
    neighbor1: float
    neighbor2: float
    opposite: float

    def __post_init__(self):
        fractions = (self.accuracy, self.neighbor1, self.neighbor2, self.opposite)
        if any(not math.isfinite(f) or f < 0.0 or f > 1.0 for f in fractions):
            raise ContractError(f"quadrant fractions must lie in [0, 1], got {fractions}")
        if abs(math.fsum(fractions) - 1.0) > 1e-9:
            raise ContractError(f"quadrant fractions must sum to 1, got {math.fsum(fractions)}")

    @classmethod
    def equal_split(cls, accuracy: float) -> "QuadrantBaseline":
        """Misses shared equally by the two neighbors and the opposite quadrant"""
        miss = (1.0 - accuracy) / 3.0
        return cls(accuracy, miss, miss, 1.0 - accuracy - 2.0 * miss)


def quadrant_baseline(b: QuadrantBaseline) -> Dict[str, float]:
    """Best achievable angular error when predicting the middle of the chosen quadrant.

    Average errors per case: π/8 (right quadrant), π/2 (neighbors), 7π/8 (opposite);
    maximum errors: π/4, 3π/4 and π.
    """
    pi = math.pi
    avg = math.fsum([b.accuracy * pi / 8, b.neighbor1 * pi / 2, b.neighbor2 * pi / 2, b.opposite * 7 * pi / 8])
    worst = math.fsum([b.accuracy * pi / 4, b.neighbor1 * 3 * pi / 4, b.neighbor2 * 3 * pi / 4, b.opposite * pi])
    return {"avg_inaccuracy_deg": to_degrees(avg), "max_inaccuracy_deg": to_degrees(worst)}

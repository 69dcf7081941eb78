"""
Rotation-based test-time augmentation.
Each image is predicted as-is and on n−1 randomly rotated copies; rotated predictions are
turned back by their rotation and everything is fused with the min-span circular average.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np

from modules.circular_module import TWO_PI, PredictionSet, fuse_predictions, wrap
from modules.data_module import estimate_background, rotate_image
from modules.training_module import EvalReport, e_deg
from modules.utils_module import ConfigError, ContractError, DegenerateOutputError

# Totals of predictions per image evaluated by default (original included)
TTA_GRID = (1, 2, 6, 10, 14)


@dataclass(frozen=True)
class TtaConfig:
    n: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"TTA needs n >= 1, got {self.n}")


def sample_rotations(cfg: TtaConfig) -> np.ndarray:
    """The n−1 rotation angles, uniform in [0, 2π)"""
    return np.random.default_rng(cfg.seed).uniform(0.0, TWO_PI, size=cfg.n - 1)


def tta_predict(model, pixels, cfg: TtaConfig) -> float:
    """Fused direction from the original prediction and n−1 rotation-corrected ones.

    model only needs predict_angles(batch) -> (angles, degenerate). Copies with a degenerate
    output are dropped; if every copy is degenerate DegenerateOutputError is raised.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    size = getattr(model, "input_size", pixels.shape[0])
    if pixels.ndim != 2 or pixels.shape != (size, size):
        raise ContractError(f"image shape {pixels.shape} does not match model input {size}x{size}")

    thetas = sample_rotations(cfg)
    background = estimate_background(pixels)
    copies = [pixels] + [rotate_image(pixels, theta, background=background) for theta in thetas]
    angles, degenerate = model.predict_angles(np.stack(copies))

    corrections = np.concatenate([[0.0], thetas])
    kept = [wrap(a - c) for a, c, bad in zip(angles, corrections, degenerate) if not bad]
    if not kept:
        raise DegenerateOutputError(f"all {cfg.n} TTA copies produced degenerate outputs")
    return fuse_predictions(PredictionSet(tuple(kept)))


def tta_eval(model, pixels: np.ndarray, labels: np.ndarray, grid: Sequence[int] = TTA_GRID,
             seed: int = 0, jobs: int = 1) -> List[Dict[str, Any]]:
    """E_deg for every n in grid on one split; image i uses seed + i"""
    def predict_all(n):
        def one(i):
            return tta_predict(model, pixels[i], TtaConfig(n, seed + i))

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(one, range(len(pixels))))
        return [one(i) for i in range(len(pixels))]

    return [{"n": n, "e_deg": e_deg(predict_all(n), labels)} for n in grid]


def tta_table(per_fold: Sequence[List[Dict[str, Any]]]) -> List[Dict[str, Any]]:
    """Combine per-fold tta_eval rows into one row per n with mean, std and max error bound"""
    if not per_fold:
        return []
    rows = []
    for position, first in enumerate(per_fold[0]):
        values = [fold_rows[position]["e_deg"] for fold_rows in per_fold]
        rows.append(dict(EvalReport(values).to_dict(), n=first["n"]))
    return rows

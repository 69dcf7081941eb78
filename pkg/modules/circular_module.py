"""
Wrapped-angle arithmetic for direction estimation.
Encodings (angle / unit circle), cyclic distance and the two circular averages.

Angle convention: image frame, +x to the right, +y downward, angles measured
from +x toward +y. 90 degrees therefore points down in a rendered image.
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from modules.utils_module import DegenerateOutputError, DomainError, require_finite

TWO_PI = 2.0 * math.pi
UNIT_TOLERANCE = 1e-9
ORIGIN_TOLERANCE = 1e-12
RESULTANT_TOLERANCE = 1e-9


# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class UnitDirection:
    """A point (x, y); validated instances lie on the unit circle"""
    x: float
    y: float

    def is_valid(self) -> bool:
        return abs(self.x * self.x + self.y * self.y - 1.0) <= UNIT_TOLERANCE

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class PredictionSet:
    """Non-empty ordered collection of predicted angles"""
    angles: Tuple[float, ...]

    def __post_init__(self):
        if len(self.angles) == 0:
            raise DomainError("prediction set must not be empty")

    @classmethod
    def of(cls, angles: Iterable[float]) -> "PredictionSet":
        return cls(tuple(wrap(a) for a in angles))

    def __len__(self):
        return len(self.angles)


# ============================================================================
# WRAPPING AND ENCODINGS
# ============================================================================

def wrap(x: float) -> float:
    """Mathematical modulo 2π, always in [0, 2π)"""
    require_finite(x, "angle")
    r = x - TWO_PI * math.floor(x / TWO_PI)
    # floor rounding can land exactly on either end of the interval
    if r < 0.0:
        r += TWO_PI
    if r >= TWO_PI:
        r = 0.0
    return r


def wrap_array(x) -> np.ndarray:
    """Vectorized wrap"""
    x = np.asarray(x, dtype=np.float64)
    require_finite(x, "angle")
    r = x - TWO_PI * np.floor(x / TWO_PI)
    r = np.where(r < 0.0, r + TWO_PI, r)
    return np.where(r >= TWO_PI, 0.0, r)


def angle_to_unit(a: float) -> UnitDirection:
    return UnitDirection(math.cos(a), math.sin(a))


def unit_to_angle(p) -> float:
    """Decode a raw (x, y) pair; unnormalized pairs are fine, only the direction matters"""
    x, y = (p.x, p.y) if isinstance(p, UnitDirection) else (float(p[0]), float(p[1]))
    require_finite(x, "x")
    require_finite(y, "y")
    if math.hypot(x, y) <= ORIGIN_TOLERANCE:
        raise DegenerateOutputError(f"direction vector ({x}, {y}) is too close to the origin")
    return wrap(math.atan2(y, x))


def angles_to_units(angles) -> np.ndarray:
    """Angles of shape (N,) to an (N, 2) array of (cos, sin)"""
    angles = np.asarray(angles, dtype=np.float64)
    return np.stack([np.cos(angles), np.sin(angles)], axis=-1)


def units_to_angles(points) -> Tuple[np.ndarray, np.ndarray]:
    """Decode (N, 2) outputs; degenerate rows decode to 0 and are flagged"""
    points = np.asarray(points, dtype=np.float64)
    degenerate = np.hypot(points[:, 0], points[:, 1]) <= ORIGIN_TOLERANCE
    angles = wrap_array(np.arctan2(points[:, 1], points[:, 0]))
    return np.where(degenerate, 0.0, angles), degenerate


# ============================================================================
# DISTANCE AND AVERAGING
# ============================================================================

def cyclic_distance(a: float, b: float) -> float:
    """Shortest arc between two angles, in [0, π]"""
    d = abs(wrap(a) - wrap(b))
    return min(d, TWO_PI - d)


def cyclic_distance_array(a, b) -> np.ndarray:
    d = np.abs(wrap_array(a) - wrap_array(b))
    return np.minimum(d, TWO_PI - d)


def _min_span_arrangement(angles: List[float]) -> List[float]:
    """Walk the n circular rotations of the sorted list and keep the one with the smallest span"""
    current = sorted(angles)
    best = list(current)
    best_span = current[-1] - current[0]

    for _ in range(len(current) - 1):
        # add 2π to the smallest element, then re-sort
        current = sorted(current[1:] + [current[0] + TWO_PI])
        span = current[-1] - current[0]
        if span < best_span:
            best, best_span = list(current), span

    return best


def fuse_predictions(preds: PredictionSet) -> float:
    """Min-span circular average: mean of the tightest circular arrangement, wrapped"""
    angles = [wrap(a) for a in preds.angles]
    if not angles:
        raise DomainError("cannot fuse an empty prediction set")

    arrangement = _min_span_arrangement(angles)
    return wrap(math.fsum(arrangement) / len(arrangement))


def circular_mean_oracle(preds: PredictionSet) -> float:
    """Standard circular mean via the resultant of unit vectors"""
    s = math.fsum(math.sin(a) for a in preds.angles)
    c = math.fsum(math.cos(a) for a in preds.angles)
    if math.hypot(s, c) <= RESULTANT_TOLERANCE:
        raise DegenerateOutputError("resultant vector vanishes; circular mean undefined")
    return wrap(math.atan2(s, c))

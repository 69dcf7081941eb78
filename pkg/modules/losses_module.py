"""
Output activations and cycle-sensitive loss functions.
Every loss returns its value together with the analytic (sub)gradient with respect to the prediction.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from modules.circular_module import TWO_PI, wrap_array
from modules.utils_module import ContractError, DomainError, require_finite


class ActivationKind(Enum):
    CYCLIC = "cyclic"
    IDENTITY = "identity"
    SIGMOID = "sigmoid"


class LossKind(Enum):
    LINEAR = "linear"
    LINEAR_SQ = "linear_sq"
    CYCLIC = "cyclic"
    CYCLIC_SQ = "cyclic_sq"
    COS = "cos"
    DIST = "dist"
    DIST_SQ = "dist_sq"


ANGLE_LOSSES = frozenset({LossKind.LINEAR, LossKind.LINEAR_SQ, LossKind.CYCLIC,
                          LossKind.CYCLIC_SQ, LossKind.COS})
COORDINATE_LOSSES = frozenset({LossKind.DIST, LossKind.DIST_SQ})

# Valid head activations per output arity
ACTIVATIONS_FOR_ARITY = {
    1: frozenset({ActivationKind.CYCLIC}),
    2: frozenset({ActivationKind.IDENTITY, ActivationKind.SIGMOID}),
}


# Values of |α − β| where an angle loss has a kink; coordinate losses kink on x₁=x₂ or y₁=y₂
NON_SMOOTH_LOCI = {
    LossKind.LINEAR: (0.0,),
    LossKind.LINEAR_SQ: (),
    LossKind.CYCLIC: (0.0, math.pi, TWO_PI),
    LossKind.CYCLIC_SQ: (math.pi,),
    LossKind.COS: (),
}


def near_non_smooth(kind: LossKind, predictions, targets, margin: float) -> np.ndarray:
    """Per-sample flag: is the (prediction, target) pair within margin of a kink of this loss?"""
    arity = loss_arity(kind)
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, arity)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, arity)
    if kind in COORDINATE_LOSSES:
        return np.any(np.abs(p - t) < margin, axis=1)

    u = np.abs(p[:, 0] - t[:, 0])
    flags = np.zeros(u.shape, dtype=bool)
    for locus in NON_SMOOTH_LOCI[kind]:
        flags |= np.abs(u - locus) < margin
    return flags


def loss_arity(kind: LossKind) -> int:
    """Number of prediction components a loss consumes"""
    return 1 if kind in ANGLE_LOSSES else 2


@dataclass
class LossResult:
    value: float
    grad_wrt_prediction: np.ndarray


# ============================================================================
# ACTIVATIONS
# ============================================================================

def _sigmoid_like(z: np.ndarray) -> np.ndarray:
    # (e^z - 1) / (e^z + 1) evaluated through e^{-|z|} so it never overflows;
    # algebraically this is tanh(z / 2)
    e = np.exp(-np.abs(z))
    return np.sign(z) * (-np.expm1(-np.abs(z))) / (1.0 + e)


def activate_array(kind: ActivationKind, z) -> Tuple[np.ndarray, np.ndarray]:
    """Apply an output activation elementwise; returns (values, derivatives)"""
    z = np.asarray(z, dtype=np.float64)
    require_finite(z, "activation input")

    if kind is ActivationKind.CYCLIC:
        # the jump at multiples of 2π is ignored: derivative 1 everywhere
        return wrap_array(z), np.ones_like(z)
    if kind is ActivationKind.IDENTITY:
        return z.copy(), np.ones_like(z)
    if kind is ActivationKind.SIGMOID:
        phi = _sigmoid_like(z)
        return phi, 0.5 * (1.0 - phi * phi)
    raise DomainError(f"unknown activation {kind}")


def activate(kind: ActivationKind, z: float) -> Tuple[float, float]:
    """Scalar activation; returns (value, derivative)"""
    value, derivative = activate_array(kind, np.array([z], dtype=np.float64))
    return float(value[0]), float(derivative[0])


# ============================================================================
# LOSSES
# ============================================================================

def loss_terms(kind: LossKind, predictions, targets) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample loss values (N,) and gradients (N, arity) for a batch"""
    arity = loss_arity(kind)
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.size == 0 or p.size % arity or t.size % arity:
        raise ContractError(f"{kind.value} expects non-empty predictions of arity {arity}")
    p = p.reshape(-1, arity)
    t = t.reshape(-1, arity)
    if p.shape != t.shape:
        raise ContractError(f"prediction shape {p.shape} does not match target shape {t.shape}")

    if kind in ANGLE_LOSSES:
        diff = p[:, 0] - t[:, 0]
        sign = np.sign(diff)

        if kind is LossKind.LINEAR:
            return np.abs(diff), sign[:, None]
        if kind is LossKind.LINEAR_SQ:
            return diff * diff, (2.0 * diff)[:, None]
        if kind is LossKind.COS:
            return -np.cos(diff), np.sin(diff)[:, None]

        u = np.abs(diff)
        if np.any(u >= TWO_PI):
            raise ContractError(f"{kind.value} loss needs |α − β| < 2π; wrap the angles first")
        # at |α − β| = π the |α − β| branch wins
        direct = u <= TWO_PI - u
        value = np.where(direct, u, TWO_PI - u)
        grad = np.where(direct, sign, -sign)
        if kind is LossKind.CYCLIC:
            return value, grad[:, None]
        return value * value, (2.0 * value * grad)[:, None]

    dx = p[:, 0] - t[:, 0]
    dy = p[:, 1] - t[:, 1]
    dist = np.abs(dx) + np.abs(dy)
    direction = np.stack([np.sign(dx), np.sign(dy)], axis=1)
    if kind is LossKind.DIST:
        return dist, direction
    return dist * dist, 2.0 * dist[:, None] * direction


def _as_arity(value, arity: int, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64)).ravel()
    if arr.size != arity:
        raise ContractError(f"{what} has {arr.size} components, loss expects {arity}")
    return arr


def loss(kind: LossKind, prediction, target) -> LossResult:
    """Single-sample loss: angle pairs for angle losses, (x, y) pairs for coordinate losses"""
    arity = loss_arity(kind)
    p = _as_arity(prediction, arity, "prediction")
    t = _as_arity(target, arity, "target")
    values, grads = loss_terms(kind, p[None, :], t[None, :])
    return LossResult(float(values[0]), grads[0].copy())


def batch_loss(kind: LossKind, predictions: Sequence, targets: Sequence) -> LossResult:
    """Mean of per-sample values and gradients"""
    if len(predictions) == 0 or len(predictions) != len(targets):
        raise ContractError(
            f"batch needs equal non-zero lengths, got {len(predictions)} and {len(targets)}")

    arity = loss_arity(kind)
    p = np.stack([_as_arity(v, arity, "prediction") for v in predictions])
    t = np.stack([_as_arity(v, arity, "target") for v in targets])
    values, grads = loss_terms(kind, p, t)
    return LossResult(float(math.fsum(values) / len(values)), grads.mean(axis=0))

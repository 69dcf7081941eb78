"""
Minimal convolutional network engine with backpropagation.
Realizes the probing CNN (two valid convolutions with 2x2 max pooling, three dense layers)
at paper or desk scale, plus optimizers, a finite-difference gradient checker and checkpoints.

Tensors are float64 numpy arrays in NHWC layout.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from modules.circular_module import TWO_PI, angles_to_units, units_to_angles, wrap_array
from modules.losses_module import (
    ACTIVATIONS_FOR_ARITY,
    ActivationKind,
    LossKind,
    activate_array,
    loss_arity,
    loss_terms,
    near_non_smooth,
)
from modules.utils_module import (
    ConfigError,
    ContractError,
    DomainError,
    NumericError,
    ParseError,
    StateError,
)

CHECKPOINT_FORMAT = "celldir-checkpoint"
CHECKPOINT_VERSION = 1
SUPPORTED_INPUT_SIZES = (32, 64, 128)
GRADCHECK_MAX_PARAMETERS = 100_000

# Channel / unit counts: conv1, conv2, dense1, dense2
PROBING_SCALES = {
    "paper": {"conv1": 16, "conv2": 32, "dense1": 256, "dense2": 16},
    "desk": {"conv1": 8, "conv2": 16, "dense1": 128, "dense2": 16},
}


# ============================================================================
# LAYERS
# ============================================================================

class Layer:
    """Base layer: forward caches what backward needs, params/grads are named arrays"""

    kind = "layer"

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.input_shape: Optional[Tuple[int, ...]] = None
        self._cache = None

    def build(self, input_shape: Tuple[int, ...], rng: np.random.Generator, is_head: bool = False):
        self.input_shape = tuple(input_shape)

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(input_shape)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def compute(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        """Pure forward: returns (output, auxiliary state for backward)"""
        raise NotImplementedError

    def pattern(self, aux) -> Optional[np.ndarray]:
        """Discrete state (ReLU mask, pool argmax) whose change marks a non-smooth point"""
        return None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        out, aux = self.compute(x)
        if cache:
            self._cache = (x, aux)
        return out

    def backward(self, grad_out: np.ndarray, need_input_grad: bool = True) -> Optional[np.ndarray]:
        raise NotImplementedError

    def spec(self) -> Dict[str, Any]:
        return {"type": self.kind}

    def zero_grad(self):
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}


def _he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _xavier_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2D(Layer):
    """Valid (no padding), stride-1 convolution with ReLU"""

    kind = "conv2d"

    def __init__(self, kernel_h: int, kernel_w: int, out_channels: int, activation: str = "relu"):
        super().__init__()
        if activation != "relu":
            raise ConfigError(f"conv2d supports only relu activation, got {activation!r}")
        self.kernel_h = kernel_h
        self.kernel_w = kernel_w
        self.out_channels = out_channels
        self.activation = activation

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ConfigError(f"conv2d needs (H, W, C) input, got {input_shape}")
        h, w, _ = input_shape
        if self.kernel_h > h or self.kernel_w > w:
            raise ConfigError(f"kernel {self.kernel_h}x{self.kernel_w} does not fit input {h}x{w}")
        return (h - self.kernel_h + 1, w - self.kernel_w + 1, self.out_channels)

    def build(self, input_shape, rng, is_head=False):
        super().build(input_shape, rng)
        self.output_shape(input_shape)
        channels = input_shape[2]
        fan_in = self.kernel_h * self.kernel_w * channels
        self.params = {
            "weight": _he_uniform(rng, (self.kernel_h, self.kernel_w, channels, self.out_channels), fan_in),
            "bias": np.zeros(self.out_channels),
        }
        self.zero_grad()

    def _windows(self, x):
        # (N, Ho, Wo, C, kh, kw) view, no copy
        return sliding_window_view(x, (self.kernel_h, self.kernel_w), axis=(1, 2))

    def compute(self, x):
        z = np.tensordot(self._windows(x), self.params["weight"], axes=([3, 4, 5], [2, 0, 1]))
        z += self.params["bias"]
        mask = z > 0
        return z * mask, mask

    def pattern(self, aux):
        return aux

    def backward(self, grad_out, need_input_grad=True):
        x, mask = self._cache
        dz = grad_out * mask
        weight = self.params["weight"]

        dw = np.tensordot(self._windows(x), dz, axes=([0, 1, 2], [0, 1, 2]))  # (C, kh, kw, F)
        self.grads["weight"] = dw.transpose(1, 2, 0, 3).copy()
        self.grads["bias"] = dz.sum(axis=(0, 1, 2))

        if not need_input_grad:
            return None

        dx = np.zeros_like(x)
        _, out_h, out_w, _ = dz.shape
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                dx[:, i:i + out_h, j:j + out_w, :] += dz @ weight[i, j].T
        return dx

    def spec(self):
        return {"type": self.kind, "kernel_h": self.kernel_h, "kernel_w": self.kernel_w,
                "out_channels": self.out_channels, "activation": self.activation}


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2; odd edges are dropped; ties go to the first element"""

    kind = "maxpool2d"
    size = 2

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ConfigError(f"maxpool2d needs (H, W, C) input, got {input_shape}")
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise ConfigError(f"pooling window does not fit input {h}x{w}")
        return (h // 2, w // 2, c)

    def compute(self, x):
        n, h, w, c = x.shape
        oh, ow = h // 2, w // 2
        blocks = x[:, :2 * oh, :2 * ow, :].reshape(n, oh, 2, ow, 2, c)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, 4)
        argmax = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
        return out, argmax

    def pattern(self, aux):
        return aux

    def backward(self, grad_out, need_input_grad=True):
        x, argmax = self._cache
        n, h, w, c = x.shape
        oh, ow = h // 2, w // 2

        routed = np.zeros((n, oh, ow, c, 4))
        np.put_along_axis(routed, argmax[..., None], grad_out[..., None], axis=-1)
        routed = routed.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)

        dx = np.zeros_like(x)
        dx[:, :2 * oh, :2 * ow, :] = routed.reshape(n, 2 * oh, 2 * ow, c)
        return dx

    def spec(self):
        return {"type": self.kind, "size": 2, "stride": 2}


class Flatten(Layer):

    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def compute(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, need_input_grad=True):
        _, shape = self._cache
        return grad_out.reshape(shape)


class Dense(Layer):
    """Fully connected layer; activation is relu for hidden layers or a head ActivationKind"""

    kind = "dense"

    def __init__(self, units: int, activation: str = "relu"):
        super().__init__()
        self.units = units
        self.activation = activation
        self.head_kind = None if activation == "relu" else ActivationKind(activation)

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ConfigError(f"dense layers must follow flatten, got input shape {input_shape}")
        return (self.units,)

    def build(self, input_shape, rng, is_head=False):
        super().build(input_shape, rng)
        self.output_shape(input_shape)
        fan_in = input_shape[0]
        shape = (fan_in, self.units)
        if is_head:
            weight = _xavier_uniform(rng, shape, fan_in, self.units)
        else:
            weight = _he_uniform(rng, shape, fan_in)
        self.params = {"weight": weight, "bias": np.zeros(self.units)}
        self.zero_grad()

    def compute(self, x):
        z = x @ self.params["weight"] + self.params["bias"]
        if self.head_kind is None:
            mask = z > 0
            return z * mask, mask
        out, derivative = activate_array(self.head_kind, z)
        return out, derivative

    def pre_activation(self, x):
        return x @ self.params["weight"] + self.params["bias"]

    def pattern(self, aux):
        return aux if self.head_kind is None else None

    def backward(self, grad_out, need_input_grad=True):
        x, aux = self._cache
        dz = grad_out * aux
        self.grads["weight"] = x.T @ dz
        self.grads["bias"] = dz.sum(axis=0)
        if not need_input_grad:
            return None
        return dz @ self.params["weight"].T

    def spec(self):
        return {"type": self.kind, "units": self.units, "activation": self.activation}


LAYER_TYPES = {
    "conv2d": lambda s: Conv2D(s["kernel_h"], s["kernel_w"], s["out_channels"], s.get("activation", "relu")),
    "maxpool2d": lambda s: MaxPool2D(),
    "flatten": lambda s: Flatten(),
    "dense": lambda s: Dense(s["units"], s.get("activation", "relu")),
}


# ============================================================================
# MODEL
# ============================================================================

class Model:
    """Ordered layer stack ending in a 1- or 2-neuron head"""

    def __init__(self, layers: List[Layer], input_size: int, head_arity: int,
                 head_activation: ActivationKind, seed: Optional[int] = 0, scale: Optional[str] = None):
        if head_arity not in ACTIVATIONS_FOR_ARITY:
            raise ConfigError(f"head arity must be 1 or 2, got {head_arity}")
        if head_activation not in ACTIVATIONS_FOR_ARITY[head_arity]:
            raise ConfigError(f"activation {head_activation.value} is not valid for a {head_arity}-neuron head")
        head = layers[-1] if layers else None
        if not isinstance(head, Dense) or head.units != head_arity or head.head_kind is not head_activation:
            raise ConfigError("the last layer must be a dense head matching the head arity and activation")

        self.layers = layers
        self.input_size = input_size
        self.input_shape = (input_size, input_size, 1)
        self.head_arity = head_arity
        self.head_activation = head_activation
        self.seed = seed
        self.scale = scale
        self._inputs: Optional[List[np.ndarray]] = None

        rng = np.random.default_rng(seed)
        shape = self.input_shape
        self.shapes = []
        for index, layer in enumerate(layers):
            layer.build(shape, rng, is_head=(index == len(layers) - 1))
            shape = layer.output_shape(shape)
            self.shapes.append(shape)

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def named_parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [(f"{i}.{layer.kind}.{name}", p)
                for i, layer in enumerate(self.layers) for name, p in layer.params.items()]

    def named_gradients(self) -> List[Tuple[str, np.ndarray]]:
        return [(f"{i}.{layer.kind}.{name}", layer.grads[name])
                for i, layer in enumerate(self.layers) for name in layer.params]

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def snapshot(self) -> List[np.ndarray]:
        return [p.copy() for _, p in self.named_parameters()]

    def restore(self, snapshot: List[np.ndarray]):
        for (_, p), saved in zip(self.named_parameters(), snapshot):
            p[...] = saved

    def layer_summary(self) -> List[Dict[str, Any]]:
        """Per-layer output shape and parameter count, in the shape of an architecture table"""
        return [{"layer": layer.kind, "output_shape": shape, "parameters": layer.parameter_count()}
                for layer, shape in zip(self.layers, self.shapes)]

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def _check_batch(self, batch) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 3:
            batch = batch[..., None]
        if batch.ndim != 4 or batch.shape[1:] != self.input_shape:
            raise ContractError(f"expected batch of shape (N, {self.input_size}, {self.input_size}, 1), "
                                f"got {batch.shape}")
        if batch.size and (batch.min() < 0.0 or batch.max() > 1.0):
            raise ContractError("pixel values must lie in [0, 1]")
        return batch

    def _run(self, x, start, cache):
        for index in range(start, len(self.layers)):
            if cache:
                self._inputs[index] = x
            try:
                x = self.layers[index].forward(x, cache=cache)
            except DomainError as e:
                raise NumericError(str(e), layer_index=index)
            if not np.all(np.isfinite(x)):
                raise NumericError("non-finite activation", layer_index=index)
        return x

    def forward(self, batch, cache: bool = True) -> np.ndarray:
        """Batch (N, H, W, 1) to head outputs (N, arity); cache=False leaves the model untouched"""
        x = self._check_batch(batch)
        if cache:
            self._inputs = [None] * len(self.layers)
        return self._run(x, 0, cache)

    def forward_from(self, index: int, x: np.ndarray) -> Tuple[np.ndarray, List[Optional[np.ndarray]]]:
        """Re-run layers from index on a given input without caching; also returns their patterns"""
        patterns = []
        for layer in self.layers[index:]:
            x, aux = layer.compute(x)
            patterns.append(layer.pattern(aux))
        return x, patterns

    def backward(self, loss_grad) -> Dict[str, np.ndarray]:
        """Gradient of the loss w.r.t. every parameter, given dLoss/dOutput of shape (N, arity)"""
        if self._inputs is None:
            raise StateError("backward called before forward")
        grad = np.asarray(loss_grad, dtype=np.float64)
        expected = (self._inputs[0].shape[0], self.head_arity)
        if grad.shape != expected:
            raise ContractError(f"loss gradient shape {grad.shape} does not match outputs {expected}")

        for index in range(len(self.layers) - 1, -1, -1):
            grad = self.layers[index].backward(grad, need_input_grad=index > 0)

        for name, g in self.named_gradients():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}", layer_index=int(name.split('.')[0]))
        return dict(self.named_gradients())

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------

    def predict_raw(self, batch, batch_size: int = 256) -> np.ndarray:
        x = self._check_batch(batch)
        chunks = [self._run(x[i:i + batch_size], 0, cache=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks) if chunks else np.zeros((0, self.head_arity))

    def predict_angles(self, batch, batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
        """Decoded angles (N,) and a degenerate-output flag per sample"""
        raw = self.predict_raw(batch, batch_size)
        if self.head_arity == 1:
            return wrap_array(raw[:, 0]), np.zeros(len(raw), dtype=bool)
        return units_to_angles(raw)

    def targets_for(self, labels) -> np.ndarray:
        """Encode angle labels as training targets for this head"""
        labels = np.asarray(labels, dtype=np.float64)
        if self.head_arity == 1:
            return labels[:, None]
        return angles_to_units(labels)


def build_model(layer_specs: List[Dict[str, Any]], input_size: int, head_arity: int,
                head_activation: ActivationKind, seed: Optional[int] = 0, scale: Optional[str] = None) -> Model:
    """Build a model from layer spec dicts; the head layer is appended from arity/activation"""
    layers = []
    for spec in layer_specs:
        if spec.get("type") not in LAYER_TYPES:
            raise ConfigError(f"unknown layer type {spec.get('type')!r}")
        layers.append(LAYER_TYPES[spec["type"]](spec))
    layers.append(Dense(head_arity, head_activation.value))
    return Model(layers, input_size, head_arity, head_activation, seed=seed, scale=scale)


def probing_layer_specs(scale: str) -> List[Dict[str, Any]]:
    if scale not in PROBING_SCALES:
        raise ConfigError(f"unknown model scale {scale!r}; choose from {sorted(PROBING_SCALES)}")
    units = PROBING_SCALES[scale]
    return [
        {"type": "conv2d", "kernel_h": 5, "kernel_w": 5, "out_channels": units["conv1"], "activation": "relu"},
        {"type": "maxpool2d", "size": 2, "stride": 2},
        {"type": "conv2d", "kernel_h": 3, "kernel_w": 3, "out_channels": units["conv2"], "activation": "relu"},
        {"type": "maxpool2d", "size": 2, "stride": 2},
        {"type": "flatten"},
        {"type": "dense", "units": units["dense1"], "activation": "relu"},
        {"type": "dense", "units": units["dense2"], "activation": "relu"},
    ]


def probing_cnn(input_size: int, scale: str = "desk", head_arity: int = 2,
                head_activation: ActivationKind = ActivationKind.SIGMOID, seed: Optional[int] = 0) -> Model:
    """The probing CNN: conv 5x5, pool, conv 3x3, pool, flatten, dense, dense, head"""
    if input_size not in SUPPORTED_INPUT_SIZES:
        raise ConfigError(f"input size must be one of {SUPPORTED_INPUT_SIZES}, got {input_size}")
    return build_model(probing_layer_specs(scale), input_size, head_arity, head_activation,
                       seed=seed, scale=scale)


# ============================================================================
# OPTIMIZERS
# ============================================================================

class SGDOptimizer:
    """SGD with (optional) classical momentum"""

    kind = "sgd"

    def __init__(self, lr: float = 0.01, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.step_count = 0
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, model: Model):
        self.step_count += 1
        for (name, p), (_, g) in zip(model.named_parameters(), model.named_gradients()):
            if self.momentum:
                v = self.velocity.setdefault(name, np.zeros_like(p))
                v *= self.momentum
                v -= self.lr * g
                p += v
            else:
                p -= self.lr * g


class AdamOptimizer:

    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, model: Model):
        self.step_count += 1
        t = self.step_count
        for (name, p), (_, g) in zip(model.named_parameters(), model.named_gradients()):
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def make_optimizer(kind: str, lr: float, settings: Optional[Dict[str, Any]] = None):
    """Optimizer from a name and the optimizers section of the configuration"""
    settings = settings or {}
    if kind == "adam":
        adam = settings.get("adam", {})
        return AdamOptimizer(lr, adam.get("beta1", 0.9), adam.get("beta2", 0.999), adam.get("epsilon", 1e-8))
    if kind == "sgd":
        return SGDOptimizer(lr, settings.get("sgd", {}).get("momentum", 0.0))
    raise ConfigError(f"unknown optimizer {kind!r}")


def optimizer_step(state, model: Model) -> Model:
    state.step(model)
    return model


# ============================================================================
# GRADIENT CHECK
# ============================================================================

def _mean_loss(loss_kind, outputs, targets) -> float:
    values, _ = loss_terms(loss_kind, outputs, targets)
    return math.fsum(values) / len(values)


def _same_patterns(a, b) -> bool:
    return all(x is None or np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(model: Model, loss_kind: LossKind, sample, step: float = 1e-5, tolerance: float = 1e-4,
              atol: float = 1e-9, margin: float = 1e-3) -> Dict[str, Any]:
    """Compare every analytic parameter gradient with central differences.

    sample is (pixels, label). A parameter passes when its relative error
    |a − n| / max(|a|, |n|, floor / tolerance) is below tolerance, where the
    finite-difference noise floor is atol·max(1, |L|), so differences under the floor pass.
    max_rel_err and worst_param cover every checked parameter.

    Samples near a kink of the loss or of the cyclic activation are reported as skipped;
    parameters whose perturbation flips a ReLU mask or a pooling argmax are excluded and counted.
    """
    if model.parameter_count() >= GRADCHECK_MAX_PARAMETERS:
        raise ContractError(f"model has {model.parameter_count()} parameters; gradcheck needs < "
                            f"{GRADCHECK_MAX_PARAMETERS}")
    if loss_arity(loss_kind) != model.head_arity:
        raise ContractError(f"{loss_kind.value} loss does not fit a {model.head_arity}-neuron head")

    pixels, label = sample
    batch = np.asarray(pixels, dtype=np.float64).reshape(1, model.input_size, model.input_size, 1)
    targets = model.targets_for([label])

    report = {"passed": True, "skipped": False, "reason": None, "max_rel_err": 0.0, "max_abs_err": 0.0,
              "worst_param": None, "checked": 0, "failures": 0, "skipped_params": 0,
              "parameters": model.parameter_count()}

    outputs = model.forward(batch)
    head = model.layers[-1]
    if model.head_activation is ActivationKind.CYCLIC:
        z = head.pre_activation(model._inputs[-1])[0, 0]
        if abs(z - TWO_PI * round(z / TWO_PI)) < margin:
            report.update(skipped=True, reason="cyclic activation jump")
            return report
    if near_non_smooth(loss_kind, outputs, targets, margin).any():
        report.update(skipped=True, reason=f"{loss_kind.value} loss is not smooth at this sample")
        return report

    base_loss = _mean_loss(loss_kind, outputs, targets)
    _, grads = loss_terms(loss_kind, outputs, targets)
    analytic = model.backward(grads / len(grads))
    inputs = list(model._inputs)
    noise_floor = atol * max(1.0, abs(base_loss))

    for index, layer in enumerate(model.layers):
        if not layer.params:
            continue
        _, base_patterns = model.forward_from(index, inputs[index])
        for name, param in layer.params.items():
            grad = analytic[f"{index}.{layer.kind}.{name}"]
            for idx in np.ndindex(param.shape):
                if isinstance(layer, Dense) and name == "weight" and not inputs[index][:, idx[0]].any():
                    # a zero input makes this weight inert: numeric gradient is exactly 0
                    numeric = 0.0
                else:
                    original = param[idx]
                    param[idx] = original + step
                    plus, plus_patterns = model.forward_from(index, inputs[index])
                    param[idx] = original - step
                    minus, minus_patterns = model.forward_from(index, inputs[index])
                    param[idx] = original
                    if not (_same_patterns(base_patterns, plus_patterns)
                            and _same_patterns(base_patterns, minus_patterns)):
                        report["skipped_params"] += 1
                        continue
                    numeric = (_mean_loss(loss_kind, plus, targets)
                               - _mean_loss(loss_kind, minus, targets)) / (2.0 * step)

                a = float(grad[idx])
                if not (math.isfinite(a) and math.isfinite(numeric)):
                    raise NumericError(f"non-finite gradient at {index}.{layer.kind}.{name}{list(idx)}",
                                       layer_index=index)
                report["checked"] += 1
                abs_err = abs(a - numeric)
                rel_err = abs_err / max(abs(a), abs(numeric), noise_floor / tolerance)
                report["max_abs_err"] = max(report["max_abs_err"], abs_err)
                if rel_err > report["max_rel_err"]:
                    report["max_rel_err"] = rel_err
                    report["worst_param"] = f"{index}.{layer.kind}.{name}{list(idx)}"
                if rel_err >= tolerance:
                    report["failures"] += 1

    report["passed"] = report["failures"] == 0
    return report


# ============================================================================
# CHECKPOINTS
# ============================================================================

def save_checkpoint(model: Model, path, extra: Optional[Dict[str, Any]] = None):
    """JSON header, a NUL byte, then every parameter as little-endian float64 in layer order"""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_size": model.input_size,
        "scale": model.scale,
        "seed": model.seed,
        "head": {"arity": model.head_arity, "activation": model.head_activation.value},
        "layers": [dict(layer.spec(), params={name: list(p.shape) for name, p in layer.params.items()})
                   for layer in model.layers[:-1]],
        "extra": extra or {},
    }
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for _, p in model.named_parameters())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\0")
        f.write(blob)


def load_checkpoint(path) -> Tuple[Model, Dict[str, Any]]:
    """Rebuild a model from a checkpoint; returns (model, header)"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ParseError(path, 0, f"cannot read checkpoint: {e}")

    split = data.find(b"\0")
    if split < 0:
        raise ParseError(path, len(data), "missing NUL separator after the JSON header")
    try:
        header = json.loads(data[:split].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(path, getattr(e, "pos", 0) or 0, f"invalid checkpoint header: {e}")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(path, 0, f"not a {CHECKPOINT_FORMAT} file")

    try:
        head = header["head"]
        specs = [{k: v for k, v in spec.items() if k != "params"} for spec in header["layers"]]
        model = build_model(specs, header["input_size"], head["arity"], ActivationKind(head["activation"]),
                            seed=header.get("seed"), scale=header.get("scale"))
    except (KeyError, ValueError, ConfigError) as e:
        raise ParseError(path, 0, f"invalid checkpoint header: {e}")

    offset = split + 1
    for name, p in model.named_parameters():
        nbytes = p.size * 8
        if offset + nbytes > len(data):
            raise ParseError(path, offset, f"parameter blob ends before {name}")
        p[...] = np.frombuffer(data, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
        offset += nbytes
    if offset != len(data):
        raise ParseError(path, offset, "trailing bytes after the parameter blob")
    return model, header

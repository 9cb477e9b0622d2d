"""Sequential CNN inference with per-layer output hooks.

The engine is deterministic by construction: conv2d and linear accumulate
their products with a single running FP32 accumulator, term order fixed to
input channel, then kernel row, then kernel column (bias seeds the
accumulator). Identical model + input + hooks therefore give bit-identical
outcomes on every run and under any parallel schedule.

After each layer the hook chain is applied to the layer output (this is how
neuron-fault injection and protection attach, in that order), and the
resulting tensor is scanned for Inf/NaN. The first non-finite tensor aborts
the pass with a "due" outcome attributed to that layer.
"""

import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from faultrange.bits import scan_non_finite
from faultrange.errors import ConfigError

Hook = Callable[[int, np.ndarray], np.ndarray]


def _as_f32(name: str, value: Optional[np.ndarray], shape: tuple) -> np.ndarray:
    if value is None:
        raise ConfigError(f"{name}: parameter missing")
    value = np.asarray(value)
    if value.dtype != np.float32:
        raise ConfigError(f"{name}: expected float32 parameters, got {value.dtype}")
    if value.shape != shape:
        raise ConfigError(f"{name}: expected shape {list(shape)}, got {list(value.shape)}")
    return value


@dataclass
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding: int = 0
    weight: np.ndarray = None
    bias: Optional[np.ndarray] = None

    kind = "conv2d"

    def __post_init__(self):
        kh, kw = self.kernel
        if min(self.in_channels, self.out_channels, kh, kw, self.stride) < 1 or self.padding < 0:
            raise ConfigError("conv2d: hyperparameters must be positive (padding >= 0)")
        self.weight = _as_f32("conv2d.weight", self.weight,
                              (self.out_channels, self.in_channels, kh, kw))
        if self.bias is not None:
            self.bias = _as_f32("conv2d.bias", self.bias, (self.out_channels,))

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ConfigError(f"conv2d: expected input [C={self.in_channels},H,W], got {list(in_shape)}")
        kh, kw = self.kernel
        h = (in_shape[1] + 2 * self.padding - kh) // self.stride + 1
        w = (in_shape[2] + 2 * self.padding - kw) // self.stride + 1
        if h < 1 or w < 1:
            raise ConfigError(f"conv2d: kernel {self.kernel} does not fit input {list(in_shape)}")
        return (self.out_channels, h, w)

    def forward(self, x: np.ndarray) -> np.ndarray:
        _, h_out, w_out = self.out_shape(x.shape)
        kh, kw = self.kernel
        s = self.stride
        if self.padding:
            p = self.padding
            x = np.pad(x, ((0, 0), (p, p), (p, p)))
        out = np.zeros((self.out_channels, h_out, w_out), np.float32)
        if self.bias is not None:
            out += self.bias[:, None, None]
        for ci in range(self.in_channels):
            plane = x[ci]
            for r in range(kh):
                for c in range(kw):
                    patch = plane[r:r + s * h_out:s, c:c + s * w_out:s]
                    out += self.weight[:, ci, r, c][:, None, None] * patch[None, :, :]
        return out


@dataclass
class Linear:
    in_features: int
    out_features: int
    weight: np.ndarray = None
    bias: Optional[np.ndarray] = None

    kind = "linear"

    def __post_init__(self):
        if min(self.in_features, self.out_features) < 1:
            raise ConfigError("linear: feature counts must be positive")
        self.weight = _as_f32("linear.weight", self.weight, (self.out_features, self.in_features))
        if self.bias is not None:
            self.bias = _as_f32("linear.bias", self.bias, (self.out_features,))

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise ConfigError(f"linear: expected input [{self.in_features}], got {list(in_shape)}")
        return (self.out_features,)

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.out_features, np.float32)
        if self.bias is not None:
            out += self.bias
        for i in range(self.in_features):
            out += self.weight[:, i] * x[i]
        return out


@dataclass
class ReLU:
    kind = "relu"

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, np.float32(0.0))


def _pool_shape(name, in_shape, window, stride):
    if len(in_shape) != 3:
        raise ConfigError(f"{name}: expected input [C,H,W], got {list(in_shape)}")
    h = (in_shape[1] - window[0]) // stride + 1
    w = (in_shape[2] - window[1]) // stride + 1
    if h < 1 or w < 1:
        raise ConfigError(f"{name}: window {window} does not fit input {list(in_shape)}")
    return (in_shape[0], h, w)


@dataclass
class MaxPool2d:
    window: tuple[int, int]
    stride: Optional[int] = None

    kind = "maxpool2d"

    def __post_init__(self):
        if min(self.window) < 1:
            raise ConfigError("maxpool2d: window must be positive")
        if self.stride is None:
            self.stride = self.window[0]

    def out_shape(self, in_shape):
        return _pool_shape("maxpool2d", in_shape, self.window, self.stride)

    def forward(self, x: np.ndarray) -> np.ndarray:
        _, h_out, w_out = self.out_shape(x.shape)
        s = self.stride
        out = None
        for r in range(self.window[0]):
            for c in range(self.window[1]):
                patch = x[:, r:r + s * h_out:s, c:c + s * w_out:s]
                out = patch.copy() if out is None else np.maximum(out, patch)
        return out


@dataclass
class AvgPool2d:
    window: tuple[int, int]
    stride: Optional[int] = None

    kind = "avgpool2d"

    def __post_init__(self):
        if min(self.window) < 1:
            raise ConfigError("avgpool2d: window must be positive")
        if self.stride is None:
            self.stride = self.window[0]

    def out_shape(self, in_shape):
        return _pool_shape("avgpool2d", in_shape, self.window, self.stride)

    def forward(self, x: np.ndarray) -> np.ndarray:
        # Window terms accumulate row-major, then one FP32 division by the count.
        _, h_out, w_out = self.out_shape(x.shape)
        s = self.stride
        out = np.zeros((x.shape[0], h_out, w_out), np.float32)
        for r in range(self.window[0]):
            for c in range(self.window[1]):
                out += x[:, r:r + s * h_out:s, c:c + s * w_out:s]
        return out / np.float32(self.window[0] * self.window[1])


@dataclass
class Flatten:
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(-1)


@dataclass
class BatchNorm2d:
    channels: int
    eps: float = 1e-5
    scale: np.ndarray = None
    shift: np.ndarray = None
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    kind = "batchnorm2d"

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("batchnorm2d: channels must be positive")
        shape = (self.channels,)
        self.scale = _as_f32("batchnorm2d.scale", self.scale, shape)
        self.shift = _as_f32("batchnorm2d.shift", self.shift, shape)
        self.running_mean = _as_f32("batchnorm2d.mean", self.running_mean, shape)
        self.running_var = _as_f32("batchnorm2d.var", self.running_var, shape)

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.channels:
            raise ConfigError(f"batchnorm2d: expected input [C={self.channels},H,W], got {list(in_shape)}")
        return tuple(in_shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        # Inference mode only: affine transform with stored running statistics.
        denom = np.sqrt(self.running_var + np.float32(self.eps))
        normalized = (x - self.running_mean[:, None, None]) / denom[:, None, None]
        return normalized * self.scale[:, None, None] + self.shift[:, None, None]


Layer = Conv2d | Linear | ReLU | MaxPool2d | AvgPool2d | Flatten | BatchNorm2d

PARAM_SLOTS = {
    "conv2d": ("weight", "bias"),
    "linear": ("weight", "bias"),
    "batchnorm2d": ("scale", "shift", "running_mean", "running_var"),
}


@dataclass
class DueEvent:
    layer_index: int
    kind: str  # "inf" | "nan"


@dataclass
class InferenceOutcome:
    scores: Optional[np.ndarray] = None
    due: Optional[DueEvent] = None

    def __post_init__(self):
        if (self.scores is None) == (self.due is None):
            raise ConfigError("outcome must hold exactly one of scores/due")

    @property
    def is_due(self) -> bool:
        return self.due is not None


class ModelGraph:
    """Ordered layer stack with validated shape chaining and protection points."""

    def __init__(self, layers: Sequence[Layer], input_shape, class_names=None,
                 protection_points: Sequence[int] = ()):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.class_names = list(class_names) if class_names is not None else None
        self.protection_points = tuple(int(p) for p in protection_points)
        if not self.layers:
            raise ConfigError("model must contain at least one layer")

        self.layer_shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ConfigError as exc:
                raise ConfigError(f"layer {i}: {exc}") from exc
            self.layer_shapes.append(shape)

        points = self.protection_points
        if any(p < 0 or p >= len(self.layers) for p in points):
            raise ConfigError("protection points must reference existing layer indices")
        if any(a >= b for a, b in zip(points, points[1:])):
            raise ConfigError("protection points must be strictly increasing")
        if self.class_names is not None:
            final = self.layer_shapes[-1]
            if final != (len(self.class_names),):
                raise ConfigError(
                    f"final output shape {list(final)} does not match {len(self.class_names)} classes")

    @property
    def output_shape(self):
        return self.layer_shapes[-1]

    def replace_params(self, updates: dict[int, dict[str, np.ndarray]]) -> "ModelGraph":
        """Shallow model copy with some layer parameters substituted.

        Untouched layers are shared with the original; the original is never
        mutated.
        """
        import copy
        layers = []
        for i, layer in enumerate(self.layers):
            if i in updates:
                layer = copy.copy(layer)
                for slot, value in updates[i].items():
                    setattr(layer, slot, value)
            layers.append(layer)
        return ModelGraph(layers, self.input_shape, self.class_names, self.protection_points)


def forward(model: ModelGraph, x: np.ndarray, hooks: Sequence[Hook] = ()) -> InferenceOutcome:
    """Run one input through the model, applying hooks after each layer.

    Hooks run in sequence on each layer's output; the scan for Inf/NaN sees
    the post-hook tensor, so a hook earlier in the chain (fault injection)
    may introduce a non-finite value that a later hook (protection) removes
    before the scan. NaN passes every range comparison unseen and always
    reaches the scan.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.shape != model.input_shape:
        raise ConfigError(f"input shape {list(x.shape)} != model input {list(model.input_shape)}")
    # FP32 overflow to Inf / NaN creation is modeled behavior under faults,
    # not an error condition; the scan below turns it into a due outcome.
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(model.layers):
            x = layer.forward(x)
            for hook in hooks:
                x = hook(i, x)
            hit = scan_non_finite(x)
            if hit is not None:
                return InferenceOutcome(due=DueEvent(layer_index=i, kind=hit[1]))
    return InferenceOutcome(scores=x)


def predict(scores: np.ndarray) -> int:
    """Top-1 class index; ties break to the lowest index."""
    scores = np.asarray(scores)
    if scores.ndim != 1 or scores.size < 1:
        raise ConfigError("scores must be a non-empty 1-D tensor")
    return int(np.argmax(scores))


def format_f32(value) -> str:
    """Decimal text that parses back to the identical float32."""
    return repr(float(np.float32(value)))


def dump_fmaps(model: ModelGraph, x: np.ndarray, sink_dir: str) -> list[str]:
    """Write every layer output as plain-text grids, one file per channel.

    3-D outputs produce one ``layer{i}_ch{c}.txt`` grid per channel; 1-D
    outputs are written as a single one-row ``layer{i}_ch0.txt``. Aborts
    early (like forward) if a non-finite value appears.
    """
    x = np.asarray(x, dtype=np.float32)
    os.makedirs(sink_dir, exist_ok=True)
    written = []
    for i, layer in enumerate(model.layers):
        x = layer.forward(x)
        channels = x[None, None, :] if x.ndim == 1 else x
        for c in range(channels.shape[0]):
            path = os.path.join(sink_dir, f"layer{i}_ch{c}.txt")
            with open(path, "w") as fh:
                for row in channels[c]:
                    fh.write(" ".join(format_f32(v) for v in row) + "\n")
            written.append(path)
        if scan_non_finite(x) is not None:
            break
    return written

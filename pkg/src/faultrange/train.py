"""Deterministic training of the desk-scale classifier fixture.

The fixture is a LeNet-style stack pinned to:

    conv(1->6, 5x5) relu maxpool2 conv(6->16, 5x5) relu maxpool2 flatten
    linear(->120) relu linear(->84) relu linear(->K)

with protection points after every relu and pooling layer. Training is plain
per-sample SGD on softmax cross-entropy, single-threaded, with weight init
and sample order drawn from counter-based streams: the same seed always
produces bit-identical parameters.
"""

from dataclasses import dataclass

import numpy as np

from faultrange.data import Dataset
from faultrange.errors import ConfigError, TrainingError
from faultrange.graph import (
    Conv2d,
    Flatten,
    Linear,
    MaxPool2d,
    ModelGraph,
    ReLU,
    forward,
    predict,
)
from faultrange.rng import derive_rng

FIXTURE_PROTECTION_POINTS = (1, 2, 4, 5, 8, 10)


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def build_fixture(seed: int, class_names, image_size: int = 28) -> ModelGraph:
    """Fixture topology with seeded initial parameters and zero biases."""
    specs = [
        ("conv2d", dict(c_in=1, c_out=6, k=5)),
        ("relu", None),
        ("maxpool2d", None),
        ("conv2d", dict(c_in=6, c_out=16, k=5)),
        ("relu", None),
        ("maxpool2d", None),
        ("flatten", None),
        ("linear", dict(out=120)),
        ("relu", None),
        ("linear", dict(out=84)),
        ("relu", None),
        ("linear", dict(out=len(class_names))),
    ]
    layers = []
    shape = (1, image_size, image_size)
    for i, (kind, hp) in enumerate(specs):
        rng = derive_rng(seed, "fixture-init", i)
        if kind == "conv2d":
            fan_in = hp["c_in"] * hp["k"] * hp["k"]
            layer = Conv2d(hp["c_in"], hp["c_out"], (hp["k"], hp["k"]),
                           weight=_uniform_init(rng, (hp["c_out"], hp["c_in"], hp["k"], hp["k"]), fan_in),
                           bias=np.zeros(hp["c_out"], np.float32))
        elif kind == "linear":
            fan_in = int(np.prod(shape))
            layer = Linear(fan_in, hp["out"],
                           weight=_uniform_init(rng, (hp["out"], fan_in), fan_in),
                           bias=np.zeros(hp["out"], np.float32))
        elif kind == "relu":
            layer = ReLU()
        elif kind == "maxpool2d":
            layer = MaxPool2d((2, 2))
        else:
            layer = Flatten()
        shape = layer.out_shape(shape)
        layers.append(layer)
    return ModelGraph(layers, (1, image_size, image_size), list(class_names),
                      FIXTURE_PROTECTION_POINTS)


# --------------------------------------------------------------------------
# backprop for the fixture's layer kinds

def linear_backward(layer: Linear, x, dy):
    dx = layer.weight.T @ dy
    return dx, {"weight": np.outer(dy, x), "bias": dy.copy()}


def relu_backward(x, dy):
    return dy * (x > 0)


def flatten_backward(x, dy):
    return dy.reshape(x.shape)


def maxpool_backward(layer: MaxPool2d, x, out, dy):
    # Gradient flows to the first maximal element of each window (row-major).
    s = layer.stride
    h_out, w_out = out.shape[1], out.shape[2]
    dx = np.zeros_like(x)
    taken = np.zeros_like(out, dtype=bool)
    for r in range(layer.window[0]):
        for c in range(layer.window[1]):
            patch = x[:, r:r + s * h_out:s, c:c + s * w_out:s]
            winner = (patch == out) & ~taken
            dx[:, r:r + s * h_out:s, c:c + s * w_out:s] += dy * winner
            taken |= winner
    return dx


def conv_backward(layer: Conv2d, x, dy):
    kh, kw = layer.kernel
    s = layer.stride
    p = layer.padding
    x_pad = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    h_out, w_out = dy.shape[1], dy.shape[2]
    dw = np.zeros_like(layer.weight)
    dx_pad = np.zeros_like(x_pad)
    for r in range(kh):
        for c in range(kw):
            patch = x_pad[:, r:r + s * h_out:s, c:c + s * w_out:s]
            dw[:, :, r, c] = np.tensordot(dy, patch, axes=([1, 2], [1, 2]))
            dx_pad[:, r:r + s * h_out:s, c:c + s * w_out:s] += np.tensordot(
                layer.weight[:, :, r, c], dy, axes=([0], [0]))
    dx = dx_pad[:, p:x_pad.shape[1] - p, p:x_pad.shape[2] - p] if p else dx_pad
    grads = {"weight": dw}
    if layer.bias is not None:
        grads["bias"] = dy.sum(axis=(1, 2))
    return dx, grads


def softmax_cross_entropy(scores: np.ndarray, label: int):
    shifted = scores - np.max(scores)
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    loss = float(-np.log(max(probs[label], np.float32(1e-45))))
    dscores = probs.copy()
    dscores[label] -= np.float32(1.0)
    return loss, dscores.astype(np.float32)


def _train_step(model: ModelGraph, image, label: int, lr: float) -> float:
    inputs = []
    outputs = []
    x = image
    for layer in model.layers:
        inputs.append(x)
        x = layer.forward(x)
        outputs.append(x)
    loss, dy = softmax_cross_entropy(x, label)

    lr32 = np.float32(lr)
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if layer.kind == "linear":
            dy, grads = linear_backward(layer, inputs[i], dy)
        elif layer.kind == "conv2d":
            dy, grads = conv_backward(layer, inputs[i], dy)
        elif layer.kind == "relu":
            dy, grads = relu_backward(inputs[i], dy), None
        elif layer.kind == "maxpool2d":
            dy, grads = maxpool_backward(layer, inputs[i], outputs[i], dy), None
        elif layer.kind == "flatten":
            dy, grads = flatten_backward(inputs[i], dy), None
        else:
            raise ConfigError(f"backprop not implemented for layer kind {layer.kind!r}")
        if grads:
            for slot, grad in grads.items():
                param = getattr(layer, slot)
                param -= lr32 * grad.astype(np.float32)
    return loss


@dataclass
class TrainStats:
    epoch_losses: list[float]
    train_accuracy: float
    test_accuracy: float


def train_fixture(dataset: Dataset, seed: int, epochs: int = 10,
                  lr: float = 0.03) -> tuple[ModelGraph, TrainStats]:
    """Train the fixture on the dataset's train split; deterministic in seed."""
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    model = build_fixture(seed, dataset.class_names, image_size=dataset.images.shape[-1])

    train_idx = dataset.train_indices
    losses = []
    for epoch in range(epochs):
        order = derive_rng(seed, "fixture-shuffle", epoch).permutation(len(train_idx))
        total = 0.0
        for j in order:
            i = int(train_idx[j])
            loss = _train_step(model, dataset.images[i], int(dataset.labels[i]), lr)
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged (non-finite loss) at epoch {epoch}", epoch)
            total += loss
        losses.append(total / len(train_idx))

    train_acc, _ = evaluate_accuracy(model, dataset, dataset.train_indices)
    test_acc, _ = evaluate_accuracy(model, dataset, dataset.test_indices)
    return model, TrainStats(losses, train_acc, test_acc)


def evaluate_accuracy(model: ModelGraph, dataset: Dataset, indices) -> tuple[float, list[int]]:
    """Fault-free accuracy over the given indices, plus the correctly-classified ones.

    The returned index list is the campaign input set: fault campaigns only
    run images the unfaulted model gets right.
    """
    indices = [int(i) for i in indices]
    if not indices:
        raise ConfigError("accuracy over an empty index set is undefined")
    correct = []
    for i in indices:
        outcome = forward(model, dataset.images[i])
        if not outcome.is_due and predict(outcome.scores) == int(dataset.labels[i]):
            correct.append(i)
    return len(correct) / len(indices), correct

"""Checkpoint conversion: torch state dict -> model container."""

import numpy as np
import torch

from checkpoint_importer.manifest import HYPER_TABLE, Manifest


class ConversionError(Exception):
    pass


def expected_param_shape(layer, slot: str) -> tuple[int, ...]:
    h = layer.hyper
    if layer.kind == "conv2d":
        if slot == "weight":
            return (h["out_channels"], h["in_channels"], *h["kernel"])
        return (h["out_channels"],)
    if layer.kind == "linear":
        if slot == "weight":
            return (h["out_features"], h["in_features"])
        return (h["out_features"],)
    return (h["channels"],)  # batchnorm2d slots


def output_shape(layer, in_shape):
    h = layer.hyper
    kind = layer.kind
    if kind == "conv2d":
        kh, kw = h["kernel"]
        return (h["out_channels"],
                (in_shape[1] + 2 * h["padding"] - kh) // h["stride"] + 1,
                (in_shape[2] + 2 * h["padding"] - kw) // h["stride"] + 1)
    if kind == "linear":
        if len(in_shape) != 1 or in_shape[0] != h["in_features"]:
            raise ConversionError(
                f"linear expects input [{h['in_features']}], got {list(in_shape)}")
        return (h["out_features"],)
    if kind in ("maxpool2d", "avgpool2d"):
        wh, ww = h["window"]
        return (in_shape[0],
                (in_shape[1] - wh) // h["stride"] + 1,
                (in_shape[2] - ww) // h["stride"] + 1)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    return tuple(in_shape)  # relu, batchnorm2d


def load_state_dict(path: str) -> dict:
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    if not isinstance(state, dict):
        raise ConversionError(f"checkpoint {path} does not hold a state dict")
    return state


def fetch_tensor(state: dict, key: str, expected_shape, cast: bool,
                 where: str) -> np.ndarray:
    if key not in state:
        raise ConversionError(f"{where}: source parameter {key!r} not in checkpoint")
    tensor = state[key]
    if not isinstance(tensor, torch.Tensor):
        raise ConversionError(f"{where}: source entry {key!r} is not a tensor")
    if tensor.dtype != torch.float32:
        if not cast:
            raise ConversionError(
                f"{where}: source dtype {tensor.dtype} is not float32 "
                "(pass cast_to_f32 to convert explicitly)")
        tensor = tensor.to(torch.float32)
    value = tensor.detach().cpu().contiguous().numpy()
    if value.shape != tuple(expected_shape):
        raise ConversionError(
            f"{where}: shape mismatch, checkpoint has {list(value.shape)}, "
            f"layer declares {list(expected_shape)}")
    return value


def convert(manifest: Manifest, out_path: str) -> None:
    """Validate the mapped checkpoint and write the model container."""
    state = load_state_dict(manifest.source)

    layer_headers = []
    params = []
    shape = manifest.input_shape
    for i, layer in enumerate(manifest.layers):
        header = {"kind": layer.kind}
        for key in HYPER_TABLE[layer.kind]:
            header[key] = layer.hyper[key]
        layer_headers.append(header)
        for slot in ("weight", "bias", "scale", "shift", "running_mean",
                     "running_var"):
            if slot in layer.params:
                value = fetch_tensor(state, layer.params[slot],
                                     expected_param_shape(layer, slot),
                                     manifest.cast_to_f32, f"layers[{i}].{slot}")
                params.append((i, slot, value))
        shape = output_shape(layer, shape)

    if shape != (len(manifest.class_names),):
        raise ConversionError(
            f"model output shape {list(shape)} does not match "
            f"{len(manifest.class_names)} classes")

    from checkpoint_importer.writer import write_model
    write_model(layer_headers, params, manifest.input_shape, manifest.class_names,
                manifest.protection_points, out_path)

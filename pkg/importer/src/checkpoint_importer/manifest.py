"""Import manifest: source checkpoint plus the layer/parameter mapping.

A manifest pins everything the converter needs:

    {
      "source": "lenet.pt",
      "input_shape": [1, 28, 28],
      "class_names": ["0", ..., "9"],
      "protection_points": [1, 2, 4, 5, 8, 10],
      "cast_to_f32": false,
      "layers": [
        {"kind": "conv2d", "in_channels": 1, "out_channels": 6,
         "kernel": [5, 5], "stride": 1, "padding": 2,
         "params": {"weight": "conv1.weight", "bias": "conv1.bias"}},
        {"kind": "relu"},
        ...
      ]
    }

`params` maps each container parameter slot to the source state-dict key.
Every slot a layer kind requires must be mapped exactly once; `bias` slots
are optional.
"""

import json
from dataclasses import dataclass, field


class ManifestError(Exception):
    pass


# slot -> required? per layer kind
SLOT_TABLE = {
    "conv2d": {"weight": True, "bias": False},
    "linear": {"weight": True, "bias": False},
    "batchnorm2d": {"scale": True, "shift": True,
                    "running_mean": True, "running_var": True},
    "relu": {},
    "maxpool2d": {},
    "avgpool2d": {},
    "flatten": {},
}

HYPER_TABLE = {
    "conv2d": ("in_channels", "out_channels", "kernel", "stride", "padding"),
    "linear": ("in_features", "out_features"),
    "maxpool2d": ("window", "stride"),
    "avgpool2d": ("window", "stride"),
    "batchnorm2d": ("channels", "eps"),
    "relu": (),
    "flatten": (),
}


@dataclass
class LayerEntry:
    kind: str
    hyper: dict
    params: dict[str, str] = field(default_factory=dict)  # slot -> source key


@dataclass
class Manifest:
    source: str
    input_shape: tuple[int, ...]
    class_names: list[str]
    protection_points: tuple[int, ...]
    layers: list[LayerEntry]
    cast_to_f32: bool = False


def _validate_layer(index: int, raw: dict) -> LayerEntry:
    kind = raw.get("kind")
    if kind not in SLOT_TABLE:
        raise ManifestError(f"layers[{index}]: unknown kind {kind!r}")
    hyper = {}
    for key in HYPER_TABLE[kind]:
        if key not in raw:
            raise ManifestError(f"layers[{index}]: missing hyperparameter {key!r}")
        hyper[key] = raw[key]
    params = dict(raw.get("params", {}))
    for slot, required in SLOT_TABLE[kind].items():
        if required and slot not in params:
            raise ManifestError(
                f"layers[{index}]: parameter slot {slot!r} of {kind} is unmapped")
    for slot in params:
        if slot not in SLOT_TABLE[kind]:
            raise ManifestError(
                f"layers[{index}]: {kind} has no parameter slot {slot!r}")
    return LayerEntry(kind, hyper, params)


def load_manifest(path: str) -> Manifest:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid manifest JSON: {exc}") from exc
    for key in ("source", "input_shape", "class_names", "layers"):
        if key not in raw:
            raise ManifestError(f"manifest missing field {key!r}")
    layers = [_validate_layer(i, entry) for i, entry in enumerate(raw["layers"])]

    # every source key maps to exactly one slot
    seen: dict[str, str] = {}
    for i, layer in enumerate(layers):
        for slot, source_key in layer.params.items():
            if source_key in seen:
                raise ManifestError(
                    f"source parameter {source_key!r} mapped twice "
                    f"({seen[source_key]} and layers[{i}].{slot})")
            seen[source_key] = f"layers[{i}].{slot}"

    points = tuple(raw.get("protection_points", ()))
    if any(a >= b for a, b in zip(points, points[1:])):
        raise ManifestError("protection_points must be strictly increasing")
    if any(not 0 <= p < len(layers) for p in points):
        raise ManifestError("protection_points must reference layer indices")
    return Manifest(
        source=raw["source"],
        input_shape=tuple(raw["input_shape"]),
        class_names=list(raw["class_names"]),
        protection_points=points,
        layers=layers,
        cast_to_f32=bool(raw.get("cast_to_f32", False)),
    )

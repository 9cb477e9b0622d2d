"""Bit-exact persistence for models, datasets, bounds, reports, and plans.

Binary container layout (all integers little-endian):

    bytes 0..3    magic "RRES"
    bytes 4..7    version, u32 (currently 1)
    bytes 8..15   header length in bytes, u64
    then          UTF-8 JSON header
    then          payload: concatenated raw little-endian float32 tensors

The header describes every tensor as ``{"offset": byte offset into the
payload, "count": element count, "shape": dims}``. Offsets are validated to
be non-overlapping and in range; a canonical writer packs tensors
back-to-back in declaration order, which makes save -> load -> save
byte-identical.

JSON sidecar files (bounds, reports, cluster configs, fault plans, subsets)
hold FP32 values as their exact decimal expansions; loading casts back to
float32 and recovers the identical bits.
"""

import json
from dataclasses import dataclass

import numpy as np

from faultrange.errors import ConfigError, FormatError
from faultrange.graph import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Flatten,
    Linear,
    MaxPool2d,
    ModelGraph,
    PARAM_SLOTS,
    ReLU,
)
from faultrange.data import Dataset

MAGIC = b"RRES"
VERSION = 1


def f32_json(value) -> float:
    """Embed an FP32 value as the exact float64 JSON can round-trip."""
    return float(np.float32(value))


def dump_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{what}: invalid JSON in {path}: {exc}") from exc


def require(mapping, key, kinds, path: str):
    """Fetch mapping[key], raising a schema error that names the field path."""
    if not isinstance(mapping, dict) or key not in mapping:
        raise FormatError(f"schema error: missing field {path}")
    value = mapping[key]
    if kinds is not None and not isinstance(value, kinds):
        raise FormatError(f"schema error: field {path} has wrong type")
    return value


# --------------------------------------------------------------------------
# binary container

def _layer_header(layer) -> dict:
    h = {"kind": layer.kind}
    if layer.kind == "conv2d":
        h.update(in_channels=layer.in_channels, out_channels=layer.out_channels,
                 kernel=list(layer.kernel), stride=layer.stride, padding=layer.padding)
    elif layer.kind == "linear":
        h.update(in_features=layer.in_features, out_features=layer.out_features)
    elif layer.kind in ("maxpool2d", "avgpool2d"):
        h.update(window=list(layer.window), stride=layer.stride)
    elif layer.kind == "batchnorm2d":
        h.update(channels=layer.channels, eps=layer.eps)
    return h


def _layer_params(layer) -> list[tuple[str, np.ndarray]]:
    out = []
    for slot in PARAM_SLOTS.get(layer.kind, ()):
        value = getattr(layer, slot)
        if value is not None:
            out.append((slot, value))
    return out


def _write_container(header: dict, tensors: list[np.ndarray], path: str) -> None:
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def _read_container(path: str, expected_type: str) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic in {path}: expected {MAGIC!r}")
    version = int.from_bytes(raw[4:8], "little")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} in {path}")
    header_len = int.from_bytes(raw[8:16], "little")
    if 16 + header_len > len(raw):
        raise FormatError(f"header length {header_len} overflows file of {len(raw)} bytes")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid container header in {path}: {exc}") from exc
    if require(header, "type", str, "type") != expected_type:
        raise FormatError(f"container type {header['type']!r} is not a {expected_type}")
    return header, raw[16 + header_len:]


def _extract_tensor(payload: bytes, entry: dict, path: str) -> np.ndarray:
    offset = require(entry, "offset", int, f"{path}.offset")
    count = require(entry, "count", int, f"{path}.count")
    shape = require(entry, "shape", list, f"{path}.shape")
    if count != int(np.prod(shape)):
        raise FormatError(f"count mismatch for {path}: count {count} != prod(shape {shape})")
    end = offset + 4 * count
    if offset < 0 or end > len(payload):
        raise FormatError(
            f"offset overflow for {path}: bytes [{offset}, {end}) outside payload of {len(payload)}")
    data = np.frombuffer(payload, "<f4", count=count, offset=offset)
    return data.reshape(shape).copy()


def _check_overlaps(entries: list[tuple[str, dict]], payload_len: int) -> None:
    spans = sorted((e["offset"], e["offset"] + 4 * e["count"], name) for name, e in entries)
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise FormatError(f"overlapping payload tensors: {n0} and {n1}")


def save_model(model: ModelGraph, path: str) -> None:
    tensors = []
    layer_headers = []
    offset = 0
    for layer in model.layers:
        h = _layer_header(layer)
        params = _layer_params(layer)
        if params:
            h["params"] = {}
            for slot, value in params:
                h["params"][slot] = {"offset": offset, "count": int(value.size),
                                     "shape": list(value.shape)}
                tensors.append(value)
                offset += 4 * value.size
        layer_headers.append(h)
    header = {
        "type": "model",
        "input_shape": list(model.input_shape),
        "class_names": model.class_names,
        "protection_points": list(model.protection_points),
        "layers": layer_headers,
    }
    _write_container(header, tensors, path)


def load_model(path: str) -> ModelGraph:
    header, payload = _read_container(path, "model")
    layers = []
    named_entries = []
    for i, lh in enumerate(require(header, "layers", list, "layers")):
        kind = require(lh, "kind", str, f"layers[{i}].kind")
        params = {}
        for slot, entry in lh.get("params", {}).items():
            field_path = f"layers[{i}].params.{slot}"
            params[slot] = _extract_tensor(payload, entry, field_path)
            named_entries.append((field_path, entry))
        try:
            if kind == "conv2d":
                layer = Conv2d(lh["in_channels"], lh["out_channels"], tuple(lh["kernel"]),
                               lh["stride"], lh["padding"],
                               weight=params.get("weight"), bias=params.get("bias"))
            elif kind == "linear":
                layer = Linear(lh["in_features"], lh["out_features"],
                               weight=params.get("weight"), bias=params.get("bias"))
            elif kind == "relu":
                layer = ReLU()
            elif kind == "maxpool2d":
                layer = MaxPool2d(tuple(lh["window"]), lh["stride"])
            elif kind == "avgpool2d":
                layer = AvgPool2d(tuple(lh["window"]), lh["stride"])
            elif kind == "flatten":
                layer = Flatten()
            elif kind == "batchnorm2d":
                layer = BatchNorm2d(lh["channels"], lh["eps"], scale=params.get("scale"),
                                    shift=params.get("shift"),
                                    running_mean=params.get("running_mean"),
                                    running_var=params.get("running_var"))
            else:
                raise FormatError(f"unknown layer kind {kind!r} at layers[{i}]")
        except KeyError as exc:
            raise FormatError(f"schema error: missing field layers[{i}].{exc.args[0]}") from exc
        except ConfigError as exc:
            raise FormatError(f"invalid parameters at layers[{i}]: {exc}") from exc
        layers.append(layer)
    _check_overlaps(named_entries, len(payload))
    try:
        return ModelGraph(layers,
                          require(header, "input_shape", list, "input_shape"),
                          header.get("class_names"),
                          require(header, "protection_points", list, "protection_points"))
    except ConfigError as exc:
        raise FormatError(f"inconsistent model header: {exc}") from exc


def save_dataset(dataset: Dataset, path: str) -> None:
    images = np.ascontiguousarray(dataset.images, dtype=np.float32)
    labels = dataset.labels.astype(np.float32)
    header = {
        "type": "dataset",
        "class_names": list(dataset.class_names),
        "dataset_id": dataset.dataset_id,
        "tensors": {
            "images": {"offset": 0, "count": int(images.size), "shape": list(images.shape)},
            "labels": {"offset": 4 * int(images.size), "count": int(labels.size),
                       "shape": list(labels.shape)},
        },
    }
    _write_container(header, [images, labels], path)


def load_dataset(path: str) -> Dataset:
    header, payload = _read_container(path, "dataset")
    tensors = require(header, "tensors", dict, "tensors")
    images = _extract_tensor(payload, require(tensors, "images", dict, "tensors.images"),
                             "tensors.images")
    labels = _extract_tensor(payload, require(tensors, "labels", dict, "tensors.labels"),
                             "tensors.labels")
    _check_overlaps([("images", tensors["images"]), ("labels", tensors["labels"])], len(payload))
    return Dataset(images, labels.astype(np.int64),
                   tuple(require(header, "class_names", list, "class_names")),
                   require(header, "dataset_id", str, "dataset_id"))


# --------------------------------------------------------------------------
# bounds

@dataclass
class BoundsProfile:
    entries: dict[int, tuple[np.float32, np.float32]]  # protection point -> (t_low, t_up)
    dataset_id: str
    sample_count: int


def save_bounds(profile: BoundsProfile, path: str) -> None:
    payload = {
        "bounds": [
            {"protection_point": p, "t_low": f32_json(lo), "t_up": f32_json(up)}
            for p, (lo, up) in sorted(profile.entries.items())
        ],
        "provenance": {"dataset_id": profile.dataset_id, "sample_count": profile.sample_count},
    }
    dump_json(payload, path)


def load_bounds(path: str) -> BoundsProfile:
    raw = load_json(path, "bounds")
    entries = {}
    for i, entry in enumerate(require(raw, "bounds", list, "bounds")):
        point = require(entry, "protection_point", int, f"bounds[{i}].protection_point")
        lo = np.float32(require(entry, "t_low", (int, float), f"bounds[{i}].t_low"))
        up = np.float32(require(entry, "t_up", (int, float), f"bounds[{i}].t_up"))
        if not lo <= up:
            raise FormatError(f"schema error: bounds[{i}] has t_low > t_up")
        if point in entries:
            raise FormatError(f"schema error: duplicate protection_point {point}")
        entries[point] = (lo, up)
    prov = require(raw, "provenance", dict, "provenance")
    return BoundsProfile(entries,
                         require(prov, "dataset_id", str, "provenance.dataset_id"),
                         require(prov, "sample_count", int, "provenance.sample_count"))


# --------------------------------------------------------------------------
# campaign reports

COUNT_FIELDS = (
    "run_count", "sdc_count", "due_count", "correct_count",
    "oob_count", "ib_count",
    "sdc_oob_count", "sdc_ib_count",
    "correct_oob_count", "correct_ib_count",
    "due_oob_count", "due_ib_count",
)


def validate_report(raw: dict) -> dict:
    config = require(raw, "config", dict, "config")
    for key in ("policy", "kind", "k", "bits", "epochs", "master_seed"):
        require(config, key, None, f"config.{key}")
    counts = require(raw, "counts", dict, "counts")
    for key in COUNT_FIELDS:
        value = require(counts, key, int, f"counts.{key}")
        if value < 0:
            raise FormatError(f"schema error: counts.{key} is negative")
    require(raw, "confusions", list, "confusions")
    require(raw, "derived", dict, "derived")
    return raw


def save_report(report: dict, path: str) -> None:
    dump_json(validate_report(report), path)


def load_report(path: str) -> dict:
    return validate_report(load_json(path, "report"))


def report_bytes(report: dict) -> bytes:
    """Canonical serialized form, used for byte-identity checks."""
    return (json.dumps(validate_report(report), indent=1, sort_keys=True) + "\n").encode()


# --------------------------------------------------------------------------
# cluster configs, fault plans, evaluation subsets

def load_clusters(path: str) -> tuple[dict[str, str], dict[str, int]]:
    raw = load_json(path, "cluster config")
    class_to_cluster = require(raw, "class_to_cluster", dict, "class_to_cluster")
    ranks = require(raw, "cluster_ranks", dict, "cluster_ranks")
    for name, cluster in class_to_cluster.items():
        if cluster not in ranks:
            raise FormatError(f"schema error: cluster_ranks missing cluster {cluster!r} "
                              f"(used by class {name!r})")
    for cluster, rank in ranks.items():
        if not isinstance(rank, int):
            raise FormatError(f"schema error: cluster_ranks.{cluster} must be an integer")
    return dict(class_to_cluster), dict(ranks)


def save_clusters(class_to_cluster: dict[str, str], ranks: dict[str, int], path: str) -> None:
    dump_json({"class_to_cluster": class_to_cluster, "cluster_ranks": ranks}, path)


def save_subset(payload: dict, path: str) -> None:
    dump_json(payload, path)


def load_subset(path: str) -> dict:
    raw = load_json(path, "subset")
    require(raw, "dataset_id", str, "dataset_id")
    require(raw, "accuracy", (int, float), "accuracy")
    indices = require(raw, "correct_indices", list, "correct_indices")
    if not all(isinstance(i, int) for i in indices):
        raise FormatError("schema error: correct_indices must be integers")
    return raw

"""Canonical container writer, implemented directly from the format document.

Layout: magic "RRES", u32 LE version 1, u64 LE header length, compact
sorted-key JSON header, then raw little-endian float32 tensors packed back to
back in declaration order.
"""

import json

import numpy as np

MAGIC = b"RRES"
VERSION = 1


def write_container(header: dict, tensors: list[np.ndarray], path: str) -> None:
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for tensor in tensors:
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def write_model(layers: list[dict], params: list[tuple[int, str, np.ndarray]],
                input_shape, class_names, protection_points, path: str) -> None:
    """Assemble the model header and payload.

    `layers` holds per-layer hyperparameter dicts (kind included);
    `params` holds (layer index, slot, float32 array) in canonical order.
    """
    offset = 0
    tensors = []
    for layer_index, slot, value in params:
        entry = {"offset": offset, "count": int(value.size), "shape": list(value.shape)}
        layers[layer_index].setdefault("params", {})[slot] = entry
        tensors.append(value)
        offset += 4 * value.size
    header = {
        "type": "model",
        "input_shape": list(input_shape),
        "class_names": list(class_names),
        "protection_points": list(protection_points),
        "layers": layers,
    }
    write_container(header, tensors, path)


def write_dataset(images: np.ndarray, labels: np.ndarray, class_names,
                  dataset_id: str, path: str) -> None:
    images = np.ascontiguousarray(images, np.float32)
    labels = np.ascontiguousarray(labels, np.float32)
    header = {
        "type": "dataset",
        "class_names": list(class_names),
        "dataset_id": dataset_id,
        "tensors": {
            "images": {"offset": 0, "count": int(images.size),
                       "shape": list(images.shape)},
            "labels": {"offset": 4 * int(images.size), "count": int(labels.size),
                       "shape": list(labels.shape)},
        },
    }
    write_container(header, [images, labels], path)

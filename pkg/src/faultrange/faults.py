"""Sampling and bit-exact application of weight and neuron faults.

Weight faults flip bits of stored conv2d/linear weights and persist for a
whole campaign epoch; neuron faults flip bits of conv2d/linear layer outputs
and are redrawn for every input. Fault sites are uniform over every eligible
scalar in the model (element-uniform, not layer-uniform), then uniform over
the allowed bit positions, with distinct (layer, element, bit) triples.
Plans are pure functions of their RNG key, so any execution order reproduces
them.
"""

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from faultrange.bits import bit_fractions, bit_mask
from faultrange.errors import ConfigError, FormatError
from faultrange.graph import ModelGraph
from faultrange.rng import derive_rng

DEFAULT_BITS = tuple(range(0, 9))  # sign and exponent bits


@dataclass(frozen=True)
class FaultSpec:
    kind: str         # "weight" | "neuron"
    layer_index: int
    flat_index: int   # into the parameter tensor (weight) or layer output (neuron)
    bit: int
    slot: str = "weight"  # parameter slot for weight faults; "output" for neuron


@dataclass
class FaultPlan:
    kind: str
    faults: tuple[FaultSpec, ...]
    master_seed: int
    epoch: int
    image: Optional[int] = None  # set for neuron plans only

    def __len__(self):
        return len(self.faults)


def eligible_sites(model: ModelGraph, kind: str,
                   include_bias: bool = False) -> list[tuple[int, str, int]]:
    """(layer_index, slot, element_count) for every fault-eligible tensor.

    Biases are excluded from weight faults unless explicitly enabled.
    """
    sites = []
    for i, layer in enumerate(model.layers):
        if layer.kind not in ("conv2d", "linear"):
            continue
        if kind == "weight":
            sites.append((i, "weight", int(layer.weight.size)))
            if include_bias and layer.bias is not None:
                sites.append((i, "bias", int(layer.bias.size)))
        elif kind == "neuron":
            sites.append((i, "output", int(np.prod(model.layer_shapes[i]))))
        else:
            raise ConfigError(f"unknown fault kind {kind!r} (expected weight/neuron)")
    return sites


def sample_faults(model: ModelGraph, kind: str, k: int, bits: Sequence[int],
                  rng: np.random.Generator, master_seed: int = 0, epoch: int = 0,
                  image: Optional[int] = None, include_bias: bool = False) -> FaultPlan:
    """Draw k distinct fault sites, element-uniform across the whole model."""
    if k < 1:
        raise ConfigError("fault count k must be >= 1")
    bits = sorted(set(int(b) for b in bits))
    if not bits or bits[0] < 0 or bits[-1] > 31:
        raise ConfigError(f"bit positions must lie in [0, 31], got {bits}")
    sites = eligible_sites(model, kind, include_bias)
    counts = np.array([n for _, _, n in sites], np.int64)
    total = int(counts.sum())
    if k > total * len(bits):
        raise ConfigError(
            f"cannot draw {k} distinct faults from {total} sites x {len(bits)} bits")
    cumulative = np.cumsum(counts)

    chosen: list[FaultSpec] = []
    seen = set()
    while len(chosen) < k:
        flat = int(rng.integers(0, total))
        bit = bits[int(rng.integers(0, len(bits)))]
        site = int(np.searchsorted(cumulative, flat, side="right"))
        layer_index, slot, _ = sites[site]
        element = flat - (int(cumulative[site - 1]) if site else 0)
        key = (layer_index, slot, element, bit)
        if key in seen:
            continue
        seen.add(key)
        chosen.append(FaultSpec(kind, layer_index, element, bit, slot))
    return FaultPlan(kind, tuple(chosen), master_seed, epoch, image)


def sample_weight_plan(model: ModelGraph, k: int, bits, master_seed: int,
                       epoch: int, include_bias: bool = False) -> FaultPlan:
    rng = derive_rng(master_seed, "weight-plan", epoch)
    return sample_faults(model, "weight", k, bits, rng, master_seed, epoch,
                         include_bias=include_bias)


def sample_neuron_plan(model: ModelGraph, k: int, bits, master_seed: int,
                       epoch: int, image: int) -> FaultPlan:
    rng = derive_rng(master_seed, "neuron-plan", epoch, image)
    return sample_faults(model, "neuron", k, bits, rng, master_seed, epoch, image)


def apply_weight_faults(model: ModelGraph, plan: FaultPlan) -> ModelGraph:
    """Model view with the plan's bits flipped; the original is never mutated.

    Only the targeted weight tensors are copied, so dropping the view reverts
    to bit-exact originals for free.
    """
    if plan.kind != "weight":
        raise ConfigError("apply_weight_faults requires a weight plan")
    flips: dict[tuple[int, str], list[FaultSpec]] = {}
    for spec in plan.faults:
        flips.setdefault((spec.layer_index, spec.slot), []).append(spec)
    updates: dict[int, dict[str, np.ndarray]] = {}
    for (layer_index, slot), specs in flips.items():
        param = getattr(model.layers[layer_index], slot, None)
        if param is None:
            raise ConfigError(f"layer {layer_index} has no {slot!r} parameter")
        param = param.copy()
        view = param.reshape(-1).view(np.uint32)
        for spec in specs:
            if not 0 <= spec.flat_index < param.size:
                raise ConfigError(f"fault index {spec.flat_index} outside {slot} tensor "
                                  f"of layer {layer_index}")
            view[spec.flat_index] ^= bit_mask(spec.bit)
        updates.setdefault(layer_index, {})[slot] = param
    return model.replace_params(updates)


class NeuronFaultHook:
    """Forward hook flipping the plan's bits in targeted layer outputs.

    Runs before any protection hook; each fault applies exactly once per
    inference.
    """

    def __init__(self, plan: FaultPlan):
        if plan.kind != "neuron":
            raise ConfigError("neuron hook requires a neuron plan")
        self.by_layer: dict[int, list[FaultSpec]] = {}
        for spec in plan.faults:
            self.by_layer.setdefault(spec.layer_index, []).append(spec)

    def __call__(self, layer_index: int, x: np.ndarray) -> np.ndarray:
        specs = self.by_layer.get(layer_index)
        if not specs:
            return x
        out = x.copy()
        view = out.reshape(-1).view(np.uint32)
        for spec in specs:
            if not 0 <= spec.flat_index < out.size:
                raise ConfigError(f"fault index {spec.flat_index} outside output of "
                                  f"layer {layer_index}")
            view[spec.flat_index] ^= bit_mask(spec.bit)
        return out


def weight_bit_histogram(model: ModelGraph, bits=tuple(range(32))) -> dict[int, float]:
    """Per-bit fraction of 1-states across all conv2d weight parameters."""
    weights = [layer.weight for layer in model.layers if layer.kind == "conv2d"]
    if not weights:
        raise ConfigError("model has no conv2d layer")
    flat = np.concatenate([w.reshape(-1) for w in weights])
    return bit_fractions(flat, bits)


# --------------------------------------------------------------------------
# plan (de)serialization for replay

def plan_to_json(plan: FaultPlan) -> dict:
    return {
        "kind": plan.kind,
        "master_seed": plan.master_seed,
        "epoch": plan.epoch,
        "image": plan.image,
        "faults": [{"layer": s.layer_index, "slot": s.slot, "index": s.flat_index,
                    "bit": s.bit} for s in plan.faults],
    }


def save_plan(plan: FaultPlan, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(plan_to_json(plan), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_plan(path: str) -> FaultPlan:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"fault plan: invalid JSON in {path}: {exc}") from exc
    try:
        kind = raw["kind"]
        faults = tuple(FaultSpec(kind, f["layer"], f["index"], f["bit"],
                                 f.get("slot", "weight" if kind == "weight" else "output"))
                       for f in raw["faults"])
        return FaultPlan(kind, faults, raw["master_seed"], raw["epoch"], raw.get("image"))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"fault plan: malformed field in {path}: {exc}") from exc

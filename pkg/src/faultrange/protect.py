"""Activation range supervision: bound extraction and restriction policies.

A protection point compares a layer output against a profiled interval
[t_low, t_up]. Out-of-bound means strictly outside (x > t_up or x < t_low);
values equal to a bound are in-bound, since extracted bounds are attained by
the profiling data. Every policy first records the out-of-bound event on the
unrestricted tensor, then rewrites it:

    none          record only, pass through unchanged
    ranger        clamp out-of-bound values to the nearest bound
    clipper       zero every out-of-bound value
    fmap_rescale  linearly map upper out-of-bound values of each feature map
                  into [t_low, t_up] using the map's own min/max
    backflip      reset by flip-magnitude reasoning: beyond t_up*2^64 -> 0,
                  beyond 2*t_up -> 2, beyond t_up -> t_up, below t_low -> t_low
    fmap_avg      replace out-of-bound positions of corrupted feature maps
                  with the elementwise mean of the healthy maps

NaN fails every comparison, so no policy touches it; the engine's non-finite
scan (which runs after protection) turns it into a detected error.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from faultrange.container import BoundsProfile
from faultrange.errors import ConfigError
from faultrange.graph import ModelGraph, forward

POLICIES = ("none", "ranger", "clipper", "fmap_rescale", "backflip", "fmap_avg")

TWO_POW_64 = np.float32(2.0) ** np.float32(64)


def oob_mask(x: np.ndarray, t_low, t_up) -> np.ndarray:
    return (x > t_up) | (x < t_low)


def apply_ranger(x: np.ndarray, t_low, t_up) -> np.ndarray:
    if not t_low <= t_up:
        raise ConfigError("ranger: t_low must not exceed t_up")
    return np.where(x > t_up, t_up, np.where(x < t_low, t_low, x)).astype(np.float32)


def apply_clipper(x: np.ndarray, t_low, t_up) -> np.ndarray:
    return np.where(oob_mask(x, t_low, t_up), np.float32(0.0), x).astype(np.float32)


def apply_backflip(x: np.ndarray, t_low, t_up) -> np.ndarray:
    # Case chain evaluated top-down; each boundary belongs to the lower branch.
    with np.errstate(over="ignore"):
        out = np.where(
            x > t_up * TWO_POW_64, np.float32(0.0),
            np.where(x > np.float32(2.0) * t_up, np.float32(2.0),
                     np.where(x > t_up, t_up,
                              np.where(x < t_low, t_low, x))))
    return out.astype(np.float32)


def apply_fmap_rescale(fmap: np.ndarray, t_low, t_up) -> np.ndarray:
    """Rescale one feature map; min/max are taken over the unrestricted map."""
    lo = np.min(fmap)
    hi = np.max(fmap)
    upper = fmap > t_up
    with np.errstate(over="ignore", invalid="ignore"):
        if hi == lo:
            # A constant corrupted map carries no relative information; reset to t_up.
            scaled = np.full_like(fmap, t_up)
        else:
            scaled = (fmap - lo) * (t_up - t_low) / (hi - lo) + t_low
            # FP32 rounding at the ends of the interval may overshoot t_up by one
            # ulp (and overflow to Inf for huge inputs); pin the upper branch into
            # range so a second pass finds nothing out of bound.
            scaled = np.minimum(scaled, t_up)
        out = np.where(upper, scaled, np.where(fmap < t_low, t_low, fmap))
    return out.astype(np.float32)


def apply_fmap_avg(x: np.ndarray, t_low, t_up) -> np.ndarray:
    """Replace out-of-bound positions using the mean of the healthy feature maps.

    A map is healthy when max <= t_up and min >= t_low (boundaries included).
    With no healthy map the replacement is the zero tensor. 1-D inputs are
    treated as a single feature map, so any out-of-bound element degrades the
    policy to zeroing.
    """
    maps = x[None, :] if x.ndim == 1 else x
    n = maps.shape[0]
    healthy = [c for c in range(n)
               if np.max(maps[c]) <= t_up and np.min(maps[c]) >= t_low]
    if healthy:
        acc = np.zeros(maps.shape[1:], np.float32)
        for c in healthy:
            acc += maps[c]
        avg = acc / np.float32(len(healthy))
    else:
        avg = np.zeros(maps.shape[1:], np.float32)
    out = maps.copy()
    for c in range(n):
        if c in healthy:
            continue
        bad = oob_mask(maps[c], t_low, t_up)
        out[c][bad] = avg[bad]
    return out.reshape(x.shape)


@dataclass
class OobEvent:
    protection_point: int
    count: int
    max_magnitude: float  # largest |x| among offending elements, 0.0 if none

    @property
    def any_oob(self) -> bool:
        return self.count >= 1


def protect(x: np.ndarray, t_low, t_up, policy: str,
            protection_point: int = 0) -> tuple[np.ndarray, OobEvent]:
    """Record the out-of-bound event on the raw tensor, then apply the policy."""
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r} (expected one of {', '.join(POLICIES)})")
    if not t_low <= t_up:
        raise ConfigError(f"protection point {protection_point}: t_low > t_up")
    bad = oob_mask(x, t_low, t_up)
    count = int(np.count_nonzero(bad))
    magnitude = float(np.max(np.abs(x[bad]))) if count else 0.0
    event = OobEvent(protection_point, count, magnitude)

    if policy == "none" or count == 0:
        return x, event
    with np.errstate(over="ignore", invalid="ignore"):
        if policy == "ranger":
            return apply_ranger(x, t_low, t_up), event
        if policy == "clipper":
            return apply_clipper(x, t_low, t_up), event
        if policy == "backflip":
            return apply_backflip(x, t_low, t_up), event
        if policy == "fmap_rescale":
            if x.ndim == 1:
                return apply_fmap_rescale(x, t_low, t_up), event
            out = np.empty_like(x)
            for c in range(x.shape[0]):
                out[c] = apply_fmap_rescale(x[c], t_low, t_up)
            return out, event
        return apply_fmap_avg(x, t_low, t_up), event


class ProtectionHook:
    """Forward hook applying one policy at every protection point of a model.

    Out-of-bound events accumulate on the hook instance; use one instance per
    inference (or call reset between runs).
    """

    def __init__(self, bounds: BoundsProfile, policy: str, points: Sequence[int]):
        missing = [p for p in points if p not in bounds.entries]
        if missing:
            raise ConfigError(f"bounds file lacks entries for protection points {missing}")
        if policy not in POLICIES:
            raise ConfigError(f"unknown policy {policy!r}")
        self.bounds = bounds
        self.policy = policy
        self.points = frozenset(points)
        self.events: list[OobEvent] = []

    def reset(self) -> None:
        self.events = []

    @property
    def any_oob(self) -> bool:
        return any(e.any_oob for e in self.events)

    def oob_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for e in self.events:
            if e.count:
                counts[e.protection_point] = counts.get(e.protection_point, 0) + e.count
        return counts

    def __call__(self, layer_index: int, x: np.ndarray) -> np.ndarray:
        if layer_index not in self.points:
            return x
        t_low, t_up = self.bounds.entries[layer_index]
        out, event = protect(x, t_low, t_up, self.policy, layer_index)
        self.events.append(event)
        return out


def extract_bounds(model: ModelGraph, dataset, indices) -> BoundsProfile:
    """Profile min/max activations at every protection point over a fault-free pass."""
    indices = list(indices)
    if not indices:
        raise ConfigError("bound extraction requires a non-empty profiling set")
    lows: dict[int, np.float32] = {}
    ups: dict[int, np.float32] = {}
    points = set(model.protection_points)

    def record(layer_index: int, x: np.ndarray) -> np.ndarray:
        if layer_index in points:
            lo = np.min(x)
            up = np.max(x)
            if layer_index not in lows or lo < lows[layer_index]:
                lows[layer_index] = np.float32(lo)
            if layer_index not in ups or up > ups[layer_index]:
                ups[layer_index] = np.float32(up)
        return x

    for i in indices:
        outcome = forward(model, dataset.images[i], hooks=(record,))
        if outcome.is_due:
            raise ConfigError(
                f"non-finite activation during bound extraction at image {i}; "
                "profiling requires a fault-free model")
    entries = {p: (lows[p], ups[p]) for p in sorted(points)}
    return BoundsProfile(entries, dataset.dataset_id, len(indices))

"""Fault campaign orchestration and report assembly.

A campaign runs the baseline-correct subset of a dataset through a model
under injected faults and one protection policy:

    weight faults: one fault plan per epoch, applied to every image
    neuron faults: a fresh plan per (epoch, image) pair

Every inference is classified as correct, sdc (prediction changed, no
exception) or due (Inf/NaN detected), crossed with whether any protection
point observed an out-of-bound value. Raw counts aggregate as a commutative
monoid over epochs, so the report is byte-identical for any worker count.
"""

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Optional, Sequence

import numpy as np

from faultrange.container import BoundsProfile, COUNT_FIELDS
from faultrange.errors import ConfigError
from faultrange.faults import (
    FaultPlan,
    NeuronFaultHook,
    apply_weight_faults,
    sample_neuron_plan,
    sample_weight_plan,
)
from faultrange.graph import ModelGraph, forward, predict
from faultrange.metrics import detector_metrics, ratio, wilson_interval
from faultrange.protect import ProtectionHook


@dataclass
class RunRecord:
    image_id: int
    true_label: int
    baseline_prediction: int
    outcome: str  # "correct" | "sdc" | "due"
    predicted: Optional[int]
    due_layer: Optional[int]
    due_kind: Optional[str]
    any_oob: bool
    oob_counts: dict[int, int]
    bits: tuple[int, ...]
    plan: Optional[FaultPlan]


def classify_outcome(outcome, baseline_prediction: int) -> str:
    """due beats everything; otherwise sdc iff the prediction changed."""
    if outcome.is_due:
        return "due"
    return "sdc" if predict(outcome.scores) != baseline_prediction else "correct"


@dataclass
class Tally:
    counts: dict = field(default_factory=lambda: {k: 0 for k in COUNT_FIELDS})
    per_bit: dict = field(default_factory=dict)  # bit -> {"runs","sdc","due"}
    confusions: dict = field(default_factory=dict)  # (true, pred) -> count
    records: list = field(default_factory=list)

    def add_run(self, record: RunRecord, class_names, keep_record: bool):
        c = self.counts
        c["run_count"] += 1
        c[f"{record.outcome}_count"] += 1
        side = "oob" if record.any_oob else "ib"
        c[f"{side}_count"] += 1
        c[f"{record.outcome}_{side}_count"] += 1
        if len(record.bits) == 1:
            row = self.per_bit.setdefault(record.bits[0], {"runs": 0, "sdc": 0, "due": 0})
            row["runs"] += 1
            if record.outcome in ("sdc", "due"):
                row[record.outcome] += 1
        if record.outcome == "sdc":
            key = (class_names[record.true_label], class_names[record.predicted])
            self.confusions[key] = self.confusions.get(key, 0) + 1
        if keep_record:
            self.records.append(record)

    def merge(self, other: "Tally"):
        for k, v in other.counts.items():
            self.counts[k] += v
        for bit, row in other.per_bit.items():
            mine = self.per_bit.setdefault(bit, {"runs": 0, "sdc": 0, "due": 0})
            for k in mine:
                mine[k] += row[k]
        for key, n in other.confusions.items():
            self.confusions[key] = self.confusions.get(key, 0) + n
        self.records.extend(other.records)


@dataclass
class CampaignContext:
    model: ModelGraph
    bounds: BoundsProfile
    policy: str
    images: np.ndarray        # subset images only
    labels: np.ndarray        # true labels for the subset
    image_ids: np.ndarray     # global dataset indices
    class_names: list[str]
    kind: str
    k: int
    bits: tuple[int, ...]
    master_seed: int
    include_bias: bool
    keep_records: bool
    replay_plan: Optional[FaultPlan] = None


def _run_one(ctx: CampaignContext, model: ModelGraph, position: int,
             hooks, plan: Optional[FaultPlan], protection: ProtectionHook) -> RunRecord:
    outcome = forward(model, ctx.images[position], hooks=hooks)
    label = int(ctx.labels[position])
    kind = classify_outcome(outcome, label)
    bits = tuple(sorted({s.bit for s in plan.faults})) if plan else ()
    return RunRecord(
        image_id=int(ctx.image_ids[position]),
        true_label=label,
        baseline_prediction=label,
        outcome=kind,
        predicted=None if outcome.is_due else predict(outcome.scores),
        due_layer=outcome.due.layer_index if outcome.is_due else None,
        due_kind=outcome.due.kind if outcome.is_due else None,
        any_oob=protection.any_oob,
        oob_counts=protection.oob_counts(),
        bits=bits,
        plan=plan if ctx.keep_records else None,
    )


def _epoch_tally(ctx: CampaignContext, epoch: int) -> Tally:
    tally = Tally()
    points = ctx.model.protection_points
    if ctx.kind == "weight":
        plan = None
        model = ctx.model
        if ctx.k > 0:
            plan = (ctx.replay_plan if ctx.replay_plan is not None
                    else sample_weight_plan(ctx.model, ctx.k, ctx.bits, ctx.master_seed,
                                            epoch, include_bias=ctx.include_bias))
            model = apply_weight_faults(ctx.model, plan)
        for position in range(len(ctx.images)):
            protection = ProtectionHook(ctx.bounds, ctx.policy, points)
            record = _run_one(ctx, model, position, (protection,), plan, protection)
            tally.add_run(record, ctx.class_names, ctx.keep_records)
    else:
        for position in range(len(ctx.images)):
            plan = None
            hooks: tuple = ()
            if ctx.k > 0:
                image_id = int(ctx.image_ids[position])
                plan = (ctx.replay_plan if ctx.replay_plan is not None
                        else sample_neuron_plan(ctx.model, ctx.k, ctx.bits,
                                                ctx.master_seed, epoch, image_id))
                hooks = (NeuronFaultHook(plan),)
            protection = ProtectionHook(ctx.bounds, ctx.policy, points)
            record = _run_one(ctx, ctx.model, position, hooks + (protection,),
                              plan, protection)
            tally.add_run(record, ctx.class_names, ctx.keep_records)
    return tally


_WORKER_CTX: Optional[CampaignContext] = None


def _set_worker_ctx(ctx: CampaignContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _epoch_tally_worker(epoch: int) -> Tally:
    return _epoch_tally(_WORKER_CTX, epoch)


def model_digest(model: ModelGraph) -> str:
    h = hashlib.sha256()
    for layer in model.layers:
        for slot in ("weight", "bias", "scale", "shift", "running_mean", "running_var"):
            value = getattr(layer, slot, None)
            if value is not None:
                h.update(np.ascontiguousarray(value, "<f4").tobytes())
    return h.hexdigest()[:16]


def _rate(numerator: int, denominator: int) -> Optional[dict]:
    value = ratio(numerator, denominator)
    if value is None:
        return None
    lo, hi = wilson_interval(numerator, denominator)
    return {"value": value, "lo": lo, "hi": hi}


def compute_derived(counts: dict, per_bit: Optional[dict]) -> dict:
    """Derived metrics, all exact functions of the raw counts."""
    runs = counts["run_count"]
    non_due = runs - counts["due_count"]
    det = detector_metrics(counts)
    derived = {
        "p_sdc": _rate(counts["sdc_count"], runs),
        "p_due": _rate(counts["due_count"], runs),
        "p_oob": _rate(counts["oob_count"], runs),
        "p_sdc_given_oob": _rate(counts["sdc_oob_count"],
                                 counts["sdc_oob_count"] + counts["correct_oob_count"]),
        "p_sdc_given_ib": _rate(counts["sdc_ib_count"],
                                counts["sdc_ib_count"] + counts["correct_ib_count"]),
        "p_due_given_oob": _rate(counts["due_oob_count"], counts["oob_count"]),
        "tp": det.tp,
        "fp": det.fp,
        "fn": det.fn,
        "precision": _rate(counts["sdc_oob_count"],
                           counts["sdc_oob_count"] + counts["correct_oob_count"])
                     if det.precision is not None else None,
        "recall": _rate(counts["sdc_oob_count"],
                        counts["sdc_oob_count"] + counts["sdc_ib_count"])
                  if det.recall is not None else None,
        "p_msb_given_sdc": None,
        "p_msb_given_due": None,
    }
    if per_bit is not None:
        msb = per_bit.get(1, {"sdc": 0, "due": 0})
        derived["p_msb_given_sdc"] = _rate(msb["sdc"], counts["sdc_count"])
        derived["p_msb_given_due"] = _rate(msb["due"], counts["due_count"])
    return derived


def run_campaign(model: ModelGraph, bounds: BoundsProfile, policy: str,
                 dataset, subset_indices: Sequence[int], kind: str, k: int,
                 bits: Sequence[int], epochs: int, master_seed: int,
                 workers: int = 1, include_bias: bool = False,
                 replay_plan: Optional[FaultPlan] = None,
                 keep_records: bool = False):
    """Run a full campaign and assemble its report.

    Returns the report dict, plus the per-run records when keep_records is
    set (records are meant for tests and debugging, not persistence).
    """
    subset = [int(i) for i in subset_indices]
    if not subset:
        raise ConfigError("campaign subset is empty (no baseline-correct images?)")
    if kind not in ("weight", "neuron"):
        raise ConfigError(f"unknown fault kind {kind!r}")
    if k < 0:
        raise ConfigError("fault count k must be >= 0")
    if epochs < 1:
        raise ConfigError("campaign needs at least one epoch")
    bits = tuple(sorted(set(int(b) for b in bits)))
    if k > 0 and (not bits or bits[0] < 0 or bits[-1] > 31):
        raise ConfigError(f"bit positions must lie in [0, 31], got {list(bits)}")
    if model.class_names is None:
        raise ConfigError("campaign model must carry class names")

    ctx = CampaignContext(
        model=model, bounds=bounds, policy=policy,
        images=dataset.images[subset], labels=dataset.labels[subset],
        image_ids=np.asarray(subset), class_names=model.class_names,
        kind=kind, k=k, bits=bits, master_seed=master_seed,
        include_bias=include_bias, keep_records=keep_records,
        replay_plan=replay_plan,
    )

    total = Tally()
    if workers <= 1:
        for epoch in range(epochs):
            total.merge(_epoch_tally(ctx, epoch))
    else:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork"),
                                 initializer=_set_worker_ctx, initargs=(ctx,)) as pool:
            for tally in pool.map(_epoch_tally_worker, range(epochs)):
                total.merge(tally)

    assert total.counts["run_count"] == sum(
        total.counts[f"{o}_{s}_count"] for o in ("sdc", "correct", "due")
        for s in ("oob", "ib"))

    single_fault = k == 1
    per_bit = None
    if single_fault:
        per_bit = {str(b): total.per_bit.get(b, {"runs": 0, "sdc": 0, "due": 0})
                   for b in bits}
    report = {
        "config": {
            "policy": policy,
            "kind": kind,
            "k": k,
            "bits": list(bits),
            "epochs": epochs,
            "master_seed": master_seed,
            "include_bias": include_bias,
            "dataset_id": dataset.dataset_id,
            "subset_size": len(subset),
            "model_digest": model_digest(model),
            "replayed": replay_plan is not None,
        },
        "counts": dict(total.counts),
        "per_bit": per_bit,
        "confusions": [
            {"true": t, "pred": p, "count": n}
            for (t, p), n in sorted(total.confusions.items())
        ],
        "derived": compute_derived(total.counts, total.per_bit if single_fault else None),
    }
    if keep_records:
        return report, total.records
    return report


def bit_attribution(report: dict) -> dict:
    """Per-bit fault attribution; only defined for single-fault campaigns."""
    if report["config"]["k"] != 1:
        raise ConfigError("bit attribution requires a campaign with exactly k=1")
    per_bit = report["per_bit"]
    sdc_total = report["counts"]["sdc_count"]
    due_total = report["counts"]["due_count"]
    return {
        int(bit): {
            "runs": row["runs"],
            "p_bit_given_sdc": ratio(row["sdc"], sdc_total),
            "p_bit_given_due": ratio(row["due"], due_total),
        }
        for bit, row in sorted(per_bit.items(), key=lambda kv: int(kv[0]))
    }


def report_risk(report: dict, p_failure: float, severity: float) -> float:
    """Instantiate the risk model from one campaign report.

    p_detection is the detector recall (perfect when no SDC occurred, since
    nothing was missed); p_mitigation is one minus the residual SDC rate.
    """
    from faultrange.metrics import risk

    recall_entry = report["derived"]["recall"]
    p_detection = recall_entry["value"] if recall_entry is not None else 1.0
    p_sdc = report["derived"]["p_sdc"]["value"] if report["derived"]["p_sdc"] else 0.0
    return risk([{
        "p_failure": p_failure,
        "p_detection": p_detection,
        "p_mitigation": 1.0 - p_sdc,
        "severity": severity,
    }])

"""Campaign statistics: detection rates, severity accounting, and risk.

The detector event space excludes runs that ended in a detected uncorrectable
error (exceptions are filtered before out-of-bound classification):

    tp = p(sdc | oob) * p(oob)      fp = p(correct | oob) * p(oob)
    fn = p(sdc | ib)  * p(ib)
    precision = tp / (tp + fp)      recall = tp / (tp + fn)

All probabilities are exact count ratios over the non-DUE runs. Ratios with
an empty denominator are reported as absent (None), never as zero.

Risk combines detection and mitigation shortfalls per fault type:

    loss(i) = p_failure(i) * [(1 - p_detection(i)) + (1 - p_mitigation(i))]
    risk    = sum_i loss(i) * severity(i)
"""

from dataclasses import dataclass
from math import sqrt
from typing import Optional, Sequence

from faultrange.errors import ConfigError

WILSON_Z = 1.959963984540054  # two-sided 95%


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    """Wilson score interval for a binomial rate."""
    if trials == 0:
        return 0.0, 1.0
    z2 = WILSON_Z * WILSON_Z
    p = successes / trials
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    margin = (WILSON_Z / denom) * sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    return max(0.0, center - margin), min(1.0, center + margin)


def ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


@dataclass
class DetectorMetrics:
    tp: Optional[float]
    fp: Optional[float]
    fn: Optional[float]
    precision: Optional[float]
    recall: Optional[float]


def detector_metrics(counts: dict) -> DetectorMetrics:
    """Detection rates from raw campaign counts (non-DUE event space).

    precision = tp/(tp+fp) and recall = tp/(tp+fn) reduce to exact count
    ratios (the shared denominator cancels), so they are computed that way.
    """
    non_due = counts["run_count"] - counts["due_count"]
    tp = ratio(counts["sdc_oob_count"], non_due)
    fp = ratio(counts["correct_oob_count"], non_due)
    fn = ratio(counts["sdc_ib_count"], non_due)
    precision = recall = None
    if tp is not None:
        precision = ratio(counts["sdc_oob_count"],
                          counts["sdc_oob_count"] + counts["correct_oob_count"])
        recall = ratio(counts["sdc_oob_count"],
                       counts["sdc_oob_count"] + counts["sdc_ib_count"])
    return DetectorMetrics(tp, fp, fn, precision, recall)


@dataclass
class SeverityResult:
    critical_count: int
    sdc_count: int
    critical_fraction: Optional[float]  # None when no SDC occurred
    pair_matrix: list[dict]  # one entry per confusion pair, critical flagged


def is_critical(true_class: str, predicted_class: str,
                class_to_cluster: dict[str, str], ranks: dict[str, int]) -> bool:
    """A confusion is critical when the prediction falls in a strictly less
    vulnerable cluster than the true class."""
    for name in (true_class, predicted_class):
        if name not in class_to_cluster:
            raise ConfigError(f"class {name!r} is not mapped to a cluster")
    return ranks[class_to_cluster[predicted_class]] < ranks[class_to_cluster[true_class]]


def severity_analysis(confusions: Sequence[dict], class_to_cluster: dict[str, str],
                      ranks: dict[str, int]) -> SeverityResult:
    """Classify every SDC confusion pair as critical or not and total them up."""
    pairs = []
    critical = 0
    total = 0
    for entry in confusions:
        crit = is_critical(entry["true"], entry["pred"], class_to_cluster, ranks)
        pairs.append({**entry, "critical": crit})
        total += entry["count"]
        if crit:
            critical += entry["count"]
    return SeverityResult(critical, total, ratio(critical, total), pairs)


def risk(entries: Sequence[dict]) -> float:
    """Total risk over fault types; each entry holds p_failure, p_detection,
    p_mitigation, and severity."""
    total = 0.0
    for i, entry in enumerate(entries):
        for key in ("p_failure", "p_detection", "p_mitigation"):
            value = entry[key]
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"risk entry {i}: {key} = {value} outside [0, 1]")
        loss = entry["p_failure"] * ((1.0 - entry["p_detection"]) +
                                     (1.0 - entry["p_mitigation"]))
        total += loss * entry["severity"]
    return total

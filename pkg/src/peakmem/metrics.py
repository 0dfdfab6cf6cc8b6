"""Evaluation metrics for peak predictions against measured runs.

Two-round validation scheme: round 1 runs the job unrestricted and
records the actual peak and OOM outcome; round 2 re-runs it with the
device capped at the predicted peak. A prediction is round-1 correct
when its OOM verdict matches reality, and round-2 correct when the
capped re-run also survives (or the job was correctly rejected
outright).

All computations here are pure; actual peaks come from external
measurement files, never from this package.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from enum import Enum

from .errors import EmptyInput, ZeroSize


class Quadrant(Enum):
    OPTIMAL = "optimal"
    UNDERESTIMATION = "underestimation"
    OVERESTIMATION = "overestimation"
    WORST = "worst"


# threshold on both quadrant axes: 20% failure probability / median error
QUADRANT_THRESHOLD = 0.2

# performance-score weights: failure probability dominates
W_PROBABILITY = 0.7
W_ERROR = 0.3


@dataclass(frozen=True)
class ValidationRecord:
    """One externally measured run of a configuration."""

    config_id: str
    round_no: int               # 1 = unrestricted, 2 = capped at prediction
    device: int
    estimator: str
    actual_peak: int            # bytes
    actual_oom: bool

    def __post_init__(self):
        if self.round_no not in (1, 2):
            raise ValueError(f"round must be 1 or 2, got {self.round_no}")
        if self.actual_peak < 0:
            raise ValueError("actual_peak must be >= 0")

    @classmethod
    def from_json_dict(cls, raw: dict) -> "ValidationRecord":
        return cls(config_id=str(raw["config_id"]),
                   round_no=int(raw["round"]),
                   device=int(raw.get("device", 0)),
                   estimator=str(raw.get("estimator", "")),
                   actual_peak=int(raw["actual_peak"]),
                   actual_oom=bool(raw["actual_oom"]))

    def to_json_dict(self) -> dict:
        return {"config_id": self.config_id, "round": self.round_no,
                "device": self.device, "estimator": self.estimator,
                "actual_peak": self.actual_peak,
                "actual_oom": self.actual_oom}


@dataclass(frozen=True)
class MetricSet:
    """Aggregate quality of one estimator over a batch of runs."""

    failure_probability: float
    median_error: float
    performance_score: float
    quadrant: Quadrant
    run_count: int
    avg_memory_saved: float | None = None

    def to_json_dict(self) -> dict:
        return {"failure_probability": self.failure_probability,
                "median_error": self.median_error,
                "performance_score": self.performance_score,
                "quadrant": self.quadrant.value,
                "run_count": self.run_count,
                "avg_memory_saved": self.avg_memory_saved}


def predict_oom(predicted_peak: int, capacity: int) -> bool:
    """A job is predicted to OOM when its peak strictly exceeds capacity."""
    if predicted_peak <= 0 or capacity <= 0:
        raise ValueError("predicted_peak and capacity must be positive")
    return predicted_peak > capacity


def correctness_round1(predicted: bool, actual: bool) -> bool:
    """Round-1 correctness: the OOM verdict matched the unrestricted run."""
    return predicted == actual


def correctness_round2(c1: bool, oom1: bool, oom2: bool) -> bool:
    """Round-2 correctness.

    True when round 1 was correct and either the capped re-run survived
    (not oom2) or the job was correctly rejected outright (oom1, so no
    re-run happens). An incorrect round 1 can never be round-2 correct.
    """
    return (c1 and not oom2) or (c1 and oom1)


def relative_error(predicted: int, actual: int) -> float:
    """|predicted - actual| / actual, against the round-1 measurement."""
    if actual <= 0:
        raise ZeroSize(f"actual peak must be positive, got {actual}")
    return abs(predicted - actual) / actual


def aggregate(records: list[tuple[bool, float]]) -> MetricSet:
    """Fold per-run (correctness, error) pairs into one MetricSet.

    failure_probability counts incorrect runs; median_error takes the
    mean of the central pair for even run counts; the performance score
    is the weighted sum of both (lower is better throughout).
    """
    if not records:
        raise EmptyInput("no records to aggregate")
    n = len(records)
    correct = sum(1 for c, _ in records if c)
    p = (n - correct) / n
    med = statistics.median(err for _, err in records)
    score = W_PROBABILITY * p + W_ERROR * med
    return MetricSet(failure_probability=p, median_error=med,
                     performance_score=score, quadrant=quadrant(p, med),
                     run_count=n)


def quadrant(p: float, median_error: float) -> Quadrant:
    """Place an estimator on the failure-probability / error plane.

    High failure probability with low error means the estimator tends
    to underestimate (its plausible-looking numbers let jobs OOM); low
    probability with high error means it survives by overestimating.
    """
    low_p = p < QUADRANT_THRESHOLD
    low_e = median_error < QUADRANT_THRESHOLD
    if low_p and low_e:
        return Quadrant.OPTIMAL
    if not low_p and low_e:
        return Quadrant.UNDERESTIMATION
    if low_p and not low_e:
        return Quadrant.OVERESTIMATION
    return Quadrant.WORST


def memory_saved(capacity: int, predicted_peak: int, c1: bool, oom1: bool,
                 oom2: bool) -> int:
    """Signed bytes saved by trusting the prediction.

    Correctly rejecting an impossible job saves the whole device, so
    that case is checked first: when oom1 holds there is no capped
    re-run and oom2 is vacuous. A correct prediction whose capped
    re-run survives saves the headroom; anything else wastes the
    device and is penalized in full.
    """
    if c1 and oom1:
        return capacity
    if c1 and not oom2:
        return capacity - predicted_peak
    return -capacity


def avg_memory_saved(savings: list[int]) -> float:
    """Arithmetic mean of per-run savings."""
    if not savings:
        raise EmptyInput("no savings to average")
    return statistics.fmean(savings)


# --- batch evaluation driver -------------------------------------------------


@dataclass(frozen=True)
class EvalJob:
    """One prediction paired with its measurements."""

    config_id: str
    predicted_peak: int
    capacity: int
    oom_predicted: bool
    round1: ValidationRecord
    round2: ValidationRecord | None = None


def evaluate(jobs: list[EvalJob]) -> dict:
    """Score a batch of predictions; returns a JSON-ready document.

    Relative error needs a positive round-1 peak, and memory savings
    need a finite capacity; jobs missing either still count toward the
    failure probability but contribute nothing to that statistic.
    """
    if not jobs:
        raise EmptyInput("no jobs to evaluate")
    rows = []
    correctness: list[bool] = []
    errors: list[float] = []
    savings: list[int] = []
    for job in jobs:
        oom1 = job.round1.actual_oom
        oom2 = job.round2.actual_oom if job.round2 is not None else False
        c1 = correctness_round1(job.oom_predicted, oom1)
        c2 = correctness_round2(c1, oom1, oom2)
        err = (relative_error(job.predicted_peak, job.round1.actual_peak)
               if job.round1.actual_peak > 0 else None)
        saved = (memory_saved(job.capacity, job.predicted_peak, c1, oom1,
                              oom2)
                 if job.capacity > 0 else None)
        correctness.append(c1)
        if err is not None:
            errors.append(err)
        if saved is not None:
            savings.append(saved)
        rows.append({"config_id": job.config_id,
                     "predicted_peak": job.predicted_peak,
                     "actual_peak": job.round1.actual_peak,
                     "oom_predicted": job.oom_predicted,
                     "actual_oom": oom1,
                     "correctness_r1": c1,
                     "correctness_r2": c2,
                     "relative_error": err,
                     "memory_saved": saved})
    n = len(jobs)
    p = (n - sum(correctness)) / n
    med = statistics.median(errors) if errors else 0.0
    metric_set = MetricSet(
        failure_probability=p, median_error=med,
        performance_score=W_PROBABILITY * p + W_ERROR * med,
        quadrant=quadrant(p, med), run_count=n,
        avg_memory_saved=avg_memory_saved(savings) if savings else None)
    return {"jobs": rows, "aggregate": metric_set.to_json_dict()}

"""The end-to-end estimator: trace bundle in, peak-memory report out."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .allocator import AllocatorConfig, SimulationResult, replay
from .base import ParamMixin
from .metrics import predict_oom
from .orchestration import (
    RequestKind,
    RequestSequence,
    analyze,
    build_sequence,
)
from .trace import TraceBundle

MIB = 1 << 20


@dataclass(frozen=True)
class EstimateReport:
    """Everything a scheduler needs to place (or reject) the job."""

    predicted_peak: int
    reserved_peak: int
    allocated_peak: int
    initial_memory: int
    device_capacity: int        # 0 = unbounded
    oom_predicted: bool
    phase_breakdown: dict[str, int] = field(default_factory=dict)
    sequence_length: int = 0
    config_digest: str = ""
    iterations: int = 2
    oom_seq_no: int | None = None

    def __post_init__(self):
        # reserved segments are the consumption metric; allocations
        # always live inside reserved memory
        if self.predicted_peak != self.reserved_peak:
            raise ValueError("predicted_peak must equal reserved_peak")
        if self.allocated_peak > self.reserved_peak:
            raise ValueError("allocated_peak cannot exceed reserved_peak")

    def to_json_dict(self) -> dict:
        return {
            "predicted_peak": self.predicted_peak,
            "reserved_peak": self.reserved_peak,
            "allocated_peak": self.allocated_peak,
            "initial_memory": self.initial_memory,
            "device_capacity": self.device_capacity,
            "oom_predicted": self.oom_predicted,
            "phase_breakdown": dict(sorted(self.phase_breakdown.items())),
            "sequence_length": self.sequence_length,
            "config_digest": self.config_digest,
            "iterations": self.iterations,
            "oom_seq_no": self.oom_seq_no,
        }

    def canonical_json(self) -> str:
        """Stable byte-for-byte serialization (sorted keys, 2-space
        indent, trailing newline)."""
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json_dict(cls, raw: dict) -> "EstimateReport":
        return cls(
            predicted_peak=int(raw["predicted_peak"]),
            reserved_peak=int(raw["reserved_peak"]),
            allocated_peak=int(raw["allocated_peak"]),
            initial_memory=int(raw["initial_memory"]),
            device_capacity=int(raw["device_capacity"]),
            oom_predicted=bool(raw["oom_predicted"]),
            phase_breakdown={str(k): int(v)
                             for k, v in raw.get("phase_breakdown", {}).items()},
            sequence_length=int(raw.get("sequence_length", 0)),
            config_digest=str(raw.get("config_digest", "")),
            iterations=int(raw.get("iterations", 2)),
            oom_seq_no=raw.get("oom_seq_no"),
        )


class PeakMemoryEstimator(ParamMixin):
    """Predict a training job's peak GPU memory from a CPU-side trace.

    Parameters
    ----------
    iterations : int, default 2
        Training iterations to replay; two reaches the steady state
        (first-iteration one-off allocations plus a repeating cycle).
    device_capacity : int or None
        Device size in bytes. None defers to the trace's sidecar; 0
        means unbounded (pure peak measurement, no OOM verdict).
    initial_memory : int or None
        Bytes already in use on the device. None defers to the sidecar.
    max_split_size : int or None
        Allocator split threshold in bytes (None = always splittable),
        mirroring the runtime knob of the same name.
    validate : bool, default False
        Re-check allocator invariants after every replayed request.
    """

    def __init__(self, iterations: int = 2,
                 device_capacity: int | None = None,
                 initial_memory: int | None = None,
                 max_split_size: int | None = None,
                 validate: bool = False):
        self.iterations = iterations
        self.device_capacity = device_capacity
        self.initial_memory = initial_memory
        self.max_split_size = max_split_size
        self.validate = validate

    def _check_params(self) -> AllocatorConfig:
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, "
                             f"got {self.iterations!r}")
        for name in ("device_capacity", "initial_memory", "max_split_size"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 0):
                raise ValueError(f"{name} must be None or a non-negative "
                                 f"integer, got {value!r}")
        # capacity is applied per estimate (it depends on the sidecar);
        # this config carries only the splitting behaviour
        return AllocatorConfig(max_split_size=self.max_split_size or None)

    def fit(self, X=None, y=None):
        """Validate parameters; the simulator itself needs no training."""
        del X, y
        self.config_ = self._check_params()
        return self

    def estimate_with_details(
            self, bundle: TraceBundle,
    ) -> tuple[EstimateReport, RequestSequence, SimulationResult]:
        """Full pipeline, returning the report plus its inputs."""
        base_cfg = self._check_params()
        sidecar = bundle.metadata
        capacity = (self.device_capacity if self.device_capacity is not None
                    else (sidecar.device_capacity if sidecar else 0))
        initial = (self.initial_memory if self.initial_memory is not None
                   else (sidecar.initial_memory if sidecar else 0))

        sequence = build_sequence(analyze(bundle), iterations=self.iterations)

        # the replay budget is what is left of the device
        budget = max(capacity - initial, 0) if capacity > 0 else None
        cfg = AllocatorConfig(max_split_size=base_cfg.max_split_size,
                              device_capacity=budget)
        result = replay(sequence.replay_records(), cfg,
                        validate=self.validate)

        peak = result.peak_reserved
        oom = result.oom_seq_no is not None
        if not oom and capacity > 0 and peak > 0:
            oom = predict_oom(initial + peak, capacity)

        breakdown: dict[str, int] = {}
        for req in sequence.requests:
            if req.kind is RequestKind.ALLOC:
                role = sequence.phase_tags[req.block_id].value
                breakdown[role] = breakdown.get(role, 0) + req.size

        report = EstimateReport(
            predicted_peak=peak,
            reserved_peak=result.peak_reserved,
            allocated_peak=result.peak_allocated,
            initial_memory=initial,
            device_capacity=capacity,
            oom_predicted=oom,
            phase_breakdown=breakdown,
            sequence_length=len(sequence.requests),
            config_digest=self._digest(bundle, capacity, initial),
            iterations=self.iterations,
            oom_seq_no=result.oom_seq_no,
        )
        return report, sequence, result

    def estimate(self, bundle: TraceBundle) -> EstimateReport:
        report, _, _ = self.estimate_with_details(bundle)
        return report

    def predict(self, bundle: TraceBundle) -> int:
        """Predicted peak in bytes (reserved-segment metric)."""
        return self.estimate(bundle).predicted_peak

    def _digest(self, bundle: TraceBundle, capacity: int,
                initial: int) -> str:
        sidecar = bundle.metadata
        payload = {
            "trace": bundle.to_json_dict(),
            "sidecar": sidecar.to_json_dict() if sidecar else None,
            "iterations": self.iterations,
            "device_capacity": capacity,
            "initial_memory": initial,
            "max_split_size": self.max_split_size,
        }
        blob = json.dumps(payload, sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

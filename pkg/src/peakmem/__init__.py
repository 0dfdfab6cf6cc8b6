"""Predict a training job's peak GPU memory from a CPU profiler trace.

The pipeline: parse a chrome-trace profile plus its sidecar metadata,
reconstruct layers / operators / markers / memory blocks, link them,
orchestrate a device-faithful allocation request sequence, and replay
it through a caching-allocator simulator to get the peak reserved
bytes and an out-of-memory verdict.

Typical use::

    from peakmem import PeakMemoryEstimator, load_sidecar, parse_trace

    bundle = parse_trace("trace.json", sidecar=load_sidecar("sidecar.json"))
    report = PeakMemoryEstimator(device_capacity=8 << 30).estimate(bundle)
    print(report.predicted_peak, report.oom_predicted)

The ``peakmem`` command line exposes the same pipeline plus replay,
trace analysis, prediction scoring, and a simulator self-test.
"""

from peakmem.allocator import (
    AllocatorConfig,
    SimulationResult,
    replay,
    round_request,
    segment_size_for,
)
from peakmem.analysis import (
    AnnotationMarker,
    BlockRole,
    LayerNode,
    MarkerKind,
    MemoryBlock,
    OperatorNode,
    build_layer_tree,
    build_operator_roots,
    extract_markers,
    group_memory_events,
)
from peakmem.errors import (
    DoubleFree,
    EmptyInput,
    EmptyTrace,
    MalformedSequence,
    MalformedTrace,
    MissingBatchBytes,
    NoGradientBlocks,
    NoIterationMarkers,
    NoIterations,
    OutOfMemory,
    PeakMemError,
    ZeroSize,
)
from peakmem.estimator import EstimateReport, PeakMemoryEstimator
from peakmem.linking import LayerMemoryProfile, link
from peakmem.metrics import (
    EvalJob,
    MetricSet,
    Quadrant,
    ValidationRecord,
    aggregate,
    avg_memory_saved,
    correctness_round1,
    correctness_round2,
    evaluate,
    memory_saved,
    predict_oom,
    quadrant,
    relative_error,
)
from peakmem.orchestration import (
    AnalyzedTrace,
    MemoryRequest,
    RequestKind,
    RequestSequence,
    analyze,
    build_sequence,
)
from peakmem.reference import ReferenceAllocator, replay_reference
from peakmem.trace import (
    EventCategory,
    SidecarConfig,
    TraceBundle,
    TraceEvent,
    load_sidecar,
    parse_trace,
)
from peakmem.units import format_size, parse_size

__version__ = "0.1.0"

__all__ = [
    "AllocatorConfig",
    "AnalyzedTrace",
    "AnnotationMarker",
    "BlockRole",
    "DoubleFree",
    "EmptyInput",
    "EmptyTrace",
    "EstimateReport",
    "EvalJob",
    "EventCategory",
    "LayerMemoryProfile",
    "LayerNode",
    "MalformedSequence",
    "MalformedTrace",
    "MarkerKind",
    "MemoryBlock",
    "MemoryRequest",
    "MetricSet",
    "MissingBatchBytes",
    "NoGradientBlocks",
    "NoIterationMarkers",
    "NoIterations",
    "OperatorNode",
    "OutOfMemory",
    "PeakMemError",
    "PeakMemoryEstimator",
    "Quadrant",
    "ReferenceAllocator",
    "RequestKind",
    "RequestSequence",
    "SidecarConfig",
    "SimulationResult",
    "TraceBundle",
    "TraceEvent",
    "ValidationRecord",
    "ZeroSize",
    "aggregate",
    "analyze",
    "avg_memory_saved",
    "build_layer_tree",
    "build_operator_roots",
    "build_sequence",
    "correctness_round1",
    "correctness_round2",
    "evaluate",
    "extract_markers",
    "format_size",
    "group_memory_events",
    "link",
    "load_sidecar",
    "memory_saved",
    "parse_size",
    "parse_trace",
    "predict_oom",
    "quadrant",
    "relative_error",
    "replay",
    "replay_reference",
    "round_request",
    "segment_size_for",
    "__version__",
]

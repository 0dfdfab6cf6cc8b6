"""Command-line front end.

Subcommands:
  estimate   trace + sidecar -> peak-memory report (JSON)
  replay     raw request sequence -> simulation result
  analyze    trace -> structure dump (layers, operators, markers, blocks)
  evaluate   reports + measured actuals -> metric set
  selftest   random-sequence equivalence run of both allocator models

Exit codes: 0 success; 1 predicted OOM under --fail-on-oom (or a failed
selftest); 2 bad input or usage.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import random
import sys
from pathlib import Path

from .allocator import AllocatorConfig, load_sequence_file, replay
from .analysis import BlockRole, LayerNode, MarkerKind
from .errors import PeakMemError
from .estimator import PeakMemoryEstimator
from .linking import LayerMemoryProfile
from .metrics import EvalJob, ValidationRecord, evaluate
from .orchestration import analyze as analyze_bundle
from .reference import replay_reference
from .sequencegen import random_config, random_sequence
from .trace import load_sidecar, parse_trace
from .units import MIB, format_size, parse_size

logger = logging.getLogger(__name__)


def _size(text: str) -> int:
    try:
        return parse_size(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _write_json(document: dict, path: str | None, stamp: bool) -> str:
    if stamp:
        document = dict(document)
        document["generated_at"] = (
            datetime.datetime.now(datetime.timezone.utc).isoformat())
    text = json.dumps(document, sort_keys=True, indent=2) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peakmem",
        description="Predict a training job's peak GPU memory from a "
                    "CPU-side profiler trace.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="predict peak memory for a trace")
    est.add_argument("--trace", required=True, help="profiler trace JSON")
    est.add_argument("--sidecar", required=True,
                     help="sidecar JSON (param sizes, batch bytes, device)")
    est.add_argument("--iterations", type=_positive_int, default=2,
                     help="training iterations to replay (default 2)")
    est.add_argument("--device-capacity", type=_size, default=None,
                     metavar="SIZE",
                     help="device size, e.g. 8GiB (overrides sidecar; "
                          "0 = unbounded)")
    est.add_argument("--initial-memory", type=_size, default=None,
                     metavar="SIZE",
                     help="bytes already in use (overrides sidecar)")
    est.add_argument("--max-split-size-mb", type=_positive_int, default=None,
                     metavar="N", help="allocator split threshold in MiB")
    est.add_argument("--strict", action="store_true",
                     help="reject traces with unknown or malformed records")
    est.add_argument("--fail-on-oom", action="store_true",
                     help="exit 1 when the verdict is OOM")
    est.add_argument("--output", help="write the report JSON here")
    est.add_argument("--dump-sequence", metavar="PATH",
                     help="also write the orchestrated request sequence")
    est.add_argument("--emit-timeline", action="store_true",
                     help="include the per-request timeline in the report")
    est.add_argument("--stamp", action="store_true",
                     help="add a generation timestamp to the report")

    rep = sub.add_parser("replay", help="replay a raw request sequence")
    rep.add_argument("--sequence", required=True, help="request-sequence JSON")
    rep.add_argument("--device-capacity", type=_size, default=None,
                     metavar="SIZE", help="capacity (0 = unbounded)")
    rep.add_argument("--max-split-size-mb", type=_positive_int, default=None,
                     metavar="N", help="allocator split threshold in MiB")
    rep.add_argument("--emit-timeline", action="store_true",
                     help="include the per-request timeline")
    rep.add_argument("--output", help="write the result JSON here")
    rep.add_argument("--stamp", action="store_true",
                     help="add a generation timestamp")

    ana = sub.add_parser("analyze", help="dump the trace's structural views")
    ana.add_argument("--trace", required=True, help="profiler trace JSON")
    ana.add_argument("--sidecar", help="optional sidecar JSON")
    ana.add_argument("--strict", action="store_true",
                     help="reject traces with unknown or malformed records")
    ana.add_argument("--dump-structure", metavar="PATH",
                     help="write the structure dump here (default stdout)")

    ev = sub.add_parser("evaluate",
                        help="score report files against measured runs")
    ev.add_argument("--reports", required=True,
                    help="directory of report JSON files")
    ev.add_argument("--actuals", required=True,
                    help="measured validation records (JSON list)")
    ev.add_argument("--out", help="write the metrics JSON here")

    st = sub.add_parser("selftest",
                        help="equivalence-check the two allocator models "
                             "on random sequences")
    st.add_argument("--runs", type=_positive_int, default=200,
                    help="random sequences to replay (default 200)")
    st.add_argument("--seed", type=int, default=0,
                    help="RNG seed (default 0)")
    return parser


# --- estimate ----------------------------------------------------------------


def _cmd_estimate(args) -> int:
    sidecar = load_sidecar(args.sidecar)
    bundle = parse_trace(args.trace, sidecar=sidecar, strict=args.strict)
    max_split = (args.max_split_size_mb * MIB
                 if args.max_split_size_mb is not None else None)
    estimator = PeakMemoryEstimator(
        iterations=args.iterations,
        device_capacity=args.device_capacity,
        initial_memory=args.initial_memory,
        max_split_size=max_split)
    report, sequence, result = estimator.estimate_with_details(bundle)

    document = report.to_json_dict()
    if args.emit_timeline:
        document["timeline"] = [list(t) for t in result.timeline]
    text = _write_json(document, args.output, args.stamp)

    if args.dump_sequence:
        _write_json(sequence.to_json_dict(), args.dump_sequence, stamp=False)

    if args.output:
        verdict = "OOM" if report.oom_predicted else "fits"
        capacity = (format_size(report.device_capacity)
                    if report.device_capacity else "unbounded")
        print(f"predicted peak: {format_size(report.predicted_peak)} "
              f"(allocated {format_size(report.allocated_peak)})")
        print(f"verdict: {verdict} "
              f"(capacity {capacity}, "
              f"initial {format_size(report.initial_memory)})")
        print(f"report: {args.output}")
    else:
        sys.stdout.write(text)

    if args.fail_on_oom and report.oom_predicted:
        return 1
    return 0


# --- replay ------------------------------------------------------------------


def _cmd_replay(args) -> int:
    requests = load_sequence_file(args.sequence)
    capacity = args.device_capacity if args.device_capacity else None
    max_split = (args.max_split_size_mb * MIB
                 if args.max_split_size_mb is not None else None)
    cfg = AllocatorConfig(max_split_size=max_split, device_capacity=capacity)
    result = replay(requests, cfg)
    document = result.to_json_dict()
    if not args.emit_timeline:
        del document["timeline"]
    text = _write_json(document, args.output, args.stamp)
    if args.output:
        print(f"peak reserved: {format_size(result.peak_reserved)}; "
              f"result: {args.output}")
    else:
        sys.stdout.write(text)
    return 0


# --- analyze -----------------------------------------------------------------


def _layer_dict(node: LayerNode,
                profiles: dict[LayerNode, LayerMemoryProfile]) -> dict:
    entry = {
        "name": node.name,
        "start_ts": node.start_ts,
        "end_ts": node.end_ts,
        "is_wrapper": node.is_wrapper,
        "children": [_layer_dict(c, profiles) for c in node.children],
    }
    profile = profiles.get(node)
    if profile is not None:
        entry["retained_bytes"] = sum(b.size
                                      for b in profile.retained_blocks)
        entry["temporary_bytes"] = sum(b.size
                                       for b in profile.temporary_blocks)
        entry["forward_ops"] = [op.name for op in profile.forward_ops]
        entry["backward_ops"] = [op.name for op in profile.backward_ops]
    return entry


def _cmd_analyze(args) -> int:
    sidecar = load_sidecar(args.sidecar) if args.sidecar else None
    bundle = parse_trace(args.trace, sidecar=sidecar, strict=args.strict)
    analyzed = analyze_bundle(bundle)
    document = {
        "layers": _layer_dict(analyzed.layer_tree, analyzed.profiles),
        "operator_roots": [
            {"name": op.name, "start_ts": op.start_ts, "end_ts": op.end_ts,
             "sequence_numbers": sorted(op.sequence_numbers)}
            for op in analyzed.operator_roots],
        "markers": [
            {"kind": m.kind.value, "start_ts": m.start_ts,
             "end_ts": m.end_ts, "iteration": m.iteration_index}
            for m in analyzed.markers],
        "blocks": [
            {"block_id": b.block_id, "addr": b.addr, "size": b.size,
             "alloc_time": b.alloc_time, "free_time": b.free_time,
             "role": b.role.value}
            for b in analyzed.blocks],
    }
    text = _write_json(document, args.dump_structure, stamp=False)
    if args.dump_structure:
        print(f"{len(analyzed.blocks)} blocks, "
              f"{len(analyzed.operator_roots)} operator roots, "
              f"{len(analyzed.markers)} markers; "
              f"structure: {args.dump_structure}")
    else:
        sys.stdout.write(text)
    return 0


# --- evaluate ----------------------------------------------------------------


def _load_records(path: str) -> list[ValidationRecord]:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise PeakMemError("actuals file must hold a list of records")
    return [ValidationRecord.from_json_dict(r) for r in raw]


def _cmd_evaluate(args) -> int:
    report_dir = Path(args.reports)
    paths = sorted(report_dir.glob("*.json"))
    if not paths:
        raise PeakMemError(f"no report files under {report_dir}")
    records = _load_records(args.actuals)
    by_key: dict[tuple[str, int], ValidationRecord] = {}
    for rec in records:
        by_key[(rec.config_id, rec.round_no)] = rec

    jobs = []
    for path in paths:
        with open(path, encoding="utf-8") as f:
            rep = json.load(f)
        digest = rep.get("config_digest", "")
        stem = path.stem
        r1 = by_key.get((digest, 1)) or by_key.get((stem, 1))
        if r1 is None:
            raise PeakMemError(
                f"no round-1 record for report {path.name} "
                f"(config_id {digest[:12]}... or {stem!r})")
        r2 = by_key.get((r1.config_id, 2))
        jobs.append(EvalJob(
            config_id=r1.config_id,
            predicted_peak=int(rep["predicted_peak"]),
            capacity=int(rep.get("device_capacity", 0)),
            oom_predicted=bool(rep["oom_predicted"]),
            round1=r1, round2=r2))

    document = evaluate(jobs)
    text = _write_json(document, args.out, stamp=False)
    agg = document["aggregate"]
    if args.out:
        print(f"{agg['run_count']} jobs: "
              f"failure probability {agg['failure_probability']:.3f}, "
              f"median error {agg['median_error']:.3f}, "
              f"score {agg['performance_score']:.3f} "
              f"({agg['quadrant']}); metrics: {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# --- selftest ----------------------------------------------------------------


def _cmd_selftest(args) -> int:
    rng = random.Random(args.seed)
    for run in range(args.runs):
        params = random_config(rng)
        capacity = params["capacity"]
        max_split = params["max_split_size"]
        requests = random_sequence(rng)
        cfg = AllocatorConfig(max_split_size=max_split,
                              device_capacity=capacity)
        fast = replay(requests, cfg, validate=True)
        slow = replay_reference(requests, capacity=capacity,
                                max_split_size=max_split)
        same = (fast.peak_reserved == slow["peak_reserved"]
                and fast.peak_allocated == slow["peak_allocated"]
                and fast.oom_seq_no == slow["oom_seq_no"]
                and fast.timeline == slow["timeline"])
        if not same:
            print(f"selftest: divergence on run {run} "
                  f"(seed {args.seed}, capacity {capacity}, "
                  f"max_split {max_split})")
            print(f"  optimized: peak={fast.peak_reserved} "
                  f"oom={fast.oom_seq_no}")
            print(f"  reference: peak={slow['peak_reserved']} "
                  f"oom={slow['oom_seq_no']}")
            return 1
    print(f"selftest: {args.runs} random sequences, "
          f"both allocator models agree")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "estimate": _cmd_estimate,
        "replay": _cmd_replay,
        "analyze": _cmd_analyze,
        "evaluate": _cmd_evaluate,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except (PeakMemError, OSError, json.JSONDecodeError, ValueError,
            KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

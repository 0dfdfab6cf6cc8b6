#!/usr/bin/env python3
"""Capture profiler-trace fixtures from tiny reference models.

Runs a small model for a few training iterations under the PyTorch
profiler (CPU activities, memory events, module hierarchy) and writes
three files per fixture into the output directory:

  trace.json     chrome-style profiler export (the pipeline's input)
  sidecar.json   parameter sizes, batch bytes, optimizer, device fields
  manifest.json  capture provenance: event counts, module names,
                 iteration count -- used to sanity-check the trace

The prediction pipeline consumes these files only; it never imports
this script, and this script never imports the pipeline.

Usage:
  python3 capture.py --model mlp --optimizer sgd --iters 3 \
      --zero-grad-pos start --out fixtures/
"""

import argparse
import json
import sys
from collections import Counter
from pathlib import Path


def build_model(name, torch):
    """Return (model, input, target, loss_fn) for a named tiny model."""
    nn = torch.nn
    if name != "mlp":
        raise SystemExit(f"unknown model {name!r}; available: mlp")
    model = nn.Sequential(nn.Linear(16, 32), nn.ReLU(), nn.Linear(32, 8))
    x = torch.randn(4, 16)
    y = torch.randn(4, 8)
    return model, x, y, nn.MSELoss()


def build_optimizer(name, model, torch):
    if name == "sgd":
        return torch.optim.SGD(model.parameters(), lr=0.01)
    if name == "adam":
        return torch.optim.Adam(model.parameters(), lr=0.001)
    raise SystemExit(f"unknown optimizer {name!r}; available: sgd, adam")


def fixture_name(args):
    suffix = "_pregrad" if args.zero_grad_pos == "pre-backward" else ""
    return f"tiny_{args.model}_{args.optimizer}{suffix}"


def tensor_bytes(t):
    return t.numel() * t.element_size()


def capture(args):
    try:
        import torch
        import torch.profiler as prof_mod
    except ImportError:
        raise SystemExit(
            "capture needs PyTorch in this environment; install it with "
            "'pip install torch' (CPU build is enough) and re-run")

    torch.manual_seed(args.seed)
    model, x, y, loss_fn = build_model(args.model, torch)
    optimizer = build_optimizer(args.optimizer, model, torch)

    out_dir = Path(args.out) / fixture_name(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.json"

    # one bounded cycle covering every iteration; acc_events keeps the
    # events of all steps in the final export
    schedule = prof_mod.schedule(wait=0, warmup=0, active=args.iters,
                                 repeat=1)
    # with_stack + with_modules yields the python_function events that
    # carry the nn.Module call hierarchy (module names, parent links)
    with prof_mod.profile(
            activities=[prof_mod.ProfilerActivity.CPU],
            schedule=schedule,
            profile_memory=True,
            with_stack=True,
            with_modules=True,
            acc_events=True) as prof:
        for _ in range(args.iters):
            if args.zero_grad_pos == "start":
                optimizer.zero_grad()
            loss = loss_fn(model(x), y)
            if args.zero_grad_pos == "pre-backward":
                optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            prof.step()
    prof.export_chrome_trace(str(trace_path))

    param_sizes = [tensor_bytes(p) for p in model.parameters()]
    batch_bytes = [tensor_bytes(x), tensor_bytes(y)]

    sidecar = {
        "param_sizes": param_sizes,
        "batch_bytes": batch_bytes,
        "optimizer": type(optimizer).__name__,
        "device_capacity_bytes": 0,
        "initial_memory_bytes": 0,
    }
    (out_dir / "sidecar.json").write_text(
        json.dumps(sidecar, indent=2) + "\n")

    with open(trace_path, encoding="utf-8") as f:
        events = json.load(f)["traceEvents"]
    event_counts = Counter(e.get("cat", "<none>") for e in events)
    step_count = sum(1 for e in events
                     if e.get("cat") == "user_annotation"
                     and str(e.get("name", "")).startswith("ProfilerStep#"))

    manifest = {
        "model_name": args.model,
        "param_sizes": param_sizes,
        "batch_bytes": batch_bytes,
        "optimizer": type(optimizer).__name__,
        "zero_grad_pos": args.zero_grad_pos,
        "iteration_count": step_count,
        "event_counts": dict(sorted(event_counts.items())),
        "module_names": [name for name, _ in model.named_modules() if name],
        "seed": args.seed,
        "torch_version": torch.__version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n")

    if step_count != args.iters:
        raise SystemExit(
            f"capture produced {step_count} profiler steps, "
            f"expected {args.iters}; trace left at {trace_path} "
            f"for inspection")

    print(f"{fixture_name(args)}: {len(events)} events, "
          f"{step_count} iterations -> {out_dir}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Capture tiny-model profiler fixtures.")
    parser.add_argument("--model", default="mlp",
                        help="model name (default mlp)")
    parser.add_argument("--optimizer", default="sgd",
                        choices=["sgd", "adam"])
    parser.add_argument("--iters", type=int, default=3,
                        help="training iterations to record (default 3)")
    parser.add_argument("--zero-grad-pos", default="start",
                        choices=["start", "pre-backward"],
                        help="where in the loop zero_grad runs")
    parser.add_argument("--out", default="fixtures",
                        help="output directory (default fixtures/)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if args.iters < 1:
        parser.error("--iters must be >= 1")
    return capture(args)


if __name__ == "__main__":
    sys.exit(main())

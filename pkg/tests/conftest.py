"""Shared helpers: synthetic chrome-style trace builders."""

import json

import pytest


@pytest.fixture
def write_trace(tmp_path):
    """Write {"traceEvents": records} to a temp file; returns the path."""

    def _write(records, name="trace.json"):
        path = tmp_path / name
        path.write_text(json.dumps({"traceEvents": records}))
        return path

    return _write


def ev(cat, name, ts, dur=None, **args):
    """One chrome-trace record; args use the profiler's field names."""
    rec = {"ph": "i" if cat == "cpu_instant_event" else "X",
           "cat": cat, "name": name, "ts": ts, "args": args}
    if dur is not None:
        rec["dur"] = dur
    return rec


def instant(name, ts, addr, nbytes, **extra):
    return ev("cpu_instant_event", name, ts,
              **{"Addr": addr, "Bytes": nbytes, **extra})


def pyfunc(name, ts, dur, python_id, parent_id=None):
    args = {"Python id": python_id}
    if parent_id is not None:
        args["Python parent id"] = parent_id
    return ev("python_function", name, ts, dur, **args)


def cpu_op(name, ts, dur, seq=None):
    args = {} if seq is None else {"Sequence number": seq}
    return ev("cpu_op", name, ts, dur, **args)


def annotation(name, ts, dur):
    return ev("user_annotation", name, ts, dur)


def iteration_records(k, base, with_grad_free_at=None, with_span_blocks=True):
    """One training iteration's worth of chrome records at time `base`.

    Layout (offsets from base): ProfilerStep spans [0, 900); zero-grad
    at +10; a linear layer forward at +60 allocating a retained
    activation (1000 B, freed in backward) and an intra-op temporary
    (500 B); an unowned 123 B block at +150; backward at +200
    allocating a 400 B gradient; optimizer step spans [+400, +500)
    with an optional surviving 400 B state block plus two span-local
    temporaries (999 B and another 400 B, both freed in-span).
    """
    pid = 10 + k
    seq = 100 + k
    recs = [
        annotation(f"ProfilerStep#{k}", base, 900),
        annotation("Optimizer.zero_grad#SGD.zero_grad", base + 10, 20),
        pyfunc("nn.Module: Linear_0", base + 50, 100, pid),
        cpu_op("aten::linear", base + 60, 50, seq=seq),
        instant("[memory]", base + 70, 0x1000 + k, 1000),
        instant("[memory]", base + 72, 0x2000 + k, 500),
        instant("[memory]", base + 80, 0x2000 + k, -500),
        instant("[memory]", base + 150, 0x7000 + k, 123),
        cpu_op("autograd::engine::evaluate_function: AddmmBackward0",
               base + 200, 100, seq=seq),
        instant("[memory]", base + 230, 0x1000 + k, -1000),
        instant("[memory]", base + 250, 0x3000 + k, 400),
        annotation("Optimizer.step#SGD.step", base + 400, 100),
        instant("[memory]", base + 600, 0x7000 + k, -123),
    ]
    if with_span_blocks:
        recs += [
            instant("[memory]", base + 420, 0x4000 + k, 400),
            instant("[memory]", base + 430, 0x5000 + k, 999),
            instant("[memory]", base + 440, 0x5000 + k, -999),
            instant("[memory]", base + 435, 0x6000 + k, 400),
            instant("[memory]", base + 450, 0x6000 + k, -400),
        ]
    if with_grad_free_at is not None:
        recs.append(instant("[memory]", with_grad_free_at, 0x3000 + k, -400))
    return recs

"""Sigmoid-domain gate and circuit simulation.

Each gate keeps one previous-output transition; every relevant input
transition is mapped through the gate's transfer model to the next output
transition.  Output candidates that overtake their predecessor or form a
pulse that never reaches the threshold are removed once the gate's full
output list is known, before fan-out propagation.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .sigmoid import DUMMY_TIME, SigmoidTrace, SigmoidTransition, _pulse_extremum, snap
from .transfer import ModelMissing, ModelRegistry, TransferInput, TransferModel, apply_transfer

MissingModel = ModelMissing


class CyclicCircuit(ValueError):
    pass


class MissingStimulus(KeyError):
    pass


class NonCausalPrediction(RuntimeWarning):
    pass


@dataclass
class GateState:
    prev_out: SigmoidTransition
    levels: list[int] = field(default_factory=list)
    outputs: list[SigmoidTransition] = field(default_factory=list)

    @classmethod
    def initial(cls, dummy_slope: float, output_level: int, input_levels=()) -> GateState:
        # the dummy's polarity is that of the edge that produced the initial level
        a = abs(dummy_slope) if output_level == 1 else -abs(dummy_slope)
        return cls(SigmoidTransition(a, DUMMY_TIME), list(input_levels))

    def step(self, model: TransferModel, s_in: SigmoidTransition) -> SigmoidTransition:
        prev = self.prev_out
        T = math.inf if prev.is_dummy else s_in.b - prev.b
        out = apply_transfer(model, TransferInput(T, s_in.a, prev.a))
        new = SigmoidTransition(out.a_out, s_in.b + snap(out.delay))
        if not new.b > s_in.b:
            warnings.warn(f"output at {new.b} does not follow input at {s_in.b}", NonCausalPrediction)
        self.prev_out = new
        self.outputs.append(new)
        return new


def resolve_overtaking(transitions: Sequence[SigmoidTransition]) -> list[SigmoidTransition]:
    """Drop adjacent pairs whose later member is predicted no later than the earlier one.

    A short input pulse can yield an output edge scheduled before the edge
    it is meant to undo; the pair then describes no physical pulse.
    """
    out: list[SigmoidTransition] = []
    for s in transitions:
        if out and s.b <= out[-1].b:
            out.pop()
        else:
            out.append(s)
    return out


def _crosses(p: SigmoidTransition, q: SigmoidTransition, vdd: float, vth: float) -> bool:
    up = p.a > 0
    frac = vth / vdd
    if 0.1 < frac < 0.9 and min(abs(p.a), abs(q.a)) * (q.b - p.b) > 24.0:
        return True  # both halves saturate well past any mid-range threshold
    k = 1 if up else 0
    x = _pulse_extremum(p.a, p.b, q.a, q.b, k, vdd)
    a = np.array([p.a, q.a])
    b = np.array([p.b, q.b])
    xs = np.array([x, 0.5 * (p.b + q.b)])
    v = vdd * (expit(a * (xs[:, None] - b)).sum(axis=1) - k)
    return bool(v.max() > vth) if up else bool(v.min() < vth)


def cancel_subthreshold_pairs(trace: SigmoidTrace, vth: float | None = None) -> SigmoidTrace:
    """Remove adjacent transition pairs whose pulse never crosses ``vth``.

    Removal can make new neighbours adjacent, so the scan steps back after
    every removal and ends at a fixed point.
    """
    vth = trace.vdd / 2 if vth is None else vth
    trs = list(trace.transitions)
    i = 1
    while i < len(trs):
        if _crosses(trs[i - 1], trs[i], trace.vdd, vth):
            i += 1
        else:
            del trs[i - 1:i + 1]
            i = max(1, i - 1)
    return SigmoidTrace(tuple(trs), trace.vdd, trace.initial_level)


def _finish(state: GateState, vdd: float, initial_level: int, vth) -> SigmoidTrace:
    trs = resolve_overtaking(state.outputs)
    return cancel_subthreshold_pairs(SigmoidTrace(tuple(trs), vdd, initial_level), vth)


def predict_single_input(model: TransferModel, inp: SigmoidTrace,
                         initial_output_level: int | None = None, vth: float | None = None) -> SigmoidTrace:
    """Output trace of an inverting single-input gate."""
    if initial_output_level is None:
        initial_output_level = 1 - inp.initial_level
    state = GateState.initial(model.dummy_slope, initial_output_level)
    for s in inp.transitions:
        state.step(model, s)
    return _finish(state, inp.vdd, initial_output_level, vth)


def predict_nor(models: Sequence[TransferModel] | TransferModel, in1: SigmoidTrace, in2: SigmoidTrace,
                initial_levels: tuple[int, int] | None = None, vth: float | None = None,
                stats: dict | None = None) -> SigmoidTrace:
    """Two-input NOR: an input edge is relevant only while the other input is low.

    Both inputs share one previous-output state.  Transitions at equal
    times are taken in input order; such ties are counted in ``stats``.
    """
    m = (models, models) if isinstance(models, TransferModel) else tuple(models)
    levels = list(initial_levels) if initial_levels is not None else [in1.initial_level, in2.initial_level]
    out_level = int(not (levels[0] or levels[1]))
    state = GateState.initial(m[0].dummy_slope, out_level, levels)
    events = sorted([(s.b, 0, s) for s in in1.transitions] + [(s.b, 1, s) for s in in2.transitions],
                    key=lambda e: (e[0], e[1]))
    if stats is not None and in1 is not in2:
        bs = sorted(in1.b.tolist() + in2.b.tolist())
        stats["ties"] = stats.get("ties", 0) + sum(1 for x, y in zip(bs, bs[1:]) if x == y)
    for _, k, s in events:
        if state.levels[1 - k] == 0:
            state.step(m[k], s)
        state.levels[k] ^= 1
    return _finish(state, in1.vdd, out_level, vth)


def _snapped(trace: SigmoidTrace) -> SigmoidTrace:
    trs = tuple(SigmoidTransition(a, snap(b)) for a, b in trace.transitions)
    return trace if trs == trace.transitions else SigmoidTrace(trs, trace.vdd, trace.initial_level)


def simulate_circuit(circuit, registry: ModelRegistry, stimuli: Mapping[str, SigmoidTrace],
                     vth: float | None = None, jobs: int = 1, stats: dict | None = None) -> dict[str, SigmoidTrace]:
    """Traces for every net of ``circuit`` (an INV/NOR2 netlist) in topological order.

    Gates of equal depth are independent and may run on ``jobs`` threads;
    the result does not depend on scheduling.
    """
    missing = [n for n in circuit.inputs if n not in stimuli]
    if missing:
        raise MissingStimulus(f"no stimulus for primary input(s) {', '.join(missing)}")
    levels = _levelize(circuit)
    models = {}
    for g in circuit.gates:
        models[g.output] = registry.get(g.kind, circuit.load(g.output))
    nets: dict[str, SigmoidTrace] = {n: _snapped(stimuli[n]) for n in circuit.inputs}
    tie_counts: dict[str, dict] = {}

    def run(g):
        local: dict = {}
        model = models[g.output]
        if g.kind == "INV":
            tr = predict_single_input(model, nets[g.inputs[0]], vth=vth)
        else:
            tr = predict_nor(model, nets[g.inputs[0]], nets[g.inputs[1]], vth=vth, stats=local)
        return g.output, tr, local

    with ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else _Serial() as ex:
        for level in levels:
            for name, tr, local in ex.map(run, level):
                nets[name] = tr
                if local.get("ties"):
                    tie_counts[name] = local
    if stats is not None:
        stats["ties"] = sum(v["ties"] for v in tie_counts.values())
        stats["tie_gates"] = sorted(tie_counts)
    return nets


class _Serial:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @staticmethod
    def map(fn, items):
        return map(fn, items)


def _levelize(circuit) -> list[list]:
    """Group gates by logic depth; raises CyclicCircuit if some gate never becomes ready."""
    depth = {n: 0 for n in circuit.inputs}
    pending = list(circuit.gates)
    out: dict[int, list] = {}
    while pending:
        rest = []
        for g in pending:
            if all(i in depth for i in g.inputs):
                d = 1 + max(depth[i] for i in g.inputs)
                depth[g.output] = d
                out.setdefault(d, []).append(g)
            else:
                rest.append(g)
        if len(rest) == len(pending):
            raise CyclicCircuit(f"gates {', '.join(g.output for g in rest)} are on a cycle or undriven")
        pending = rest
    return [out[d] for d in sorted(out)]

"""Glue between characterization, training and circuit-level comparison."""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import simulate_circuit
from .mlp import TrainConfig, train
from .netlist import Circuit, decompose_to_nor, load_c17
from .refmodel import (AnalogGateParams, SweepSpec, TrainingRow, format_table, gen_random_stimuli,
                       run_characterization, simulate_reference_waves, solve_gate)
from .fitting import fit_trace
from .sigmoid import SCALE, DigitalTrace, SigmoidTrace, digitize, mismatch_time, snap
from .transfer import ModelRegistry, TransferModel, build_region
from .waveform import SampledWaveform, crossings, digitize_samples, sample_trace

SHAPING_STAGES = 2

# (gate kind, characterization template, fan-out class)
MODEL_CLASSES = (("INV", "chain", 1), ("NOR2", "chain", 1), ("NOR2", "fanout2", 2))

# (mu_t, sigma_t, transitions per input)
STIMULUS_CLASSES = ((20e-12, 10e-12, 20), (100e-12, 50e-12, 10), (500e-12, 250e-12, 5))


def table_hash(rows: Sequence[TrainingRow]) -> str:
    return hashlib.sha256(format_table(rows).encode()).hexdigest()


def _train_one(args):
    X, y, cfg = args
    return train((X, y), cfg)


def train_transfer_model(rows: Sequence[TrainingRow], kind: str, fanout_class: int,
                         cfg: TrainConfig = TrainConfig(), jobs: int = 1) -> TransferModel:
    """Fit the four networks and the two valid regions of one gate class."""
    X = np.array([r.features() for r in rows])
    a_out = np.array([r.a_out for r in rows])
    delay = np.array([r.delay for r in rows])
    rise = X[:, 1] > 0
    if rise.sum() < 10 or (~rise).sum() < 10:
        raise ValueError("need at least 10 rising and 10 falling rows")
    tasks = [(X[rise], a_out[rise], cfg), (X[rise], delay[rise], cfg),
             (X[~rise], a_out[~rise], cfg), (X[~rise], delay[~rise], cfg)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, 4)) as ex:
            nets = list(ex.map(_train_one, tasks))
    else:
        nets = [_train_one(t) for t in tasks]
    return TransferModel(nets[0], nets[1], nets[2], nets[3],
                         build_region(X[rise]), build_region(X[~rise]),
                         kind, fanout_class, dummy_slope=float(np.median(np.abs(a_out))),
                         provenance=table_hash(rows), stats=table_stats(rows))


def table_stats(rows: Sequence[TrainingRow]) -> dict:
    mags = np.abs([r.a_in for r in rows])
    d = np.array([r.delay for r in rows])
    return {"rows": len(rows), "mean_delay": float(d.mean()), "delay_spread": float(np.ptp(d)),
            "a_in_min": float(mags.min()), "a_in_max": float(mags.max())}


def naive_delay(registry: ModelRegistry) -> float:
    """Row-weighted mean table delay over all models, in seconds."""
    n = sum(m.stats["rows"] for m in registry)
    return sum(m.stats["mean_delay"] * m.stats["rows"] for m in registry) / n / SCALE


def stimulus_slope_range(registry: ModelRegistry) -> tuple[float, float]:
    return (min(m.stats["a_in_min"] for m in registry), max(m.stats["a_in_max"] for m in registry))


@dataclass
class ModelSuite:
    registry: ModelRegistry
    tables: dict = field(default_factory=dict)  # (kind, fanout class) -> rows
    reports: dict = field(default_factory=dict)


def build_models(spec: SweepSpec = SweepSpec(), params: AnalogGateParams = AnalogGateParams(),
                 train_cfg: TrainConfig = TrainConfig(), jobs: int = 1, classes=MODEL_CLASSES) -> ModelSuite:
    suite = ModelSuite(ModelRegistry())
    for kind, template, cls in classes:
        res = run_characterization(spec, params, template, kind, jobs)
        suite.tables[(kind, cls)] = res.rows
        suite.reports[(kind, cls)] = res
        suite.registry.register(train_transfer_model(res.rows, kind, cls, train_cfg, jobs))
    return suite


# -- naive baseline ---------------------------------------------------------

def simulate_fixed_delay(circuit: Circuit, stimuli: dict[str, DigitalTrace], delay: float) -> dict[str, DigitalTrace]:
    """Transport-delay logic simulation: every gate output is its boolean
    function of the inputs, shifted by the constant ``delay`` seconds."""
    nets = dict((n, stimuli[n]) for n in circuit.inputs)
    for g in circuit.gates:
        ins = [nets[n] for n in g.inputs]
        times = sorted({t for tr in ins for t in tr.times})
        levels = [tr.initial_level for tr in ins]
        ptr = [0] * len(ins)

        def out_of(lv):
            return int(not any(lv))

        cur = out_of(levels)
        init = cur
        out = []
        for t in times:
            for k, tr in enumerate(ins):
                while ptr[k] < len(tr.crossings) and tr.crossings[ptr[k]][0] == t:
                    levels[k] ^= 1
                    ptr[k] += 1
            new = out_of(levels)
            if new != cur:
                out.append(t + delay)
                cur = new
        nets[g.output] = DigitalTrace.from_times(out, init)
    return nets


# -- accuracy experiment ----------------------------------------------------

@dataclass
class RunResult:
    t_err_sigmoid: float
    t_err_naive: float
    horizon: float
    # primary output -> (sigmoid simulator, oracle) transition counts
    transitions: dict = field(default_factory=dict)


def nor_c17() -> Circuit:
    return decompose_to_nor(load_c17())


def random_stimuli(circuit: Circuit, mu: float, sigma: float, n: int, seed: int,
                   slope_range: tuple[float, float], vdd: float = 0.8):
    rng = np.random.default_rng(seed)
    seeds = rng.integers(2**31, size=len(circuit.inputs))
    levels = rng.integers(2, size=len(circuit.inputs))
    return {name: gen_random_stimuli(mu, sigma, n, int(s), slope_range, vdd, int(lv))
            for name, s, lv in zip(circuit.inputs, seeds, levels)}


def shape_stimuli(stimuli, params: AnalogGateParams = AnalogGateParams(), dt: float = 1e-13,
                  stages: int = SHAPING_STAGES, t_end: float | None = None):
    """Pass raw stimuli through ``stages`` reference inverters per input.

    Returns the shaped analog waveforms and their sigmoid fits, so the
    oracle and the sigmoid simulator see the same physical input signal.
    """
    if stages % 2:
        raise ValueError("an even number of shaping stages keeps the stimulus polarity")
    if t_end is None:
        last = max((tr.b[-1] / SCALE for tr in stimuli.values() if len(tr)), default=0.0)
        t_end = last + 150e-12
    n = int(math.ceil(t_end / dt)) + 1
    waves, fits = {}, {}
    for name, tr in stimuli.items():
        w = sample_trace(tr, 0.0, dt, n)
        for _ in range(stages):
            w = solve_gate(params, [w], "INV", 1)
        lvl = int(w.samples[0] >= params.threshold)
        k = len(crossings(w, params.threshold))
        waves[name] = w
        fits[name] = _snap_trace(fit_trace(w, k, params.vdd, lvl)) if k else SigmoidTrace((), params.vdd, lvl)
    return waves, fits


def _snap_trace(tr: SigmoidTrace) -> SigmoidTrace:
    return SigmoidTrace(tuple((a, snap(b)) for a, b in tr.transitions), tr.vdd, tr.initial_level)


def compare_run(circuit: Circuit, registry: ModelRegistry, stimuli, fixed_delay: float,
                params: AnalogGateParams = AnalogGateParams(), dt: float = 1e-13, jobs: int = 1):
    """t_err (seconds, summed over primary outputs) of both simulators against the oracle.

    Raw stimuli are shaped first (see :func:`shape_stimuli`).  Also returns
    the per-net sigmoid traces of the run.
    """
    waves, fitted = shape_stimuli(stimuli, params, dt)
    n = len(next(iter(waves.values())))
    t_end = n * dt + 20 * len(circuit.gates) * max(params.tau_rise, params.tau_fall)
    ref = simulate_reference_waves(circuit, waves, params, int(math.ceil(t_end / dt)) + 1)
    horizon = next(iter(ref.values())).t_end
    traces = simulate_circuit(circuit, registry, fitted, params.threshold, jobs)
    digital_in = {name: digitize_samples(w, params.threshold) for name, w in waves.items()}
    naive = simulate_fixed_delay(circuit, digital_in, fixed_delay)
    e_sig = e_naive = 0.0
    counts = {}
    for po in circuit.outputs:
        truth = digitize_samples(ref[po], params.threshold)
        got = digitize(traces[po], params.threshold)
        e_sig += mismatch_time(got, truth, horizon)
        e_naive += mismatch_time(naive[po], truth, horizon)
        counts[po] = (len(got.times), len(truth.times))
    return RunResult(e_sig, e_naive, horizon, counts), traces


def accuracy_experiment(registry: ModelRegistry, circuit: Circuit | None = None, runs: int = 50, seed: int = 0,
                        classes=STIMULUS_CLASSES, params: AnalogGateParams = AnalogGateParams(),
                        jobs: int = 1, keep_traces: bool = False):
    """Per stimulus class, the list of RunResults (and traces if requested)."""
    circuit = circuit or nor_c17()
    d_naive = naive_delay(registry)
    slopes = stimulus_slope_range(registry)
    out = {}
    traces = {}
    for ci, (mu, sigma, n) in enumerate(classes):
        res = []
        for r in range(runs):
            stim = random_stimuli(circuit, mu, sigma, n, seed * 1_000_003 + ci * 10_007 + r, slopes, params.vdd)
            rr, tr = compare_run(circuit, registry, stim, d_naive, params, jobs=jobs)
            res.append(rr)
            if keep_traces:
                traces[(ci, r)] = tr
        out[(mu, sigma, n)] = res
    return (out, traces) if keep_traces else out

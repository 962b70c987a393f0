"""First-order analog reference model: gate waveforms, characterization sweeps, stimuli.

Each gate output relaxes exponentially toward ``vdd`` or ``0`` depending on
the digitized logic value of its inputs.  Between two input threshold
crossings the relaxation has a closed form, so the waveform is computed
exactly on the sample grid rather than by stepping an integrator.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fitting import FitConfig, FitError, fit_trace
from .sigmoid import SCALE, SigmoidTrace, SigmoidTransition, snap
from .waveform import SampledWaveform, crossings, sample_trace


class StepTooCoarse(ValueError):
    pass


@dataclass(frozen=True)
class AnalogGateParams:
    vdd: float = 0.8
    tau_rise: float = 4e-12
    tau_fall: float = 3e-12
    vth: float | None = None
    fanout_load: float = 0.35  # extra tau fraction per additional driven gate
    slew_gain: float = 0.2
    slew_clamp: float = 2.0

    def __post_init__(self):
        if not (self.tau_rise > 0 and self.tau_fall > 0 and self.vdd > 0):
            raise ValueError("vdd and time constants must be positive")
        if not 0 < self.threshold < self.vdd:
            raise ValueError("vth must lie strictly between 0 and vdd")

    @property
    def threshold(self) -> float:
        return self.vdd / 2 if self.vth is None else self.vth

    def load_factor(self, fanout: int) -> float:
        return 1.0 + self.fanout_load * (max(int(fanout), 1) - 1)


def _input_events(w: SampledWaveform, vth: float, vdd: float):
    """(time, new level, 20-80 % slew estimate) per threshold crossing."""
    s = w.samples
    out = []
    for t, edge, i in crossings(w, vth):
        rate = abs(s[i + 1] - s[i]) / w.dt
        slew = 0.6 * vdd / rate if rate > 0 else math.inf
        out.append((t, 1 if edge > 0 else 0, slew))
    return out


def solve_gate(params: AnalogGateParams, inputs: Sequence[SampledWaveform], kind: str = "INV",
               fanout: int = 1) -> SampledWaveform:
    """Output waveform of an INV or NOR2 gate driven by sampled ``inputs``.

    The output targets ``vdd`` while every input is below threshold and 0
    otherwise.  The time constant of each output edge is the rise or fall
    constant, scaled by the fan-out load and by the slew of the input edge
    that triggered it.
    """
    want = {"INV": 1, "NOR2": 2}.get(kind)
    if want is None:
        raise ValueError(f"unsupported gate kind {kind!r}")
    if len(inputs) != want:
        raise ValueError(f"{kind} takes {want} input waveform(s), got {len(inputs)}")
    w0 = inputs[0]
    n = len(w0)
    for w in inputs[1:]:
        if len(w) != n or w.t0 != w0.t0 or w.dt != w0.dt:
            raise ValueError("input waveforms must share t0, dt and length")
    load = params.load_factor(fanout)
    tau_min = min(params.tau_rise, params.tau_fall) * load
    if w0.dt > tau_min / 20:
        raise StepTooCoarse(f"dt = {w0.dt:.3g} s exceeds tau/20 = {tau_min / 20:.3g} s")
    vdd, vth = params.vdd, params.threshold

    levels = [int(w.samples[0] >= vth) for w in inputs]
    events = sorted((t, k, lvl, slew) for k, w in enumerate(inputs) for t, lvl, slew in _input_events(w, vth, vdd))
    target = vdd if not any(levels) else 0.0
    starts, v0s, targets, taus = [w0.t0], [target], [target], [1.0]
    for t, k, lvl, slew in events:
        levels[k] = lvl
        new_target = vdd if not any(levels) else 0.0
        if new_target == targets[-1]:
            continue
        dt_seg = t - starts[-1]
        v_now = targets[-1] + (v0s[-1] - targets[-1]) * math.exp(-dt_seg / taus[-1])
        base = (params.tau_rise if new_target > 0 else params.tau_fall) * load
        ratio = min(max(slew / base - 1.0, 0.0), params.slew_clamp) if math.isfinite(slew) else params.slew_clamp
        starts.append(t)
        v0s.append(v_now)
        targets.append(new_target)
        taus.append(base * (1.0 + params.slew_gain * ratio))

    times = w0.times
    seg = np.searchsorted(np.asarray(starts), times, side="right") - 1
    seg = np.maximum(seg, 0)
    st, v0, tg, ta = (np.asarray(x)[seg] for x in (starts, v0s, targets, taus))
    v = tg + (v0 - tg) * np.exp(-np.maximum(times - st, 0.0) / ta)
    return SampledWaveform(w0.t0, w0.dt, np.clip(v, 0.0, vdd))


def heaviside_waveform(edges: Sequence[float], t0: float, dt: float, n: int, vdd: float,
                       initial_level: int = 0) -> SampledWaveform:
    """Ideal steps toggling at each time in ``edges``."""
    t = t0 + dt * np.arange(n)
    flips = np.searchsorted(np.asarray(edges, dtype=float), t, side="right")
    return SampledWaveform(t0, dt, vdd * ((initial_level + flips) % 2).astype(float))


# -- characterization -------------------------------------------------------

def _axis(r: tuple[float, float, float]) -> np.ndarray:
    lo, hi, step = r
    if not (step > 0 and hi >= lo and lo > 0):
        raise ValueError(f"invalid sweep range {r}")
    count = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(count)


@dataclass(frozen=True)
class SweepSpec:
    ta: tuple[float, float, float] = (5e-12, 20e-12, 1e-12)
    tb: tuple[float, float, float] = (5e-12, 20e-12, 1e-12)
    tc: tuple[float, float, float] = (5e-12, 20e-12, 1e-12)
    targets: int = 4
    prefix: int = 3
    suffix: int = 2
    t_start: float = 10e-12
    dt: float = 1e-13

    def __post_init__(self):
        for r in (self.ta, self.tb, self.tc):
            _axis(r)
        if self.targets < 1 or self.prefix < 1 or self.suffix < 0:
            raise ValueError("chain needs >= 1 prefix and >= 1 target gate")

    def grid(self) -> list[tuple[float, float, float]]:
        return [(a, b, c) for a in _axis(self.ta) for b in _axis(self.tb) for c in _axis(self.tc)]

    @property
    def chain_length(self) -> int:
        return self.prefix + self.targets + self.suffix


TRANSITIONS_PER_RUN = 4


@dataclass
class TrainingRow:
    T: float
    a_in: float
    a_prev_out: float
    a_out: float
    delay: float
    grid_index: int
    gate_index: int

    def features(self) -> tuple[float, float, float]:
        return (self.T, self.a_in, self.a_prev_out)


@dataclass
class CharacterizationResult:
    rows: list[TrainingRow]
    grid_points: int
    dropped_fits: int = 0
    duplicates: int = 0
    failures: dict = field(default_factory=dict)


def simulate_chain(spec: SweepSpec, params: AnalogGateParams, point, kind: str = "NOR2",
                   template: str = "chain") -> list[SampledWaveform]:
    """Waveforms of the stimulus and every chain gate output for one sweep point."""
    ta, tb, tc = point
    edges = spec.t_start + np.cumsum([0.0, ta, tb, tc])
    tau_max = max(params.tau_rise, params.tau_fall) * params.load_factor(2) * (1 + params.slew_gain * params.slew_clamp)
    t_end = edges[-1] + spec.chain_length * 2.0 * tau_max + 40e-12
    n = int(math.ceil(t_end / spec.dt)) + 1
    w = heaviside_waveform(edges, 0.0, spec.dt, n, params.vdd)
    gnd = SampledWaveform(0.0, spec.dt, np.zeros(n))
    fanout = 2 if template == "fanout2" else 1
    waves = [w]
    for _ in range(spec.chain_length):
        ins = [w] if kind == "INV" else [w, gnd]
        w = solve_gate(params, ins, kind, fanout)
        waves.append(w)
    return waves


def _window(w: SampledWaveform, vth: float, margin: float) -> SampledWaveform:
    cr = crossings(w, vth)
    if not cr:
        return w
    i0 = max(0, int((cr[0][0] - margin - w.t0) / w.dt))
    i1 = min(len(w), int((cr[-1][0] + margin - w.t0) / w.dt) + 2)
    return SampledWaveform(w.t0 + i0 * w.dt, w.dt, w.samples[i0:i1])


def characterize_point(spec: SweepSpec, params: AnalogGateParams, kind: str, template: str,
                       index: int, point, fit_cfg: FitConfig = FitConfig()):
    """Training rows of one sweep point and the number of fits that failed."""
    waves = simulate_chain(spec, params, point, kind, template)
    vdd = params.vdd
    fits: dict[int, SigmoidTrace | None] = {}
    # net j is the output of chain gate j (j = 0 is the stimulus)
    first, last = spec.prefix, spec.prefix + spec.targets
    for j in range(first, last + 1):
        lvl = int(waves[j].samples[0] >= params.threshold)
        try:
            fits[j] = fit_trace(_window(waves[j], params.threshold, 30e-12), TRANSITIONS_PER_RUN, vdd, lvl, fit_cfg)
        except FitError:
            fits[j] = None
    rows, dropped = [], 0
    for j in range(first + 1, last + 1):
        fin, fout = fits[j - 1], fits[j]
        if fin is None or fout is None:
            dropped += 1
            continue
        for m in range(1, TRANSITIONS_PER_RUN):
            si, so, sp = fin.transitions[m], fout.transitions[m], fout.transitions[m - 1]
            rows.append(TrainingRow(si.b - sp.b, si.a, sp.a, so.a, so.b - si.b, index, j))
    return rows, dropped


def _characterize_chunk(args):
    spec, params, kind, template, items, fit_cfg = args
    return [characterize_point(spec, params, kind, template, i, p, fit_cfg) for i, p in items]


def dedup_rows(rows: list[TrainingRow], tol: float = 1e-3) -> tuple[list[TrainingRow], int]:
    """Drop rows within ``tol`` (L-inf, min-max normalized features) of an earlier kept row."""
    if not rows:
        return rows, 0
    X = np.array([r.features() for r in rows])
    lo, span = X.min(axis=0), np.ptp(X, axis=0)
    span[span == 0] = 1.0
    Z = (X - lo) / span
    cells: dict[tuple, list[int]] = {}
    keep: list[int] = []
    for i, z in enumerate(Z):
        c = tuple(np.floor(z / tol).astype(int))
        dup = False
        for off in np.ndindex(3, 3, 3):
            for j in cells.get(tuple(ci + o - 1 for ci, o in zip(c, off)), ()):
                if np.max(np.abs(Z[j] - z)) < tol:
                    dup = True
                    break
            if dup:
                break
        if not dup:
            cells.setdefault(c, []).append(i)
            keep.append(i)
    return [rows[i] for i in keep], len(rows) - len(keep)


def run_characterization(spec: SweepSpec = SweepSpec(), params: AnalogGateParams = AnalogGateParams(),
                         template: str = "chain", kind: str = "NOR2", jobs: int = 1,
                         fit_cfg: FitConfig = FitConfig(), dedup_tol: float = 1e-3) -> CharacterizationResult:
    """Sweep the four-edge stimulus over the (T_A, T_B, T_C) grid and tabulate transfer rows.

    Grid points are independent and may be spread over ``jobs`` processes;
    rows are merged by grid index so the table does not depend on ``jobs``.
    """
    if template not in ("chain", "fanout2"):
        raise ValueError(f"unknown circuit template {template!r}")
    grid = list(enumerate(spec.grid()))
    if jobs > 1:
        chunk = max(1, len(grid) // (jobs * 8))
        parts = [grid[i:i + chunk] for i in range(0, len(grid), chunk)]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = [r for part in ex.map(_characterize_chunk,
                                             [(spec, params, kind, template, p, fit_cfg) for p in parts])
                       for r in part]
    else:
        results = _characterize_chunk((spec, params, kind, template, grid, fit_cfg))
    rows = [r for rs, _ in results for r in rs]
    dropped = sum(d for _, d in results)
    rows, dups = dedup_rows(rows, dedup_tol)
    return CharacterizationResult(rows, len(grid), dropped, dups)


TABLE_COLUMNS = ("T", "a_in", "a_prev_out", "a_out", "delay", "grid_index", "gate_index")


def format_table(rows: Sequence[TrainingRow]) -> str:
    out = ["\t".join(TABLE_COLUMNS)]
    for r in rows:
        out.append("\t".join(f"{v:.17g}" for v in (r.T, r.a_in, r.a_prev_out, r.a_out, r.delay))
                   + f"\t{r.grid_index}\t{r.gate_index}")
    return "\n".join(out) + "\n"


def write_table(path, rows: Sequence[TrainingRow]) -> None:
    Path(path).write_text(format_table(rows))


def read_table(path) -> list[TrainingRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != TABLE_COLUMNS:
        raise ValueError(f"{path}: not a training table (bad header)")
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        p = line.split("\t")
        try:
            rows.append(TrainingRow(*(float(x) for x in p[:5]), int(p[5]), int(p[6])))
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: malformed row") from None
    return rows


# -- stimuli and circuit reference ------------------------------------------

DEFAULT_SLOPE_RANGE = (20.0, 60.0)


def gen_random_stimuli(mu_t: float, sigma_t: float, n_transitions: int, seed: int,
                       slope_range: tuple[float, float] = DEFAULT_SLOPE_RANGE, vdd: float = 0.8,
                       initial_level: int = 0, t_start: float | None = None) -> SigmoidTrace:
    """Alternating transitions with Normal(mu_t, sigma_t) gaps truncated below at 1 ps.

    The first transition follows ``t_start`` (default ``mu_t``) by one gap.
    Times are snapped to the simulator's time grid.
    """
    if not mu_t > 0 or sigma_t < 0:
        raise ValueError("need mu_t > 0 and sigma_t >= 0")
    rng = np.random.default_rng(seed)
    gaps = np.empty(n_transitions)
    filled = 0
    while filled < n_transitions:
        g = rng.normal(mu_t, sigma_t, size=n_transitions - filled) if sigma_t > 0 \
            else np.full(n_transitions - filled, mu_t)
        g = g[g >= 1e-12]
        gaps[filled:filled + g.size] = g
        filled += g.size
    lo, hi = slope_range
    mags = rng.uniform(lo, hi, size=n_transitions)
    t0 = mu_t if t_start is None else t_start
    times = t0 + np.cumsum(gaps)
    trs, sign = [], 1.0 if initial_level == 0 else -1.0
    for m, t in zip(mags, times):
        trs.append(SigmoidTransition(sign * float(m), snap(float(t) * SCALE)))
        sign = -sign
    return SigmoidTrace(tuple(trs), vdd, initial_level)


def simulate_reference(circuit, stimuli, params: AnalogGateParams = AnalogGateParams(),
                       dt: float = 1e-13, t_end: float | None = None) -> dict[str, SampledWaveform]:
    """Analog waveforms of every net of an INV/NOR2 circuit driven by sigmoid stimuli."""
    if t_end is None:
        last = max((tr.b[-1] / SCALE for tr in stimuli.values() if len(tr)), default=0.0)
        t_end = last + 100e-12 + 20 * len(circuit.gates) * max(params.tau_rise, params.tau_fall)
    n = int(math.ceil(t_end / dt)) + 1
    return simulate_reference_waves(circuit, {name: sample_trace(stimuli[name], 0.0, dt, n)
                                              for name in circuit.inputs}, params)


def simulate_reference_waves(circuit, waves: dict[str, SampledWaveform],
                             params: AnalogGateParams = AnalogGateParams(), n: int | None = None):
    """Like :func:`simulate_reference` but driven by sampled input waveforms.

    Inputs shorter than ``n`` samples are extended with their last value.
    """
    w0 = next(iter(waves.values()))
    n = max(len(w) for w in waves.values()) if n is None else n
    nets = {}
    for name in circuit.inputs:
        w = waves[name]
        s = w.samples if len(w) >= n else np.concatenate([w.samples, np.full(n - len(w), w.samples[-1])])
        nets[name] = SampledWaveform(w0.t0, w0.dt, s[:n])
    for g in circuit.gates:
        nets[g.output] = solve_gate(params, [nets[i] for i in g.inputs], g.kind, circuit.load(g.output))
    return nets

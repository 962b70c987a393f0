"""Uniformly sampled voltage waveforms and their text format."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sigmoid import DigitalTrace, Edge, SigmoidTrace, eval_trace


@dataclass(frozen=True, eq=False)
class SampledWaveform:
    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty 1-d sequence")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.samples.size - 1)


def sample_trace(trace: SigmoidTrace, t0: float, dt: float, n: int) -> SampledWaveform:
    t = t0 + dt * np.arange(n)
    return SampledWaveform(t0, dt, eval_trace(trace, t))


def crossings(w: SampledWaveform, level: float) -> list[tuple[float, Edge, int]]:
    """Linearly interpolated crossings of ``level`` as (time, edge, sample index).

    The index is that of the last sample before the crossing.
    """
    s = w.samples
    above = s >= level
    idx = np.flatnonzero(above[1:] != above[:-1])
    out = []
    for i in idx:
        v0, v1 = s[i], s[i + 1]
        frac = (level - v0) / (v1 - v0)
        t = w.t0 + w.dt * (i + frac)
        out.append((float(t), Edge.RISE if v1 > v0 else Edge.FALL, int(i)))
    return out


def digitize_samples(w: SampledWaveform, vth: float) -> DigitalTrace:
    initial = int(w.samples[0] >= vth)
    return DigitalTrace(tuple((t, e) for t, e, _ in crossings(w, vth)), initial)


def format_waveform(w: SampledWaveform) -> str:
    head = [f"t0 {w.t0:.17g}", f"dt {w.dt:.17g}"]
    return "\n".join(head + [f"{v:.17g}" for v in w.samples]) + "\n"


def parse_waveform(text: str) -> SampledWaveform:
    t0 = dt = None
    vals = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "t0":
                t0 = float(parts[1])
            elif parts[0] == "dt":
                dt = float(parts[1])
            else:
                vals.append(float(parts[0]))
        except (ValueError, IndexError):
            raise ValueError(f"line {lineno}: cannot parse {raw!r}") from None
    if t0 is None or dt is None:
        raise ValueError("waveform file needs 't0' and 'dt' headers")
    return SampledWaveform(t0, dt, np.array(vals))


def write_waveform(path, w: SampledWaveform) -> None:
    Path(path).write_text(format_waveform(w))


def read_waveform(path) -> SampledWaveform:
    return parse_waveform(Path(path).read_text())


def write_samples_tsv(path, w: SampledWaveform) -> None:
    """Plot-ready ``t<TAB>V`` dump."""
    with open(path, "w") as fh:
        for t, v in zip(w.times, w.samples):
            fh.write(f"{t:.17g}\t{v:.17g}\n")

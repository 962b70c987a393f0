"""Sigmoid traces: data model, evaluation, digitization and the t_err metric.

Time is carried in two units.  Public functions taking ``t`` use seconds;
sigmoid parameters use *scaled* time ``b = t * 1e10`` so that ``b`` is of
order one per 100 ps and ``a`` stays in a comparable range.

A trace is the sum of logistic transitions shifted by an integer number of
supply levels so that it starts at ``initial_level * vdd``::

    V(t) = vdd * (sum_i 1 / (1 + exp(-a_i * (t * 1e10 - b_i))) - k)

where ``k`` is the number of falling transitions minus ``initial_level``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

SCALE = 1e10
# Scaled-time grid for transition times.  A power of two keeps shifts and
# differences of snapped times exact for |b| < 2**16 (6.5 us).
TIME_QUANTUM = 2.0 ** -36
DUMMY_TIME = -math.inf


def snap(b: float) -> float:
    """Round a scaled time onto the simulator's dyadic time grid."""
    if not math.isfinite(b):
        return b
    return round(b / TIME_QUANTUM) * TIME_QUANTUM


class SigmoidTransition(NamedTuple):
    """One logistic edge: slope ``a`` (sign is polarity) and scaled time ``b``."""

    a: float
    b: float

    @property
    def rising(self) -> bool:
        return self.a > 0

    @property
    def is_dummy(self) -> bool:
        return self.b == DUMMY_TIME


class TraceError(ValueError):
    """A transition list violates the trace invariants."""


@dataclass(frozen=True)
class SigmoidTrace:
    transitions: tuple[SigmoidTransition, ...]
    vdd: float = 0.8
    initial_level: int = 0

    def __post_init__(self):
        trs = tuple(SigmoidTransition(float(a), float(b)) for a, b in self.transitions)
        object.__setattr__(self, "transitions", trs)
        if self.initial_level not in (0, 1):
            raise TraceError(f"initial_level must be 0 or 1, got {self.initial_level!r}")
        if not self.vdd > 0:
            raise TraceError("vdd must be positive")
        expect_rising = self.initial_level == 0
        prev_b = -math.inf
        for i, (a, b) in enumerate(trs):
            if a == 0 or not math.isfinite(a):
                raise TraceError(f"transition {i}: slope must be finite and non-zero")
            if not math.isfinite(b):
                raise TraceError(f"transition {i}: time must be finite")
            if (a > 0) != expect_rising:
                raise TraceError(f"transition {i}: polarity does not alternate")
            if b < prev_b:
                raise TraceError(f"transition {i}: times not ascending")
            prev_b = b
            expect_rising = not expect_rising

    def __len__(self) -> int:
        return len(self.transitions)

    @cached_property
    def a(self) -> np.ndarray:
        return np.array([s.a for s in self.transitions], dtype=float)

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([s.b for s in self.transitions], dtype=float)

    @property
    def offset(self) -> int:
        """Integer supply-level offset ``k`` subtracted from the sigmoid sum."""
        return int(np.count_nonzero(self.a < 0)) - self.initial_level

    @property
    def final_level(self) -> int:
        return self.initial_level ^ (len(self.transitions) & 1)

    def shifted(self, db: float) -> SigmoidTrace:
        """Copy with every transition time moved by ``db`` scaled units."""
        return SigmoidTrace(
            tuple(SigmoidTransition(a, b + db) for a, b in self.transitions),
            self.vdd,
            self.initial_level,
        )

    def __call__(self, t):
        return eval_trace(self, t)


def eval_sigmoid(t, s: SigmoidTransition):
    """Logistic value of one transition at time ``t`` (seconds)."""
    return expit(s.a * (np.asarray(t, dtype=float) * SCALE - s.b))


def _sum_scaled(a: np.ndarray, b: np.ndarray, k: int, vdd: float, x):
    x = np.asarray(x, dtype=float)
    if a.size == 0:
        return np.zeros_like(x) - vdd * k
    z = expit(a * (x[..., None] - b))
    return vdd * (z.sum(axis=-1) - k)


def eval_trace(trace: SigmoidTrace, t):
    """Trace voltage at ``t`` seconds (scalar or array)."""
    x = np.asarray(t, dtype=float) * SCALE
    v = _sum_scaled(trace.a, trace.b, trace.offset, trace.vdd, x)
    return float(v) if v.ndim == 0 else v


class Edge(enum.IntEnum):
    FALL = -1
    RISE = 1


@dataclass(frozen=True)
class DigitalTrace:
    """Threshold crossings in seconds, alternating from ``initial_level``."""

    crossings: tuple[tuple[float, Edge], ...]
    initial_level: int = 0

    def __post_init__(self):
        cr = tuple((float(t), Edge(d)) for t, d in self.crossings)
        object.__setattr__(self, "crossings", cr)
        expect = Edge.RISE if self.initial_level == 0 else Edge.FALL
        prev = -math.inf
        for t, d in cr:
            if d != expect:
                raise TraceError("crossing directions do not alternate")
            if t < prev:
                raise TraceError("crossings not sorted")
            prev = t
            expect = Edge(-expect)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.crossings]

    @property
    def final_level(self) -> int:
        return self.initial_level ^ (len(self.crossings) & 1)

    def level_at(self, t: float) -> int:
        n = sum(1 for tc, _ in self.crossings if tc <= t)
        return self.initial_level ^ (n & 1)

    @classmethod
    def from_times(cls, times: Iterable[float], initial_level: int = 0) -> DigitalTrace:
        d = Edge.RISE if initial_level == 0 else Edge.FALL
        out = []
        for t in times:
            out.append((t, d))
            d = Edge(-d)
        return cls(tuple(out), initial_level)


def _pulse_extremum(a0, b0, a1, b1, k, vdd) -> float:
    """Scaled time of the extremum of an isolated opposite-polarity pair."""
    up = a0 > 0
    a = np.array([a0, a1])
    b = np.array([b0, b1])

    def f(x):
        v = vdd * (expit(a * (x - b)).sum() - k)
        return -v if up else v

    lo, hi = min(b0, b1), max(b0, b1)
    if hi - lo == 0.0:
        return lo
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, abs(hi))})
    return float(res.x)


def digitize(trace: SigmoidTrace, vth: float | None = None, tol: float = 1e-15) -> DigitalTrace:
    """Threshold crossings of ``trace`` at ``vth`` (default vdd/2).

    Candidate brackets come from each transition time, its +-5/|a|
    neighbourhood and the pulse extremum between adjacent transitions;
    crossings inside a bracket are refined by bisection to ``tol`` seconds.
    Work is done relative to the first transition so that a shifted trace
    digitizes to exactly shifted crossings.
    """
    if vth is None:
        vth = trace.vdd / 2
    if not 0 < vth < trace.vdd:
        raise ValueError("vth must lie strictly between 0 and vdd")
    n = len(trace)
    if n == 0:
        return DigitalTrace((), trace.initial_level)
    origin = trace.transitions[0].b
    a = trace.a
    b = trace.b - origin
    k = trace.offset
    vdd = trace.vdd

    def g(x):
        return _sum_scaled(a, b, k, vdd, x) - vth

    pts = {b[0] - 50.0 / abs(a[0]), b[-1] + 50.0 / abs(a[-1])}
    for ai, bi in zip(a, b):
        w = 5.0 / abs(ai)
        pts.update((bi - w, bi, bi + w))
    for i in range(n - 1):
        if min(abs(a[i]), abs(a[i + 1])) * (b[i + 1] - b[i]) < 40.0:
            pts.add(_pulse_extremum(a[i], b[i], a[i + 1], b[i + 1], 1 if a[i] > 0 else 0, vdd))
            pts.add(0.5 * (b[i] + b[i + 1]))
    xs = np.array(sorted(pts))
    vals = g(xs)
    tol_scaled = tol * SCALE

    level = trace.initial_level
    crossings: list[tuple[float, Edge]] = []
    for j in range(1, len(xs)):
        v = vals[j]
        hit = v >= 0 if level == 0 else v <= 0
        if not hit:
            continue
        if v == 0:
            x = xs[j]
        else:
            lo, hi = xs[j - 1], xs[j]
            while hi - lo > tol_scaled:
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                gm = float(g(mid))
                if (gm >= 0) if level == 0 else (gm <= 0):
                    hi = mid
                else:
                    lo = mid
            x = 0.5 * (lo + hi)
        crossings.append(((origin + x) / SCALE, Edge.RISE if level == 0 else Edge.FALL))
        level ^= 1
    return DigitalTrace(tuple(crossings), trace.initial_level)


def mismatch_time(p: DigitalTrace, q: DigitalTrace, horizon: float) -> float:
    """Total time in [0, horizon] where ``p`` and ``q`` disagree (t_err)."""
    events = sorted(
        [(t, 0) for t, _ in p.crossings if 0.0 < t < horizon]
        + [(t, 1) for t, _ in q.crossings if 0.0 < t < horizon]
    )
    lp, lq = p.level_at(0.0), q.level_at(0.0)
    last = 0.0
    total = 0.0
    for t, who in events:
        if lp != lq:
            total += t - last
        last = t
        if who == 0:
            lp ^= 1
        else:
            lq ^= 1
    if lp != lq:
        total += horizon - last
    return total


# -- text format ------------------------------------------------------------

def format_trace(trace: SigmoidTrace, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"vdd {trace.vdd:.17g}")
    lines.append(f"initial {trace.initial_level}")
    lines.extend(f"{a:.17g} {b:.17g}" for a, b in trace.transitions)
    return "\n".join(lines) + "\n"


def parse_trace(text: str, *, default_initial: int | None = None) -> SigmoidTrace:
    """Parse the ``vdd``/``initial``/``a b`` text format.

    A file without an ``initial`` header is rejected unless
    ``default_initial`` is given, since the level at -inf cannot be inferred
    from the parameters alone.
    """
    vdd = None
    initial = None
    trs: list[SigmoidTransition] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "vdd":
                vdd = float(parts[1])
            elif parts[0] == "initial":
                initial = int(parts[1])
            elif len(parts) == 2:
                trs.append(SigmoidTransition(float(parts[0]), float(parts[1])))
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise TraceError(f"line {lineno}: cannot parse {raw!r}") from None
    if vdd is None:
        raise TraceError("missing 'vdd' header")
    if initial is None:
        if default_initial is None:
            raise TraceError("missing 'initial' header")
        initial = default_initial
    return SigmoidTrace(tuple(trs), vdd, initial)


def write_trace(path, trace: SigmoidTrace, comment: str | None = None) -> None:
    Path(path).write_text(format_trace(trace, comment))


def read_trace(path, **kw) -> SigmoidTrace:
    return parse_trace(Path(path).read_text(), **kw)


def trace_from_pairs(pairs: Sequence[tuple[float, float]], vdd: float = 0.8,
                     initial_level: int | None = None) -> SigmoidTrace:
    """Build a trace, inferring ``initial_level`` from the first polarity."""
    if initial_level is None:
        initial_level = 0 if not pairs or pairs[0][0] > 0 else 1
    return SigmoidTrace(tuple(SigmoidTransition(a, b) for a, b in pairs), vdd, initial_level)

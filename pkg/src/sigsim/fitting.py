"""Levenberg-Marquardt least squares and sigmoid-trace fitting of sampled waveforms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .sigmoid import SCALE, Edge, SigmoidTrace, SigmoidTransition
from .waveform import SampledWaveform, crossings


class FitError(RuntimeError):
    pass


class SeedCountMismatch(FitError):
    """The clipped waveform does not show the requested number of crossings."""


class FitDiverged(FitError):
    pass


class SingularNormalEquations(FitError):
    """The damped normal matrix cannot be solved: degenerate parameterization."""


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 200
    initial_damping: float = 1e-3
    convergence_tol: float = 1e-10
    inflection_weight: float = 10.0
    inflection_window: float = 5e-12  # seconds

    def __post_init__(self):
        for name in ("max_iterations", "initial_damping", "convergence_tol",
                     "inflection_weight", "inflection_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.inflection_weight < 1:
            raise ValueError("inflection_weight must be >= 1")


MAX_DAMPING = 1e16
MIN_DAMPING = 1e-15


def forward_difference_jacobian(residuals: Callable, p: np.ndarray, r0=None, rel_step: float = 1e-7):
    p = np.asarray(p, dtype=float)
    r0 = residuals(p) if r0 is None else r0
    J = np.empty((r0.size, p.size))
    for j in range(p.size):
        h = rel_step * max(1.0, abs(p[j]))
        q = p.copy()
        q[j] += h
        J[:, j] = (residuals(q) - r0) / h
    return J


def levenberg_marquardt(residuals: Callable, jacobian: Callable | None, init,
                        cfg: FitConfig = FitConfig(), log: list | None = None) -> np.ndarray:
    """Minimize ``0.5 * |residuals(p)|**2`` starting from ``init``.

    Each iteration first tries the undamped Gauss-Newton step and keeps it
    when the achieved reduction is at least 3/4 of the predicted one;
    otherwise the Marquardt-scaled damping ``(JᵀJ + λ diag JᵀJ)`` is
    increased until the cost drops.  ``jacobian=None`` selects forward
    differences.  If ``log`` is given it receives ``(iteration, cost,
    damping)`` for the start point and every accepted step.
    """
    p = np.array(init, dtype=float)
    r = np.asarray(residuals(p), dtype=float)
    cost = 0.5 * float(r @ r)
    if not math.isfinite(cost):
        raise FitDiverged("non-finite cost at the initial point")
    lam = cfg.initial_damping
    if log is not None:
        log.append((0, cost, lam))
    if cost == 0.0:
        return p

    for it in range(1, cfg.max_iterations + 1):
        J = jacobian(p) if jacobian is not None else forward_difference_jacobian(residuals, p, r)
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        if np.any(diag <= 0.0) or not np.all(np.isfinite(A)):
            raise SingularNormalEquations("Jacobian has a zero or non-finite column")
        if not np.any(g):
            break

        accepted = False
        try:
            step = np.linalg.solve(A, -g)
            pred = -(g @ step) - 0.5 * step @ A @ step
            p_new = p + step
            r_new = np.asarray(residuals(p_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new)
            if pred > 0 and math.isfinite(cost_new) and (cost - cost_new) >= 0.75 * pred:
                accepted = True
                lam = max(lam / 10.0, MIN_DAMPING)
        except np.linalg.LinAlgError:
            pass

        while not accepted:
            M = A + lam * np.diag(diag)
            try:
                step = np.linalg.solve(M, -g)
            except np.linalg.LinAlgError:
                if lam <= cfg.initial_damping:
                    raise SingularNormalEquations("damped normal matrix is singular") from None
                step = None
            if step is not None and np.all(np.isfinite(step)):
                p_new = p + step
                r_new = np.asarray(residuals(p_new), dtype=float)
                cost_new = 0.5 * float(r_new @ r_new)
                if math.isfinite(cost_new) and cost_new < cost:
                    accepted = True
                    lam = max(lam / 10.0, MIN_DAMPING)
                    break
            lam *= 10.0
            if lam > MAX_DAMPING:
                break
        if not accepted:
            break

        rel = (cost - cost_new) / cost
        p, r, cost = p_new, r_new, cost_new
        if log is not None:
            log.append((it, cost, lam))
        if cost == 0.0 or rel < cfg.convergence_tol:
            break
    return p


# -- sigmoid-trace fitting --------------------------------------------------

def _seed_slope(w: SampledWaveform, y: np.ndarray, vdd: float, idx: int, edge: Edge,
                lo: int, hi: int) -> float:
    """Slope parameter from the 20%-80% secant around sample ``idx``.

    Searches only within samples ``[lo, hi)``; falls back to the local
    derivative when the pulse does not reach both levels.
    """
    l20, l80 = 0.2 * vdd, 0.8 * vdd
    seg_before = y[lo:idx + 1]
    seg_after = y[idx + 1:hi]
    if edge == Edge.RISE:
        before = np.flatnonzero(seg_before <= l20)
        after = np.flatnonzero(seg_after >= l80)
    else:
        before = np.flatnonzero(seg_before >= l80)
        after = np.flatnonzero(seg_after <= l20)
    if before.size and after.size:
        i0 = lo + before[-1]
        i1 = idx + 1 + after[0]
        start_lvl = l20 if edge == Edge.RISE else l80
        end_lvl = l80 if edge == Edge.RISE else l20
        t20 = i0 + (start_lvl - y[i0]) / (y[i0 + 1] - y[i0])
        t80 = i1 - 1 + (end_lvl - y[i1 - 1]) / (y[i1] - y[i1 - 1])
        width = (t80 - t20) * w.dt * SCALE
        if width > 0:
            return 2.0 * math.log(4.0) / width
    dv = abs(y[idx + 1] - y[idx]) / (w.dt * SCALE)
    return max(4.0 * dv / vdd, 1e-3)


def seed_transitions(w: SampledWaveform, vdd: float, y: np.ndarray | None = None):
    """Initial ``(a, b)`` guesses from the vdd/2 crossings of the clipped samples."""
    if y is None:
        y = np.clip(w.samples, 0.0, vdd)
    clipped = SampledWaveform(w.t0, w.dt, y)
    cr = crossings(clipped, vdd / 2)
    seeds = []
    for j, (t, edge, idx) in enumerate(cr):
        lo = 0 if j == 0 else (cr[j - 1][2] + idx) // 2 + 1
        hi = y.size if j == len(cr) - 1 else (idx + cr[j + 1][2]) // 2 + 1
        a = _seed_slope(clipped, y, vdd, idx, edge, lo, hi)
        seeds.append((a if edge == Edge.RISE else -a, t * SCALE))
    return seeds


def trace_model(x: np.ndarray, a: np.ndarray, b: np.ndarray, k: int, vdd: float):
    """Joint model value and logistic matrix at scaled times ``x``."""
    F = expit(a * (x[:, None] - b))
    return vdd * (F.sum(axis=1) - k), F


def trace_jacobian(x: np.ndarray, a: np.ndarray, b: np.ndarray, vdd: float) -> np.ndarray:
    """d model / d(a_1, b_1, ..., a_n, b_n) in closed form, shape (m, 2n)."""
    d = x[:, None] - b
    F = expit(a * d)
    dF = vdd * F * (1.0 - F)
    J = np.empty((x.size, 2 * a.size))
    J[:, 0::2] = dF * d
    J[:, 1::2] = -dF * a
    return J


def fit_trace(w: SampledWaveform, n_transitions: int, vdd: float, initial_level: int,
              cfg: FitConfig = FitConfig(), log: list | None = None) -> SigmoidTrace:
    """Fit ``n_transitions`` alternating sigmoids to a sampled waveform.

    Samples are clipped to ``[0, vdd]`` first so over/undershoot does not
    pull the fit.  The model is clipped the same way before it is compared,
    so a sum of sigmoids whose tails overlap (and so leaves the rails) is
    still matched exactly by its own parameters.  Samples within ``cfg.inflection_window`` of a seed
    crossing get ``cfg.inflection_weight`` as residual weight.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    y = np.clip(w.samples, 0.0, vdd)
    seeds = seed_transitions(w, vdd, y)
    if len(seeds) != n_transitions:
        raise SeedCountMismatch(f"found {len(seeds)} crossings, expected {n_transitions}")
    if (seeds[0][0] > 0) != (initial_level == 0):
        raise SeedCountMismatch("first crossing direction contradicts initial_level")

    t = w.times
    x = t * SCALE
    wts = np.ones_like(x)
    for _, b0 in seeds:
        wts[np.abs(t - b0 / SCALE) <= cfg.inflection_window] = cfg.inflection_weight
    signs = np.array([1.0 if a > 0 else -1.0 for a, _ in seeds])
    k = int(np.count_nonzero(signs < 0)) - initial_level

    def residuals(p):
        m, _ = trace_model(x, p[0::2], p[1::2], k, vdd)
        return wts * (np.clip(m, 0.0, vdd) - y)

    def jac(p):
        m, _ = trace_model(x, p[0::2], p[1::2], k, vdd)
        inside = (m > 0.0) & (m < vdd)
        return (wts * inside)[:, None] * trace_jacobian(x, p[0::2], p[1::2], vdd)

    p0 = np.array([v for s in seeds for v in s], dtype=float)
    p = levenberg_marquardt(residuals, jac, p0, cfg, log)
    # the model is a sum, so two neighbours may trade places during the
    # search; order by time before checking the polarity sequence
    order = np.argsort(p[1::2], kind="stable")
    a, b = p[0::2][order], p[1::2][order]
    if not (np.all(np.isfinite(p)) and np.all(np.sign(a) == signs)):
        raise FitDiverged("fit changed a transition's polarity")
    m, _ = trace_model(x, a, b, k, vdd)
    rms = math.sqrt(float(np.mean((np.clip(m, 0.0, vdd) - y) ** 2)))
    if rms > vdd / 4:
        raise FitDiverged(f"RMS error {rms:.3g} V exceeds vdd/4")
    return SigmoidTrace(tuple(SigmoidTransition(float(ai), float(bi)) for ai, bi in zip(a, b)),
                        vdd, initial_level)


def fit_rms(w: SampledWaveform, trace: SigmoidTrace) -> float:
    """Unweighted RMS residual of the clipped ``trace`` against the clipped samples."""
    y = np.clip(w.samples, 0.0, trace.vdd)
    m, _ = trace_model(w.times * SCALE, trace.a, trace.b, trace.offset, trace.vdd)
    return math.sqrt(float(np.mean((np.clip(m, 0.0, trace.vdd) - y) ** 2)))

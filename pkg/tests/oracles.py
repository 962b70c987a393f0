"""Brute-force reference implementations used by the tests.

They deliberately avoid the package's own numerics: plain loops over
``math.exp`` and dense time grids.
"""
import math

import numpy as np


def logistic(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def trace_value(pairs, initial, vdd, t):
    """Sum-of-logistics value at time ``t`` seconds, offset from the polarity count."""
    k = sum(1 for a, _ in pairs if a < 0) - initial
    return vdd * (sum(logistic(a * (t * 1e10 - b)) for a, b in pairs) - k)


def dense_values(trace, t):
    x = np.asarray(t) * 1e10
    out = np.full(x.shape, -float(trace.offset))
    for a, b in trace.transitions:
        z = a * (x - b)
        out += np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))
    return trace.vdd * out


def dense_crossings(trace, vth, t0, t1, dt):
    """Crossing times by sign changes on a fine grid, refined linearly."""
    out = []
    step = int(2e5)
    t = t0
    prev_t, prev_v = None, None
    while t < t1:
        ts = t + dt * np.arange(step)
        v = dense_values(trace, ts) - vth
        if prev_v is not None:
            ts = np.concatenate([[prev_t], ts])
            v = np.concatenate([[prev_v], v])
        s = v >= 0
        for i in np.flatnonzero(s[1:] != s[:-1]):
            out.append(ts[i] + dt * (-v[i]) / (v[i + 1] - v[i]) * (ts[i + 1] - ts[i]) / dt)
        prev_t, prev_v = ts[-1], v[-1]
        t = ts[-1] + dt
    return out


def pair_peak(p, q, vdd, dt=1e-14, pad=2e-11):
    """Extremum of an adjacent pair's pulse on a grid of step ``dt`` seconds."""
    lo = min(p[1], q[1]) * 1e-10 - pad
    hi = max(p[1], q[1]) * 1e-10 + pad
    t = np.arange(lo, hi, dt)
    k = 1 if p[0] > 0 else 0
    x = t * 1e10
    v = vdd * (1 / (1 + np.exp(-p[0] * (x - p[1]))) + 1 / (1 + np.exp(-q[0] * (x - q[1]))) - k)
    return v.max() if p[0] > 0 else v.min()


def random_dag(rng, n_inputs=4, n_gates=10, p_inv=0.3):
    """Random INV/NOR2 netlist as (inputs, outputs, [(out, kind, ins)])."""
    nets = [f"i{k}" for k in range(n_inputs)]
    gates = []
    for k in range(n_gates):
        out = f"n{k}"
        if rng.random() < p_inv:
            gates.append((out, "INV", (nets[rng.integers(len(nets))],)))
        else:
            a, b = rng.choice(len(nets), size=2, replace=False)
            gates.append((out, "NOR2", (nets[a], nets[b])))
        nets.append(out)
    used = {i for _, _, ins in gates for i in ins}
    outputs = [g[0] for g in gates if g[0] not in used] or [gates[-1][0]]
    return nets[:n_inputs], outputs, gates


def fixed_delay_sim(inputs, gates, stim, delay):
    """Transport-delay event simulation over scaled times.

    ``stim`` maps an input to (initial level, sorted toggle times).  Each
    gate output changes ``delay`` after any instant at which its boolean
    value changes; all toggles at one instant are applied together.
    Returns the same (initial level, toggle times) form for every net.
    """
    nets = dict((n, stim[n]) for n in inputs)
    todo = list(gates)
    while todo:
        rest = []
        for out, kind, ins in todo:
            if not all(i in nets for i in ins):
                rest.append((out, kind, ins))
                continue
            def value(levels):
                return int(not any(levels))
            lv = [nets[i][0] for i in ins]
            init = value(lv)
            cur = init
            toggles = []
            for t in sorted({t for i in ins for t in nets[i][1]}):
                for j, i in enumerate(ins):
                    lv[j] = nets[i][0] ^ (sum(1 for u in nets[i][1] if u <= t) & 1)
                new = value(lv)
                if new != cur:
                    toggles.append(t + delay)
                    cur = new
            nets[out] = (init, toggles)
        todo = rest
    return nets


def random_step_stimuli(rng, inputs, n=6, slope=400.0):
    """Steep alternating edges at distinct integer scaled times in [1, 40).

    Returns (sigmoid traces, {name: (initial level, times)}).
    """
    from sigsim.sigmoid import trace_from_pairs
    stim, digital = {}, {}
    for name in inputs:
        lvl = int(rng.integers(2))
        times = sorted(rng.choice(np.arange(1, 40), size=n, replace=False).astype(float))
        sign = 1 if lvl == 0 else -1
        pairs = []
        for t in times:
            pairs.append((sign * slope, t))
            sign = -sign
        stim[name] = trace_from_pairs(pairs, initial_level=lvl)
        digital[name] = (lvl, times)
    return stim, digital

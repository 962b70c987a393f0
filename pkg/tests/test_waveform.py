import numpy as np
import pytest

from sigsim.sigmoid import Edge, trace_from_pairs
from sigsim.waveform import (SampledWaveform, crossings, digitize_samples, format_waveform, parse_waveform,
                             sample_trace)


def test_sampled_waveform_invariants():
    with pytest.raises(ValueError):
        SampledWaveform(0.0, 0.0, [1.0])
    with pytest.raises(ValueError):
        SampledWaveform(0.0, 1e-12, [])
    w = SampledWaveform(1e-12, 2e-12, [0, 1, 2])
    assert w.t_end == pytest.approx(5e-12)
    assert len(w) == 3


def test_crossings_linear_interpolation():
    w = SampledWaveform(0.0, 1.0, [0.0, 0.2, 0.6, 0.8, 0.3])
    got = crossings(w, 0.4)
    assert [(round(t, 12), e, i) for t, e, i in got] == [(1.5, Edge.RISE, 1), (3.8, Edge.FALL, 3)]


def test_digitize_samples_matches_trace():
    tr = trace_from_pairs([(20, 1.0), (-20, 3.0)])
    w = sample_trace(tr, 0.0, 1e-14, 50_000)
    d = digitize_samples(w, 0.4)
    assert d.initial_level == 0
    assert np.allclose(d.times, [1e-10, 3e-10], atol=1e-17)


def test_waveform_text_round_trip():
    w = SampledWaveform(-3e-12, 1e-13, np.array([0.1, 1 / 3, 0.7]))
    back = parse_waveform(format_waveform(w))
    assert back.t0 == w.t0 and back.dt == w.dt
    assert np.array_equal(back.samples, w.samples)


def test_waveform_parse_errors():
    with pytest.raises(ValueError, match="t0"):
        parse_waveform("0.1\n0.2\n")
    with pytest.raises(ValueError, match="line 3"):
        parse_waveform("t0 0\ndt 1e-12\nabc\n")

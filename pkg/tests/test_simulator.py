import io
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from qfclink.correlation import analyze_g2, coincidence_histogram, integrate_peaks
from qfclink.presets import get_preset
from qfclink.scenario import DetectorModel, GaussianShape, TabulatedShape
from qfclink.simulator import (CHUNK_CYCLES, ORIGIN_DARK, ORIGIN_SIGNAL, ORIGIN_STAGE_NOISE, apply_dead_time,
                               apply_jitter, apply_loss, bernoulli_cycles, expected_rates, hbt_split,
                               sample_arrival, simulate)
from qfclink.timetag import StreamHeader, TagStream, write_stream


def _bytes(s):
    buf = io.BytesIO()
    write_stream(s, buf)
    return buf.getvalue()


def test_count_rate_matches_expectation():
    sc = get_preset("direct-866")
    s = simulate(sc, 60.0, 1)
    s.validate()
    lam = expected_rates(sc).total * s.n_cycles * sc.sequence.cycle_period
    assert abs(len(s) - lam) < 5 * math.sqrt(lam)
    assert s.header.duration_ps == 60 * 10 ** 12


def test_empty_output_is_valid():
    sc = get_preset("direct-866")
    dark = replace(sc, source=replace(sc.source, detection_probability_per_cycle=0.0),
                   detectors=(DetectorModel(),) * 2)
    s = simulate(dark, 5.0, 1)
    assert len(s) == 0
    assert len(_bytes(s)) == 32


def test_invalid_arguments():
    sc = get_preset("direct-866")
    with pytest.raises(ValueError):
        simulate(sc, 0.0, 1)
    with pytest.raises(ValueError):
        simulate(sc, 1.0, -1)


def test_same_seed_same_bytes_and_other_seed_differs():
    sc = get_preset("qfc-1530")
    a, b, c = simulate(sc, 30.0, 9), simulate(sc, 30.0, 9), simulate(sc, 30.0, 10)
    assert _bytes(a) == _bytes(b)
    assert _bytes(a) != _bytes(c)


def test_worker_count_does_not_change_output():
    sc = get_preset("qfc-1530")
    duration = 200.0
    assert duration / sc.sequence.cycle_period > 4 * CHUNK_CYCLES
    one = simulate(sc, duration, 5, workers=1)
    many = simulate(sc, duration, 5, workers=3)
    assert _bytes(one) == _bytes(many)


def test_provenance_rates():
    sc = get_preset("qfc-1530")
    duration = 1000.0
    s = simulate(sc, duration, 2, debug=True)
    r = expected_rates(sc)
    T = s.n_cycles * sc.sequence.cycle_period
    for code, per_ch in ((ORIGIN_SIGNAL, r.signal), (ORIGIN_STAGE_NOISE, r.stage_noise), (ORIGIN_DARK, r.dark)):
        for ch in (0, 1):
            n = np.count_nonzero((s.origin == code) & (s.channels == ch))
            lam = per_ch[ch] * T
            assert abs(n - lam) < 5 * math.sqrt(lam) + 1, (code, ch, n, lam)
    assert simulate(sc, 10.0, 2).origin is None


def test_signal_alone_never_coincides_at_zero_delay():
    sc = get_preset("qfc-1530")
    s = simulate(sc, 3000.0, 4, debug=True)
    sig = s.select(s.origin == ORIGIN_SIGNAL)
    peaks = integrate_peaks(coincidence_histogram(sig), sc.sequence.cycle_period_ps)
    assert peaks.as_dict()[0] == 0
    # the measured zero peak is built entirely from pairs involving background
    full = integrate_peaks(coincidence_histogram(s), sc.sequence.cycle_period_ps)
    assert full.as_dict()[0] > 0


def test_tags_stay_inside_gate():
    sc = get_preset("qfc-1530")
    s = simulate(sc, 50.0, 3)
    phase = s.timestamps % sc.sequence.cycle_period_ps
    g0, g1 = sc.gate_ps
    jitter = 6 * sc.detectors[0].jitter_sigma
    assert phase.min() >= g0 - jitter and phase.max() <= g1 + jitter


# -- arrival sampling ------------------------------------------------------------------

def test_sample_arrival_chi_square():
    shape = GaussianShape()
    rng = np.random.default_rng(0)
    x = sample_arrival(shape, rng, 200_000)
    edges = np.linspace(0, shape.duration, 24)
    obs, _ = np.histogram(x, edges)
    exp = shape.bin_masses(edges) * len(x)
    assert stats.chisquare(obs, exp).pvalue > 1e-3
    assert x.mean() == pytest.approx(shape.mean(), abs=5 * x.std() / math.sqrt(len(x)))
    assert isinstance(sample_arrival(shape, rng), float)


def test_sample_arrival_narrow_table_is_delta_like():
    t = TabulatedShape(edges=(0.0, 1.0e-6, 1.0001e-6, 2.3e-6), density=(0.0, 1.0, 0.0))
    x = sample_arrival(t, np.random.default_rng(1), 1000)
    assert np.all((x >= 1.0e-6) & (x <= 1.0001e-6))


def test_sample_arrival_ks():
    shape = TabulatedShape(edges=(0.0, 0.5e-6, 1.5e-6, 2.3e-6), density=(2.0, 1.0, 0.5))
    x = sample_arrival(shape, np.random.default_rng(3), 20_000)
    assert stats.kstest(x, shape.cdf).pvalue > 1e-3


def test_bernoulli_cycles():
    rng = np.random.default_rng(0)
    n, p = 10 ** 6, 0.0163
    idx = bernoulli_cycles(rng, n, p)
    assert np.all(np.diff(idx) > 0) and idx.min() >= 0 and idx.max() < n
    assert abs(len(idx) - n * p) < 5 * math.sqrt(n * p * (1 - p))
    assert len(bernoulli_cycles(rng, 10, 0.0)) == 0
    assert bernoulli_cycles(rng, 5, 1.0).tolist() == [0, 1, 2, 3, 4]


# -- stream operators ------------------------------------------------------------------

def _uniform_stream(n, seed=0, dur=10 ** 12):
    rng = np.random.default_rng(seed)
    return TagStream(StreamHeader(2, 10_040_161, dur), np.sort(rng.integers(0, dur, n)), rng.integers(0, 2, n))


def test_loss_fraction():
    s = _uniform_stream(10 ** 6)
    kept = apply_loss(s, 0.5, np.random.default_rng(1))
    assert abs(len(kept) / len(s) - 0.5) <= 0.0015
    with pytest.raises(ValueError):
        apply_loss(s, 1.5, np.random.default_rng(1))


def test_loss_composes_multiplicatively():
    s = _uniform_stream(4 * 10 ** 5)
    rng = np.random.default_rng(2)
    twice = apply_loss(apply_loss(s, 0.6, rng), 0.5, rng)
    lam = 0.3 * len(s)
    assert abs(len(twice) - lam) < 5 * math.sqrt(lam)


def _sequential_dead_time(ts, ch, dead):
    last = {}
    keep = []
    for t, c in zip(ts.tolist(), ch.tolist()):
        if c in last and t - last[c] < dead:
            keep.append(False)
        else:
            keep.append(True)
            last[c] = t
    return np.array(keep)


@pytest.mark.parametrize("seed", range(5))
def test_dead_time_matches_sequential_oracle(seed):
    s = _uniform_stream(5000, seed, dur=10 ** 7)
    dead = 5000
    got = apply_dead_time(s, dead)
    want = _sequential_dead_time(s.timestamps, s.channels, dead)
    np.testing.assert_array_equal(got.timestamps, s.timestamps[want])
    per_ch = apply_dead_time(s, [dead, 0])
    assert np.count_nonzero(per_ch.channels == 1) == np.count_nonzero(s.channels == 1)


def test_split_ratio_and_channels():
    s = _uniform_stream(10 ** 5)
    a, b = hbt_split(s, 0.3, np.random.default_rng(4))
    assert len(a) + len(b) == len(s)
    assert set(a.channels.tolist()) <= {0} and set(b.channels.tolist()) <= {1}
    assert abs(len(a) / len(s) - 0.3) < 5 * math.sqrt(0.21 / len(s))


def test_jitter_spread_and_order():
    s = _uniform_stream(10 ** 5)
    j = apply_jitter(s, 50.0, np.random.default_rng(5))
    j.validate()
    assert len(j) == len(s)
    assert apply_jitter(s, 0.0, np.random.default_rng(5)) is s
    # order statistics move by no more than the per-tag displacement
    d = np.sort(j.timestamps) - np.sort(s.timestamps)
    assert d.std() < 80
    with pytest.raises(ValueError):
        apply_jitter(s, -1.0, np.random.default_rng(5))


def test_jitter_displacement_std():
    dur = 10 ** 12
    ts = np.arange(1, 10 ** 5 + 1, dtype=np.int64) * 10 ** 6
    s = TagStream(StreamHeader(1, 1000, dur), ts, np.zeros(len(ts), np.uint8))
    j = apply_jitter(s, 50.0, np.random.default_rng(6))
    assert (j.timestamps - ts).std() == pytest.approx(50.0, rel=0.02)


def test_simulated_g2_matches_prediction_pooled():
    from qfclink.linkbudget import predict
    sc = get_preset("qfc-1530")
    nc = 0
    expected = 0.0
    for seed in range(4):
        _, _, g = analyze_g2(simulate(sc, 1500.0, seed))
        nc += int(g.n_coinc[g.n == 0][0])
        expected += predict(sc).g2_zero * g.N1 * g.N2 / g.N_trig
    assert abs(nc - expected) < 4 * math.sqrt(expected)

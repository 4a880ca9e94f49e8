"""Event-driven Monte Carlo generation of HBT tag streams for a link scenario.

Only cycles that produce an event are visited: signal clicks form a Bernoulli
process over cycles (drawn through geometric gaps) and noise is a Poisson
process restricted to the per-cycle gate. The cycle axis is cut into fixed
chunks of ``CHUNK_CYCLES``; each chunk has its own Philox stream keyed by
``(seed, chunk index)``, so the output does not depend on how many workers
run the chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Tuple

import numpy as np

from .scenario import PS, LinkScenario, PhotonShape, RateBreakdown, rate_breakdown, to_ps
from .timetag import StreamHeader, TagStream

ORIGIN_SIGNAL = 0
ORIGIN_STAGE_NOISE = 1
ORIGIN_DARK = 2

CHUNK_CYCLES = 1 << 22
RNG_ALGORITHM = "Philox4x64-10 (numpy), key = SeedSequence(seed, spawn_key=(chunk_index,)), chunk = 4194304 cycles"


def chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chunk_index,))
    return np.random.Generator(np.random.Philox(ss))


def expected_rates(scenario: LinkScenario) -> RateBreakdown:
    """Analytic per-channel signal and background rates the simulator draws from."""
    return rate_breakdown(scenario)


def sample_arrival(shape: PhotonShape, rng: np.random.Generator, size: Optional[int] = None):
    """Arrival offset(s) within the drive window, in seconds."""
    if size is None:
        return float(shape.sample(rng, 1)[0])
    return shape.sample(rng, size)


def bernoulli_cycles(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Indices in ``[0, n)`` of successes of ``n`` independent Bernoulli(p) trials."""
    if n <= 0 or p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    parts = []
    pos = -1
    while True:
        remaining = n - 1 - pos
        m = int(remaining * p + 6.0 * math.sqrt(remaining * p) + 16)
        idx = pos + np.cumsum(rng.geometric(p, m), dtype=np.int64)
        parts.append(idx[idx < n])
        if idx[-1] >= n:
            break
        pos = int(idx[-1])
    return np.concatenate(parts)


# -- stream operators ------------------------------------------------------------------

def apply_loss(stream: TagStream, survival: float, rng: np.random.Generator) -> TagStream:
    """Keep each tag independently with probability ``survival``."""
    if not 0.0 <= survival <= 1.0:
        raise ValueError("survival must lie in [0, 1]")
    return stream.select(rng.random(len(stream)) < survival)


def _sorted(stream: TagStream) -> TagStream:
    order = np.lexsort((stream.channels, stream.timestamps))
    return stream.select(order)


def apply_jitter(stream: TagStream, sigma: float, rng: np.random.Generator) -> TagStream:
    """Add centred Gaussian timing noise (``sigma`` in ps) and re-sort.

    Tags pushed outside ``[0, duration]`` are dropped.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0 or len(stream) == 0:
        return stream
    ts = stream.timestamps + np.rint(rng.standard_normal(len(stream)) * sigma).astype(np.int64)
    moved = TagStream(stream.header, ts, stream.channels, stream.origin)
    inside = (ts >= 0) & (ts <= stream.header.duration_ps)
    return _sorted(moved.select(inside))


def _dead_time_keep(t: np.ndarray, dead_time: int) -> np.ndarray:
    keep = np.ones(len(t), dtype=bool)
    if len(t) < 2 or dead_time <= 0:
        return keep
    # a tag at least dead_time after its predecessor is always accepted
    suspects = np.flatnonzero(np.diff(t) < dead_time) + 1
    last_accepted = 0
    prev = -2
    for i in suspects.tolist():
        if i - 1 != prev:
            last_accepted = t[i - 1]
        if t[i] - last_accepted < dead_time:
            keep[i] = False
        else:
            last_accepted = t[i]
        prev = i
    return keep


def apply_dead_time(stream: TagStream, dead_time) -> TagStream:
    """Drop tags closer than ``dead_time`` (ps) to the last accepted tag on the same channel.

    ``dead_time`` is a scalar or a per-channel sequence.
    """
    nch = stream.header.channel_count
    dts = np.broadcast_to(np.asarray(dead_time, dtype=float), (nch,)) if np.ndim(dead_time) == 0 \
        else np.asarray(dead_time, dtype=float)
    if np.all(dts == 0) or len(stream) == 0:
        return stream
    keep = np.ones(len(stream), dtype=bool)
    for ch in range(nch):
        idx = np.flatnonzero(stream.channels == ch)
        if len(idx):
            keep[idx] = _dead_time_keep(stream.timestamps[idx], int(round(dts[ch])))
    return stream.select(keep)


def hbt_split(stream: TagStream, ratio: float, rng: np.random.Generator) -> Tuple[TagStream, TagStream]:
    """Route each tag to arm 0 with probability ``ratio``, else arm 1.

    The returned streams carry channel ids 0 and 1 respectively.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    to0 = rng.random(len(stream)) < ratio
    header = StreamHeader(
        channel_count=max(2, stream.header.channel_count),
        cycle_period_ps=stream.header.cycle_period_ps,
        duration_ps=stream.header.duration_ps,
        resolution_ps=stream.header.resolution_ps,
    )
    arms = []
    for ch, mask in ((0, to0), (1, ~to0)):
        sub = stream.select(mask)
        arms.append(TagStream(header, sub.timestamps, np.full(len(sub), ch, np.uint8), sub.origin))
    return arms[0], arms[1]


# -- generation ------------------------------------------------------------------------

def _simulate_chunk(sc: LinkScenario, rates: RateBreakdown, seed: int, chunk: int,
                    first_cycle: int, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = chunk_rng(seed, chunk)
    period_ps = sc.sequence.cycle_period_ps
    period_s = sc.sequence.cycle_period
    g0, g1 = (g / PS for g in sc.gate)
    drive0 = sc.sequence.drive_start / PS

    cycles, offsets, chans, origin = [], [], [], []

    # signal: at most one click per cycle, routed to a detector afterwards
    p0, p1 = rates.signal_probability
    p = p0 + p1
    hit = bernoulli_cycles(rng, n, p)
    if len(hit):
        cycles.append(hit)
        chans.append((rng.random(len(hit)) * p >= p0).astype(np.uint8))
        offsets.append(drive0 + sc.source.shape.sample(rng, len(hit)) / PS)
        origin.append(np.full(len(hit), ORIGIN_SIGNAL, np.uint8))

    for code, per_channel in ((ORIGIN_STAGE_NOISE, rates.stage_noise), (ORIGIN_DARK, rates.dark)):
        for ch, rate in enumerate(per_channel):
            k = rng.poisson(rate * n * period_s) if rate > 0 else 0
            if k:
                cycles.append(rng.integers(0, n, k))
                chans.append(np.full(k, ch, np.uint8))
                offsets.append(rng.uniform(g0, g1, k))
                origin.append(np.full(k, code, np.uint8))

    if not cycles:
        e = np.empty(0, np.int64)
        return e, np.empty(0, np.uint8), np.empty(0, np.uint8)

    cyc = np.concatenate(cycles)
    ch = np.concatenate(chans)
    off = np.concatenate(offsets)
    org = np.concatenate(origin)
    sigma = np.array([d.jitter_sigma for d in sc.detectors])[ch]
    if np.any(sigma > 0):
        off = off + rng.standard_normal(len(off)) * sigma
    ts = (first_cycle + cyc) * np.int64(period_ps) + np.rint(off).astype(np.int64)
    order = np.lexsort((ch, ts))
    return ts[order], ch[order], org[order]


def simulate(scenario: LinkScenario, duration: float, seed: int, *,
             workers: int = 1, debug: bool = False) -> TagStream:
    """Simulate ``duration`` seconds of acquisition.

    The stream covers ``floor(duration / cycle_period)`` complete cycles. With
    ``debug=True`` each tag carries its provenance in ``TagStream.origin``
    (``ORIGIN_SIGNAL``, ``ORIGIN_STAGE_NOISE`` or ``ORIGIN_DARK``).
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    seq = scenario.sequence
    duration_ps = to_ps(duration)
    n_cycles = duration_ps // seq.cycle_period_ps
    rates = rate_breakdown(scenario)
    header = StreamHeader(channel_count=2, cycle_period_ps=seq.cycle_period_ps, duration_ps=duration_ps)

    jobs = [(i, k0, min(CHUNK_CYCLES, n_cycles - k0))
            for i, k0 in enumerate(range(0, n_cycles, CHUNK_CYCLES))]

    def run(job):
        i, k0, n = job
        return _simulate_chunk(scenario, rates, seed, i, k0, n)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]

    if parts:
        ts = np.concatenate([p[0] for p in parts])
        ch = np.concatenate([p[1] for p in parts])
        org = np.concatenate([p[2] for p in parts])
    else:
        ts, ch, org = np.empty(0, np.int64), np.empty(0, np.uint8), np.empty(0, np.uint8)

    stream = TagStream(header, ts, ch, org)
    # chunks cover disjoint, ordered cycle ranges and gates sit inside a cycle,
    # so the concatenation is already sorted unless jitter crosses a cycle edge
    if len(ts) > 1 and np.any(np.diff(ts) < 0):
        stream = _sorted(stream)
    inside = (stream.timestamps >= 0) & (stream.timestamps <= duration_ps)
    if not inside.all():
        stream = stream.select(inside)
    stream = apply_dead_time(stream, [d.dead_time for d in scenario.detectors])
    if not debug:
        stream = TagStream(stream.header, stream.timestamps, stream.channels)
    return stream

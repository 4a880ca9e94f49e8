"""Coincidence histograms, peak-integrated g2(n) and folded photon shapes.

Delays are ``t(ch_b) - t(ch_a)`` in picoseconds. Histogram bins are centred
on multiples of the bin width, so a zero delay falls in the middle bin.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .timetag import TagStream

DEFAULT_BIN_WIDTH_PS = 200_000          # 200 ns
DEFAULT_DELAY_RANGE_PS = 1_000_000_000  # 1 ms
SHAPE_BIN_WIDTH_PS = 80_000             # 80 ns
ZERO_COUNT_CL = 0.8413                  # one-sided: -ln(1 - CL) = 1.84
_PAIR_BLOCK = 1 << 22
MAX_BINS = 1 << 27


class ChannelError(KeyError):
    pass


def _half_bins(delay_range: int, bin_width: int) -> int:
    # smallest K with (K + 1/2) * w > R, so |d| <= R always lands inside
    return (2 * delay_range + bin_width) // (2 * bin_width)


@dataclass
class CoincidenceHistogram:
    bin_width: int
    delay_range: int
    counts: np.ndarray
    ch_a: int = 0
    ch_b: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def half_bins(self) -> int:
        return (len(self.counts) - 1) // 2

    @property
    def delays(self) -> np.ndarray:
        """Bin centres in ps."""
        return (np.arange(len(self.counts), dtype=np.int64) - self.half_bins) * self.bin_width

    def __add__(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if (self.bin_width, self.delay_range, self.ch_a, self.ch_b) != (
                other.bin_width, other.delay_range, other.ch_a, other.ch_b):
            raise ValueError("histograms have different binning or channels")
        return CoincidenceHistogram(self.bin_width, self.delay_range, self.counts + other.counts,
                                    self.ch_a, self.ch_b, {})

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "delay_ps", "counts"])
        for i, (d, c) in enumerate(zip(self.delays.tolist(), self.counts.tolist())):
            w.writerow([i, d, c])


class StreamingCorrelator:
    """Cross-correlation histogram accumulated over time-ordered blocks of tags.

    Each call to :meth:`update` takes the next block of a sorted stream. Only
    tags within ``delay_range`` of the newest tag are kept between blocks, so
    memory is bounded by the window rather than the stream length.
    """

    def __init__(self, bin_width: int = DEFAULT_BIN_WIDTH_PS, delay_range: int = DEFAULT_DELAY_RANGE_PS):
        bin_width, delay_range = int(bin_width), int(delay_range)
        if bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if delay_range < 0:
            raise ValueError("delay_range must be non-negative")
        self.bin_width = bin_width
        self.delay_range = delay_range
        self.K = _half_bins(delay_range, bin_width)
        if 2 * self.K + 1 > MAX_BINS:
            raise ValueError(f"{2 * self.K + 1} histogram bins requested; widen the bins or shorten the range")
        self.counts = np.zeros(2 * self.K + 1, dtype=np.int64)
        self._buf_a = np.empty(0, np.int64)
        self._buf_b = np.empty(0, np.int64)
        self._last = None

    def _pairs(self, X: np.ndarray, Y: np.ndarray) -> None:
        """Histogram every (x, y) with |y - x| <= range; X and Y sorted."""
        if len(X) == 0 or len(Y) == 0:
            return
        R, w, K = self.delay_range, self.bin_width, self.K
        lo = np.searchsorted(Y, X - R, side="left")
        hi = np.searchsorted(Y, X + R, side="right")
        cnt = hi - lo
        csum = np.cumsum(cnt)
        start = 0
        while start < len(X):
            base = csum[start - 1] if start else 0
            end = max(int(np.searchsorted(csum, base + _PAIR_BLOCK, side="right")), start + 1)
            c = cnt[start:end]
            tot = int(c.sum())
            if tot:
                ends = np.cumsum(c)
                yi = np.repeat(lo[start:end] - (ends - c), c) + np.arange(tot)
                d = Y[yi] - np.repeat(X[start:end], c)
                self.counts += np.bincount((2 * d + w) // (2 * w) + K, minlength=len(self.counts))
            start = end

    def update(self, a_times: np.ndarray, b_times: np.ndarray) -> None:
        a = np.asarray(a_times, dtype=np.int64)
        b = np.asarray(b_times, dtype=np.int64)
        newest = max(a[-1] if len(a) else -np.inf, b[-1] if len(b) else -np.inf)
        if newest == -np.inf:
            return
        oldest = min(a[0] if len(a) else np.inf, b[0] if len(b) else np.inf)
        if self._last is not None and oldest < self._last:
            raise ValueError("blocks must be fed in time order")
        # new a against all b; old a against new b; old x old was counted before
        self._pairs(a, np.concatenate([self._buf_b, b]))
        self._pairs(self._buf_a, b)
        self._last = int(newest)
        cut = self._last - self.delay_range
        self._buf_a = np.concatenate([self._buf_a, a])
        self._buf_b = np.concatenate([self._buf_b, b])
        self._buf_a = self._buf_a[np.searchsorted(self._buf_a, cut, side="left"):]
        self._buf_b = self._buf_b[np.searchsorted(self._buf_b, cut, side="left"):]


def _check_channel(stream: TagStream, ch: int) -> None:
    if not 0 <= ch < stream.header.channel_count:
        raise ChannelError(f"channel {ch} not present (stream has {stream.header.channel_count})")


def coincidence_histogram(stream: TagStream, ch_a: int = 0, ch_b: int = 1,
                          bin_width: int = DEFAULT_BIN_WIDTH_PS,
                          delay_range: int = DEFAULT_DELAY_RANGE_PS,
                          block_size: int = 1 << 20) -> CoincidenceHistogram:
    """Histogram of ``t_b - t_a`` over all pairs with ``|t_b - t_a| <= delay_range``."""
    _check_channel(stream, ch_a)
    _check_channel(stream, ch_b)
    if ch_a == ch_b:
        raise ValueError("cross-correlation needs two distinct channels")
    corr = StreamingCorrelator(bin_width, delay_range)
    ts, ch = stream.timestamps, stream.channels
    for s in range(0, len(ts), block_size):
        t_blk, c_blk = ts[s:s + block_size], ch[s:s + block_size]
        corr.update(t_blk[c_blk == ch_a], t_blk[c_blk == ch_b])
    meta = {
        "n_a": int(np.count_nonzero(ch == ch_a)),
        "n_b": int(np.count_nonzero(ch == ch_b)),
        "duration_ps": stream.header.duration_ps,
        "cycle_period_ps": stream.header.cycle_period_ps,
        "n_cycles": stream.n_cycles,
    }
    return CoincidenceHistogram(corr.bin_width, corr.delay_range, corr.counts, ch_a, ch_b, meta)


@dataclass
class PeakIntegration:
    n: np.ndarray
    n_coinc: np.ndarray
    window: int

    def as_dict(self) -> Dict[int, int]:
        return dict(zip(self.n.tolist(), self.n_coinc.tolist()))


def integrate_peaks(hist: CoincidenceHistogram, cycle_period: int,
                    window: Optional[int] = None) -> PeakIntegration:
    """Sum histogram counts in a window around each multiple of ``cycle_period``.

    A bin belongs to peak ``n`` when its centre lies within ``window / 2`` of
    ``n * cycle_period``; the default window is the full period, which tiles
    the delay axis. Only peaks whose window lies inside the histogram range
    are returned.
    """
    P = int(cycle_period)
    if P <= 0:
        raise ValueError("cycle_period must be positive")
    if hist.delay_range < P:
        raise ValueError("delay range is shorter than one cycle period; no side peaks to normalize against")
    W = P if window is None else int(window)
    if not 0 < W <= P:
        raise ValueError("window must lie in (0, cycle_period]")
    c = hist.delays
    n_of_bin = (2 * c + P) // (2 * P)
    inside = 2 * np.abs(c - n_of_bin * P) <= W
    n_max = int((2 * hist.delay_range - W) // (2 * P))
    ns = np.arange(-n_max, n_max + 1)
    sel = inside & (np.abs(n_of_bin) <= n_max)
    sums = np.bincount((n_of_bin[sel] + n_max).astype(np.int64), weights=hist.counts[sel],
                       minlength=len(ns))
    return PeakIntegration(ns, np.rint(sums).astype(np.int64), W)


@dataclass
class G2Result:
    n: np.ndarray
    n_coinc: np.ndarray
    N1: int
    N2: int
    N_trig: int
    g2: np.ndarray
    sigma: np.ndarray
    upper_limit: np.ndarray
    cl: float = ZERO_COUNT_CL

    def _at(self, n: int) -> int:
        hits = np.flatnonzero(self.n == n)
        if not len(hits):
            raise KeyError(n)
        return int(hits[0])

    def g2_at(self, n: int) -> float:
        return float(self.g2[self._at(n)])

    def sigma_at(self, n: int) -> float:
        return float(self.sigma[self._at(n)])

    @property
    def g2_zero(self) -> float:
        return self.g2_at(0)

    @property
    def sigma_zero(self) -> float:
        return self.sigma_at(0)

    def side_peaks(self) -> np.ndarray:
        return self.g2[self.n != 0]

    def to_csv(self, fh, cycle_period: Optional[int] = None) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "delay_ps", "n_coinc", "g2", "sigma", "upper_limit"])
        for i in range(len(self.n)):
            n = int(self.n[i])
            delay = "" if cycle_period is None else n * int(cycle_period)
            w.writerow([n, delay, int(self.n_coinc[i]), repr(float(self.g2[i])),
                        repr(float(self.sigma[i])), repr(float(self.upper_limit[i]))])


def g2_estimate(n_coinc, N1: int, N2: int, N_trig: int, cl: float = ZERO_COUNT_CL) -> G2Result:
    """g2(n) = N_trig * N_coinc,n / (N1 * N2) with Poisson errors.

    ``n_coinc`` is a ``{n: N_coinc,n}`` mapping or a :class:`PeakIntegration`.
    For an empty peak sigma is NaN and ``upper_limit`` holds the one-sided
    Poisson bound ``-ln(1 - cl) * N_trig / (N1 * N2)``; otherwise
    ``upper_limit`` is NaN.
    """
    if N1 <= 0 or N2 <= 0:
        raise ValueError("both channels need at least one count")
    if N_trig <= 0:
        raise ValueError("N_trig must be positive")
    if isinstance(n_coinc, PeakIntegration):
        n_coinc = n_coinc.as_dict()
    ns = np.array(sorted(n_coinc), dtype=np.int64)
    nc = np.array([n_coinc[k] for k in ns.tolist()], dtype=np.int64)
    if np.any(nc < 0):
        raise ValueError("coincidence counts must be non-negative")
    norm = N_trig / (float(N1) * float(N2))
    g2 = nc * norm
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.where(nc > 0, g2 / np.sqrt(nc), np.nan)
    upper = np.where(nc == 0, -math.log(1.0 - cl) * norm, np.nan)
    return G2Result(ns, nc, int(N1), int(N2), int(N_trig), g2, sigma, upper, cl)


def analyze_g2(stream: TagStream, ch_a: int = 0, ch_b: int = 1,
               bin_width: int = DEFAULT_BIN_WIDTH_PS, delay_range: int = DEFAULT_DELAY_RANGE_PS,
               window: Optional[int] = None):
    """Histogram, peak sums and g2(n) for a stream in one call."""
    hist = coincidence_histogram(stream, ch_a, ch_b, bin_width, delay_range)
    peaks = integrate_peaks(hist, stream.header.cycle_period_ps, window)
    result = g2_estimate(peaks, hist.meta["n_a"], hist.meta["n_b"], stream.n_cycles)
    return hist, peaks, result


@dataclass
class ShapeHistogram:
    bin_width: int
    edges: np.ndarray          # ps within the cycle
    counts: np.ndarray
    background: np.ndarray     # expected background counts per bin
    density: Optional[np.ndarray]
    flagged: bool
    reason: str = ""

    @property
    def net_counts(self) -> float:
        return float(np.sum(self.counts - self.background))

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "t_start_ps", "t_stop_ps", "counts", "background", "density"])
        dens = self.density if self.density is not None else np.full(len(self.counts), np.nan)
        for i in range(len(self.counts)):
            w.writerow([i, int(self.edges[i]), int(self.edges[i + 1]), int(self.counts[i]),
                        repr(float(self.background[i])), repr(float(dens[i]))])


def pulse_shape(stream: TagStream, cycle_period: Optional[int] = None,
                bin_width: int = SHAPE_BIN_WIDTH_PS, background_rate: float = 0.0,
                window: Optional[Tuple[int, int]] = None,
                channels: Optional[Sequence[int]] = None,
                trigger_channel: Optional[int] = None,
                significance: float = 3.0) -> ShapeHistogram:
    """Arrival-time histogram within the cycle, background-subtracted and normalized.

    Tags are folded modulo the cycle period (or taken relative to the latest
    tag on ``trigger_channel``). ``background_rate`` is the gated background
    (counts/s, all analysed channels together), assumed flat over ``window``.
    The result is flagged, with no density, when the net signal is not
    ``significance`` standard deviations above the background.
    """
    P = int(cycle_period if cycle_period is not None else stream.header.cycle_period_ps)
    w = int(bin_width)
    if w <= 0 or P <= 0:
        raise ValueError("bin_width and cycle_period must be positive")
    start, stop = (0, (P // w) * w) if window is None else (int(window[0]), int(window[1]))
    if stop <= start or (stop - start) % w:
        raise ValueError(f"bin width {w} ps does not divide the window [{start}, {stop}) ps")

    ts, ch = stream.timestamps, stream.channels
    if trigger_channel is not None:
        _check_channel(stream, trigger_channel)
        trig = ts[ch == trigger_channel]
        m = ch != trigger_channel
        ts, ch = ts[m], ch[m]
        k = np.searchsorted(trig, ts, side="right") - 1
        ok = k >= 0
        phase = ts[ok] - trig[k[ok]]
        ch = ch[ok]
    else:
        phase = ts % P
    if channels is not None:
        phase = phase[np.isin(ch, list(channels))]

    edges = np.arange(start, stop + w, w, dtype=np.int64)
    sel = (phase >= start) & (phase < stop)
    counts = np.bincount((phase[sel] - start) // w, minlength=len(edges) - 1).astype(np.int64)
    bg_total = background_rate * stream.duration_s
    background = np.full(len(counts), bg_total * w / (stop - start))

    net = counts - background
    clipped = np.clip(net, 0.0, None)
    net_sum = float(net.sum())
    threshold = significance * math.sqrt(max(float(background.sum()), 0.0))
    if net_sum <= threshold or clipped.sum() <= 0:
        return ShapeHistogram(w, edges, counts, background, None, True,
                              f"net signal {net_sum:.1f} not above {significance:g} sigma of background")
    return ShapeHistogram(w, edges, counts, background, clipped / clipped.sum(), False)


def shape_distance(a: ShapeHistogram, b: ShapeHistogram) -> float:
    """Total variation distance between two normalized shape histograms."""
    if a.bin_width != b.bin_width or not np.array_equal(a.edges, b.edges):
        raise ValueError("shape histograms use different binning")
    if a.flagged or b.flagged:
        raise ValueError("cannot compare a flagged (background-only) shape")
    return 0.5 * float(np.abs(a.density - b.density).sum())

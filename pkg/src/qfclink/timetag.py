"""Timestamped detector-event streams and their on-disk formats.

Binary layout (little-endian)::

    offset  size  field
    0       4     magic b"PTL1"
    4       2     u16 format version (1)
    6       2     u16 channel count
    8       8     u64 timestamp resolution, ps
    16      8     u64 cycle period, ps
    24      8     u64 acquisition duration, ps
    32      9*N   records: u64 timestamp (ps) + u8 channel

A text form with one ``timestamp_ps,channel`` line per tag is used for files
ending in ``.csv`` or ``.txt``; header fields go in leading ``# key=value``
comment lines.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Optional, Union

import numpy as np

MAGIC = b"PTL1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHQQQ")
HEADER_SIZE = HEADER.size  # 32
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1")])  # packed, 9 bytes
RECORD_SIZE = RECORD_DTYPE.itemsize
TEXT_SUFFIXES = {".csv", ".txt"}

_INT64_MAX = np.iinfo(np.int64).max


class StreamFormatError(ValueError):
    """Base class for malformed or invalid tag streams."""


class BadMagicError(StreamFormatError):
    pass


class VersionMismatchError(StreamFormatError):
    pass


class TruncatedStreamError(StreamFormatError):
    pass


class TimestampRegressionError(StreamFormatError):
    """Timestamps are not non-decreasing."""


class InvalidStreamError(StreamFormatError):
    """Any other invariant violation (channel range, duration, resolution)."""


class IncompatibleStreamsError(ValueError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    channel_count: int
    cycle_period_ps: int
    duration_ps: int
    resolution_ps: int = 1
    version: int = FORMAT_VERSION

    def pack(self) -> bytes:
        return HEADER.pack(
            MAGIC, self.version, self.channel_count,
            self.resolution_ps, self.cycle_period_ps, self.duration_ps,
        )


@dataclass(frozen=True, eq=False)
class TagStream:
    """An ordered list of (timestamp, channel) detector events.

    Timestamps are int64 picoseconds since acquisition start. ``origin`` is an
    optional per-tag provenance code filled in by the simulator in debug mode;
    it is never serialized.
    """

    header: StreamHeader
    timestamps: np.ndarray
    channels: np.ndarray
    origin: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.ascontiguousarray(self.timestamps, dtype=np.int64))
        object.__setattr__(self, "channels", np.ascontiguousarray(self.channels, dtype=np.uint8))
        if self.timestamps.shape != self.channels.shape or self.timestamps.ndim != 1:
            raise InvalidStreamError("timestamps and channels must be 1-D arrays of equal length")
        if self.origin is not None:
            org = np.ascontiguousarray(self.origin, dtype=np.uint8)
            if org.shape != self.timestamps.shape:
                raise InvalidStreamError("origin must match timestamps in length")
            object.__setattr__(self, "origin", org)

    def __len__(self) -> int:
        return len(self.timestamps)

    @classmethod
    def empty(cls, header: StreamHeader) -> "TagStream":
        return cls(header, np.empty(0, np.int64), np.empty(0, np.uint8))

    @property
    def duration_s(self) -> float:
        return self.header.duration_ps * 1e-12

    @property
    def n_cycles(self) -> int:
        """Number of complete sequence cycles in the acquisition (N_trig)."""
        return self.header.duration_ps // self.header.cycle_period_ps

    def channel_times(self, channel: int) -> np.ndarray:
        return self.timestamps[self.channels == channel]

    def counts_per_channel(self) -> np.ndarray:
        return np.bincount(self.channels, minlength=self.header.channel_count)

    def select(self, mask: np.ndarray) -> "TagStream":
        origin = None if self.origin is None else self.origin[mask]
        return TagStream(self.header, self.timestamps[mask], self.channels[mask], origin)

    def shifted(self, offset_ps: int) -> "TagStream":
        return replace(self, timestamps=self.timestamps + np.int64(offset_ps))

    def equals(self, other: "TagStream") -> bool:
        """Header and record equality (provenance ignored)."""
        return (
            self.header == other.header
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.channels, other.channels)
        )

    def validate(self) -> None:
        h = self.header
        if h.resolution_ps <= 0:
            raise InvalidStreamError("resolution must be positive")
        if h.cycle_period_ps <= 0:
            raise InvalidStreamError("cycle period must be positive")
        if not 0 < h.channel_count <= 256:
            raise InvalidStreamError(f"channel count {h.channel_count} outside 1..256")
        if len(self) == 0:
            return
        ts = self.timestamps
        if ts[0] < 0:
            raise InvalidStreamError("negative timestamp")
        if np.any(np.diff(ts) < 0):
            raise TimestampRegressionError("timestamps must be non-decreasing")
        if ts[-1] > h.duration_ps:
            raise InvalidStreamError(
                f"timestamp {ts[-1]} ps beyond acquisition duration {h.duration_ps} ps"
            )
        if int(self.channels.max()) >= h.channel_count:
            raise InvalidStreamError(
                f"channel {int(self.channels.max())} not registered (count={h.channel_count})"
            )


def _records(stream: TagStream) -> np.ndarray:
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["timestamp"] = stream.timestamps.astype(np.uint64)
    rec["channel"] = stream.channels
    return rec


def write_stream(stream: TagStream, destination: BinaryIO) -> int:
    """Serialize ``stream`` to a binary sink; returns the number of bytes written."""
    stream.validate()
    head = stream.header.pack()
    destination.write(head)
    payload = _records(stream).tobytes()
    destination.write(payload)
    return len(head) + len(payload)


def read_stream(source: BinaryIO) -> TagStream:
    raw = source.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        if raw[:4] != MAGIC[: len(raw[:4])]:
            raise BadMagicError("not a PTL1 tag stream")
        raise TruncatedStreamError(f"header truncated at {len(raw)} bytes")
    magic, version, nch, res, period, duration = HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version} unsupported (expected {FORMAT_VERSION})")
    payload = source.read()
    if len(payload) % RECORD_SIZE:
        raise TruncatedStreamError(
            f"payload of {len(payload)} bytes is not a whole number of {RECORD_SIZE}-byte records"
        )
    rec = np.frombuffer(payload, dtype=RECORD_DTYPE)
    ts = rec["timestamp"]
    if len(ts) and ts.max() > _INT64_MAX:
        raise InvalidStreamError("timestamp exceeds int64 range")
    ts = ts.astype(np.int64)
    if len(ts) > 1:
        bad = np.flatnonzero(np.diff(ts) < 0)
        if len(bad):
            raise TimestampRegressionError(f"timestamp regression at record {int(bad[0]) + 1}")
    header = StreamHeader(
        channel_count=nch, cycle_period_ps=period, duration_ps=duration,
        resolution_ps=res, version=version,
    )
    stream = TagStream(header, ts, rec["channel"].copy())
    stream.validate()
    return stream


def write_text(stream: TagStream, destination) -> int:
    stream.validate()
    h = stream.header
    lines = [
        f"# version={h.version}",
        f"# channel_count={h.channel_count}",
        f"# resolution_ps={h.resolution_ps}",
        f"# cycle_period_ps={h.cycle_period_ps}",
        f"# duration_ps={h.duration_ps}",
        "# timestamp_ps,channel",
    ]
    buf = io.StringIO()
    buf.write("\n".join(lines) + "\n")
    for t, c in zip(stream.timestamps.tolist(), stream.channels.tolist()):
        buf.write(f"{t},{c}\n")
    text = buf.getvalue()
    destination.write(text)
    return len(text)


def read_text(source) -> TagStream:
    meta = {}
    ts, ch = [], []
    for lineno, line in enumerate(source, 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = int(value)
            continue
        try:
            t, c = line.split(",")
            ts.append(int(t))
            ch.append(int(c))
        except ValueError as exc:
            raise StreamFormatError(f"line {lineno}: expected 'timestamp_ps,channel'") from exc
    if meta.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {meta['version']} unsupported")
    ts_arr = np.array(ts, dtype=np.int64)
    if len(ts_arr) > 1 and np.any(np.diff(ts_arr) < 0):
        raise TimestampRegressionError("timestamps must be non-decreasing")
    header = StreamHeader(
        channel_count=meta.get("channel_count", (max(ch) + 1) if ch else 1),
        cycle_period_ps=meta.get("cycle_period_ps", 1),
        duration_ps=meta.get("duration_ps", int(ts_arr[-1]) if len(ts_arr) else 0),
        resolution_ps=meta.get("resolution_ps", 1),
    )
    stream = TagStream(header, ts_arr, np.array(ch, dtype=np.uint8))
    stream.validate()
    return stream


def save_stream(path: Union[str, os.PathLike], stream: TagStream) -> int:
    """Write to ``path``; the text form is chosen for ``.csv``/``.txt`` files."""
    path = Path(path)
    if path.suffix.lower() in TEXT_SUFFIXES:
        with open(path, "w", newline="\n") as fh:
            return write_text(stream, fh)
    with open(path, "wb") as fh:
        return write_stream(stream, fh)


def load_stream(path: Union[str, os.PathLike]) -> TagStream:
    path = Path(path)
    if path.suffix.lower() in TEXT_SUFFIXES:
        with open(path) as fh:
            return read_text(fh)
    with open(path, "rb") as fh:
        return read_stream(fh)


def merge_streams(a: TagStream, b: TagStream) -> TagStream:
    """Stable time-ordered merge of two streams.

    Ties on timestamp go to the lower channel, then to ``a`` before ``b``.
    The output is therefore in canonical (timestamp, channel) order, and
    ``merge(x, empty) == x`` for any ``x`` already in that order.
    """
    ha, hb = a.header, b.header
    if ha.resolution_ps != hb.resolution_ps or ha.cycle_period_ps != hb.cycle_period_ps:
        raise IncompatibleStreamsError(
            "streams differ in resolution or cycle period and cannot be merged"
        )
    ts = np.concatenate([a.timestamps, b.timestamps])
    ch = np.concatenate([a.channels, b.channels])
    # lexsort is stable and keys run last -> first, so concatenation order breaks remaining ties
    order = np.lexsort((ch, ts))
    origin = None
    if a.origin is not None and b.origin is not None:
        origin = np.concatenate([a.origin, b.origin])[order]
    header = StreamHeader(
        channel_count=max(ha.channel_count, hb.channel_count),
        cycle_period_ps=ha.cycle_period_ps,
        duration_ps=max(ha.duration_ps, hb.duration_ps),
        resolution_ps=ha.resolution_ps,
    )
    return TagStream(header, ts[order], ch[order], origin)

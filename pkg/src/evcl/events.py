"""Event-stream domain types, bit-exact EVS1 file IO, and windowing."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EVS1_MAGIC = b"EVS1"

_HEADER = struct.Struct("<4sHHQ")  # magic, width, height, event count
_EVENT_DTYPE = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("reserved", "V5"), ("t", "<u8")]
)


class EventStreamError(ValueError):
    """Base class for event-stream parsing and validation failures."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(EventStreamError):
    pass


class TruncatedRecord(EventStreamError):
    pass


class OutOfBoundsEvent(EventStreamError):
    pass


class InvalidPolarity(EventStreamError):
    pass


class EmptyStream(EventStreamError):
    pass


@dataclass(frozen=True)
class Event:
    """A single brightness-change event on the pixel grid.

    polarity is +1 for a brightness increase, -1 for a decrease.
    """

    x: int
    y: int
    t_us: int
    polarity: int


class EventStream:
    """An in-bounds, time-sorted sequence of events on a fixed sensor.

    Events are stored as parallel numpy arrays and sorted by timestamp with a
    stable sort on construction, so ties keep their input order. Arrays are
    frozen after validation; instances are safe to share across threads.
    """

    __slots__ = ("width", "height", "x", "y", "t_us", "polarity", "label")

    def __init__(self, width, height, x, y, t_us, polarity, label=None):
        if not (0 < width <= 0xFFFF and 0 < height <= 0xFFFF):
            raise EventStreamError(f"sensor dimensions {width}x{height} out of range")
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        t_us = np.asarray(t_us, dtype=np.int64)
        polarity = np.asarray(polarity, dtype=np.int64)
        n = len(x)
        if not (len(y) == len(t_us) == len(polarity) == n):
            raise EventStreamError("event field arrays have mismatched lengths")
        if n:
            if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
                bad = int(np.argmax((x < 0) | (x >= width) | (y < 0) | (y >= height)))
                raise OutOfBoundsEvent(
                    f"event {bad} at ({x[bad]},{y[bad]}) outside {width}x{height} sensor"
                )
            if not np.isin(polarity, (-1, 1)).all():
                bad = int(np.argmax(~np.isin(polarity, (-1, 1))))
                raise InvalidPolarity(f"event {bad} has polarity {polarity[bad]}")
            if t_us.min() < 0:
                raise EventStreamError("negative timestamp")
            order = np.argsort(t_us, kind="stable")
            x, y, t_us, polarity = x[order], y[order], t_us[order], polarity[order]
        for arr in (x, y, t_us, polarity):
            arr.setflags(write=False)
        self.width = int(width)
        self.height = int(height)
        self.x = x
        self.y = y
        self.t_us = t_us
        self.polarity = polarity
        self.label = label

    @classmethod
    def from_events(cls, width, height, events, label=None):
        """Build a stream from an iterable of Event tuples."""
        events = list(events)
        return cls(
            width,
            height,
            [e.x for e in events],
            [e.y for e in events],
            [e.t_us for e in events],
            [e.polarity for e in events],
            label=label,
        )

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t_us[i]), int(self.polarity[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.label == other.label
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t_us, other.t_us)
            and np.array_equal(self.polarity, other.polarity)
        )

    def __repr__(self):
        return (
            f"EventStream({self.width}x{self.height}, {len(self)} events,"
            f" label={self.label})"
        )


def parse_evs1(data: bytes, label=None) -> EventStream:
    """Decode an EVS1 byte sequence into a validated EventStream.

    Layout (little-endian): magic "EVS1", u16 width, u16 height, u64 count,
    then per event u16 x, u16 y, i8 polarity, 5 reserved bytes, u64 t_us.
    Reserved bytes are ignored on read. Events are re-sorted by timestamp
    (stable) if the file is out of order.
    """
    if len(data) < 4:
        raise TruncatedRecord("input shorter than magic", offset=len(data))
    if data[:4] != EVS1_MAGIC:
        raise BadMagic(f"expected {EVS1_MAGIC!r}, got {bytes(data[:4])!r}", offset=0)
    if len(data) < _HEADER.size:
        raise TruncatedRecord("truncated header", offset=len(data))
    _, width, height, count = _HEADER.unpack_from(data, 0)
    expected = _HEADER.size + count * _EVENT_DTYPE.itemsize
    if len(data) < expected:
        bad = (len(data) - _HEADER.size) // _EVENT_DTYPE.itemsize
        raise TruncatedRecord(f"record {bad} of {count} truncated", offset=len(data))
    if len(data) > expected:
        raise EventStreamError("trailing bytes after last record", offset=expected)
    records = np.frombuffer(data, dtype=_EVENT_DTYPE, count=count, offset=_HEADER.size)
    x = records["x"].astype(np.int64)
    y = records["y"].astype(np.int64)
    p = records["p"].astype(np.int64)
    t = records["t"].astype(np.int64)
    oob = (x >= width) | (y >= height)
    if oob.any():
        bad = int(np.argmax(oob))
        raise OutOfBoundsEvent(
            f"event {bad} at ({x[bad]},{y[bad]}) outside {width}x{height} sensor",
            offset=_HEADER.size + bad * _EVENT_DTYPE.itemsize,
        )
    good_p = np.isin(p, (-1, 1))
    if not good_p.all():
        bad = int(np.argmax(~good_p))
        raise InvalidPolarity(
            f"event {bad} has polarity byte {p[bad]}",
            offset=_HEADER.size + bad * _EVENT_DTYPE.itemsize + 4,
        )
    return EventStream(width, height, x, y, t, p, label=label)


def write_evs1(stream: EventStream) -> bytes:
    """Encode a stream as EVS1 bytes; parse_evs1 round-trips bit-exactly."""
    records = np.zeros(len(stream), dtype=_EVENT_DTYPE)
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.polarity
    records["t"] = stream.t_us
    header = _HEADER.pack(EVS1_MAGIC, stream.width, stream.height, len(stream))
    return header + records.tobytes()


def read_evs1_file(path, label=None) -> EventStream:
    return parse_evs1(Path(path).read_bytes(), label=label)


def write_evs1_file(stream: EventStream, path) -> None:
    Path(path).write_bytes(write_evs1(stream))


def parse_events_csv(text: str, width: int, height: int, label=None) -> EventStream:
    """Read events from CSV lines of `x,y,t_us,polarity`; `#` starts a comment."""
    xs, ys, ts, ps = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventStreamError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        x, y, t, p = (int(v) for v in parts)
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(p)
    return EventStream(width, height, xs, ys, ts, ps, label=label)


def random_window(stream: EventStream, n_events: int, rng: np.random.Generator) -> EventStream:
    """Cut a uniformly placed window of consecutive events out of a stream.

    Returns min(n_events, len(stream)) consecutive events with timestamps
    re-based so the first event is at t_us = 0. The start index is uniform
    over all valid placements.
    """
    if n_events < 1:
        raise ValueError(f"n_events must be >= 1, got {n_events}")
    n = len(stream)
    if n == 0:
        raise EmptyStream("cannot window an empty stream")
    k = min(n_events, n)
    start = int(rng.integers(0, n - k + 1))
    sl = slice(start, start + k)
    t0 = stream.t_us[start]
    return EventStream(
        stream.width,
        stream.height,
        stream.x[sl],
        stream.y[sl],
        stream.t_us[sl] - t0,
        stream.polarity[sl],
        label=stream.label,
    )


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_id: int
    split: str


@dataclass
class DatasetManifest:
    """Index of sample files with class ids and train/test split membership."""

    entries: list[ManifestEntry]
    class_names: list[str]

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise EventStreamError("duplicate paths in manifest")
        ids = sorted({e.class_id for e in self.entries})
        if ids != list(range(len(ids))):
            raise EventStreamError(f"class ids not dense 0..K-1: {ids}")
        for e in self.entries:
            if e.split not in ("train", "test"):
                raise EventStreamError(f"unknown split {e.split!r} for {e.path}")
        if len(self.class_names) < len(ids):
            raise EventStreamError("fewer class names than class ids")

    @property
    def n_classes(self) -> int:
        return len({e.class_id for e in self.entries})

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write `path<TAB>class_id<TAB>split` lines; class names go in comments."""
    lines = ["# event dataset manifest"]
    for cid, name in enumerate(manifest.class_names):
        lines.append(f"# class {cid} {name}")
    for e in manifest.entries:
        lines.append(f"{e.path}\t{e.class_id}\t{e.split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    entries: list[ManifestEntry] = []
    names: dict[int, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("#"):
            parts = stripped[1:].split()
            if len(parts) >= 3 and parts[0] == "class" and parts[1].isdigit():
                names[int(parts[1])] = " ".join(parts[2:])
            continue
        if not stripped:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise EventStreamError(f"manifest line {lineno}: expected 3 tab-separated fields")
        entries.append(ManifestEntry(fields[0], int(fields[1]), fields[2]))
    n_classes = len({e.class_id for e in entries})
    class_names = [names.get(i, f"class_{i}") for i in range(max(n_classes, len(names)))]
    return DatasetManifest(entries, class_names)

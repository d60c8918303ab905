"""Domain types, RTTM segmentation I/O and session bookkeeping."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Boundary tolerance when converting seconds to frame indices; keeps 1.00/0.01
# from flooring to 99.
_INDEX_EPS = 1e-6


class RttmParseError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line.strip()!r}")
        self.lineno = lineno


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class FrameMatrix:
    session_id: str
    frames: np.ndarray
    frame_period: float
    start_time: float = 0.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be a non-empty N x D matrix, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        if not self.frame_period > 0:
            raise ValueError(f"frame_period must be > 0, got {self.frame_period}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def frame_range(self, seg: "Segment") -> tuple[int, int]:
        """Inclusive frame index range ``(first, last)`` covered by ``seg``.

        ``first = floor(start / period)`` and ``last = ceil(end / period) - 1``,
        both relative to ``start_time`` and clamped to ``[0, N)``. An empty
        range comes back with ``last < first``.
        """
        rel_start = (seg.start - self.start_time) / self.frame_period
        rel_end = (seg.end - self.start_time) / self.frame_period
        first = math.floor(rel_start + _INDEX_EPS)
        last = math.ceil(rel_end - _INDEX_EPS) - 1
        if last < 0 or first >= self.n_frames:
            return 0, -1
        return max(first, 0), min(last, self.n_frames - 1)


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    ref_speaker: str | None = None

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise SegmentationError(f"invalid segment bounds [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SegmentTable:
    session_id: str
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=lambda s: (s.start, s.end)))
        for a, b in zip(segs, segs[1:]):
            if b.start < a.end - 1e-9:
                raise SegmentationError(
                    f"overlapping segments in {self.session_id!r}: "
                    f"[{a.start}, {a.end}] {a.ref_speaker} and [{b.start}, {b.end}] {b.ref_speaker}"
                )
        object.__setattr__(self, "segments", segs)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    @property
    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.segments], dtype=np.float64)

    @property
    def labels(self) -> list[str | None]:
        return [s.ref_speaker for s in self.segments]

    def speakers(self) -> list[str]:
        return sorted({s.ref_speaker for s in self.segments if s.ref_speaker is not None})


@dataclass(frozen=True)
class SegmentEmbedding:
    vector: np.ndarray
    duration: float
    segment_index: int
    ref_speaker: str | None = None

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"segment {self.segment_index}: embedding has non-finite entries")
        if not self.duration > 0:
            raise ValueError(f"segment {self.segment_index}: duration must be > 0")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)


def stack_vectors(embeddings: Sequence[SegmentEmbedding]) -> np.ndarray:
    return np.vstack([e.vector for e in embeddings])


CLUSTER_SOURCES = ("random_init", "plusplus_init", "profile_init")


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    source: str = "plusplus_init"
    seed: int | None = None
    objective: float | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        assignments = np.asarray(self.assignments, dtype=np.int64).reshape(-1)
        if self.k < 1 or centroids.shape[0] != self.k:
            raise ValueError(f"k={self.k} does not match {centroids.shape[0]} centroids")
        if not np.all(np.isfinite(centroids)):
            raise ValueError("centroids contain non-finite values")
        if assignments.size and (assignments.min() < 0 or assignments.max() >= self.k):
            raise ValueError("assignment out of range [0, k)")
        if self.source not in CLUSTER_SOURCES:
            raise ValueError(f"unknown cluster source {self.source!r}")
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "assignments", assignments)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def to_json(self) -> dict:
        return {
            "k": int(self.k),
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "assignments": [int(a) for a in self.assignments],
            "source": self.source,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterModel":
        return cls(
            k=int(obj["k"]),
            centroids=np.asarray(obj["centroids"], dtype=np.float64),
            assignments=np.asarray(obj["assignments"], dtype=np.int64),
            source=obj.get("source", "plusplus_init"),
            seed=obj.get("seed"),
        )


@dataclass(frozen=True)
class SpeakerProfiles:
    labels: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if len(set(labels)) != len(labels):
            raise ValueError("profile labels must be unique")
        if vectors.shape[0] != len(labels):
            raise ValueError(f"{len(labels)} labels but {vectors.shape[0]} profile vectors")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "vectors", vectors)

    @property
    def k(self) -> int:
        return len(self.labels)

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "vectors": [[float(v) for v in row] for row in self.vectors],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SpeakerProfiles":
        return cls(tuple(obj["labels"]), np.asarray(obj["vectors"], dtype=np.float64))


# --------------------------------------------------------------------------
# RTTM
# --------------------------------------------------------------------------


def _parse_rttm_lines(lines: Iterable[str]) -> tuple[str | None, list[Segment]]:
    session = None
    segments = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if fields[0] != "SPEAKER":
            # other RTTM record types (SPKR-INFO, LEXEME, ...) carry no turns
            continue
        if len(fields) not in (9, 10):
            raise RttmParseError(lineno, line, f"expected 9 or 10 fields, got {len(fields)}")
        try:
            tbeg = float(fields[3])
            tdur = float(fields[4])
        except ValueError:
            raise RttmParseError(lineno, line, "tbeg/tdur are not numbers") from None
        if tbeg < 0 or tdur <= 0:
            raise RttmParseError(lineno, line, "negative onset or non-positive duration")
        if session is None:
            session = fields[1]
        elif fields[1] != session:
            raise RttmParseError(lineno, line, f"mixed file ids {session!r} and {fields[1]!r}")
        # tbeg + tdur in decimal so "0.10 0.20" ends at 0.3 exactly as written
        end = float(Decimal(fields[3]) + Decimal(fields[4]))
        segments.append(Segment(tbeg, end, fields[7]))
    return session, segments


def read_rttm(source, session_id: str | None = None) -> SegmentTable:
    """Parse SPEAKER lines from a path, an open stream or RTTM text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        with open(source) as fh:
            session, segments = _parse_rttm_lines(fh)
    elif isinstance(source, str):
        session, segments = _parse_rttm_lines(io.StringIO(source))
    else:
        session, segments = _parse_rttm_lines(source)
    return SegmentTable(session_id or session or "", tuple(segments))


def format_seconds(value: float) -> str:
    """Two-decimal rendering, round-half-even on the decimal repr of ``value``."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def write_rttm(table: SegmentTable, hyp_labels: Sequence | None = None) -> str:
    """Render one SPEAKER line per segment.

    Times are written with two decimals (round-half-even, so a 1.005 s
    duration renders as ``1.00``). ``hyp_labels`` replaces the reference
    speaker names when given.
    """
    if hyp_labels is None:
        hyp_labels = [s.ref_speaker if s.ref_speaker is not None else "<NA>" for s in table]
    if len(hyp_labels) != len(table):
        raise ValueError(f"{len(hyp_labels)} labels for {len(table)} segments")
    lines = []
    for seg, label in zip(table, hyp_labels):
        lines.append(
            f"SPEAKER {table.session_id or '<NA>'} 1 {format_seconds(seg.start)} "
            f"{format_seconds(seg.duration)} <NA> <NA> {label} <NA> <NA>\n"
        )
    return "".join(lines)


# --------------------------------------------------------------------------
# collar handling
# --------------------------------------------------------------------------


def merge_short_silences_with_map(
    table: SegmentTable, collar: float = 0.25
) -> tuple[SegmentTable, np.ndarray]:
    """Like :func:`merge_short_silences`, also returning for every input
    segment the index of the output segment that absorbed it."""
    if collar < 0:
        raise ValueError("collar must be >= 0")
    segs = list(table.segments)
    if not segs:
        return table, np.zeros(0, dtype=np.int64)

    # even split of short cross-speaker gaps is decided on the original bounds
    starts = [s.start for s in segs]
    ends = [s.end for s in segs]
    for i in range(len(segs) - 1):
        gap = segs[i + 1].start - segs[i].end
        if 0 < gap < collar and segs[i].ref_speaker != segs[i + 1].ref_speaker:
            mid = segs[i].end + gap / 2
            ends[i] = mid
            starts[i + 1] = mid

    merged: list[list] = []
    mapping = np.empty(len(segs), dtype=np.int64)
    for i, seg in enumerate(segs):
        if merged:
            prev = merged[-1]
            gap = starts[i] - prev[1]
            if prev[2] == seg.ref_speaker and gap < collar:
                prev[1] = max(prev[1], ends[i])
                mapping[i] = len(merged) - 1
                continue
        merged.append([starts[i], ends[i], seg.ref_speaker])
        mapping[i] = len(merged) - 1
    out = SegmentTable(table.session_id, tuple(Segment(round(a, 9), round(b, 9), s) for a, b, s in merged))
    return out, mapping


def merge_short_silences(table: SegmentTable, collar: float = 0.25) -> SegmentTable:
    """Treat sub-collar silences as speech.

    A gap shorter than ``collar`` between two turns of the same reference
    speaker is absorbed by merging the turns; a short gap between different
    speakers is split at its midpoint.
    """
    return merge_short_silences_with_map(table, collar)[0]


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionEntry:
    session_id: str
    frames_path: str
    rttm_path: str
    num_speakers: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "session_id": self.session_id,
            "frames_path": self.frames_path,
            "rttm_path": self.rttm_path,
            "num_speakers": self.num_speakers,
        }
        out.update(self.extra)
        return out


def load_manifest(path) -> list[SessionEntry]:
    """Read a session manifest; relative paths resolve against its directory."""
    path = Path(path)
    obj = json.loads(path.read_text())
    items = obj["sessions"] if isinstance(obj, dict) else obj
    base = path.parent
    entries = []
    for item in items:
        known = {"session_id", "frames_path", "rttm_path", "num_speakers"}
        entries.append(
            SessionEntry(
                session_id=item["session_id"],
                frames_path=str(base / item["frames_path"]),
                rttm_path=str(base / item["rttm_path"]),
                num_speakers=item.get("num_speakers"),
                extra={k: v for k, v in item.items() if k not in known},
            )
        )
    return entries


def write_manifest(path, entries: Sequence[SessionEntry]) -> None:
    Path(path).write_text(json.dumps({"sessions": [e.to_json() for e in entries]}, indent=2) + "\n")


def with_speaker(seg: Segment, speaker: str | None) -> Segment:
    return replace(seg, ref_speaker=speaker)

"""Frame-embedding front-end: binomial low-pass smoothing, per-segment
median/mean aggregation, and PCA whitening."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FrameMatrix, Segment, SegmentEmbedding, SegmentTable, stack_vectors

DEFAULT_FILTER_ORDER = 4


class EmptySegmentError(ValueError):
    pass


@dataclass(frozen=True)
class FilterKernel:
    order: int
    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.shape != (self.order + 2,):
            raise ValueError(f"order {self.order} needs {self.order + 2} taps, got {taps.shape}")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)


def build_filter(order: int = DEFAULT_FILTER_ORDER) -> FilterKernel:
    """Moving-average FIR kernel: ``[1/2, 1/2]`` convolved with itself ``order`` times.

    The taps are the binomial row ``order + 1`` divided by ``2**(order + 1)``;
    every value is a dyadic rational, so repeated convolution is exact.
    """
    if order < 0:
        raise ValueError("filter order must be >= 0")
    base = np.array([0.5, 0.5])
    taps = base
    for _ in range(order):
        taps = np.convolve(taps, base)
    return FilterKernel(order, taps)


def binomial_taps(order: int) -> np.ndarray:
    n = order + 1
    return np.array([comb(n, m) for m in range(n + 1)], dtype=np.float64) / 2.0**n


def _smooth_array(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    n_taps = taps.size
    if n_taps == 1:
        return x.copy()
    # "same"-length output, kernel centred (left half = floor((L-1)/2)),
    # edges replicated rather than zero padded
    left = (n_taps - 1) // 2
    right = n_taps - 1 - left
    padded = np.concatenate([np.repeat(x[:1], left, axis=0), x, np.repeat(x[-1:], right, axis=0)])
    out = np.zeros_like(x)
    n = x.shape[0]
    # taps are symmetric, so correlation and convolution coincide
    for m, w in enumerate(taps):
        out += w * padded[m : m + n]
    return out


def smooth_frames(
    frames: FrameMatrix,
    kernel: FilterKernel,
    segments: SegmentTable | None = None,
) -> FrameMatrix:
    """Low-pass every coefficient trajectory with ``kernel``.

    By default the whole session is filtered as one sequence. Passing
    ``segments`` filters each segment's frames independently instead, so
    nothing leaks across turn boundaries; frames outside all segments are
    left as they are.
    """
    x = frames.frames
    if segments is None:
        out = _smooth_array(x, kernel.taps)
    else:
        out = x.copy()
        for seg in segments:
            first, last = frames.frame_range(seg)
            if last >= first:
                out[first : last + 1] = _smooth_array(x[first : last + 1], kernel.taps)
    return FrameMatrix(frames.session_id, out, frames.frame_period, frames.start_time)


def _segment_frames(frames: FrameMatrix, seg: Segment, index: int) -> np.ndarray:
    first, last = frames.frame_range(seg)
    if last < first:
        raise EmptySegmentError(
            f"segment {index} [{seg.start}, {seg.end}] ({seg.ref_speaker}) covers no frames "
            f"of session {frames.session_id!r}"
        )
    return frames.frames[first : last + 1]


def aggregate_median(frames: FrameMatrix, seg: Segment, index: int = 0) -> SegmentEmbedding:
    block = _segment_frames(frames, seg, index)
    # np.median averages the two central order statistics for even counts
    return SegmentEmbedding(np.median(block, axis=0), seg.duration, index, seg.ref_speaker)


def aggregate_mean(frames: FrameMatrix, seg: Segment, index: int = 0) -> SegmentEmbedding:
    block = _segment_frames(frames, seg, index)
    return SegmentEmbedding(block.mean(axis=0), seg.duration, index, seg.ref_speaker)


AGGREGATORS = {"median": aggregate_median, "mean": aggregate_mean}


def embed_segments(
    frames: FrameMatrix,
    table: SegmentTable,
    aggregation: str = "median",
    filter_order: int | None = DEFAULT_FILTER_ORDER,
    per_segment_smoothing: bool = False,
) -> list[SegmentEmbedding]:
    """Smooth (unless ``filter_order`` is None) and aggregate every segment."""
    try:
        agg = AGGREGATORS[aggregation]
    except KeyError:
        raise ValueError(f"unknown aggregation {aggregation!r}") from None
    if filter_order is not None:
        frames = smooth_frames(
            frames, build_filter(filter_order), table if per_segment_smoothing else None
        )
    return [agg(frames, seg, i) for i, seg in enumerate(table)]


# --------------------------------------------------------------------------
# PCA whitening
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaWhitener:
    mean: np.ndarray
    basis: np.ndarray
    scales: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def in_dim(self) -> int:
        return self.basis.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.in_dim:
            raise ValueError(f"expected {self.in_dim}-dim input, got {X.shape[1]}")
        return ((X - self.mean) @ self.basis) * self.scales


def fit_pca_whitener(
    embeddings: Sequence[SegmentEmbedding] | np.ndarray,
    out_dim: int = 70,
    min_duration: float = 0.0,
    whiten: bool = True,
) -> PcaWhitener:
    """Fit a PCA projection (optionally whitening) on long-enough segments.

    Only embeddings with ``duration >= min_duration`` contribute. A plain
    array is treated as all-qualifying. With ``whiten=False`` the scales
    are all ones and the map is a pure rotation/projection.
    """
    if isinstance(embeddings, np.ndarray):
        X = np.atleast_2d(embeddings).astype(np.float64)
    else:
        keep = [e for e in embeddings if e.duration >= min_duration]
        if len(keep) < out_dim:
            raise ValueError(
                f"only {len(keep)} segments last >= {min_duration}s but out_dim={out_dim}; "
                f"lower out_dim or the duration threshold"
            )
        X = stack_vectors(keep)
    n, dim = X.shape
    if out_dim > dim or out_dim > n or out_dim < 1:
        raise ValueError(f"out_dim={out_dim} must be in [1, min(n={n}, D={dim})]")

    mean = X.mean(axis=0)
    centred = X - mean
    # SVD of the centred data: right singular vectors are the principal axes
    _, sing, vt = np.linalg.svd(centred, full_matrices=False)
    basis = vt[:out_dim].T.copy()
    sing = sing[:out_dim]
    # sign fix: largest-magnitude component of each axis positive
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivots, np.arange(out_dim)])
    signs[signs == 0] = 1.0
    basis *= signs

    if whiten:
        std = sing / np.sqrt(max(n - 1, 1))
        floor = 1e-8 * std.max() if std.max() > 0 else 1e-8
        scales = 1.0 / np.maximum(std, floor)
    else:
        scales = np.ones(out_dim)
    return PcaWhitener(mean, basis, scales)


def apply_whitener(w: PcaWhitener, e: SegmentEmbedding) -> SegmentEmbedding:
    return SegmentEmbedding(w.transform(e.vector)[0], e.duration, e.segment_index, e.ref_speaker)


# --------------------------------------------------------------------------
# frame matrix files
# --------------------------------------------------------------------------

_MAGIC = b"DCFM"


def save_frames(path, frames: FrameMatrix) -> None:
    """Binary layout: ``DCFM``, uint32-LE header length, JSON header, then
    row-major little-endian float32 frames."""
    header = json.dumps(
        {
            "session_id": frames.session_id,
            "n_frames": frames.n_frames,
            "dim": frames.dim,
            "frame_period": frames.frame_period,
            "start_time": frames.start_time,
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(frames.frames.astype("<f4").tobytes(order="C"))


def load_frames(path, session_id: str | None = None) -> FrameMatrix:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_frames_csv(path, session_id=session_id)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a frame matrix file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    n, dim = header["n_frames"], header["dim"]
    body = np.frombuffer(raw, dtype="<f4", offset=8 + hlen)
    if body.size != n * dim:
        raise ValueError(f"{path}: expected {n * dim} floats, found {body.size}")
    return FrameMatrix(
        session_id or header.get("session_id", path.stem),
        body.reshape(n, dim).astype(np.float64),
        float(header["frame_period"]),
        float(header.get("start_time", 0.0)),
    )


def load_frames_csv(path, frame_period: float = 0.01, start_time: float = 0.0, session_id=None):
    """One frame per row; a leading ``#`` comment line may carry
    ``frame_period=<s>`` and ``start_time=<s>``."""
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("#"):
        for tok in first[1:].replace(",", " ").split():
            if "=" in tok:
                key, val = tok.split("=", 1)
                if key == "frame_period":
                    frame_period = float(val)
                elif key == "start_time":
                    start_time = float(val)
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return FrameMatrix(session_id or path.stem, data, frame_period, start_time)

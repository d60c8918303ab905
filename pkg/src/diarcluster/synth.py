"""Deterministic synthetic sessions: frame-level speaker embeddings with
phonetic drift, white noise and outlier frames, plus oracle segmentations."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

import numpy as np

from .core import FrameMatrix, Segment, SegmentTable, SpeakerProfiles

SUITE_VERSION = "v1"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 4
    dim: int = 200
    # distance between any two speaker means, in units of frame_noise_std
    # (in absolute units when the noise is zero)
    speaker_separation: float = 20.0
    frame_noise_std: float = 1.0
    # amplitude of the slow per-segment drift, relative to frame_noise_std
    drift_ratio: float = 0.3
    # drift frequencies are drawn uniformly from this band (Hz)
    drift_freq_min: float = 2.0
    drift_freq_max: float = 8.0
    outlier_rate: float = 0.0
    outlier_scale: float = 50.0
    seg_min: float = 1.0
    seg_max: float = 4.0
    # Beta(1, shape) skew of durations between seg_min and seg_max; 1 = uniform
    seg_shape: float = 1.0
    n_segments: int = 150
    turn_process: str = "round_robin"   # "round_robin" | "markov"
    p_stay: float = 0.3
    gap_prob: float = 0.3
    gap_max: float = 0.4
    frame_period: float = 0.01
    offset_norm: float = 10.0
    seed: int = 0
    session_id: str = ""

    def validate(self) -> None:
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.n_speakers > self.dim:
            raise GeometryError(
                f"cannot place {self.n_speakers} equidistant speakers in {self.dim} dimensions"
            )
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier_rate must be in [0, 1)")
        if not 0.0 <= self.p_stay <= 1.0 or not 0.0 <= self.gap_prob <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0 < self.seg_min <= self.seg_max:
            raise ValueError("need 0 < seg_min <= seg_max")
        if self.frame_period <= 0 or self.frame_noise_std < 0 or self.seg_shape <= 0:
            raise ValueError("frame_period and seg_shape must be > 0, frame_noise_std >= 0")
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if self.turn_process not in ("round_robin", "markov"):
            raise ValueError(f"unknown turn process {self.turn_process!r}")


class Session(NamedTuple):
    frames: FrameMatrix
    table: SegmentTable
    profiles: SpeakerProfiles
    config: SynthConfig


def _speaker_means(cfg: SynthConfig, rng) -> np.ndarray:
    k, dim = cfg.n_speakers, cfg.dim
    unit = cfg.frame_noise_std if cfg.frame_noise_std > 0 else 1.0
    offset = rng.normal(size=dim)
    offset *= cfg.offset_norm / np.linalg.norm(offset)
    # orthonormal directions: vertices of a regular simplex with edge sqrt(2)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, k)))
    scale = cfg.speaker_separation * unit / np.sqrt(2.0)
    return offset + scale * basis.T


def _durations(cfg: SynthConfig, rng) -> np.ndarray:
    raw = cfg.seg_min + (cfg.seg_max - cfg.seg_min) * rng.beta(1.0, cfg.seg_shape, size=cfg.n_segments)
    return np.maximum(np.round(raw, 2), max(round(cfg.seg_min, 2), 0.01))


def _turns(cfg: SynthConfig, rng) -> np.ndarray:
    k = cfg.n_speakers
    if cfg.turn_process == "round_robin":
        order = rng.permutation(k)
        return order[np.arange(cfg.n_segments) % k]
    spk = np.empty(cfg.n_segments, dtype=np.int64)
    spk[0] = rng.integers(k)
    for i in range(1, cfg.n_segments):
        if k == 1 or rng.random() < cfg.p_stay:
            spk[i] = spk[i - 1]
        else:
            other = rng.integers(k - 1)
            spk[i] = other if other < spk[i - 1] else other + 1
    return spk


def generate_session(cfg: SynthConfig) -> Session:
    """Frames, labelled oracle segmentation and true speaker means for one session.

    Segment frames are ``speaker mean + drift + noise`` where the drift is a
    three-component sinusoid (syllable-rate band by default) along random directions, redrawn per
    segment, and a fraction ``outlier_rate`` of frames is replaced by the
    mean plus Gaussian noise ``outlier_scale`` times larger. Silence between
    segments is noise around a speaker-independent offset. Output depends on
    the config only.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    means = _speaker_means(cfg, rng)
    durations = _durations(cfg, rng)
    speakers = _turns(cfg, rng)
    gaps = np.where(rng.random(cfg.n_segments) < cfg.gap_prob, np.round(rng.uniform(0.01, cfg.gap_max, cfg.n_segments), 2), 0.0)

    # integer centiseconds keep boundaries exact on the 0.01 s grid
    segments = []
    t_cs = 0
    for dur, spk, gap in zip(durations, speakers, gaps):
        start_cs = t_cs
        end_cs = start_cs + int(round(dur * 100))
        segments.append(Segment(start_cs / 100, end_cs / 100, f"spk{spk}"))
        t_cs = end_cs + int(round(gap * 100))
    total = segments[-1].end
    n_frames = int(np.ceil(total / cfg.frame_period - 1e-9))

    sigma = cfg.frame_noise_std
    offset_only = means.mean(axis=0)
    frames = offset_only + sigma * rng.normal(size=(n_frames, cfg.dim))
    fm_probe = FrameMatrix("probe", np.zeros((n_frames, 1)), cfg.frame_period)
    times = np.arange(n_frames) * cfg.frame_period
    drift_amp = cfg.drift_ratio * sigma

    for seg, spk in zip(segments, speakers):
        first, last = fm_probe.frame_range(seg)
        if last < first:
            continue
        sl = slice(first, last + 1)
        m = last + 1 - first
        block = means[spk] + sigma * rng.normal(size=(m, cfg.dim))
        if drift_amp > 0:
            freqs = rng.uniform(cfg.drift_freq_min, cfg.drift_freq_max, size=3)
            phases = rng.uniform(0, 2 * np.pi, size=3)
            dirs = rng.normal(size=(3, cfg.dim)) * drift_amp
            waves = np.sin(2 * np.pi * freqs[None, :] * (times[sl, None] - seg.start) + phases[None, :])
            block += waves @ dirs
        if cfg.outlier_rate > 0:
            hit = rng.random(m) < cfg.outlier_rate
            n_hit = int(hit.sum())
            if n_hit:
                block[hit] = means[spk] + cfg.outlier_scale * max(sigma, 1e-12) * rng.normal(size=(n_hit, cfg.dim))
        frames[sl] = block

    sid = cfg.session_id or f"synth-{cfg.seed}"
    table = SegmentTable(sid, tuple(segments))
    profiles = SpeakerProfiles(tuple(f"spk{j}" for j in range(cfg.n_speakers)), means)
    return Session(FrameMatrix(sid, frames, cfg.frame_period, 0.0), table, profiles, cfg)


# --------------------------------------------------------------------------
# named suites
# --------------------------------------------------------------------------

# Versioned presets; changing any value here requires bumping SUITE_VERSION.
SUITES = {
    "easy": dict(
        n_sessions=5,
        base=dict(n_speakers=4, speaker_separation=20.0, seg_min=1.0, seg_max=3.0, n_segments=300, gap_prob=0.0),
    ),
    "noisy": dict(
        n_sessions=5,
        base=dict(
            n_speakers=4,
            speaker_separation=8.0,
            outlier_rate=0.2,
            outlier_scale=50.0,
            seg_min=0.3,
            seg_max=3.0,
            seg_shape=2.0,
            n_segments=200,
        ),
    ),
    "short_segments": dict(
        n_sessions=5,
        base=dict(
            n_speakers=4,
            speaker_separation=3.0,
            outlier_rate=0.1,
            outlier_scale=20.0,
            seg_min=0.3,
            seg_max=3.0,
            seg_shape=4.0,
            n_segments=300,
        ),
    ),
    "many_speakers": dict(
        n_sessions=4,
        k_cycle=(6, 8),
        base=dict(
            speaker_separation=3.0,
            outlier_rate=0.05,
            outlier_scale=20.0,
            seg_min=0.5,
            seg_max=3.0,
            seg_shape=2.0,
            n_segments=200,
        ),
    ),
}


def suite_configs(name: str, seed: int = 0, **overrides) -> list[SynthConfig]:
    """Session configs of a named suite; ``overrides`` replace preset fields."""
    try:
        preset = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None
    configs = []
    for i in range(preset["n_sessions"]):
        fields = dict(preset["base"])
        if "k_cycle" in preset:
            fields["n_speakers"] = preset["k_cycle"][i % len(preset["k_cycle"])]
        fields.update(overrides)
        fields["seed"] = seed * 1000 + i
        fields["session_id"] = f"{name}-s{seed}-{i}"
        configs.append(SynthConfig(**fields))
    return configs


def generate_suite(name: str, seed: int = 0, **overrides) -> list[Session]:
    return [generate_session(cfg) for cfg in suite_configs(name, seed, **overrides)]


def config_json(cfg: SynthConfig) -> dict:
    return asdict(cfg)


def with_seed(cfg: SynthConfig, seed: int) -> SynthConfig:
    return replace(cfg, seed=seed)

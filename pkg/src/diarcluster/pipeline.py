"""Preprocess -> cluster -> score, per session and over manifests."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classic
from .core import (
    ClusterModel,
    FrameMatrix,
    SegmentEmbedding,
    SegmentTable,
    SessionEntry,
    SpeakerProfiles,
    merge_short_silences_with_map,
    read_rttm,
    stack_vectors,
    write_rttm,
)
from .dec import DecConfig, train_dec
from .prep import PcaWhitener, embed_segments, fit_pca_whitener, load_frames
from .scoring import ScoreReport, aggregate_reports, format_table, report_json, score

log = logging.getLogger(__name__)

ALGORITHMS = ("kmeans", "spectral", "xmeans", "dec_original", "dec_improved")
PCA_ALGORITHMS = ("kmeans", "xmeans")


@dataclass(frozen=True)
class PipelineConfig:
    filter_order: int | None = 4
    aggregation: str = "median"
    per_segment_smoothing: bool = False
    collar: float | None = 0.25
    pca_dim: int | None = 70
    pca_min_duration: float = 1.0
    # per-session whitening equalizes pure-noise directions with the few
    # speaker directions; off unless asked for
    whiten: bool = False
    min_duration: float = 0.0
    algorithm: str = "kmeans"
    k: int | None = None
    k_min: int = 1
    k_max: int = 16
    kmeans_n_init: int = 10
    dec: dict = field(default_factory=dict)
    profiles_path: str | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.aggregation not in ("median", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.filter_order is not None and self.filter_order < 0:
            raise ValueError("filter_order must be >= 0 or null")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")

    def dec_config(self) -> DecConfig:
        mode = "original" if self.algorithm == "dec_original" else "improved"
        base = DecConfig.from_json(self.dec) if self.dec else DecConfig()
        return replace(base, mode=mode, seed=self.seed)

    def uses_pca(self) -> bool:
        return self.algorithm in PCA_ALGORITHMS and bool(self.pca_dim)

    def to_json(self) -> dict:
        out = asdict(self)
        out["dec"] = self.dec_config().to_json() if self.algorithm.startswith("dec") else dict(self.dec)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with a JSON value (bare strings allowed). Dotted keys
    such as ``dec.epochs=50`` address the nested DEC config."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(config: PipelineConfig, overrides: Sequence[str]) -> PipelineConfig:
    obj = asdict(config)
    for item in overrides:
        key, value = parse_override(item)
        if key.startswith("dec."):
            obj["dec"] = dict(obj["dec"])
            obj["dec"][key[4:]] = value
        else:
            obj[key] = value
    cfg = PipelineConfig.from_json(obj)
    cfg.validate()
    return cfg


@dataclass
class SessionResult:
    session_id: str
    table: SegmentTable            # collar-merged table that was clustered
    active: np.ndarray             # indices into ``table`` that were clustered and scored
    labels: np.ndarray             # hypothesis cluster per active segment
    model: ClusterModel
    report: ScoreReport
    report_unmerged: ScoreReport
    embeddings: list[SegmentEmbedding]
    warnings: list[str] = field(default_factory=list)

    def hypothesis_table(self) -> SegmentTable:
        return SegmentTable(self.table.session_id, tuple(self.table[i] for i in self.active))

    def hypothesis_rttm(self) -> str:
        return write_rttm(self.hypothesis_table(), [f"c{int(l)}" for l in self.labels])


def profiles_from_session(labels, embeddings: Sequence[SegmentEmbedding] | np.ndarray, k: int | None = None):
    """Per-cluster median of segment embeddings from a prior clustering.

    Returns ``(profiles, warnings)``; clusters with no members are left out.
    """
    X = embeddings if isinstance(embeddings, np.ndarray) else stack_vectors(embeddings)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if k is None else k
    names, vecs, warnings = [], [], []
    for j in range(k):
        members = X[labels == j]
        if members.shape[0] == 0:
            warnings.append(f"cluster {j} is empty; no profile produced")
            log.warning(warnings[-1])
            continue
        names.append(f"c{j}")
        vecs.append(np.median(members, axis=0))
    if not vecs:
        raise ValueError("no non-empty clusters to build profiles from")
    return SpeakerProfiles(tuple(names), np.vstack(vecs)), warnings


def _cluster_pca(X, durations, cfg: PipelineConfig, k, profiles, embeddings):
    train = np.flatnonzero(durations >= cfg.pca_min_duration)
    if cfg.uses_pca():
        whitener = fit_pca_whitener(embeddings, cfg.pca_dim, cfg.pca_min_duration, cfg.whiten)
        Xt = whitener.transform(X)
    else:
        whitener = None
        Xt = X
        if train.size < k:
            raise ValueError(f"only {train.size} segments last >= {cfg.pca_min_duration}s; need k={k}")
    if cfg.algorithm == "kmeans":
        if profiles is not None:
            init = SpeakerProfiles(profiles.labels, whitener.transform(profiles.vectors) if whitener else profiles.vectors)
        else:
            init = "plusplus"
        model = classic.kmeans(Xt[train], k if profiles is None else profiles.k, init=init, seed=cfg.seed, n_init=cfg.kmeans_n_init)
    else:
        model = classic.xmeans(Xt[train], cfg.k_min, min(cfg.k_max, train.size), seed=cfg.seed)
    labels = classic.assign_to_centroids(model, Xt)
    return model, labels


def cluster_session(
    frames: FrameMatrix,
    table: SegmentTable,
    config: PipelineConfig,
    k: int | None = None,
    profiles: SpeakerProfiles | None = None,
) -> SessionResult:
    config.validate()
    if config.collar is not None:
        merged, mapping = merge_short_silences_with_map(table, config.collar)
    else:
        merged, mapping = table, np.arange(len(table))
    embeddings = embed_segments(frames, merged, config.aggregation, config.filter_order, config.per_segment_smoothing)
    durations = merged.durations
    active = np.flatnonzero(durations > config.min_duration) if config.min_duration > 0 else np.arange(len(merged))
    if active.size == 0:
        raise ValueError(f"no segments longer than {config.min_duration}s")
    act_emb = [embeddings[i] for i in active]
    X = stack_vectors(act_emb)
    k = config.k or k or (profiles.k if profiles is not None else None)
    if k is None and config.algorithm != "xmeans":
        raise ValueError("number of speakers unknown: set k in the config or num_speakers in the manifest")
    warnings = []

    if config.algorithm in PCA_ALGORITHMS:
        model, labels = _cluster_pca(X, durations[active], config, k, profiles, act_emb)
    elif config.algorithm == "spectral":
        model = classic.spectral_cluster(X, k, seed=config.seed, n_init=config.kmeans_n_init)
        labels = model.assignments
    else:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        _, model = train_dec((X - mean) / std, k, config.dec_config())
        labels = model.assignments
        warnings.extend(model.warnings)
    if profiles is not None and config.algorithm != "kmeans":
        warnings.append(f"speaker profiles ignored by {config.algorithm}")

    report = score(SegmentTable(merged.session_id, tuple(merged[i] for i in active)), labels)
    # unmerged view: every original segment inherits its merged parent's label
    pos = {int(i): j for j, i in enumerate(active)}
    keep = [i for i in range(len(table)) if int(mapping[i]) in pos]
    raw_table = SegmentTable(table.session_id, tuple(table[i] for i in keep))
    report_unmerged = score(raw_table, [labels[pos[int(mapping[i])]] for i in keep])
    return SessionResult(merged.session_id, merged, active, np.asarray(labels), model, report, report_unmerged, embeddings, warnings)


def run_sessions(sessions, config: PipelineConfig, profiles: SpeakerProfiles | None = None, workers: int = 1):
    """Cluster in-memory ``(frames, table, k)`` triples; results keep input order."""

    def one(item):
        frames, table, k = item[0], item[1], item[2]
        return cluster_session(frames, table, config, k, profiles)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, sessions))
    return [one(s) for s in sessions]


# --------------------------------------------------------------------------
# manifest-driven runs
# --------------------------------------------------------------------------


def _load_profiles(path) -> SpeakerProfiles:
    return SpeakerProfiles.from_json(json.loads(Path(path).read_text()))


def _session_record(res: SessionResult, config: PipelineConfig) -> dict:
    rep = res.report.to_json()
    rep["without_merge"] = res.report_unmerged.to_json()
    rep["k"] = int(res.model.k)
    rep["cluster_source"] = res.model.source
    rep["warnings"] = list(res.warnings)
    return rep


def run_pipeline(entries: Sequence[SessionEntry], config: PipelineConfig, out_dir=None, workers: int = 1) -> dict:
    """Run every manifest session; returns the full report dictionary.

    Per-session outputs (``hyp.rttm``, ``clusters.json``, ``profiles.json``,
    ``report.json``) go under ``out_dir/<session_id>/`` when ``out_dir`` is
    set, plus a top-level ``report.json``. Failed sessions are listed under
    ``failures`` and excluded from the aggregate.
    """
    config.validate()
    profiles = _load_profiles(config.profiles_path) if config.profiles_path else None

    def one(entry: SessionEntry):
        try:
            frames = load_frames(entry.frames_path, session_id=entry.session_id)
            table = read_rttm(entry.rttm_path, session_id=entry.session_id)
            return entry, cluster_session(frames, table, config, entry.num_speakers, profiles), None
        except Exception as err:  # reported per session, run continues
            log.error("session %s failed: %s", entry.session_id, err)
            return entry, None, f"{type(err).__name__}: {err}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(one, entries))
    else:
        outcomes = [one(e) for e in entries]

    sessions, failures, reports = {}, {}, []
    out_dir = Path(out_dir) if out_dir else None
    for entry, res, err in outcomes:
        if err:
            failures[entry.session_id] = err
            continue
        record = _session_record(res, config)
        sessions[entry.session_id] = record
        reports.append(res.report)
        if out_dir:
            sdir = out_dir / entry.session_id
            sdir.mkdir(parents=True, exist_ok=True)
            (sdir / "hyp.rttm").write_text(res.hypothesis_rttm())
            clusters = res.model.to_json()
            clusters["segment_labels"] = [int(l) for l in res.labels]
            (sdir / "clusters.json").write_text(report_json(clusters))
            if res.labels.size:
                prof, _ = profiles_from_session(res.labels, [res.embeddings[i] for i in res.active], res.model.k)
                (sdir / "profiles.json").write_text(report_json(prof.to_json()))
            (sdir / "report.json").write_text(report_json(record))

    report = {
        "config": config.to_json(),
        "sessions": sessions,
        "failures": failures,
        "aggregate": aggregate_reports(reports) if reports else None,
    }
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(report_json(report))
    return report


SWEEP_AXES = ("min_duration", "pca_min_duration", "aggregation", "algorithm", "filter_order")


def _axis_config(base: PipelineConfig, axis: str, value) -> PipelineConfig:
    if axis == "aggregation":
        # "median" = no smoothing; "median+filter" = smoothing at the base order
        name, _, suffix = str(value).partition("+")
        order = (base.filter_order if base.filter_order is not None else 4) if suffix == "filter" else None
        return replace(base, aggregation=name, filter_order=order)
    if axis == "filter_order":
        return replace(base, filter_order=None if value in (None, "none", "null") else int(value))
    if axis in ("min_duration", "pca_min_duration"):
        return replace(base, **{axis: float(value)})
    if axis == "algorithm":
        return replace(base, algorithm=str(value))
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def run_sweep(
    entries: Sequence[SessionEntry],
    base: PipelineConfig,
    axis: str,
    values: Sequence,
    metric: str = "recall",
    out_dir=None,
    workers: int = 1,
) -> dict:
    """One pipeline run per axis value at a fixed seed, plus a comparison table."""
    if metric not in ("recall", "error"):
        raise ValueError("metric must be 'recall' or 'error'")
    runs = {}
    for value in values:
        cfg = _axis_config(base, axis, value)
        cfg.validate()
        sub = Path(out_dir) / f"{axis}={value}" if out_dir else None
        runs[str(value)] = run_pipeline(entries, cfg, sub, workers)
    key = "recall_pct" if metric == "recall" else "error_pct"
    cols = [str(v) for v in values]
    row = [runs[c]["aggregate"][key] if runs[c]["aggregate"] else None for c in cols]
    title = f"{base.algorithm} {'Clustering Recall' if metric == 'recall' else 'Clustering Error'} (%)"
    table = format_table(title, [base.algorithm if axis != "algorithm" else "all"], [f"{axis}={c}" for c in cols], [row])
    result = {"axis": axis, "values": cols, "metric": metric, "table": table, "runs": runs}
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.json").write_text(report_json(result))
        (Path(out_dir) / "sweep.txt").write_text(table)
    return result

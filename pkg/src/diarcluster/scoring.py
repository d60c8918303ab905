"""Clustering recall / speaker-confusion error under oracle segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import SegmentTable


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreReport:
    total_speech: float
    correct: float
    mapping: dict
    confusion: np.ndarray
    clusters: tuple = ()
    speakers: tuple = ()
    n_segments: int = 0
    # structurally zero with oracle segmentation, kept for DER bookkeeping
    missed_speech: float = 0.0
    false_alarm: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def recall_pct(self) -> float:
        if self.total_speech <= 0:
            return 0.0
        return 100.0 * self.correct / self.total_speech

    @property
    def error_pct(self) -> float:
        return 100.0 - self.recall_pct

    @property
    def confusion_time(self) -> float:
        return self.total_speech - self.correct

    def to_json(self) -> dict:
        return {
            "total_speech": round(self.total_speech, 6),
            "correct": round(self.correct, 6),
            "recall_pct": round(self.recall_pct, 6),
            "error_pct": round(self.error_pct, 6),
            "missed_speech": self.missed_speech,
            "false_alarm": self.false_alarm,
            "speaker_confusion": round(self.confusion_time, 6),
            "n_segments": self.n_segments,
            "mapping": {str(k): v for k, v in sorted(self.mapping.items(), key=lambda kv: str(kv[0]))},
            "clusters": [str(c) for c in self.clusters],
            "speakers": list(self.speakers),
            "confusion": [[round(float(v), 6) for v in row] for row in self.confusion],
            **self.extra,
        }


def _sort_key(label):
    return (0, label, "") if isinstance(label, (int, np.integer)) else (1, 0, str(label))


def confusion_matrix(durations, ref_labels, hyp_labels):
    """k x m matrix of seconds where hypothesis cluster i overlaps speaker j."""
    clusters = tuple(sorted(set(hyp_labels), key=_sort_key))
    speakers = tuple(sorted(set(ref_labels)))
    ci = {c: i for i, c in enumerate(clusters)}
    si = {s: j for j, s in enumerate(speakers)}
    conf = np.zeros((len(clusters), len(speakers)))
    for dur, r, h in zip(durations, ref_labels, hyp_labels):
        conf[ci[h], si[r]] += dur
    return conf, clusters, speakers


def optimal_mapping(conf: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one (row, col) pairs maximizing the total matched mass."""
    if conf.size == 0:
        return []
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def _score_arrays(durations, ref_labels, hyp_labels) -> ScoreReport:
    if any(r is None for r in ref_labels):
        raise ScoringError("reference table has unlabeled segments")
    hyp_labels = [h.item() if isinstance(h, np.generic) else h for h in hyp_labels]
    conf, clusters, speakers = confusion_matrix(durations, ref_labels, hyp_labels)
    pairs = optimal_mapping(conf)
    correct = float(sum(conf[r, c] for r, c in pairs))
    mapping = {clusters[r]: speakers[c] for r, c in pairs}
    return ScoreReport(
        total_speech=float(np.sum(durations)),
        correct=correct,
        mapping=mapping,
        confusion=conf,
        clusters=clusters,
        speakers=speakers,
        n_segments=len(durations),
    )


def score(ref: SegmentTable, hyp: Sequence) -> ScoreReport:
    """Duration-weighted recall after the best cluster-to-speaker mapping.

    Clusters left unmapped (more clusters than speakers) count as error.
    """
    if len(hyp) != len(ref):
        raise ScoringError(f"{len(hyp)} hypothesis labels for {len(ref)} reference segments")
    return _score_arrays(ref.durations, ref.labels, list(hyp))


def score_filtered(ref: SegmentTable, hyp: Sequence, min_duration: float, keep: str = "longer") -> ScoreReport:
    """Score only segments longer than ``min_duration`` (``keep="longer"``),
    or only those at most ``min_duration`` long (``keep="shorter"``)."""
    if len(hyp) != len(ref):
        raise ScoringError(f"{len(hyp)} hypothesis labels for {len(ref)} reference segments")
    dur = ref.durations
    if keep == "longer":
        mask = dur > min_duration
    elif keep == "shorter":
        mask = dur <= min_duration
    else:
        raise ValueError(f"keep must be 'longer' or 'shorter', got {keep!r}")
    if not np.any(mask):
        raise ScoringError(f"no segments retained at min_duration={min_duration} ({keep})")
    idx = np.flatnonzero(mask)
    labels = ref.labels
    return _score_arrays(dur[idx], [labels[i] for i in idx], [hyp[i] for i in idx])


def score_rttm_pair(ref: SegmentTable, hyp: SegmentTable) -> ScoreReport:
    """Score a hypothesis RTTM whose segments coincide with the reference's."""
    if len(ref) != len(hyp):
        raise ScoringError(f"hypothesis has {len(hyp)} segments, reference {len(ref)}")
    for i, (r, h) in enumerate(zip(ref, hyp)):
        if abs(r.start - h.start) > 5e-3 or abs(r.end - h.end) > 5e-3:
            raise ScoringError(f"segment {i} boundaries differ: ref [{r.start}, {r.end}] hyp [{h.start}, {h.end}]")
    return score(ref, hyp.labels)


def aggregate_reports(reports: Sequence[ScoreReport]) -> dict:
    """Duration-weighted pooling across sessions."""
    total = float(sum(r.total_speech for r in reports))
    correct = float(sum(r.correct for r in reports))
    recall = 100.0 * correct / total if total > 0 else 0.0
    return {
        "n_sessions": len(reports),
        "total_speech": round(total, 6),
        "correct": round(correct, 6),
        "recall_pct": round(recall, 6),
        "error_pct": round(100.0 - recall, 6),
    }


def format_table(title: str, row_names: Sequence[str], col_names: Sequence[str], values) -> str:
    """Fixed-width results table, one row per system and one column per condition."""
    width = max([len(title)] + [len(r) for r in row_names]) + 2
    col_w = max([10] + [len(c) + 2 for c in col_names])
    rule = "-" * (width + col_w * len(col_names))
    lines = [rule, title.ljust(width) + "".join(c.rjust(col_w) for c in col_names), rule]
    for name, row in zip(row_names, values):
        cells = "".join(("N/A" if v is None else f"{v:.2f}").rjust(col_w) for v in row)
        lines.append(name.ljust(width) + cells)
    lines.append(rule)
    return "\n".join(lines) + "\n"


def report_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"

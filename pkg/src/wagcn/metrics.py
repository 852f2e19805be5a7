"""Frame-level ROC/AUC and score-curve export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FRAMES_PER_SEGMENT, DatasetManifest
from .errors import UsageError, ValidationError


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


@dataclass
class EvalResult:
    auc: float
    num_frames: int
    num_positive_frames: int
    roc: RocCurve

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "num_frames": self.num_frames,
            "num_positive_frames": self.num_positive_frames,
            "roc": [[float(f), float(t)] for f, t in zip(self.roc.fpr, self.roc.tpr)],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def expand_scores(segment_scores, frame_count: int, frames_per_segment: int = FRAMES_PER_SEGMENT) -> np.ndarray:
    """Repeat each segment score per frame; truncate or pad with the last score to ``frame_count``."""
    s = np.asarray(segment_scores, dtype=np.float64).ravel()
    if frame_count < 1:
        raise UsageError(f"frame_count must be >= 1, got {frame_count}")
    if s.size == 0:
        raise ValidationError("no segment scores to expand")
    frames = np.repeat(s, frames_per_segment)
    if frames.size >= frame_count:
        return frames[:frame_count]
    return np.concatenate([frames, np.full(frame_count - frames.size, s[-1])])


def roc_auc(frame_scores, frame_labels) -> EvalResult:
    """ROC over every distinct threshold and its trapezoidal area.

    Equal scores form one threshold step, so ties contribute half credit.
    """
    scores = np.asarray(frame_scores, dtype=np.float64).ravel()
    labels = np.asarray(frame_labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise UsageError(f"{scores.size} scores but {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC is undefined when only one class is present")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last position of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    area = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))
    return EvalResult(area, int(labels.size), n_pos, RocCurve(fpr, tpr, thresholds))


def frame_arrays(manifest: DatasetManifest, scores: dict):
    """Concatenated frame scores and labels in manifest order."""
    all_scores, all_labels = [], []
    for rec in manifest:
        if rec.id not in scores:
            raise ValidationError(f"no scores for video {rec.id!r}")
        all_scores.append(expand_scores(scores[rec.id], rec.frame_count))
        all_labels.append(rec.frame_labels())
    return np.concatenate(all_scores), np.concatenate(all_labels)


def dataset_eval(manifest: DatasetManifest, scores: dict) -> EvalResult:
    return roc_auc(*frame_arrays(manifest, scores))


def export_curves(video_id: str, segment_scores, intervals, frame_count: int, out_path, render: bool = False):
    """Write the ``frame,score,ground_truth`` CSV; with ``render`` also an SVG next to it."""
    frames = expand_scores(segment_scores, frame_count)
    truth = np.zeros(frame_count, dtype=np.int8)
    for start, end in intervals:
        truth[start:end] = 1
    out_path = Path(out_path)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "score", "ground_truth"])
        for i, (s, g) in enumerate(zip(frames, truth)):
            w.writerow([i, repr(float(s)), int(g)])
    figure = None
    if render:
        from .plotting import plot_score_curve

        figure = out_path.with_suffix(".svg")
        plot_score_curve(video_id, frames, intervals, figure)
    return out_path, figure


def read_curve_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    data = np.atleast_1d(data)
    return data["frame"].astype(int), data["score"].astype(np.float64), data["ground_truth"].astype(np.int8)


def write_score_csv(path, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_idx", "score"])
        for i, s in enumerate(np.asarray(scores).ravel()):
            w.writerow([i, repr(float(s))])


def read_score_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["segment_idx", "score"]:
        raise ValidationError(f"{path}: expected header segment_idx,score")
    return np.array([float(r[1]) for r in rows[1:]], dtype=np.float64)


def read_scores_dir(directory, manifest: DatasetManifest) -> dict:
    directory = Path(directory)
    scores = {}
    for rec in manifest:
        p = directory / f"{rec.id}.csv"
        if not p.is_file():
            raise ValidationError(f"no score file for video {rec.id!r} ({p})")
        scores[rec.id] = read_score_csv(p)
    return scores

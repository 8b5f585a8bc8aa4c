"""Integrated-gradients attribution and per-electrode importance maps.

Attributions are computed on normalized windows with an all-zero baseline.
Because normalization is a per-channel affine map, (x - x') * dF/dx is the
same whether taken in normalized or raw coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp.session import GESTURES
from .errors import ShapeError, SignalError
from .grid import ElectrodeLayout
from .nn.tensor import Tensor

DEFAULT_STEPS = 64
CSV_COLUMNS = ("electrode_id", "x", "y", "region", "gesture", "score")


def integrated_gradients_batch(
    model,
    windows: np.ndarray,
    targets,
    baselines: np.ndarray | None = None,
    steps: int = DEFAULT_STEPS,
    max_rows: int = 256,
) -> np.ndarray:
    """IG for a stack of windows (W x C x T) w.r.t. each window's target logit.

    Midpoint rule: path points at alpha = (k - 0.5) / steps, k = 1..steps.
    Path points of several windows share one forward/backward pass; this is
    exact because every row of an eval-mode model depends on its own input only.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3:
        raise ShapeError(f"expected W x C x T windows, got shape {windows.shape}")
    targets = np.broadcast_to(np.asarray(targets, dtype=int), (len(windows),))
    baselines = np.zeros_like(windows) if baselines is None else np.broadcast_to(baselines, windows.shape)
    if baselines.shape != windows.shape:
        raise ShapeError(f"baseline shape {baselines.shape} != input shape {windows.shape}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    diff = windows - baselines
    # rows enumerate (window, step) pairs
    win = np.repeat(np.arange(len(windows)), steps)
    alpha = np.tile(alphas, len(windows))
    grad_sum = np.zeros_like(windows)
    was_training = getattr(model, "training", False)
    if was_training:
        model.eval()
    try:
        for lo in range(0, len(win), max_rows):
            w, a = win[lo : lo + max_rows], alpha[lo : lo + max_rows]
            x = Tensor(baselines[w] + a[:, None, None] * diff[w], requires_grad=True)
            out = model(x)
            if out.ndim != 2:
                raise ShapeError(f"model output must be B x classes, got {out.shape}")
            seed = np.zeros(out.shape)
            seed[np.arange(len(w)), targets[w]] = 1.0
            out.backward(seed)
            np.add.at(grad_sum, w, x.grad)
    finally:
        if was_training:
            model.train()
    return diff * grad_sum / steps


def integrated_gradients(model, x: np.ndarray, target_class: int, baseline=None, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """IG of one C x T window for the pre-softmax logit of ``target_class``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"expected a C x T window, got shape {x.shape}")
    if baseline is not None:
        baseline = np.asarray(baseline, dtype=float)
        if baseline.shape != x.shape:
            raise ShapeError(f"baseline shape {baseline.shape} != input shape {x.shape}")
        baseline = baseline[None]
    return integrated_gradients_batch(model, x[None], [target_class], baseline, steps)[0]


def completeness_residual(model, x: np.ndarray, target_class: int, attributions: np.ndarray, baseline=None) -> float:
    """|sum IG - (F(x) - F(x'))| / |F(x) - F(x')|."""
    baseline = np.zeros_like(x) if baseline is None else baseline
    was_training = getattr(model, "training", False)
    if was_training:
        model.eval()
    try:
        fx = model(Tensor(np.asarray(x, dtype=float)[None])).data[0, target_class]
        fb = model(Tensor(np.asarray(baseline, dtype=float)[None])).data[0, target_class]
    finally:
        if was_training:
            model.train()
    delta = fx - fb
    return float(abs(attributions.sum() - delta) / abs(delta))


def electrode_importance(attributions) -> np.ndarray:
    """Per-channel score: mean over windows of sum_t |IG[c, t]|."""
    attributions = [np.asarray(a, dtype=float) for a in attributions]
    if not attributions:
        raise SignalError("no attributions to aggregate")
    shapes = {a.shape[0] for a in attributions}
    if len(shapes) != 1 or any(a.ndim != 2 for a in attributions):
        raise ShapeError("all attributions must be C x T with the same channel count")
    return np.mean([np.abs(a).sum(axis=1) for a in attributions], axis=0)


def importance_by_gesture(attributions: np.ndarray, labels) -> dict[str, np.ndarray]:
    """Gesture name -> electrode scores, for every gesture present in ``labels``."""
    labels = np.asarray(labels)
    return {
        GESTURES[g]: electrode_importance(attributions[labels == g])
        for g in sorted(set(labels.tolist()))
    }


def minmax(scores) -> np.ndarray:
    """Scale to [0, 1]; an all-equal vector maps to 0.5 everywhere."""
    s = np.asarray(scores, dtype=float)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)


def normalize_and_average(per_subject_scores) -> np.ndarray:
    """Min-max normalize each subject, then average across subjects per electrode."""
    per_subject_scores = [np.asarray(s, dtype=float) for s in per_subject_scores]
    if not per_subject_scores:
        raise SignalError("need at least one subject")
    if len({s.shape for s in per_subject_scores}) != 1:
        raise ShapeError("subjects disagree on electrode count")
    return np.mean([minmax(s) for s in per_subject_scores], axis=0)


@dataclass
class AttributionMap:
    gesture: str
    electrode_ids: list[int]
    scores: np.ndarray
    subject_id: str = "group"
    normalization: str = "minmax-mean"
    per_subject: dict[str, list[float]] = field(default_factory=dict)

    def top(self, k: int) -> list[int]:
        order = np.argsort(-self.scores, kind="stable")
        return [self.electrode_ids[i] for i in order[:k]]

    def to_dict(self) -> dict:
        return {
            "gesture": self.gesture,
            "electrode_ids": list(self.electrode_ids),
            "scores": self.scores.tolist(),
            "subject_id": self.subject_id,
            "normalization": self.normalization,
            "per_subject": self.per_subject,
        }


def export_maps_csv(maps: list[AttributionMap], layout: ElectrodeLayout, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for m in maps:
            for eid, score in zip(m.electrode_ids, m.scores):
                e = layout.electrode(eid)
                w.writerow([eid, e.x, e.y, e.region, m.gesture, repr(float(score))])
    return path

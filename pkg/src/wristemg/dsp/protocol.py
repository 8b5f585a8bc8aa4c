"""Segment extraction, windowing and per-channel normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ProtocolError, SignalError
from .filters import FilterCoefficients, apply_filter, design_bandpass
from .session import GESTURE_INDEX, RecordingSession, Trial

MOVEMENT_SPAN_S = (0.5, 2.0)
IDLE_SPAN_S = (3.4, 3.9)
WINDOW_MS = 250
OVERLAP = 0.5
STD_FLOOR = 1e-8


@dataclass
class Segment:
    data: np.ndarray  # channels x samples
    label: str


def extract_segments(trial: Trial, fs: float) -> list[Segment]:
    """Movement segment [0.5 s, 2.0 s) and idle segment [3.4 s, 3.9 s) of a trial."""
    if trial.is_preparation:
        raise ProtocolError("excluded trial: the preparation trial is not segmented")
    out = []
    for (t0, t1), label in ((MOVEMENT_SPAN_S, trial.gesture), (IDLE_SPAN_S, "idle")):
        a, b = round(t0 * fs), round(t1 * fs)
        if b > trial.samples.shape[-1]:
            raise ProtocolError(f"trial too short for segment [{t0}, {t1}) s")
        out.append(Segment(trial.samples[:, a:b], label))
    return out


def window_samples(fs: float, window_ms: float = WINDOW_MS, overlap: float = OVERLAP) -> tuple[int, int]:
    n_p = round(window_ms / 1000 * fs)
    return n_p, max(1, round(n_p * (1 - overlap)))


def window(segment: np.ndarray, fs: float, window_ms: float = WINDOW_MS, overlap: float = OVERLAP) -> np.ndarray:
    """Left-aligned windows of a channels x T segment -> count x channels x N_p."""
    segment = np.asarray(segment)
    n_p, hop = window_samples(fs, window_ms, overlap)
    t = segment.shape[-1]
    if t < n_p:
        raise SignalError(f"segment of {t} samples is shorter than one {n_p}-sample window")
    count = (t - n_p) // hop + 1
    starts = np.arange(count) * hop
    return np.stack([segment[:, s : s + n_p] for s in starts])


@dataclass
class WindowedDataset:
    data: np.ndarray  # W x C x N_p
    labels: np.ndarray  # W, class indices
    block_ids: np.ndarray  # W
    fs: float
    channel_ids: tuple[int, ...]
    window_ms: float = WINDOW_MS
    overlap: float = OVERLAP
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, mask) -> "WindowedDataset":
        return WindowedDataset(
            self.data[mask], self.labels[mask], self.block_ids[mask], self.fs,
            self.channel_ids, self.window_ms, self.overlap, dict(self.meta),
        )

    def from_blocks(self, blocks) -> "WindowedDataset":
        return self.take(np.isin(self.block_ids, list(blocks)))

    def select_channels(self, electrode_ids) -> "WindowedDataset":
        pos = {c: i for i, c in enumerate(self.channel_ids)}
        rows = [pos[i] for i in electrode_ids]
        return WindowedDataset(
            self.data[:, rows], self.labels, self.block_ids, self.fs,
            tuple(electrode_ids), self.window_ms, self.overlap, dict(self.meta),
        )


def process_session(
    session: RecordingSession,
    coeffs: FilterCoefficients | None = None,
    window_ms: float = WINDOW_MS,
    overlap: float = OVERLAP,
) -> WindowedDataset:
    """Filter each block as one continuous recording, then segment and window.

    Each block starts from zero filter state; the preparation trial is
    filtered (it precedes the others in time) but never segmented.
    """
    coeffs = coeffs or design_bandpass(session.fs)
    data, labels, blocks = [], [], []
    for block in session.blocks:
        lengths = [t.samples.shape[1] for t in block.trials]
        filtered = apply_filter(np.concatenate([t.samples for t in block.trials], axis=1), coeffs)
        edges = np.cumsum([0] + lengths)
        for k, trial in enumerate(block.trials):
            if trial.is_preparation:
                continue
            seg_trial = Trial(trial.gesture, filtered[:, edges[k] : edges[k + 1]])
            for seg in extract_segments(seg_trial, session.fs):
                w = window(seg.data, session.fs, window_ms, overlap)
                data.append(w)
                labels += [GESTURE_INDEX[seg.label]] * len(w)
                blocks += [block.block_id] * len(w)
    return WindowedDataset(
        np.concatenate(data), np.array(labels), np.array(blocks), session.fs,
        tuple(session.layout.ids), window_ms, overlap,
        {"filter": coeffs.describe(), "subject_id": session.subject_id, "layout": session.layout.name},
    )


@dataclass(frozen=True)
class ChannelNormalizer:
    mean: np.ndarray
    std: np.ndarray

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return apply_normalizer(self, windows)


def fit_normalizer(train_windows: np.ndarray, std_floor: float = STD_FLOOR) -> ChannelNormalizer:
    """Per-channel mean/std pooled over all windows and time samples."""
    x = np.asarray(train_windows)
    if x.ndim != 3 or not len(x):
        raise SignalError("empty training set: cannot fit normalizer")
    mean = x.mean(axis=(0, 2))
    std = np.maximum(x.std(axis=(0, 2)), std_floor)
    return ChannelNormalizer(mean, std)


def apply_normalizer(normalizer: ChannelNormalizer, windows: np.ndarray) -> np.ndarray:
    return (np.asarray(windows) - normalizer.mean[:, None]) / normalizer.std[:, None]

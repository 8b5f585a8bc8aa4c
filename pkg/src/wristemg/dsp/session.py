"""Recording-session data model and its on-disk format.

A session directory holds ``session.json`` plus one matrix file per trial.
Binary trials are little-endian float32, row-major channels x samples,
named ``b<block>_t<trial>.f32``.  A trial may instead reference a CSV file
whose header row lists electrode ids and whose rows are samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ProtocolError
from ..grid import ElectrodeLayout, get_layout

GESTURES = ("idle", "swipe-left", "swipe-right", "swipe-up", "one-tap", "taps")
DYNAMIC_GESTURES = GESTURES[1:]
GESTURE_INDEX = {g: i for i, g in enumerate(GESTURES)}
SENSOR_FS = {"maize": 1000, "quattro": 2000}
TRIAL_SECONDS = 4.0
PREPARATION_GESTURE = "swipe-up"
FORMAT = "wristemg-session/1"


@dataclass
class Trial:
    gesture: str
    samples: np.ndarray  # channels x T
    is_preparation: bool = False


@dataclass
class Block:
    block_id: int
    trials: list[Trial]


@dataclass
class RecordingSession:
    subject_id: str
    sensor: str
    fs: int
    layout: ElectrodeLayout
    blocks: list[Block]
    reps_per_gesture: int = 6
    metadata: dict = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return len(self.layout)

    @property
    def block_ids(self) -> list[int]:
        return [b.block_id for b in self.blocks]

    def validate(self) -> None:
        if self.sensor not in SENSOR_FS:
            raise ProtocolError(f"unknown sensor {self.sensor!r}")
        if self.fs != SENSOR_FS[self.sensor]:
            raise ProtocolError(f"{self.sensor} sessions are sampled at {SENSOR_FS[self.sensor]} Hz, got {self.fs}")
        if len(set(self.block_ids)) != len(self.blocks):
            raise ProtocolError("duplicate block ids")
        n_samples = round(TRIAL_SECONDS * self.fs)
        expected = 1 + self.reps_per_gesture * len(DYNAMIC_GESTURES)
        for block in self.blocks:
            if len(block.trials) != expected:
                raise ProtocolError(
                    f"block {block.block_id} has {len(block.trials)} trials, expected {expected}"
                )
            if not block.trials[0].is_preparation or any(t.is_preparation for t in block.trials[1:]):
                raise ProtocolError(f"block {block.block_id}: only the first trial may be preparation")
            counts = {g: 0 for g in DYNAMIC_GESTURES}
            for t in block.trials:
                if t.samples.shape != (self.n_channels, n_samples):
                    raise ProtocolError(
                        f"block {block.block_id}: trial shape {t.samples.shape}, "
                        f"expected {(self.n_channels, n_samples)}"
                    )
                if t.gesture not in GESTURES:
                    raise ProtocolError(f"unknown gesture {t.gesture!r}")
                if not t.is_preparation:
                    if t.gesture == "idle":
                        raise ProtocolError("idle is not a cued trial gesture")
                    counts[t.gesture] += 1
            if set(counts.values()) != {self.reps_per_gesture}:
                raise ProtocolError(f"block {block.block_id}: gesture repetitions {counts}")

    def with_signals(self, fn, layout: ElectrodeLayout | None = None) -> "RecordingSession":
        """Copy of the session with ``fn`` applied to every trial matrix."""
        blocks = [
            Block(b.block_id, [replace(t, samples=fn(t.samples)) for t in b.trials])
            for b in self.blocks
        ]
        return replace(self, blocks=blocks, layout=layout or self.layout)


def save_session(session: RecordingSession, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for block in session.blocks:
        trials = []
        for k, trial in enumerate(block.trials):
            name = f"b{block.block_id}_t{k}.f32"
            np.ascontiguousarray(trial.samples, dtype="<f4").tofile(directory / name)
            trials.append({
                "index": k,
                "gesture": trial.gesture,
                "is_preparation": trial.is_preparation,
                "file": name,
                "shape": list(trial.samples.shape),
            })
        manifest.append({"block_id": block.block_id, "trials": trials})
    doc = {
        "format": FORMAT,
        "subject_id": session.subject_id,
        "sensor": session.sensor,
        "fs": session.fs,
        "reps_per_gesture": session.reps_per_gesture,
        "layout": session.layout.to_dict(),
        "dtype": "float32-le",
        "blocks": manifest,
        "metadata": session.metadata,
    }
    (directory / "session.json").write_text(json.dumps(doc, indent=1))
    return directory


def _read_csv(path: Path, layout: ElectrodeLayout) -> np.ndarray:
    with open(path) as fh:
        header = [int(h) for h in fh.readline().strip().split(",")]
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).T
    if sorted(header) != layout.ids:
        raise ProtocolError(f"{path.name}: header ids do not match layout {layout.name!r}")
    order = np.argsort(header)
    return data[order]


def load_session(directory) -> RecordingSession:
    directory = Path(directory)
    doc = json.loads((directory / "session.json").read_text())
    layout_doc = doc["layout"]
    layout = (
        get_layout(layout_doc) if isinstance(layout_doc, str) else ElectrodeLayout.from_dict(layout_doc)
    )
    blocks = []
    for b in doc["blocks"]:
        trials = []
        for t in b["trials"]:
            path = directory / t["file"]
            if path.suffix == ".csv":
                samples = _read_csv(path, layout)
            else:
                shape = t.get("shape") or (len(layout), round(TRIAL_SECONDS * doc["fs"]))
                samples = np.fromfile(path, dtype="<f4").reshape(shape)
            trials.append(Trial(t["gesture"], samples.astype(np.float64), bool(t.get("is_preparation", False))))
        blocks.append(Block(int(b["block_id"]), trials))
    session = RecordingSession(
        doc["subject_id"], doc["sensor"], int(doc["fs"]), layout, blocks,
        int(doc.get("reps_per_gesture", 6)), doc.get("metadata", {}),
    )
    session.validate()
    return session

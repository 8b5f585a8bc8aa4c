"""Synthetic wrist-sEMG sessions with planted spatial structure.

Each source emits unit-variance band-limited noise, amplitude-modulated by
a per-gesture envelope (movement ramp, hold, return ramp, idle).  Monopolar
channel c sees ``sum_s exp(-|p_c - p_s| / decay) * source_s`` plus
common-mode interference and sensor noise.  Bipolar layouts see the
difference of two virtual contacts ``bipolar_spacing`` apart along y, so
any spatially uniform component cancels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp.filters import apply_filter, design_bandpass
from .dsp.session import (
    DYNAMIC_GESTURES,
    PREPARATION_GESTURE,
    SENSOR_FS,
    TRIAL_SECONDS,
    Block,
    RecordingSession,
    Trial,
)
from .errors import ConfigError
from .grid import ElectrodeLayout, build_maize_layout, build_quattro_layout

PHASES_S = (0.5, 1.5, 0.5, 1.5)  # movement, hold, return, idle
WARMUP_S = 0.5


@dataclass
class SynthSpec:
    layout: ElectrodeLayout
    source_positions: np.ndarray  # S x 2, pitch units
    activations: dict[str, list[float]]  # dynamic gesture -> hold amplitude per source
    sensor: str = "maize"
    fs: int | None = None
    rest_amplitude: float = 0.05
    decay: float = 1.5
    far_field: dict[str, float] = field(default_factory=dict)  # gesture -> uniform-source amplitude
    n_blocks: int = 10
    reps_per_gesture: int = 6
    phases: tuple[float, float, float, float] = PHASES_S
    band: tuple[float, float] = (20.0, 450.0)
    common_mode_amplitude: float = 0.0
    common_mode_hz: float = 50.0
    common_noise_std: float = 0.0
    noise_std: float = 0.05
    bipolar_spacing: float = 2.0
    subject_id: str = "synth-01"
    seed: int = 0

    def __post_init__(self):
        if self.fs is None:
            self.fs = SENSOR_FS.get(self.sensor, 1000)
        self.source_positions = np.asarray(self.source_positions, dtype=float).reshape(-1, 2)

    @property
    def n_sources(self) -> int:
        return len(self.source_positions)

    def validate(self) -> None:
        if self.sensor not in SENSOR_FS or self.fs != SENSOR_FS[self.sensor]:
            raise ConfigError(f"sensor {self.sensor!r} with fs={self.fs} is not a supported pairing")
        if abs(sum(self.phases) - TRIAL_SECONDS) > 1e-9:
            raise ConfigError(f"phase durations must sum to {TRIAL_SECONDS} s")
        if self.decay <= 0:
            raise ConfigError("gain decay constant must be positive")
        if self.n_blocks < 1 or self.reps_per_gesture < 1:
            raise ConfigError("need at least one block and one repetition")
        for g in DYNAMIC_GESTURES:
            amps = self.activations.get(g, [self.rest_amplitude] * self.n_sources)
            if len(amps) != self.n_sources:
                raise ConfigError(f"gesture {g!r}: {len(amps)} amplitudes for {self.n_sources} sources")
            if min(amps, default=0.0) < 0:
                raise ConfigError("amplitudes must be non-negative")
        scalars = (self.rest_amplitude, self.common_mode_amplitude, self.common_noise_std, self.noise_std)
        if min(scalars) < 0 or min(self.far_field.values(), default=0.0) < 0:
            raise ConfigError("amplitudes must be non-negative")

    def summary(self) -> dict:
        return {
            "layout": self.layout.name,
            "sensor": self.sensor,
            "fs": self.fs,
            "source_positions": self.source_positions.tolist(),
            "activations": self.activations,
            "rest_amplitude": self.rest_amplitude,
            "decay": self.decay,
            "far_field": self.far_field,
            "n_blocks": self.n_blocks,
            "reps_per_gesture": self.reps_per_gesture,
            "phases_s": list(self.phases),
            "band_hz": list(self.band),
            "common_mode_amplitude": self.common_mode_amplitude,
            "common_mode_hz": self.common_mode_hz,
            "common_noise_std": self.common_noise_std,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }


def gain_matrix(spec: SynthSpec) -> np.ndarray:
    """Channels x sources far-field gains."""
    p = spec.layout.coords()
    s = spec.source_positions

    def gain(points):
        d = np.linalg.norm(points[:, None, :] - s[None, :, :], axis=-1)
        return np.exp(-d / spec.decay)

    if spec.layout.scheme == "bipolar":
        half = np.array([0.0, spec.bipolar_spacing / 2])
        return gain(p + half) - gain(p - half)
    return gain(p)


def envelope_shape(fs: float, phases=PHASES_S) -> np.ndarray:
    """0..1 activity profile over one trial: ramp up, hold, ramp down, rest."""
    n = [round(d * fs) for d in phases]
    return np.concatenate([
        np.linspace(0.0, 1.0, n[0], endpoint=False),
        np.ones(n[1]),
        np.linspace(1.0, 0.0, n[2], endpoint=False),
        np.zeros(n[3]),
    ])


class _NoiseSource:
    """Unit-variance band-limited Gaussian noise."""

    def __init__(self, fs, band):
        self.coeffs = design_bandpass(fs, *band)
        self.warm = round(WARMUP_S * fs)
        impulse = np.zeros(round(20 * fs))
        impulse[0] = 1.0
        self.scale = 1.0 / np.sqrt(np.sum(apply_filter(impulse, self.coeffs) ** 2))

    def __call__(self, rng, rows, n):
        white = rng.standard_normal((rows, n + self.warm))
        return apply_filter(white, self.coeffs)[:, self.warm :] * self.scale


def _trial_signal(spec, gesture, gains, shape, noise, rng, t):
    n = len(t)
    rest = spec.rest_amplitude
    active = np.asarray(spec.activations.get(gesture, [rest] * spec.n_sources), dtype=float)
    amp = rest + (active[:, None] - rest) * shape[None, :]
    x = np.zeros((len(gains), n))
    if spec.n_sources:
        x += gains @ (amp * noise(rng, spec.n_sources, n))
    if spec.far_field and spec.layout.scheme == "monopolar":
        # spatially uniform source; differential contacts would cancel it exactly
        base = spec.far_field.get("idle", 0.0)
        level = base + (spec.far_field.get(gesture, base) - base) * shape
        x += level * noise(rng, 1, n)
    if spec.layout.scheme == "monopolar":
        phase = rng.uniform(0, 2 * np.pi)
        x += spec.common_mode_amplitude * np.sin(2 * np.pi * spec.common_mode_hz * t + phase)
        if spec.common_noise_std:
            x += spec.common_noise_std * noise(rng, 1, n)
    if spec.noise_std:
        x += spec.noise_std * noise(rng, len(gains), n)
    return x


def generate_session(spec: SynthSpec) -> RecordingSession:
    """Session with the protocol's block/trial structure, deterministic per seed.

    Samples are rounded to float32 so an in-memory session equals its
    on-disk copy.
    """
    spec.validate()
    n = round(TRIAL_SECONDS * spec.fs)
    t = np.arange(n) / spec.fs
    shape = envelope_shape(spec.fs, spec.phases)
    gains = gain_matrix(spec)
    noise = _NoiseSource(spec.fs, spec.band)
    blocks = []
    for b, child in enumerate(np.random.SeedSequence(spec.seed).spawn(spec.n_blocks)):
        rng = np.random.default_rng(child)
        order = list(DYNAMIC_GESTURES) * spec.reps_per_gesture
        order = [order[i] for i in rng.permutation(len(order))]
        trials = []
        for k, gesture in enumerate([PREPARATION_GESTURE] + order):
            x = _trial_signal(spec, gesture, gains, shape, noise, rng, t)
            trials.append(Trial(gesture, x.astype(np.float32).astype(np.float64), is_preparation=k == 0))
        blocks.append(Block(b, trials))
    session = RecordingSession(
        spec.subject_id, spec.sensor, spec.fs, spec.layout, blocks,
        spec.reps_per_gesture, {"synth": spec.summary()},
    )
    session.validate()
    return session


def _default_layout(sensor: str) -> ElectrodeLayout:
    return build_quattro_layout() if sensor == "quattro" else build_maize_layout()


def _spread_positions(layout: ElectrodeLayout, region: str, k: int) -> np.ndarray:
    """k electrode coordinates from a region, chosen by farthest-point traversal."""
    pts = np.array([(e.x, e.y) for e in layout.electrodes if region == "all" or e.region == region])
    chosen = [0]
    d = np.linalg.norm(pts - pts[0], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[chosen]


def separable_spec(
    sensor: str = "maize",
    layout: ElectrodeLayout | None = None,
    region: str = "all",
    noise_std: float = 0.05,
    seed: int = 0,
    subject_id: str = "synth-01",
    **overrides,
) -> SynthSpec:
    """Five well-separated sources, one per dynamic gesture; idle is rest only.

    For bipolar layouts the sources sit one pitch unit off the electrode
    line so the differential contacts see them asymmetrically.
    """
    layout = layout or _default_layout(sensor)
    pos = _spread_positions(layout, region, len(DYNAMIC_GESTURES))
    if layout.scheme == "bipolar":
        pos = pos + np.array([0.0, 1.0])
    acts = {}
    for i, g in enumerate(DYNAMIC_GESTURES):
        a = [0.1] * len(DYNAMIC_GESTURES)
        a[i] = 1.0
        acts[g] = a
    params = dict(
        layout=layout, source_positions=pos, activations=acts, sensor=sensor,
        rest_amplitude=0.05, decay=1.5, common_mode_amplitude=0.2,
        noise_std=noise_std, seed=seed, subject_id=subject_id,
    )
    params.update(overrides)
    return SynthSpec(**params)


def planted_importance_spec(
    target_channels,
    layout: ElectrodeLayout | None = None,
    sensor: str = "maize",
    decay: float = 0.25,
    seed: int = 0,
    subject_id: str = "synth-01",
    **overrides,
) -> SynthSpec:
    """Sources directly under ``target_channels`` with fast spatial decay.

    With k targets, gesture g drives target ``g mod k`` at one of
    ``ceil(5 / k)`` amplitude levels, so only target channels carry class
    information.  An empty target set gives class-uninformative channels.
    """
    layout = layout or _default_layout(sensor)
    targets = sorted(target_channels)
    for c in targets:
        layout.electrode(c)
    k = len(targets)
    pos = layout.coords(targets) if k else np.zeros((0, 2))
    acts = {}
    if k:
        levels = np.linspace(1.0, 0.3, -(-len(DYNAMIC_GESTURES) // k))
        for i, g in enumerate(DYNAMIC_GESTURES):
            a = [0.05] * k
            a[i % k] = float(levels[i // k])
            acts[g] = a
    params = dict(
        layout=layout, source_positions=pos, activations=acts, sensor=sensor,
        rest_amplitude=0.05, decay=decay, noise_std=0.05, seed=seed, subject_id=subject_id,
    )
    params.update(overrides)
    return SynthSpec(**params)


def common_field_spec(seed: int = 0, subject_id: str = "synth-01", **overrides) -> SynthSpec:
    """Class information carried mostly by a spatially uniform field plus weak local sources.

    Monopolar recordings keep the uniform field; odd-even bipolar derivation
    removes it.
    """
    spec = separable_spec(seed=seed, subject_id=subject_id, common_mode_amplitude=1.0)
    levels = dict(zip(DYNAMIC_GESTURES, (1.0, 0.8, 0.6, 0.4, 0.2)))
    weak = {g: [0.02 + 0.03 * (a == 1.0) for a in amps] for g, amps in spec.activations.items()}
    params = dict(activations=weak, rest_amplitude=0.02, far_field={"idle": 0.05, **levels}, noise_std=0.05)
    params.update(overrides)
    for key, value in params.items():
        setattr(spec, key, value)
    return spec

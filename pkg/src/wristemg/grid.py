"""Electrode geometry, channel subsets and spatial-density metrics.

Coordinates are in pitch units: one unit is the 5 mm inter-contact spacing
of the Maize grid.  The Maize layout is two 4x4 grids (extensor then
flexor) separated along x by ``grid_gap`` units; the Quattro layout is a
ring of 15 bipolar channels unwrapped onto the x axis.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateGeometryError,
    DegenerateSubsetError,
    DensityUndefinedError,
    LayoutError,
    SamplingError,
    SignalError,
)

PITCH_MM = 5.0
REGIONS = ("extensor", "flexor")
DEFAULT_GRID_GAP = 4
DEFAULT_WRIST_CIRCUMFERENCE = 32.0
DEFAULT_MAX_ATTEMPTS = 100_000


class Density(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    INVALID = "invalid"


@dataclass(frozen=True)
class Electrode:
    id: int
    x: float
    y: float
    region: str
    grid_id: int


@dataclass(frozen=True)
class ElectrodeLayout:
    name: str
    scheme: str
    electrodes: tuple[Electrode, ...]
    kind: str = "grid"  # grid | ring | derived
    meta: tuple[tuple[str, object], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.scheme not in ("monopolar", "bipolar"):
            raise LayoutError(f"unknown reference scheme {self.scheme!r}")
        ids = [e.id for e in self.electrodes]
        if ids != list(range(1, len(ids) + 1)):
            raise LayoutError("electrode ids must be unique and contiguous from 1")
        coords = {(e.x, e.y) for e in self.electrodes}
        if len(coords) != len(ids):
            raise LayoutError("two electrodes share a coordinate")
        for e in self.electrodes:
            if e.region not in REGIONS:
                raise LayoutError(f"electrode {e.id} has unknown region {e.region!r}")

    def __len__(self) -> int:
        return len(self.electrodes)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.electrodes]

    @property
    def metadata(self) -> dict:
        return dict(self.meta)

    def electrode(self, eid: int) -> Electrode:
        if not 1 <= eid <= len(self.electrodes):
            raise LayoutError(f"electrode id {eid} not in layout {self.name!r}")
        return self.electrodes[eid - 1]

    def coords(self, ids: Iterable[int] | None = None) -> np.ndarray:
        ids = self.ids if ids is None else list(ids)
        return np.array([(self.electrode(i).x, self.electrode(i).y) for i in ids], dtype=float)

    def rows(self, ids: Iterable[int]) -> list[int]:
        """Signal-matrix row index of each electrode id (rows follow id order)."""
        return [self.electrode(i).id - 1 for i in ids]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scheme": self.scheme,
            "kind": self.kind,
            "metadata": self.metadata,
            "electrodes": [
                {"id": e.id, "x": e.x, "y": e.y, "region": e.region, "grid_id": e.grid_id}
                for e in self.electrodes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ElectrodeLayout":
        electrodes = tuple(
            Electrode(int(e["id"]), float(e["x"]), float(e["y"]), e["region"], int(e["grid_id"]))
            for e in doc["electrodes"]
        )
        meta = tuple(sorted((doc.get("metadata") or {}).items()))
        return cls(doc["name"], doc["scheme"], electrodes, doc.get("kind", "grid"), meta)

    # bitmask adjacency, evaluated within a grid only
    @functools.cached_property
    def _adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.electrodes)
        if n > 62:
            raise LayoutError("adjacency masks support at most 62 electrodes")
        edge = np.zeros(n, dtype=np.int64)
        corner = np.zeros(n, dtype=np.int64)
        for a, b in itertools.combinations(range(n), 2):
            ea, eb = self.electrodes[a], self.electrodes[b]
            if ea.grid_id != eb.grid_id:
                continue
            dx, dy = abs(ea.x - eb.x), abs(ea.y - eb.y)
            if dx + dy == 1:
                edge[a] |= 1 << b
                edge[b] |= 1 << a
            elif dx == 1 and dy == 1:
                corner[a] |= 1 << b
                corner[b] |= 1 << a
        return edge, corner


@dataclass(frozen=True)
class ChannelSubset:
    electrode_ids: tuple[int, ...]
    layout: str

    def __post_init__(self):
        ids = tuple(int(i) for i in self.electrode_ids)
        object.__setattr__(self, "electrode_ids", ids)
        if not ids:
            raise DegenerateSubsetError("subset must contain at least one electrode")
        if len(set(ids)) != len(ids):
            raise DegenerateSubsetError(f"duplicate electrode ids in subset {ids}")

    def __len__(self) -> int:
        return len(self.electrode_ids)

    def check(self, layout: ElectrodeLayout) -> None:
        if self.layout != layout.name:
            raise LayoutError(f"subset refers to layout {self.layout!r}, got {layout.name!r}")
        for i in self.electrode_ids:
            layout.electrode(i)

    def to_dict(self) -> dict:
        return {"layout": self.layout, "ids": list(self.electrode_ids)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelSubset":
        return cls(tuple(doc["ids"]), doc["layout"])


def build_maize_layout(grid_gap: float = DEFAULT_GRID_GAP) -> ElectrodeLayout:
    if grid_gap < 1:
        raise LayoutError("grid_gap must be at least 1 pitch unit")
    electrodes = []
    for grid_id, (region, x0) in enumerate((("extensor", 0), ("flexor", 4 + grid_gap)), start=1):
        for y in range(4):
            for x in range(4):
                electrodes.append(
                    Electrode(len(electrodes) + 1, float(x0 + x), float(y), region, grid_id)
                )
    return ElectrodeLayout(
        "maize", "monopolar", tuple(electrodes), "grid",
        (("grid_gap", grid_gap), ("pitch_mm", PITCH_MM)),
    )


def build_quattro_layout(wrist_circumference: float = DEFAULT_WRIST_CIRCUMFERENCE) -> ElectrodeLayout:
    if wrist_circumference <= 0:
        raise LayoutError("wrist circumference must be positive")
    spacing = wrist_circumference / 15
    electrodes = []
    for i in range(15):
        x = i * spacing
        region = "extensor" if x < wrist_circumference / 2 else "flexor"
        # four sticks of four pairs; the last stick contributes three channels
        electrodes.append(Electrode(i + 1, x, 0.0, region, i // 4 + 1))
    n_ext = sum(e.region == "extensor" for e in electrodes)
    meta = (
        ("circumference", wrist_circumference),
        ("pitch_mm", PITCH_MM),
        ("region_split", [n_ext, 15 - n_ext]),
        ("spacing", spacing),
    )
    return ElectrodeLayout("quattro", "bipolar", tuple(electrodes), "ring", meta)


def maize_bipolar_pairs(layout: ElectrodeLayout | None = None) -> list[tuple[int, int]]:
    """Odd-even electrode-id pairs (1,2), (3,4), ..., (31,32)."""
    n = 32 if layout is None else len(layout)
    return [(i, i + 1) for i in range(1, n, 2)]


def build_bipolar_layout(
    layout: ElectrodeLayout, pairs: Sequence[tuple[int, int]] | None = None, name: str | None = None
) -> ElectrodeLayout:
    """Layout of derived bipolar channels placed at pair midpoints."""
    pairs = maize_bipolar_pairs(layout) if pairs is None else list(pairs)
    electrodes = []
    for k, (a, b) in enumerate(pairs, start=1):
        ea, eb = layout.electrode(a), layout.electrode(b)
        electrodes.append(
            Electrode(k, (ea.x + eb.x) / 2, (ea.y + eb.y) / 2, ea.region, ea.grid_id)
        )
    name = name or f"{layout.name}-bi-{len(pairs)}"
    meta = (("pairs", [list(p) for p in pairs]), ("source_layout", layout.name))
    return ElectrodeLayout(name, "bipolar", tuple(electrodes), "derived", meta)


def get_layout(name: str, **params) -> ElectrodeLayout:
    if name == "maize":
        return build_maize_layout(params.get("grid_gap", DEFAULT_GRID_GAP))
    if name == "quattro":
        return build_quattro_layout(params.get("circumference", DEFAULT_WRIST_CIRCUMFERENCE))
    if name == "maize-bi-16":
        return build_bipolar_layout(build_maize_layout(params.get("grid_gap", DEFAULT_GRID_GAP)))
    raise LayoutError(f"unknown layout {name!r}")


def region_filter(layout: ElectrodeLayout, region: str = "all") -> ChannelSubset:
    if region == "all":
        return ChannelSubset(tuple(layout.ids), layout.name)
    if region not in REGIONS:
        raise LayoutError(f"unknown region {region!r}")
    return ChannelSubset(tuple(e.id for e in layout.electrodes if e.region == region), layout.name)


def pairwise_distances(subset: ChannelSubset, layout: ElectrodeLayout) -> np.ndarray:
    """Euclidean distance of every pair i < j, in lexicographic pair order."""
    if len(subset) < 2:
        raise DegenerateSubsetError("degenerate subset: need at least two electrodes")
    p = layout.coords(subset.electrode_ids)
    i, j = np.triu_indices(len(p), k=1)
    return np.hypot(*(p[i] - p[j]).T)


def dist_metric(subset: ChannelSubset, layout: ElectrodeLayout) -> float:
    """Median pairwise distance of the subset, in pitch units."""
    return float(np.median(pairwise_distances(subset, layout)))


def fom(acc: float, dist: float) -> float:
    if not dist > 0:
        raise DegenerateGeometryError(f"degenerate geometry: Dist must be positive, got {dist}")
    return acc / dist


def _classify_rows(layout: ElectrodeLayout, idx: np.ndarray) -> np.ndarray:
    """Density class of each row of ``idx`` (B x n layout row indices)."""
    edge, corner = layout._adjacency
    bits = np.bitwise_or.reduce(np.left_shift(np.int64(1), idx), axis=1)
    has_edge = (edge[idx] & bits[:, None]) != 0
    has_corner = (corner[idx] & bits[:, None]) != 0
    any_edge = has_edge.any(axis=1)
    out = np.full(len(idx), Density.INVALID.value, dtype=object)
    out[~any_edge & ~has_corner.any(axis=1)] = Density.LOW.value
    out[~any_edge & has_corner.all(axis=1)] = Density.MEDIUM.value
    out[has_edge.all(axis=1)] = Density.HIGH.value
    return out


def _require_grid(layout: ElectrodeLayout) -> None:
    if layout.kind != "grid":
        raise DensityUndefinedError(f"density undefined for this layout ({layout.name!r})")


def classify_density(subset: ChannelSubset, layout: ElectrodeLayout) -> Density:
    _require_grid(layout)
    subset.check(layout)
    idx = np.array([layout.rows(subset.electrode_ids)], dtype=np.int64)
    return Density(_classify_rows(layout, idx)[0])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _draw_rows(layout, n, density, region, rng, want, max_attempts):
    """Uniform n-subset proposals (as layout rows) until ``want`` are accepted."""
    if max_attempts < 1:
        raise SamplingError("max_attempts must be at least 1")
    pool = np.array(layout.rows(region_filter(layout, region).electrode_ids), dtype=np.int64)
    if not 1 <= n <= len(pool):
        raise SamplingError(f"cannot draw {n} electrodes from {len(pool)} in region {region!r}")
    if density == "unconstrained":
        density = None
    if density is not None:
        density = Density(density)
        _require_grid(layout)
    accepted, attempts, batch = [], 0, 16
    while attempts < max_attempts and len(accepted) < want:
        size = want - len(accepted) if density is None else min(batch, max_attempts - attempts)
        idx = pool[np.argsort(rng.random((size, len(pool))), axis=1)[:, :n]]
        attempts += size
        if density is not None:
            idx = idx[_classify_rows(layout, idx) == density.value]
        accepted.extend(idx)
        batch = min(2 * batch, 1024)
    if len(accepted) < want:
        raise SamplingError(
            f"constraint unsatisfiable or attempts exhausted: n={n}, density={density.value}, "
            f"region={region}, attempts={max_attempts}"
        )
    return accepted[:want]


def sample_subset(
    layout: ElectrodeLayout,
    n: int,
    density: Density | str | None = None,
    region: str = "all",
    rng_seed=0,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> ChannelSubset:
    """Draw a uniformly random n-subset of a region, optionally density-constrained.

    Proposals are uniform n-subsets; the first one whose density class
    matches is returned, so the result is uniform over the satisfying set.
    ``density=None`` (or ``"unconstrained"``) accepts the first proposal.
    """
    row = _draw_rows(layout, n, density, region, _rng(rng_seed), 1, max_attempts)[0]
    return ChannelSubset(tuple(sorted(int(r) + 1 for r in row)), layout.name)


def sample_subsets(
    layout: ElectrodeLayout,
    n: int,
    count: int,
    density: Density | str | None = None,
    region: str = "all",
    rng_seed=0,
    max_attempts: int | None = None,
) -> list[ChannelSubset]:
    """``count`` independent draws with the same distribution as :func:`sample_subset`."""
    max_attempts = max_attempts or DEFAULT_MAX_ATTEMPTS * count
    rows = _draw_rows(layout, n, density, region, _rng(rng_seed), count, max_attempts)
    return [ChannelSubset(tuple(sorted(int(r) + 1 for r in row)), layout.name) for row in rows]


def sample_split_subset(layout: ElectrodeLayout, counts: dict[str, int], rng_seed=0) -> ChannelSubset:
    """Union of unconstrained per-region draws, e.g. {"extensor": 8, "flexor": 7}."""
    seq = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    ids: list[int] = []
    for child, (region, n) in zip(seq.spawn(len(counts)), sorted(counts.items())):
        ids.extend(sample_subset(layout, n, None, region, np.random.default_rng(child)).electrode_ids)
    return ChannelSubset(tuple(sorted(ids)), layout.name)


def enumerate_subsets(layout: ElectrodeLayout, n: int, density: Density | str, region: str = "all"):
    """Every n-subset of a region with the given density class (brute force)."""
    _require_grid(layout)
    density = Density(density)
    pool = layout.rows(region_filter(layout, region).electrode_ids)
    combos = np.array(list(itertools.combinations(pool, n)), dtype=np.int64)
    if not len(combos):
        return []
    keep = _classify_rows(layout, combos) == density.value
    return [tuple(int(r) + 1 for r in row) for row in combos[keep]]


def derive_bipolar(signals: np.ndarray, pairing: Sequence[tuple[int, int]]) -> np.ndarray:
    """Differential channels ``signals[i] - signals[j]`` for 0-based row pairs."""
    signals = np.asarray(signals)
    if signals.ndim != 2:
        raise SignalError("signals must be a channels x samples matrix")
    used: set[int] = set()
    for i, j in pairing:
        for k in (i, j):
            if not 0 <= k < signals.shape[0]:
                raise SignalError(f"pair index {k} out of range for {signals.shape[0]} channels")
            if k in used:
                raise SignalError(f"channel {k} appears in more than one pair")
            used.add(k)
        if i == j:
            raise SignalError(f"pair ({i}, {j}) references one channel twice")
    a = [i for i, _ in pairing]
    b = [j for _, j in pairing]
    return signals[a] - signals[b]


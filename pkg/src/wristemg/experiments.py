"""Experiment drivers: region, reference, channel count, density and attribution.

Each driver expands its conditions into independent (subject, condition,
fold, subset) jobs, runs them on a worker pool, sorts the results by job key
and assembles one report.  Subset ``i`` of a sampled condition is evaluated
on fold ``i mod 10``; fixed conditions (a single channel set) use subset
indices 0..9, one per fold.  Training seeds depend on (seed, fold, subset)
only, so a fixed condition reproduces across experiments.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .attribution import (
    AttributionMap,
    export_maps_csv,
    integrated_gradients_batch,
    minmax,
)
from .dsp.protocol import WindowedDataset, process_session
from .dsp.session import GESTURES, RecordingSession, load_session
from .errors import ConfigError, SamplingError
from .grid import (
    ChannelSubset,
    ElectrodeLayout,
    build_bipolar_layout,
    classify_density,
    derive_bipolar,
    dist_metric,
    fom,
    maize_bipolar_pairs,
    region_filter,
    sample_split_subset,
    sample_subset,
)
from .stats import compare_conditions, pearson_regression
from .synth import common_field_spec, generate_session, planted_importance_spec, separable_spec
from .training import N_FOLDS, TrainConfig, make_fold_plan, run_fold

log = logging.getLogger(__name__)

EXPERIMENTS = ("region", "reference", "channel-count", "density", "attribution")
REPORT_FORMAT = "wristemg-report/1"
FAST_SUBSETS_PER_FOLD = 2
FAST_TRAIN = {"epochs": 5, "patience": 2}
SAMPLE_SALT = 7919


@dataclass
class ExperimentConfig:
    """Declarative experiment description; JSON files mirror these fields.

    Relative paths in ``sessions`` / ``quattro_sessions`` / ``out`` resolve
    against ``base_dir`` (the config file's directory).  With no sessions,
    ``synth`` describes synthetic subjects to generate instead.
    """

    experiment: str
    sessions: list[str] = field(default_factory=list)
    quattro_sessions: list[str] = field(default_factory=list)
    synth: dict = field(default_factory=lambda: {"preset": "separable", "subjects": 1})
    arch: str = "cnn"
    counts: list[int] = field(default_factory=lambda: [15, 12, 10, 8, 6, 4])
    density_counts: list[int] = field(default_factory=lambda: [4, 6, 8])
    density_levels: list[str] = field(default_factory=lambda: ["high", "medium", "low"])
    region_split: dict = field(default_factory=lambda: {"extensor": 8, "flexor": 7})
    subsets_per_fold: int = 10
    folds: list[int] | None = None
    epochs: int = 50
    batch_size: int = 64
    patience: int = 10
    lr: float = 1e-3
    model: dict = field(default_factory=dict)
    ig_steps: int = 64
    ig_windows_per_gesture: int = 10
    alpha: float = 0.05
    seed: int = 0
    workers: int = 1
    fast: bool = False
    out: str = "out"
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in doc:
            raise ConfigError("config needs an 'experiment' key")
        doc = dict(doc)
        doc.setdefault("base_dir", str(base_dir))
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.resolve().parent)

    def to_dict(self) -> dict:
        return asdict(self)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def effective(self) -> "ExperimentConfig":
        """Config with fast-mode reductions applied; this is what reports record."""
        doc = self.to_dict()
        if self.fast:
            doc["subsets_per_fold"] = min(self.subsets_per_fold, FAST_SUBSETS_PER_FOLD)
            for key, value in FAST_TRAIN.items():
                doc[key] = min(doc[key], value)
        return ExperimentConfig(**doc)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.arch not in ("cnn", "tcn"):
            raise ConfigError(f"arch must be cnn or tcn, got {self.arch!r}")
        if self.subsets_per_fold < 1 or self.workers < 1 or self.epochs < 1:
            raise ConfigError("subsets_per_fold, workers and epochs must be positive")
        if any(c < 1 for c in self.counts + self.density_counts):
            raise ConfigError("channel counts must be positive")
        if self.folds is not None and (not self.folds or any(not 0 <= f < N_FOLDS for f in self.folds)):
            raise ConfigError(f"folds must be a non-empty list of indices in 0..{N_FOLDS - 1}")
        if not self.sessions and not self.synth:
            raise ConfigError("no sessions given and no synth section")

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.patience, self.lr)

    def fold_indices(self) -> list[int]:
        return sorted(set(self.folds)) if self.folds is not None else list(range(N_FOLDS))


# data -------------------------------------------------------------------

SYNTH_PRESETS = ("separable", "planted", "common-field", "uninformative")


def synth_sessions(synth: dict, seed: int, sensor: str = "maize") -> list[RecordingSession]:
    preset = synth.get("preset", "separable")
    if preset not in SYNTH_PRESETS:
        raise ConfigError(f"synth preset must be one of {SYNTH_PRESETS}")
    out = []
    for s in range(int(synth.get("subjects", 1))):
        sub_seed = int(np.random.SeedSequence([seed, s]).generate_state(1)[0])
        sid = f"synth-{s + 1:02d}"
        opts = {k: synth[k] for k in ("noise_std", "common_mode_amplitude", "decay") if k in synth}
        if preset == "separable":
            spec = separable_spec(sensor, region=synth.get("region", "all"), seed=sub_seed, subject_id=sid, **opts)
        elif preset in ("planted", "uninformative"):
            targets = synth.get("targets", [1, 5]) if preset == "planted" else []
            spec = planted_importance_spec(targets, sensor=sensor, seed=sub_seed, subject_id=sid, **opts)
        else:
            spec = common_field_spec(seed=sub_seed, subject_id=sid, **opts)
        out.append(generate_session(spec))
    return out


def load_sessions(cfg: ExperimentConfig) -> tuple[list[RecordingSession], list[RecordingSession]]:
    if cfg.sessions:
        maize = [load_session(cfg.resolve(p)) for p in cfg.sessions]
    else:
        maize = synth_sessions(cfg.synth, cfg.seed)
    if cfg.quattro_sessions:
        quattro = [load_session(cfg.resolve(p)) for p in cfg.quattro_sessions]
    elif not cfg.sessions and cfg.synth.get("quattro"):
        quattro = synth_sessions({**cfg.synth, "preset": "separable"}, cfg.seed, sensor="quattro")
    else:
        quattro = []
    for group in (maize, quattro):
        names = {s.layout.name for s in group}
        if len(names) > 1:
            raise ConfigError(f"sessions with mismatched layouts: {sorted(names)}")
    return maize, quattro


def bipolar_session(session: RecordingSession) -> RecordingSession:
    """Odd-even bipolar derivation (1-2, 3-4, ...) of a monopolar Maize session."""
    pairs = maize_bipolar_pairs(session.layout)
    rows = [tuple(session.layout.rows(p)) for p in pairs]
    return session.with_signals(lambda x: derive_bipolar(x, rows), build_bipolar_layout(session.layout, pairs))


# jobs -------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    name: str
    data_key: str  # "mono", "bi" or "quattro"
    layout: ElectrodeLayout
    fixed: tuple[int, ...] | None = None  # channel ids of a fixed condition
    n: int = 0
    region: str = "all"
    density: str | None = None
    split: tuple[tuple[str, int], ...] | None = None


@dataclass(frozen=True)
class Job:
    subject: int
    condition: int
    subset_index: int
    fold: int
    channels: tuple[int, ...]

    @property
    def key(self) -> tuple:
        return (self.subject, self.condition, self.subset_index, self.fold)


def _draw(cond: Condition, cond_index: int, subset_index: int, subject: int, seed: int) -> ChannelSubset:
    seq = np.random.SeedSequence([seed, SAMPLE_SALT, subject, cond_index, subset_index])
    if cond.split:
        return sample_split_subset(cond.layout, dict(cond.split), seq)
    return sample_subset(cond.layout, cond.n, cond.density, cond.region, np.random.default_rng(seq))


def expand_jobs(cfg: ExperimentConfig, conditions: list[Condition], n_subjects: int, report: dict) -> list[Job]:
    folds = cfg.fold_indices()
    jobs = []
    for s in range(n_subjects):
        for ci, cond in enumerate(conditions):
            if cond.fixed is not None:
                jobs += [Job(s, ci, f, f, cond.fixed) for f in folds]
                continue
            for i in range(cfg.subsets_per_fold * N_FOLDS):
                if i % N_FOLDS not in folds:
                    continue
                try:
                    sub = _draw(cond, ci, i, s, cfg.seed)
                except SamplingError as exc:
                    report["skipped"].append({"condition": cond.name, "subject": s, "reason": str(exc)})
                    break
                jobs.append(Job(s, ci, i, i % N_FOLDS, sub.electrode_ids))
    return jobs


_DATA: dict = {}


def _init_worker(data):
    global _DATA
    _DATA = data


def _attribution_hook(cfg_doc: dict, fold_seed: int):
    steps, per_gesture = cfg_doc["ig_steps"], cfg_doc["ig_windows_per_gesture"]

    def hook(model, test_x, test_y):
        rng = np.random.default_rng(fold_seed)
        sums, counts = {}, {}
        for g in sorted(set(test_y.tolist())):
            idx = np.flatnonzero(test_y == g)
            if len(idx) > per_gesture:
                idx = np.sort(rng.choice(idx, per_gesture, replace=False))
            ig = integrated_gradients_batch(model, test_x[idx], g, None, steps)
            sums[GESTURES[g]] = np.abs(ig).sum(axis=2).sum(axis=0).tolist()
            counts[GESTURES[g]] = len(idx)
        return {"sums": sums, "counts": counts}

    return hook


def run_job(job: Job, data_key: str, cfg_doc: dict) -> dict:
    dataset: WindowedDataset = _DATA[(job.subject, data_key)]
    plan = make_fold_plan(sorted(np.unique(dataset.block_ids).tolist()))
    cfg = TrainConfig(cfg_doc["epochs"], cfg_doc["batch_size"], cfg_doc["patience"], cfg_doc["lr"])
    hook = None
    if cfg_doc["experiment"] == "attribution":
        hook = _attribution_hook(cfg_doc, job.subset_index + 1000 * job.subject)
    with threadpool_limits(1):
        res = run_fold(
            dataset, plan.folds[job.fold], cfg_doc["arch"], ChannelSubset(job.channels, data_key),
            cfg_doc["seed"], cfg, job.subset_index, cfg_doc["model"], None, hook,
        )
    return {
        "subject": job.subject, "condition": job.condition, "subset_index": job.subset_index,
        "fold": job.fold, "channels": list(job.channels), "seed": res.seed, "accuracy": res.accuracy,
        "confusion": res.confusion, "best_epoch": res.record["best_epoch"],
        "epochs_run": len(res.record["epochs"]), "extra": res.extra,
    }


def execute(jobs: list[Job], conditions: list[Condition], data: dict, cfg: ExperimentConfig) -> list[dict]:
    """Run jobs serially or on a process pool; results come back sorted by job key."""
    cfg_doc = cfg.to_dict()
    keys = [conditions[j.condition].data_key for j in jobs]
    if cfg.workers == 1 or len(jobs) <= 1:
        _init_worker(data)
        results = [run_job(j, k, cfg_doc) for j, k in zip(jobs, keys)]
    else:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(data,)) as pool:
            results = list(pool.map(run_job, jobs, keys, [cfg_doc] * len(jobs)))
    return sorted(results, key=lambda r: (r["subject"], r["condition"], r["subset_index"], r["fold"]))


# reports ----------------------------------------------------------------


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {
        "mean": float(v.mean()) if len(v) else None,
        "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
        "n": int(len(v)),
    }


def _condition_records(conditions, results, n_subjects, cfg):
    out = []
    for ci, cond in enumerate(conditions):
        rs = [r for r in results if r["condition"] == ci]
        if not rs:
            continue
        per_subject = {}
        for s in range(n_subjects):
            acc = [r["accuracy"] for r in rs if r["subject"] == s]
            if acc:
                per_subject[str(s)] = float(np.mean(acc))
        pooled = _summary([r["accuracy"] for r in rs])
        out.append({
            "name": cond.name,
            "accuracies": [r["accuracy"] for r in rs],
            "mean": pooled["mean"],
            "std": pooled["std"],
            "n_evaluations": len(rs),
            "subsets_per_fold": 1 if cond.fixed is not None else cfg.subsets_per_fold,
            "aggregation": {
                "pooled_mean": pooled["mean"],
                "mean_of_subject_means": float(np.mean(list(per_subject.values()))),
                "per_subject_means": per_subject,
            },
        })
    return out


def _stats_groups(records: list[dict], n_subjects: int) -> tuple[dict, str]:
    if n_subjects >= 3:
        return {c["name"]: list(c["aggregation"]["per_subject_means"].values()) for c in records}, "subject-mean"
    return {c["name"]: c["accuracies"] for c in records}, "evaluation"


def _provenance(cfg: ExperimentConfig, sessions) -> dict:
    return {
        "config": cfg.to_dict(),
        "software": {
            "wristemg": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "seed": cfg.seed,
        "fast_mode": cfg.fast,
        "subset_fold_assignment": "subset index mod 10",
        "sessions": [{"subject_id": s.subject_id, "layout": s.layout.name, "sensor": s.sensor} for s in sessions],
    }


def _new_report(cfg: ExperimentConfig, sessions) -> dict:
    return {
        "format": REPORT_FORMAT,
        "experiment": cfg.experiment,
        "conditions": [],
        "evaluations": [],
        "stats": {},
        "skipped": [],
        "warnings": [],
        "provenance": _provenance(cfg, sessions),
    }


def _prepare(cfg: ExperimentConfig, need_bipolar=False, need_quattro=False):
    cfg.validate()
    maize, quattro = load_sessions(cfg)
    data = {}
    for s, sess in enumerate(maize):
        data[(s, "mono")] = process_session(sess)
        if need_bipolar:
            data[(s, "bi")] = process_session(bipolar_session(sess))
        if need_quattro and s < len(quattro):
            data[(s, "quattro")] = process_session(quattro[s])
    return maize, quattro, data


def _run(cfg, conditions, maize, data, report):
    jobs = expand_jobs(cfg, conditions, len(maize), report)
    jobs = [j for j in jobs if (j.subject, conditions[j.condition].data_key) in data]
    results = execute(jobs, conditions, data, cfg)
    for r in results:
        r["condition_name"] = conditions[r["condition"]].name
    report["evaluations"] = results
    report["conditions"] = _condition_records(conditions, results, len(maize), cfg)
    groups, unit = _stats_groups(report["conditions"], len(maize))
    if len(groups) >= 2:
        report["stats"] = {"unit": unit, **compare_conditions(groups, cfg.alpha)}
        report["warnings"] += report["stats"].pop("warnings")
    return results


def run_region_experiment(cfg: ExperimentConfig) -> dict:
    cfg = cfg.effective()
    maize, _, data = _prepare(cfg)
    layout = maize[0].layout
    conditions = [
        Condition(name, "mono", layout, region_filter(layout, region).electrode_ids)
        for name, region in (("All", "all"), ("Ext.", "extensor"), ("Fle.", "flexor"))
    ]
    report = _new_report(cfg, maize)
    _run(cfg, conditions, maize, data, report)
    return report


def run_reference_experiment(cfg: ExperimentConfig) -> dict:
    cfg = cfg.effective()
    maize, quattro, data = _prepare(cfg, need_bipolar=True, need_quattro=True)
    layout = maize[0].layout
    bi_layout = build_bipolar_layout(layout)
    conditions = [
        Condition("M-mono-32", "mono", layout, tuple(layout.ids)),
        Condition("M-mono-15", "mono", layout, split=tuple(sorted(cfg.region_split.items()))),
        Condition("M-bi-16", "bi", bi_layout, tuple(bi_layout.ids)),
    ]
    report = _new_report(cfg, maize + quattro)
    if quattro:
        q = quattro[0].layout
        conditions.append(Condition("Q-bi-15", "quattro", q, tuple(q.ids)))
        if len(quattro) < len(maize):
            report["warnings"].append("fewer Quattro sessions than Maize sessions; Q-bi-15 uses the first ones")
    else:
        report["warnings"].append("no Quattro session: Q-bi-15 skipped")
        report["skipped"].append({"condition": "Q-bi-15", "reason": "missing Quattro session"})
    _run(cfg, conditions, maize, data, report)
    report["provenance"]["bipolar_pairs"] = [list(p) for p in maize_bipolar_pairs(layout)]
    return report


def run_channel_count_experiment(cfg: ExperimentConfig) -> dict:
    cfg = cfg.effective()
    maize, _, data = _prepare(cfg)
    layout = maize[0].layout
    for c in cfg.counts:
        if c > len(layout):
            raise ConfigError(f"channel count {c} exceeds the {len(layout)} channels of {layout.name}")
    conditions = [
        Condition(str(c), "mono", layout, tuple(layout.ids)) if c == len(layout)
        else Condition(str(c), "mono", layout, n=c)
        for c in cfg.counts
    ]
    report = _new_report(cfg, maize)
    _run(cfg, conditions, maize, data, report)
    if report["stats"].get("tukey", {}).get("extras"):
        ref = str(max(cfg.counts))
        report["stats"]["reference_condition"] = ref
        report["stats"]["vs_reference"] = [
            p for p in report["stats"]["tukey"]["extras"]["pairs"] if ref in (p["group_a"], p["group_b"])
        ]
    return report


def run_density_experiment(cfg: ExperimentConfig) -> dict:
    cfg = cfg.effective()
    maize, _, data = _prepare(cfg)
    layout = maize[0].layout
    if layout.kind != "grid":
        raise ConfigError("the density experiment needs a grid (Maize) layout")
    conditions = [
        Condition(f"n{n}-{level}", "mono", layout, n=n, density=level)
        for n in cfg.density_counts for level in cfg.density_levels
    ]
    report = _new_report(cfg, maize)
    results = _run(cfg, conditions, maize, data, report)
    for r in results:
        sub = ChannelSubset(tuple(r["channels"]), layout.name)
        cond = conditions[r["condition"]]
        r["n"] = cond.n
        r["density"] = classify_density(sub, layout).value
        r["dist"] = dist_metric(sub, layout) if len(sub) > 1 else None
        r["fom"] = fom(r["accuracy"], r["dist"]) if r["dist"] else None
    regression, per_n_stats = {}, {}
    for n in cfg.density_counts:
        rs = [r for r in results if r["n"] == n and r["dist"] is not None]
        if len(rs) >= 3 and len({r["dist"] for r in rs}) > 1:
            regression[str(n)] = pearson_regression([r["dist"] for r in rs], [r["accuracy"] for r in rs]).to_dict()
        else:
            regression[str(n)] = {"error": "fewer than three subsets or constant Dist"}
        groups = {c["name"]: c["accuracies"] for c in report["conditions"] if c["name"].startswith(f"n{n}-")}
        if len(groups) >= 2:
            per_n_stats[str(n)] = compare_conditions(groups, cfg.alpha)
    report["regression"] = regression
    report["stats_per_count"] = per_n_stats
    return report


def run_attribution(cfg: ExperimentConfig) -> dict:
    cfg = cfg.effective()
    maize, _, data = _prepare(cfg)
    layout = maize[0].layout
    conditions = [Condition("All", "mono", layout, tuple(layout.ids))]
    report = _new_report(cfg, maize)
    results = _run(cfg, conditions, maize, data, report)
    gestures = [g for g in GESTURES if any(g in r["extra"]["sums"] for r in results)]
    per_subject: dict[str, dict[str, list[float]]] = {g: {} for g in gestures}
    for s, sess in enumerate(maize):
        rs = [r for r in results if r["subject"] == s]
        for g in gestures:
            total = np.sum([r["extra"]["sums"][g] for r in rs if g in r["extra"]["sums"]], axis=0)
            count = sum(r["extra"]["counts"].get(g, 0) for r in rs)
            per_subject[g][sess.subject_id] = (total / count).tolist()
    maps = []
    for g in gestures:
        normed = [minmax(v) for v in per_subject[g].values()]
        maps.append(AttributionMap(g, list(layout.ids), np.mean(normed, axis=0), per_subject=per_subject[g]))
    for r in results:
        r.pop("extra")
    report["attribution"] = {
        "baseline": "zeros (normalized space)",
        "target": "true-class logit",
        "steps": cfg.ig_steps,
        "windows_per_gesture_per_fold": cfg.ig_windows_per_gesture,
        "maps": [m.to_dict() for m in maps],
    }
    report["_maps"] = maps
    return report


DRIVERS = {
    "region": run_region_experiment,
    "reference": run_reference_experiment,
    "channel-count": run_channel_count_experiment,
    "density": run_density_experiment,
    "attribution": run_attribution,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    cfg.validate()
    return DRIVERS[cfg.experiment](cfg)


def write_report(report: dict, out_dir, layout: ElectrodeLayout | None = None) -> Path:
    """report.json plus companion CSVs (evaluations, density scatter, attribution maps)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = report.pop("_maps", None)
    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=1, default=_json_default))
    cols = ["subject", "condition_name", "subset_index", "fold", "seed", "accuracy", "channels"]
    if report["experiment"] == "density":
        cols += ["n", "density", "dist", "fom"]
    with open(out_dir / "evaluations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in report["evaluations"]:
            w.writerow([" ".join(map(str, r[c])) if c == "channels" else _csv_value(r[c]) for c in cols])
    if maps and layout is not None:
        export_maps_csv(maps, layout, out_dir / "importance_maps.csv")
    if maps is not None:
        report["_maps"] = maps
    return path


def _csv_value(v):
    return repr(v) if isinstance(v, float) else v


def _json_default(v):
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def numbers(report: dict) -> dict:
    """The numeric content of a report, for reproduction checks."""
    doc = json.loads(json.dumps({k: v for k, v in report.items() if k not in ("provenance", "_maps")},
                                default=_json_default))
    return doc


def reproduce(report_path, workers: int | None = None) -> tuple[bool, dict]:
    """Rerun a report from its provenance; returns (identical, fresh report)."""
    old = json.loads(Path(report_path).read_text())
    cfg_doc = dict(old["provenance"]["config"])
    if workers is not None:
        cfg_doc["workers"] = workers
    cfg = ExperimentConfig(**cfg_doc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fresh = run_experiment(cfg)
    return numbers(fresh) == numbers(old), fresh

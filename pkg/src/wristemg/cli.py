"""Command-line entry point: ``wristemg <command> ...``.

Exit status is 0 on success.  Failures print one JSON object
``{"error": <kind>, "message": <text>}`` on stderr and exit nonzero
(2 for bad configuration or arguments, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, WristEMGError
from .grid import ChannelSubset, classify_density, dist_metric, get_layout, pairwise_distances
from .dsp.session import save_session
from .stats import one_way_anova, pearson_regression, shapiro_wilk, tukey_hsd


def _ids(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _common(top: bool) -> argparse.ArgumentParser:
    # subcommand copies must not reset values given before the subcommand
    none = None if top else argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=none, help="base random seed")
    p.add_argument("--config", type=Path, default=none, help="JSON experiment config")
    p.add_argument("--out", type=Path, default=none, help="output directory")
    p.add_argument("--arch", choices=["cnn", "tcn"], default=none)
    p.add_argument("--fast", action="store_true", default=none, help="2 subsets per fold, short training")
    p.add_argument("--workers", type=int, default=none, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true", default=False if top else argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wristemg", description=__doc__.splitlines()[0], parents=[_common(True)])
    ap.add_argument("--version", action="version", version=f"wristemg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[_common(False)], help="write a synthetic recording session")
    s.add_argument("--preset", choices=["separable", "planted", "common-field", "uninformative"], default="separable")
    s.add_argument("--sensor", choices=["maize", "quattro"], default="maize")
    s.add_argument("--targets", type=_ids, default=[1, 5], help="planted target electrodes")
    s.add_argument("--noise-std", type=float, default=None)
    s.add_argument("--subject-id", default="synth-01")

    r = sub.add_parser("run", parents=[_common(False)], help="run an experiment")
    r.add_argument("experiment", choices=["region", "reference", "channel-count", "density", "attribution"])
    r.add_argument("--session", action="append", default=None, help="session directory (repeatable)")
    r.add_argument("--quattro-session", action="append", default=None)
    r.add_argument("--counts", type=_ids, default=None)
    r.add_argument("--folds", type=_ids, default=None, help="restrict to these fold indices")
    r.add_argument("--subsets-per-fold", type=int, default=None)
    r.add_argument("--epochs", type=int, default=None)
    r.add_argument("--patience", type=int, default=None)
    r.add_argument("--subjects", type=int, default=None, help="synthetic subjects when no session is given")
    r.add_argument("--preset", default=None, help="synthetic preset when no session is given")

    st = sub.add_parser("stats", parents=[_common(False)], help="run one statistical test")
    st.add_argument("test", choices=["shapiro", "anova", "tukey", "regression"])
    st.add_argument("--group", type=_floats, action="append", default=None, help="comma-separated values (repeatable)")
    st.add_argument("--x", type=_floats, default=None)
    st.add_argument("--y", type=_floats, default=None)
    st.add_argument("--data", type=Path, default=None, help='JSON file: {"groups": [...]} or {"x": [...], "y": [...]}')
    st.add_argument("--alpha", type=float, default=0.05)

    li = sub.add_parser("inspect-layout", parents=[_common(False)], help="print a layout and optional subset metrics")
    li.add_argument("layout", choices=["maize", "quattro", "maize-bi-16"])
    li.add_argument("--grid-gap", type=float, default=None)
    li.add_argument("--circumference", type=float, default=None)
    li.add_argument("--subset", type=_ids, default=None)

    rp = sub.add_parser("reproduce", parents=[_common(False)], help="rerun a report from its provenance")
    rp.add_argument("report", type=Path)
    return ap


def _emit(doc, out: Path | None, name: str) -> None:
    text = json.dumps(doc, indent=1)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    print(text)


def cmd_synth(args) -> int:
    from .synth import common_field_spec, generate_session, planted_importance_spec, separable_spec

    seed = args.seed or 0
    opts = {} if args.noise_std is None else {"noise_std": args.noise_std}
    if args.preset == "separable":
        spec = separable_spec(args.sensor, seed=seed, subject_id=args.subject_id, **opts)
    elif args.preset in ("planted", "uninformative"):
        targets = args.targets if args.preset == "planted" else []
        spec = planted_importance_spec(targets, sensor=args.sensor, seed=seed, subject_id=args.subject_id, **opts)
    else:
        spec = common_field_spec(seed=seed, subject_id=args.subject_id, **opts)
    out = args.out or Path(f"session-{args.subject_id}")
    save_session(generate_session(spec), out)
    print(json.dumps({"session": str(out), "spec": spec.summary()}))
    return 0


def _experiment_config(args):
    from .experiments import ExperimentConfig

    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
        if cfg.experiment != args.experiment:
            raise ConfigError(f"config is for {cfg.experiment!r}, command asked for {args.experiment!r}")
    else:
        cfg = ExperimentConfig(args.experiment, base_dir=str(Path.cwd()))
    flags = {
        "seed": args.seed, "arch": args.arch, "fast": args.fast, "workers": args.workers,
        "counts": args.counts, "folds": args.folds, "subsets_per_fold": args.subsets_per_fold,
        "epochs": args.epochs, "patience": args.patience,
    }
    for key, value in flags.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.session:
        cfg.sessions = [str(Path(p).resolve()) for p in args.session]
    if args.quattro_session:
        cfg.quattro_sessions = [str(Path(p).resolve()) for p in args.quattro_session]
    if args.subjects is not None or args.preset is not None:
        cfg.synth = dict(cfg.synth)
        if args.subjects is not None:
            cfg.synth["subjects"] = args.subjects
        if args.preset is not None:
            cfg.synth["preset"] = args.preset
    if args.out is not None:
        cfg.out = str(args.out.resolve())
    return cfg


def cmd_run(args) -> int:
    from .experiments import run_experiment, write_report

    cfg = _experiment_config(args)
    report = run_experiment(cfg)
    out = cfg.resolve(cfg.out)
    layout = None
    if report.get("_maps"):
        layout = get_layout("maize")
    path = write_report(report, out, layout)
    summary = {
        "report": str(path),
        "conditions": {c["name"]: {"mean": c["mean"], "std": c["std"], "n": c["n_evaluations"]}
                       for c in report["conditions"]},
        "warnings": report["warnings"],
    }
    print(json.dumps(summary, indent=1))
    return 0


def cmd_stats(args) -> int:
    doc = json.loads(args.data.read_text()) if args.data else {}
    groups = args.group or doc.get("groups")
    x, y = args.x or doc.get("x"), args.y or doc.get("y")
    if args.test in ("shapiro", "anova", "tukey") and not groups:
        raise ConfigError(f"{args.test} needs --group values or a data file with 'groups'")
    if args.test == "shapiro":
        res = [shapiro_wilk(g).to_dict() for g in groups]
    elif args.test == "anova":
        res = one_way_anova(groups).to_dict()
    elif args.test == "tukey":
        res = tukey_hsd(groups, args.alpha).to_dict()
    else:
        if x is None or y is None:
            raise ConfigError("regression needs --x and --y (or a data file)")
        res = pearson_regression(x, y).to_dict()
    _emit(res, args.out, f"{args.test}.json")
    return 0


def cmd_inspect(args) -> int:
    params = {}
    if args.grid_gap is not None:
        params["grid_gap"] = args.grid_gap
    if args.circumference is not None:
        params["circumference"] = args.circumference
    layout = get_layout(args.layout, **params)
    doc = layout.to_dict()
    if args.subset:
        sub = ChannelSubset(tuple(args.subset), layout.name)
        sub.check(layout)
        info = {"ids": list(sub.electrode_ids)}
        if len(sub) > 1:
            info["pairwise_distances"] = np.asarray(pairwise_distances(sub, layout)).tolist()
            info["dist"] = dist_metric(sub, layout)
        if layout.kind == "grid":
            info["density"] = classify_density(sub, layout).value
        doc["subset"] = info
    _emit(doc, args.out, f"layout-{layout.name}.json")
    return 0


def cmd_reproduce(args) -> int:
    from .experiments import numbers, reproduce

    same, fresh = reproduce(args.report, args.workers)
    result = {"report": str(args.report), "identical": same}
    if not same:
        old = numbers(json.loads(Path(args.report).read_text()))
        new = numbers(fresh)
        result["differing_keys"] = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    print(json.dumps(result))
    return 0 if same else 1


COMMANDS = {
    "synth": cmd_synth,
    "run": cmd_run,
    "stats": cmd_stats,
    "inspect-layout": cmd_inspect,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, argparse.ArgumentTypeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except (WristEMGError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

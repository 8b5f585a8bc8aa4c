"""Adam, the training loop, and block-wise ten-fold cross-validation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp.protocol import WindowedDataset, fit_normalizer, process_session
from .dsp.session import RecordingSession
from .errors import DivergenceError, LeakageError, SignalError
from .grid import ChannelSubset
from .nn import functional as F
from .nn.checkpoint import load_state_dict, state_dict
from .nn.models import N_CLASSES, Module, build_model, predict_logits

log = logging.getLogger(__name__)

N_FOLDS = 10


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params],
        0, lr, beta1, beta2, eps,
    )


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params[i].data``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError("divergence detected: non-finite gradient")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    patience: int = 10
    lr: float = 1e-3


@dataclass
class TrainRecord:
    seed: int
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    # batch norm needs two samples per batch
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def evaluate(model: Module, windows: np.ndarray, labels) -> dict:
    """Accuracy and true-by-predicted confusion counts; argmax ties go to the lowest class."""
    labels = np.asarray(labels)
    if not len(labels):
        raise SignalError("cannot evaluate on an empty set")
    pred = predict_logits(model, windows).argmax(axis=1)
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(confusion, (labels, pred), 1)
    return {"accuracy": float(np.trace(confusion) / confusion.sum()), "confusion": confusion}


def train_model(
    arch: str,
    train_x: np.ndarray,
    train_y,
    val_x: np.ndarray | None = None,
    val_y=None,
    cfg: TrainConfig | None = None,
    seed: int = 0,
    model_overrides: dict | None = None,
    log_path=None,
) -> tuple[Module, TrainRecord]:
    """Mini-batch Adam on cross-entropy; keeps the best-validation-accuracy epoch."""
    cfg = cfg or TrainConfig()
    train_y = np.asarray(train_y)
    if not len(train_y):
        raise SignalError("empty training set")
    init_seq, shuffle_seq, drop_seq = np.random.SeedSequence(seed).spawn(3)
    model = build_model(
        arch, train_x.shape[1], train_x.shape[2],
        seed=int(init_seq.generate_state(1)[0]), **(model_overrides or {}),
    )
    model.set_rng(np.random.default_rng(drop_seq))
    shuffle = np.random.default_rng(shuffle_seq)
    params = model.parameters()
    opt = adam_init(params, lr=cfg.lr)
    record = TrainRecord(seed=seed)
    best_state, since_best = None, 0
    sink = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            model.train()
            total = 0.0
            for idx in _batches(shuffle.permutation(len(train_y)), cfg.batch_size):
                model.zero_grad()
                loss = F.cross_entropy(model(train_x[idx]), train_y[idx])
                loss.backward()
                adam_step(params, [p.grad for p in params], opt)
                total += float(loss.data) * len(idx)
            entry = {"epoch": epoch, "train_loss": total / len(train_y)}
            if val_x is not None and len(val_y):
                entry["val_accuracy"] = evaluate(model, val_x, val_y)["accuracy"]
            record.epochs.append(entry)
            if sink:
                sink.write(json.dumps(entry) + "\n")
            score = entry.get("val_accuracy", -entry["train_loss"])
            if best_state is None or score > record.best_val_accuracy:
                record.best_val_accuracy, record.best_epoch = score, epoch
                best_state, since_best = state_dict(model), 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    record.stopped_early = True
                    break
    finally:
        if sink:
            sink.close()
    load_state_dict(model, best_state)
    if "val_accuracy" not in record.epochs[0]:
        record.best_val_accuracy = float("nan")
    model.eval()
    return model, record


@dataclass(frozen=True)
class Fold:
    index: int
    train_blocks: tuple[int, ...]
    val_block: int
    test_block: int


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    def validate(self) -> None:
        blocks = set(self.folds[0].train_blocks) | {self.folds[0].val_block, self.folds[0].test_block}
        tested = [f.test_block for f in self.folds]
        for f in self.folds:
            held = {f.val_block, f.test_block}
            if f.val_block == f.test_block or held & set(f.train_blocks):
                raise LeakageError(f"fold {f.index}: validation/test block overlaps training blocks")
            if set(f.train_blocks) | held != blocks:
                raise LeakageError(f"fold {f.index} does not cover all blocks")
        if sorted(tested) != sorted(blocks):
            raise LeakageError("every block must be the test block exactly once")


def make_fold_plan(block_ids) -> FoldPlan:
    """Fold k tests block k, validates block k+1 (mod 10) and trains on the rest."""
    block_ids = list(block_ids)
    if len(block_ids) != N_FOLDS or len(set(block_ids)) != N_FOLDS:
        raise ValueError(f"block-wise CV needs exactly {N_FOLDS} distinct blocks, got {len(block_ids)}")
    folds = []
    for k in range(N_FOLDS):
        test, val = block_ids[k], block_ids[(k + 1) % N_FOLDS]
        train = tuple(b for b in block_ids if b not in (test, val))
        folds.append(Fold(k, train, val, test))
    plan = FoldPlan(tuple(folds))
    plan.validate()
    return plan


def job_seed(base_seed: int, fold: int, subset_index: int = 0, *salt: int) -> int:
    """Independent, order-free seed for one (fold, subset) job."""
    return int(np.random.SeedSequence([base_seed, fold, subset_index, *salt]).generate_state(1)[0])


class LeakageGuard:
    """Tracks which blocks reach normalization and training within one fold."""

    def __init__(self, fold: Fold):
        self.fold = fold
        self.touched: dict[str, set[int]] = {}

    def touch(self, stage: str, block_ids) -> None:
        ids = {int(b) for b in np.unique(block_ids)}
        self.touched.setdefault(stage, set()).update(ids)
        bad = ids & {self.fold.val_block, self.fold.test_block}
        if bad:
            raise LeakageError(f"fold {self.fold.index}: held-out block(s) {sorted(bad)} reached {stage}")


@dataclass
class FoldResult:
    fold: int
    subset_index: int
    seed: int
    accuracy: float
    confusion: list
    record: dict
    test_block: int
    extra: object = None

    def to_dict(self) -> dict:
        return asdict(self)


def run_fold(
    dataset: WindowedDataset,
    fold: Fold,
    arch: str = "cnn",
    subset: ChannelSubset | None = None,
    seed: int = 0,
    cfg: TrainConfig | None = None,
    subset_index: int = 0,
    model_overrides: dict | None = None,
    log_dir=None,
    on_trained=None,
) -> FoldResult:
    """Train and test one fold; ``on_trained(model, test_x, test_y)`` may add extra output."""
    guard = LeakageGuard(fold)
    data = dataset.select_channels(subset.electrode_ids) if subset is not None else dataset
    train = data.from_blocks(fold.train_blocks)
    val = data.from_blocks([fold.val_block])
    test = data.from_blocks([fold.test_block])
    if not len(train) or not len(test):
        raise SignalError(f"fold {fold.index}: empty training or test split")
    guard.touch("normalization", train.block_ids)
    norm = fit_normalizer(train.data)
    guard.touch("training", train.block_ids)
    s = job_seed(seed, fold.index, subset_index)
    log_path = None
    if log_dir is not None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        log_path = Path(log_dir) / f"fold{fold.index}_subset{subset_index}.jsonl"
    model, record = train_model(
        arch, norm(train.data), train.labels, norm(val.data), val.labels,
        cfg, s, model_overrides, log_path,
    )
    test_x = norm(test.data)
    ev = evaluate(model, test_x, test.labels)
    extra = on_trained(model, test_x, test.labels) if on_trained else None
    return FoldResult(
        fold.index, subset_index, s, ev["accuracy"], ev["confusion"].tolist(), record.to_dict(),
        fold.test_block, extra,
    )


@dataclass
class CVResult:
    folds: list[FoldResult]

    @property
    def accuracies(self) -> list[float]:
        return [f.accuracy for f in self.folds]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.folds) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "accuracies": self.accuracies,
            "mean": self.mean,
            "std": self.std,
            "folds": [f.to_dict() for f in self.folds],
        }


def run_cv(
    data: RecordingSession | WindowedDataset,
    subset: ChannelSubset | None = None,
    arch: str = "cnn",
    cfg: TrainConfig | None = None,
    seed: int = 0,
    plan: FoldPlan | None = None,
    model_overrides: dict | None = None,
    log_dir=None,
) -> CVResult:
    """Ten-fold block-wise CV: normalize on training blocks only, train, test."""
    dataset = process_session(data) if isinstance(data, RecordingSession) else data
    plan = plan or make_fold_plan(sorted(np.unique(dataset.block_ids).tolist()))
    results = []
    for fold in plan.folds:
        res = run_fold(dataset, fold, arch, subset, seed, cfg, 0, model_overrides, log_dir)
        log.info("fold %d: accuracy %.3f", fold.index, res.accuracy)
        results.append(res)
    out = CVResult(results)
    if log_dir is not None:
        (Path(log_dir) / "summary.json").write_text(json.dumps(
            {"arch": arch, "seed": seed, "subset": subset.to_dict() if subset else None,
             "accuracies": out.accuracies, "mean": out.mean, "std": out.std}, indent=1))
    return out


def permute_labels(dataset: WindowedDataset, seed: int = 0) -> WindowedDataset:
    """Chance-level control: labels shuffled across all windows."""
    rng = np.random.default_rng(seed)
    out = dataset.take(np.arange(len(dataset)))
    out.labels = dataset.labels[rng.permutation(len(dataset))]
    return out

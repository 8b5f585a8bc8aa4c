import csv

import numpy as np
import pytest

from test_training import TINY_CNN, toy_dataset
from wristemg.attribution import (
    AttributionMap,
    completeness_residual,
    electrode_importance,
    export_maps_csv,
    importance_by_gesture,
    integrated_gradients,
    integrated_gradients_batch,
    minmax,
    normalize_and_average,
)
from wristemg.dsp.protocol import fit_normalizer
from wristemg.errors import ShapeError, SignalError
from wristemg.grid import build_maize_layout
from wristemg.nn import functional as F
from wristemg.nn.models import Module
from wristemg.nn.tensor import Parameter
from wristemg.training import TrainConfig, train_model


class Linear(Module):
    """Six logits, each a fixed linear functional of the C x T window."""

    def __init__(self, c, t, seed=0):
        rng = np.random.default_rng(seed)
        self.w = Parameter(rng.standard_normal((6, c * t)))
        self.b = Parameter(rng.standard_normal(6))

    def forward(self, x, record=None):
        return F.dense(F.flatten(x), self.w, self.b)


class Square(Module):
    """Logit k = (w_k . x)^2; IG has the closed form x * w_k * (w_k . x)."""

    def __init__(self, c, t, seed=0):
        self.w = Parameter(np.random.default_rng(seed).standard_normal((6, c * t)))

    def forward(self, x, record=None):
        z = F.dense(F.flatten(x), self.w)
        return z * z


@pytest.fixture(scope="module")
def trained():
    ds = toy_dataset(per_block=24, channels=6)
    tr = ds.from_blocks(range(8))
    norm = fit_normalizer(tr.data)
    model, _ = train_model(
        "cnn", norm(tr.data), tr.labels, cfg=TrainConfig(epochs=12, batch_size=32, lr=1e-2),
        seed=0, model_overrides=TINY_CNN,
    )
    return model, norm(ds.from_blocks([9]).data), ds.from_blocks([9]).labels


def test_linear_model_ig_is_exact():
    rng = np.random.default_rng(0)
    m = Linear(3, 10)
    x = rng.standard_normal((3, 10))
    for k in range(6):
        ig = integrated_gradients(m, x, k, steps=1)
        np.testing.assert_allclose(ig, x * m.w.data[k].reshape(3, 10), rtol=1e-12, atol=1e-14)


def test_nonzero_baseline_linear():
    rng = np.random.default_rng(1)
    m = Linear(2, 5)
    x, base = rng.standard_normal((2, 5)), rng.standard_normal((2, 5))
    ig = integrated_gradients(m, x, 4, base, steps=3)
    np.testing.assert_allclose(ig, (x - base) * m.w.data[4].reshape(2, 5), rtol=1e-12, atol=1e-14)


def test_quadratic_model_closed_form():
    rng = np.random.default_rng(2)
    m = Square(2, 7)
    x = rng.standard_normal((2, 7))
    w = m.w.data[3].reshape(2, 7)
    ig = integrated_gradients(m, x, 3, steps=4)
    # midpoint rule is exact for integrands linear in alpha
    np.testing.assert_allclose(ig, x * w * np.sum(w * x), rtol=1e-12)
    assert completeness_residual(m, x, 3, ig) < 1e-12


def test_batch_equals_single_and_row_chunking(trained):
    model, x, y = trained
    xs, ys = x[:5], y[:5]
    batch = integrated_gradients_batch(model, xs, ys, steps=16, max_rows=7)
    for i in range(5):
        single = integrated_gradients(model, xs[i], int(ys[i]), steps=16)
        np.testing.assert_allclose(batch[i], single, rtol=1e-10, atol=1e-13)


def test_completeness_on_trained_model(trained):
    model, x, y = trained
    for i in range(5):
        ig = integrated_gradients(model, x[i], int(y[i]), steps=256)
        assert completeness_residual(model, x[i], int(y[i]), ig) < 0.01


def test_ig_leaves_train_mode_untouched(trained):
    model, x, y = trained
    model.train()
    try:
        integrated_gradients(model, x[0], 0, steps=2)
        assert model.training
    finally:
        model.eval()


def test_input_validation():
    m = Linear(2, 3)
    with pytest.raises(ShapeError):
        integrated_gradients(m, np.zeros((2, 3, 1)), 0)
    with pytest.raises(ShapeError):
        integrated_gradients(m, np.zeros((2, 3)), 0, baseline=np.zeros((3, 2)))
    with pytest.raises(ValueError):
        integrated_gradients(m, np.zeros((2, 3)), 0, steps=0)


def test_planted_channels_rank_first():
    # only channels 0 and 1 carry class information
    rng = np.random.default_rng(4)
    n, c, t = 480, 6, 27
    labels = np.tile(np.arange(6), n // 6)
    x = 0.3 * rng.standard_normal((n, c, t))
    tt = np.arange(t)
    for i, k in enumerate(labels):
        x[i, k % 2] += (1 + 0.4 * k) * np.sin(2 * np.pi * (0.05 + 0.06 * k) * tt)
    norm = fit_normalizer(x[:400])
    model, _ = train_model("cnn", norm(x[:400]), labels[:400], cfg=TrainConfig(epochs=15, batch_size=32, lr=1e-2),
                           seed=1, model_overrides=TINY_CNN)
    xt = norm(x[400:])
    ig = integrated_gradients_batch(model, xt, labels[400:], steps=32)
    scores = electrode_importance(ig)
    assert set(np.argsort(-scores)[:2]) == {0, 1}


def test_importance_aggregation():
    a = np.array([[[1.0, -2.0], [0.0, 0.5]], [[3.0, 0.0], [-1.0, -1.0]]])
    np.testing.assert_allclose(electrode_importance(a), [(3 + 3) / 2, (0.5 + 2) / 2])
    by = importance_by_gesture(a, [1, 5])
    assert list(by) == ["swipe-left", "taps"]
    np.testing.assert_allclose(by["taps"], [3.0, 2.0])
    with pytest.raises(SignalError):
        electrode_importance([])


def test_minmax_and_group_average():
    np.testing.assert_allclose(minmax([2.0, 4.0, 3.0]), [0, 1, 0.5])
    np.testing.assert_allclose(minmax([7.0, 7.0]), [0.5, 0.5])
    avg = normalize_and_average([[1.0, 3.0, 2.0], [10.0, 0.0, 5.0]])
    np.testing.assert_allclose(avg, [0.5, 0.5, 0.5])
    with pytest.raises(ShapeError):
        normalize_and_average([[1.0, 2.0], [1.0, 2.0, 3.0]])
    with pytest.raises(SignalError):
        normalize_and_average([])


def test_map_top_and_csv(tmp_path):
    layout = build_maize_layout()
    ids = list(range(1, 33))
    scores = np.linspace(0, 1, 32)
    m = AttributionMap("taps", ids, scores)
    assert m.top(3) == [32, 31, 30]
    assert m.to_dict()["scores"][-1] == 1.0
    path = export_maps_csv([m], layout, tmp_path / "maps.csv")
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 32 and list(rows[0]) == ["electrode_id", "x", "y", "region", "gesture", "score"]
    assert rows[16]["region"] == "flexor" and float(rows[16]["x"]) == 8.0
    assert float(rows[-1]["score"]) == 1.0

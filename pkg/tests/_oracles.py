"""Independent reference helpers shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from wristemg.nn.tensor import Tensor


def finite_difference_check(fn, inputs, seed=0, h=1e-6, max_coords=40):
    """Worst relative error between backprop and central differences.

    ``fn`` maps a list of Tensors to an output Tensor; the scalar objective
    is sum(out * R) for a fixed random R.  Per input, errors are
    ||analytic - numeric|| / max(||analytic||, ||numeric||) over sampled
    coordinates.
    """
    # own stream, so R is never a copy of a test input drawn from the same seed
    rng = np.random.default_rng([seed, 0xFD])
    tensors = [Tensor(np.array(a, dtype=float), requires_grad=True) for a in inputs]
    out = fn(tensors)
    weights = rng.standard_normal(out.shape)
    loss = (out * Tensor(weights)).sum()
    loss.backward()

    def objective():
        return float(np.sum(fn(tensors).data * weights))

    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        coords = rng.choice(flat.size, min(flat.size, max_coords), replace=False)
        analytic = t.grad.reshape(-1)[coords]
        numeric = np.empty(len(coords))
        for n, i in enumerate(coords):
            old = flat[i]
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
            numeric[n] = (up - down) / (2 * h)
        worst = max(worst, _rel_error(analytic, numeric))
    return worst


ZERO_GRAD_NORM = 1e-7


def _rel_error(analytic, numeric):
    """Relative error, falling back to absolute when both sides are ~0.

    A bias feeding train-mode batch norm has an identically zero gradient;
    there the numeric side is pure roundoff and a ratio is meaningless.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < ZERO_GRAD_NORM:
        return float(np.linalg.norm(analytic - numeric))
    return float(np.linalg.norm(analytic - numeric) / scale)


def brute_classify(coords, grid_ids):
    """Density class by direct pairwise inspection of coordinates."""
    n = len(coords)
    edge = [False] * n
    corner = [False] * n
    any_edge = False
    close = False
    for i, j in itertools.combinations(range(n), 2):
        if grid_ids[i] != grid_ids[j]:
            continue
        dx = abs(coords[i][0] - coords[j][0])
        dy = abs(coords[i][1] - coords[j][1])
        if dx + dy == 1:
            edge[i] = edge[j] = True
            any_edge = True
        if dx == 1 and dy == 1:
            corner[i] = corner[j] = True
        if max(dx, dy) < 2:
            close = True
    if n >= 1 and all(edge):
        return "high"
    if not any_edge and n >= 1 and all(corner):
        return "medium"
    if not close:
        return "low"
    return "invalid"


def brute_median_dist(points):
    d = sorted(
        float(np.hypot(a[0] - b[0], a[1] - b[1])) for a, b in itertools.combinations(points, 2)
    )
    m = len(d)
    return d[m // 2] if m % 2 else (d[m // 2 - 1] + d[m // 2]) / 2


def model_gradient_check(model, x, labels, seed=0, h=1e-6, max_coords=15):
    """Worst relative error of d(loss)/d(param) and d(loss)/d(x) for a whole model.

    Dropout masks are frozen by reseeding the model's generator before
    every forward pass.
    """
    from wristemg.nn import functional as F

    rng = np.random.default_rng([seed, 0xFD])
    model.train()

    def loss_of(xarr, track=False):
        model.set_rng(np.random.default_rng(seed))
        xt = Tensor(xarr, requires_grad=track)
        loss = F.cross_entropy(model(xt), labels)
        return loss, xt

    model.zero_grad()
    loss, xt = loss_of(x, track=True)
    loss.backward()
    targets = [(xt.grad, x)] + [(p.grad, p.data) for p in model.parameters()]
    worst = 0.0
    for grad, arr in targets:
        flat = arr.reshape(-1)
        coords = rng.choice(flat.size, min(flat.size, max_coords), replace=False)
        numeric = np.empty(len(coords))
        for n, i in enumerate(coords):
            old = flat[i]
            flat[i] = old + h
            up = float(loss_of(x)[0].data)
            flat[i] = old - h
            down = float(loss_of(x)[0].data)
            flat[i] = old
            numeric[n] = (up - down) / (2 * h)
        analytic = grad.reshape(-1)[coords]
        worst = max(worst, _rel_error(analytic, numeric))
    return worst

"""Layer-level differentiable ops with fused backward passes.

Temporal tensors are batch x channels x time.  Unbatched channels x time
inputs are accepted by :func:`conv1d` and returned unbatched.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor


def _conv_out_len(t: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (t + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Cross-correlation of B x C_in x T input with C_out x C_in x K weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeError(f"conv1d: input must be (B, C, T) or (C, T), got {x.shape}")
    if weight.ndim != 3:
        raise ShapeError(f"conv1d: weight must be (C_out, C_in, K), got {weight.shape}")
    b, c, t = x.shape
    o, c_w, k = weight.shape
    if c != c_w:
        raise ShapeError(f"conv1d: input channels {c} != weight in_channels {c_w}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv1d: bias shape {bias.shape} != ({o},) out_channels")
    t_out = _conv_out_len(t, k, stride, padding, dilation)
    if t_out < 1:
        raise ShapeError(f"conv1d: time length {t} too short for kernel {k} (dilation {dilation})")

    # channel-major columns: (K*C) x (B*T_out), k outer, c inner
    tp = t + 2 * padding
    xpt = np.zeros((c, b, tp))
    xpt[:, :, padding : padding + t] = x.data.transpose(1, 0, 2)
    last = stride * (t_out - 1) + 1
    cols = np.empty((k, c, b, t_out))
    for j in range(k):
        cols[j] = xpt[:, :, j * dilation : j * dilation + last : stride]
    cols = cols.reshape(k * c, b * t_out)
    w2 = weight.data.transpose(0, 2, 1).reshape(o, k * c)
    out = (w2 @ cols).reshape(o, b, t_out)
    if bias is not None:
        out += bias.data[:, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2))

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(o, b * t_out)
        gw = (g2 @ cols.T).reshape(o, k, c).transpose(0, 2, 1)
        gcols = (w2.T @ g2).reshape(k, c, b, t_out)
        gxpt = np.zeros((c, b, tp))
        for j in range(k):
            gxpt[:, :, j * dilation : j * dilation + last : stride] += gcols[j]
        gx = np.ascontiguousarray(gxpt[:, :, padding : padding + t].transpose(1, 0, 2))
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, np.ascontiguousarray(gw), gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    y = Tensor.from_op(out, parents, back, "conv1d")
    return y.reshape(*y.shape[1:]) if squeeze else y


def chomp(x: Tensor, p: int) -> Tensor:
    """Drop the last ``p`` time steps."""
    t = x.shape[-1]
    if not 0 <= p < t:
        raise ShapeError(f"chomp: cannot drop {p} of {t} time steps")
    if p == 0:
        return x

    def back(g):
        out = np.zeros(x.shape)
        out[..., : t - p] = g
        return (out,)

    return Tensor.from_op(np.ascontiguousarray(x.data[..., : t - p]), (x,), back, "chomp")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch norm over (B, T) for B x C x T, or over B for B x C.

    In training mode the running statistics are updated in place (unbiased
    variance, PyTorch convention).
    """
    if x.ndim not in (2, 3):
        raise ShapeError(f"batch_norm: expected (B, C) or (B, C, T), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine parameters must have shape ({c},)")
    axes = (0, 2) if x.ndim == 3 else (0,)
    bshape = (1, c, 1) if x.ndim == 3 else (1, c)
    xd = x.data

    if training:
        if x.shape[0] < 2:
            raise ShapeError("batch_norm: batch of 1 in train mode has no batch statistics")
        n = xd.size // c
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xd - mu.reshape(bshape)
        xhat *= inv.reshape(bshape)
        out = xhat * gamma.data.reshape(bshape)
        out += beta.data.reshape(bshape)

        def back(g):
            gbeta = g.sum(axis=axes)
            ggamma = np.einsum("bct,bct->c", g, xhat) if x.ndim == 3 else (g * xhat).sum(axis=0)
            # dx = gamma*inv * (g - mean(g) - xhat * mean(g*xhat))
            gx = xhat * (-ggamma / n).reshape(bshape)
            gx += g
            gx -= (gbeta / n).reshape(bshape)
            gx *= (gamma.data * inv).reshape(bshape)
            return gx, ggamma, gbeta
    else:
        scale = gamma.data / np.sqrt(running_var + eps)
        xhat = (xd - running_mean.reshape(bshape)) / np.sqrt(running_var + eps).reshape(bshape)
        out = scale.reshape(bshape) * (xd - running_mean.reshape(bshape)) + beta.data.reshape(bshape)

        def back(g):
            return g * scale.reshape(bshape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor.from_op(out, (x, gamma, beta), back, "batch_norm")


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """w = g * v / ||v|| with one norm per output channel (leading axis)."""
    if g.shape != (v.shape[0],):
        raise ShapeError(f"weight_norm: magnitude shape {g.shape} != ({v.shape[0]},)")
    axes = tuple(range(1, v.ndim))
    bshape = (-1,) + (1,) * (v.ndim - 1)
    norm = np.sqrt((v.data**2).sum(axis=axes))
    if np.any(norm == 0):
        raise ShapeError("weight_norm: zero direction vector")
    vhat = v.data / norm.reshape(bshape)
    out = g.data.reshape(bshape) * vhat

    def back(gw):
        proj = (gw * vhat).sum(axis=axes)
        gv = (g.data / norm).reshape(bshape) * (gw - proj.reshape(bshape) * vhat)
        return gv, proj

    return Tensor.from_op(out, (v, g), back, "weight_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 <= slope <= 1:
        raise ValueError("leaky_relu slope must lie in [0, 1]")
    out = x.data * slope
    np.maximum(out, x.data, out=out)  # valid for 0 <= slope <= 1
    factor = None

    def back(g):
        nonlocal factor
        if factor is None:
            factor = np.where(x.data > 0, 1.0, slope)
        return (g * factor,)

    return Tensor.from_op(out, (x,), back, "leaky_relu")


def maxpool1d(x: Tensor, kernel: int = 3, stride: int = 3) -> Tensor:
    """Max over time windows, no padding: T' = floor((T - k) / s) + 1.

    Ties route the gradient to the earliest position in the window.
    """
    t = x.shape[-1]
    t_out = (t - kernel) // stride + 1
    if t_out < 1:
        raise ShapeError(f"maxpool1d: time length {t} shorter than kernel {kernel}")
    last = stride * (t_out - 1) + 1
    taps = [x.data[..., j : j + last : stride] for j in range(kernel)]
    out = taps[0].copy()
    for tap in taps[1:]:
        np.maximum(out, tap, out=out)

    def back(g):
        gx = np.zeros(x.shape)
        free = np.ones(out.shape, dtype=bool)
        for j, tap in enumerate(taps):
            hit = tap == out
            hit &= free
            free &= ~hit
            dst = gx[..., j : j + last : stride]
            if kernel <= stride:
                np.copyto(dst, g, where=hit)
            else:
                dst += g * hit
        return (gx,)

    return Tensor.from_op(out, (x,), back, "maxpool1d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time (last) axis."""
    t = x.shape[-1]
    shape = x.shape
    return Tensor.from_op(
        x.data.mean(axis=-1), (x,),
        lambda g: (np.broadcast_to(g[..., None] / t, shape).copy(),), "global_avg_pool",
    )


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W.T + b with W shaped (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"dense: input features {x.shape[-1]} != weight in_features {weight.shape[1]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        return g @ wd, g.T @ xd, (g.sum(axis=0) if bias is not None else None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, back, "dense")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity outside training mode."""
    if not training or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def log_softmax(z: Tensor) -> Tensor:
    zd = z.data
    shifted = zd - zd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return Tensor.from_op(out, (z,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def softmax(z: Tensor) -> Tensor:
    zd = z.data
    e = np.exp(zd - zd.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    return Tensor.from_op(p, (z,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),), "softmax")


def softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k or not np.issubdtype(labels.dtype, np.integer)):
        raise ValueError(f"cross_entropy: labels must be integers in [0, {k - 1}]")
    zd = logits.data
    shifted = zd - zd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float(np.mean(lse - shifted[rows, labels]))
    p = np.exp(shifted - lse[:, None])

    def back(g):
        grad = p.copy()
        grad[rows, labels] -= 1.0
        return (grad * (g / len(labels)),)

    return Tensor.from_op(np.asarray(loss), (logits,), back, "cross_entropy")

"""Differentiable operations over 2-D tensors.

Every op validates shapes, computes its forward value through the kernel
backend (or numpy for cheap elementwise work), checks the output is
finite, and records a backward rule on the active tape when any input is
tracked.  The only broadcast allowed anywhere is row-vector bias
addition; all other shape mismatches raise.
"""

import numpy as np

from .. import kernels
from ..errors import ShapeError
from .tape import Tape
from .tensor import Tensor, ensure_finite


def _result(op: str, inputs: tuple[Tensor, ...], data: np.ndarray, backward_fn) -> Tensor:
    ensure_finite(data, op)
    tape = Tape.active()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked, dtype=data.dtype)
    if tracked:
        tape.record(inputs, out, backward_fn)
    return out


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """C = A @ B with dA = dC Bᵀ, dB = Aᵀ dC."""
    _check_same_dtype("matmul", a, b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    data = kernels.matmul(a.data, b.data)

    def backward_fn(gout):
        ga = gb = None
        if a.requires_grad:
            ga = kernels.matmul(gout, b.data.T)
        if b.requires_grad:
            gb = kernels.matmul(a.data.T, gout)
        return ga, gb

    return _result("matmul", (a, b), data, backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a 1xN row bias added to every row of a."""
    _check_same_dtype("add", a, b)
    if a.shape == b.shape:
        bias = False
    elif b.rows == 1 and b.cols == a.cols:
        bias = True
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")
    data = a.data + b.data

    def backward_fn(gout):
        ga = gout if a.requires_grad else None
        if not b.requires_grad:
            return ga, None
        gb = gout.sum(axis=0, keepdims=True) if bias else gout
        return ga, gb

    return _result("add", (a, b), data, backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("sub", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} - {b.shape}")
    data = a.data - b.data

    def backward_fn(gout):
        return (gout if a.requires_grad else None,
                -gout if b.requires_grad else None)

    return _result("sub", (a, b), data, backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    data = a.data * b.data

    def backward_fn(gout):
        return (gout * b.data if a.requires_grad else None,
                gout * a.data if b.requires_grad else None)

    return _result("mul", (a, b), data, backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * a.dtype.type(c)

    def backward_fn(gout):
        return (gout * a.dtype.type(c),)

    return _result("scale", (a,), data, backward_fn)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward_fn(gout):
        return (gout * (1.0 - data * data),)

    return _result("tanh", (a,), data, backward_fn)


def log(a: Tensor) -> Tensor:
    """Natural logarithm; non-positive inputs surface as a numeric error."""
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def backward_fn(gout):
        return (gout / a.data,)

    return _result("log", (a,), data, backward_fn)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """max(a, lo); gradient passes where the input was not clamped."""
    data = np.maximum(a.data, a.dtype.type(lo))
    mask = a.data >= a.dtype.type(lo)

    def backward_fn(gout):
        return (gout * mask,)

    return _result("clamp_min", (a,), data, backward_fn)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if a.cols < 1 or a.rows < 1:
        raise ShapeError(f"softmax: empty input {a.shape}")
    data = kernels.softmax_rows(a.data)

    def backward_fn(gout):
        # dx_j = y_j (g_j - sum_i g_i y_i), per row
        dot = (gout * data).sum(axis=1, keepdims=True)
        return (data * (gout - dot),)

    return _result("softmax", (a,), data, backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with population variance."""
    _check_same_dtype("layer_norm", x, gamma, beta)
    if eps <= 0:
        raise ShapeError("layer_norm: eps must be positive")
    n = x.cols
    if gamma.shape != (1, n) or beta.shape != (1, n):
        raise ShapeError(
            f"layer_norm: gamma/beta must be 1x{n}, got {gamma.shape}/{beta.shape}")
    data, mean, rstd = kernels.layer_norm_rows(x.data, gamma.data, beta.data, float(eps))
    xhat = (x.data - mean) * rstd

    def backward_fn(gout):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (gout * xhat).sum(axis=0, keepdims=True)
        if beta.requires_grad:
            gbeta = gout.sum(axis=0, keepdims=True)
        if x.requires_grad:
            gh = gout * gamma.data
            # d/dx of (x - mean) * rstd with population variance
            gx = rstd / n * (n * gh
                             - gh.sum(axis=1, keepdims=True)
                             - xhat * (gh * xhat).sum(axis=1, keepdims=True))
        return gx, ggamma, gbeta

    return _result("layer_norm", (x, gamma, beta), data, backward_fn)


def transpose(a: Tensor) -> Tensor:
    data = np.ascontiguousarray(a.data.T)

    def backward_fn(gout):
        return (np.ascontiguousarray(gout.T),)

    return _result("transpose", (a,), data, backward_fn)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows by index (duplicates allowed); backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("gather_rows: index must be a non-empty 1-D sequence")
    if idx.min() < 0 or idx.max() >= a.rows:
        raise ShapeError(f"gather_rows: index out of range for {a.rows} rows")
    data = a.data[idx]

    def backward_fn(gout):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, gout)
        return (ga,)

    return _result("gather_rows", (a,), data, backward_fn)


def gather_cols(a: Tensor, idx) -> Tensor:
    """Select columns by index; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("gather_cols: index must be a non-empty 1-D sequence")
    if idx.min() < 0 or idx.max() >= a.cols:
        raise ShapeError(f"gather_cols: index out of range for {a.cols} columns")
    data = np.ascontiguousarray(a.data[:, idx])

    def backward_fn(gout):
        ga = np.zeros_like(a.data)
        np.add.at(ga.T, idx, gout.T)
        return (ga,)

    return _result("gather_cols", (a,), data, backward_fn)


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: no tensors given")
    _check_same_dtype("concat_rows", *parts)
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise ShapeError("concat_rows: column counts differ")
    data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.rows for p in parts])

    def backward_fn(gout):
        return tuple(
            gout[offsets[i]:offsets[i + 1]] if p.requires_grad else None
            for i, p in enumerate(parts))

    return _result("concat_rows", tuple(parts), data, backward_fn)


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: no tensors given")
    _check_same_dtype("concat_cols", *parts)
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise ShapeError("concat_cols: row counts differ")
    data = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.cols for p in parts])

    def backward_fn(gout):
        return tuple(
            np.ascontiguousarray(gout[:, offsets[i]:offsets[i + 1]])
            if p.requires_grad else None
            for i, p in enumerate(parts))

    return _result("concat_cols", tuple(parts), data, backward_fn)


def colmean(a: Tensor) -> Tensor:
    """Column-wise mean over rows -> 1xN."""
    data = a.data.mean(axis=0, keepdims=True, dtype=np.float64).astype(a.dtype)

    def backward_fn(gout):
        return (np.repeat(gout / a.rows, a.rows, axis=0),)

    return _result("colmean", (a,), data, backward_fn)


def colmax(a: Tensor) -> Tensor:
    """Column-wise max over rows -> 1xN; ties route to the lowest row index."""
    amax = a.data.argmax(axis=0)  # argmax returns the first maximum
    data = a.data[amax, np.arange(a.cols)].reshape(1, -1)

    def backward_fn(gout):
        ga = np.zeros_like(a.data)
        ga[amax, np.arange(a.cols)] = gout[0]
        return (ga,)

    return _result("colmax", (a,), data, backward_fn)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries -> 1x1."""
    data = np.array([[a.data.sum(dtype=np.float64)]], dtype=a.dtype)

    def backward_fn(gout):
        return (np.full_like(a.data, gout[0, 0]),)

    return _result("sum_all", (a,), data, backward_fn)


def depthwise_conv2d(tokens: Tensor, weights: Tensor, bias: Tensor | None,
                     side: int, ksize: int) -> Tensor:
    """Per-channel (grouped) 2-D convolution over tokens laid out on a grid.

    ``tokens`` is side²xC in row-major grid order; ``weights`` is Cxk² (one
    kxk kernel per channel, flattened row-major); zero 'same' padding.
    """
    _check_same_dtype("depthwise_conv2d", tokens, weights,
                      *([bias] if bias is not None else []))
    m, c = tokens.shape
    if side * side != m:
        raise ShapeError(f"depthwise_conv2d: {m} tokens do not fill a {side}x{side} grid")
    if weights.shape != (c, ksize * ksize):
        raise ShapeError(
            f"depthwise_conv2d: weights must be {c}x{ksize * ksize}, got {weights.shape}")
    if bias is not None and bias.shape != (1, c):
        raise ShapeError(f"depthwise_conv2d: bias must be 1x{c}, got {bias.shape}")
    pad = ksize // 2
    grid = tokens.data.reshape(side, side, c)
    padded = np.zeros((side + 2 * pad, side + 2 * pad, c), dtype=tokens.dtype.type)
    padded[pad:pad + side, pad:pad + side] = grid
    out = np.zeros_like(grid)
    for u in range(ksize):
        for v in range(ksize):
            out += padded[u:u + side, v:v + side] * weights.data[:, u * ksize + v]
    if bias is not None:
        out += bias.data[0]
    data = out.reshape(m, c)

    def backward_fn(gout):
        gg = gout.reshape(side, side, c)
        gt = gw = gb = None
        if tokens.requires_grad:
            gpad = np.zeros_like(padded)
            for u in range(ksize):
                for v in range(ksize):
                    gpad[u:u + side, v:v + side] += gg * weights.data[:, u * ksize + v]
            gt = np.ascontiguousarray(
                gpad[pad:pad + side, pad:pad + side].reshape(m, c))
        if weights.requires_grad:
            gw = np.empty_like(weights.data)
            for u in range(ksize):
                for v in range(ksize):
                    gw[:, u * ksize + v] = (
                        padded[u:u + side, v:v + side] * gg).sum(axis=(0, 1))
        if bias is not None and bias.requires_grad:
            gb = gg.sum(axis=(0, 1)).reshape(1, c)
        return (gt, gw) if bias is None else (gt, gw, gb)

    inputs = (tokens, weights) if bias is None else (tokens, weights, bias)
    return _result("depthwise_conv2d", inputs, data, backward_fn)

"""Central-difference verification of analytic gradients."""

import math

from ..errors import NumericError, ShapeError
from .tape import Tape, backward
from .tensor import Tensor


def finite_diff_check(f, params: list[Tensor], h: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a deterministic zero-argument callable returning a scalar
    (1x1) tensor computed from the current values of ``params``.  Each
    coordinate is perturbed by ±h and the quotient (f(θ+h)-f(θ-h))/2h is
    compared against the tape gradient with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ShapeError("finite_diff_check: h must be positive")

    with Tape() as tape:
        loss = f()
    if loss.shape != (1, 1):
        raise ShapeError(f"finite_diff_check: f must return a scalar, got {loss.shape}")
    backward(tape, loss, params=params)
    analytic = [p.grad.copy() for p in params]

    def probe() -> float:
        out = f().item()
        if not math.isfinite(out):
            raise NumericError("finite_diff_check: f produced a non-finite value")
        return out

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fplus = probe()
            flat[i] = orig - h
            fminus = probe()
            flat[i] = orig
            numeric = (fplus - fminus) / (2.0 * h)
            denom = max(abs(float(gflat[i])), abs(numeric), 1e-8)
            worst = max(worst, abs(float(gflat[i]) - numeric) / denom)
    return worst

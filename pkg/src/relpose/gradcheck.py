"""Central finite-difference validation of every differentiable operation.

Each case builds a scalar loss from float64 inputs, backpropagates, and
compares the analytic input gradients against central differences with step
1e-5 * max(1, |x|).  The error measure is elementwise
|analytic - numeric| / max(1, |analytic|, |numeric|).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_TOLERANCE = 1e-4
DEFAULT_TRIALS = 5


def relative_gradient_error(build_loss: Callable[[Sequence[Tensor]], Tensor],
                            arrays: Sequence[np.ndarray]) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build_loss` must be a pure function of its inputs (given fixed data it
    returns the same scalar), so it can be re-evaluated for differencing.
    """
    inputs = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build_loss(inputs)
    loss.backward()
    analytic = [np.zeros_like(a) if t.grad is None else t.grad.copy()
                for a, t in zip(arrays, inputs)]

    def evaluate(datas: Sequence[np.ndarray]) -> float:
        consts = [Tensor(d, requires_grad=False, dtype=np.float64) for d in datas]
        return float(build_loss(consts).data)

    worst = 0.0
    for k, base in enumerate(arrays):
        datas = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
        flat = datas[k].reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            h = 1e-5 * max(1.0, abs(orig))
            flat[i] = orig + h
            up = evaluate(datas)
            flat[i] = orig - h
            down = evaluate(datas)
            flat[i] = orig
            num[i] = (up - down) / (2.0 * h)
        num = num.reshape(base.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic[k]), np.abs(num)))
        worst = max(worst, float(np.max(np.abs(analytic[k] - num) / denom)))
    return worst


def _away_from_zero(rng: np.random.Generator, shape, low: float = 0.05) -> np.ndarray:
    """Uniform values with |x| >= low, keeping relu/max kinks out of FD reach."""
    mag = rng.uniform(low, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _distinct(rng: np.random.Generator, shape, gap: float = 1e-3) -> np.ndarray:
    """Random values whose pairwise gaps exceed `gap` (stable pooling argmax)."""
    n = int(np.prod(shape))
    base = np.sort(rng.uniform(-1.0, 1.0, size=n))
    base += np.arange(n) * gap
    return rng.permutation(base).reshape(shape)


def standard_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list[np.ndarray]]]:
    """(name, build_loss, inputs) for one randomized trial of every op."""
    u = rng.uniform

    def loss_of(t: Tensor) -> Tensor:
        return ad.mse(t, Tensor(np.zeros(t.shape), dtype=np.float64))

    cases: list[tuple[str, Callable, list[np.ndarray]]] = []

    cases.append(("conv2d(s1,p1,bias)",
                  lambda ts: loss_of(ad.conv2d(ts[0], ts[1], ts[2], stride=1, padding=1)),
                  [u(-1, 1, (1, 2, 4, 4)), u(-1, 1, (3, 2, 3, 3)), u(-1, 1, (3,))]))
    cases.append(("conv2d(s2,p0)",
                  lambda ts: loss_of(ad.conv2d(ts[0], ts[1], stride=2, padding=0)),
                  [u(-1, 1, (2, 2, 6, 6)), u(-1, 1, (2, 2, 2, 2))]))
    cases.append(("maxpool2",
                  lambda ts: loss_of(ad.maxpool2(ts[0])),
                  [_distinct(rng, (1, 2, 4, 4))]))
    cases.append(("relu",
                  lambda ts: loss_of(ad.relu(ts[0])),
                  [_away_from_zero(rng, (3, 5))]))
    cases.append(("softmax_rows",
                  lambda ts: loss_of(ad.softmax_rows(ts[0])),
                  [u(-2, 2, (2, 3, 4))]))
    cases.append(("batchnorm2d(train)",
                  lambda ts: loss_of(ad.batchnorm2d(ts[0], ts[1], ts[2], training=True)),
                  [u(-1, 1, (2, 3, 2, 2)), u(0.5, 1.5, (3,)), u(-0.5, 0.5, (3,))]))
    stats_mean, stats_var = u(-0.3, 0.3, (3,)), u(0.5, 1.5, (3,))
    cases.append(("batchnorm2d(eval)",
                  lambda ts: loss_of(ad.batchnorm2d(
                      ts[0], ts[1], ts[2], running_mean=stats_mean.copy(),
                      running_var=stats_var.copy(), training=False)),
                  [u(-1, 1, (2, 3, 2, 2)), u(0.5, 1.5, (3,)), u(-0.5, 0.5, (3,))]))
    cases.append(("matmul(2d,2d)",
                  lambda ts: loss_of(ad.matmul(ts[0], ts[1])),
                  [u(-1, 1, (3, 4)), u(-1, 1, (4, 2))]))
    cases.append(("matmul(3d,3d)",
                  lambda ts: loss_of(ad.matmul(ts[0], ts[1])),
                  [u(-1, 1, (2, 3, 4)), u(-1, 1, (2, 4, 3))]))
    cases.append(("matmul(2d,3d)",
                  lambda ts: loss_of(ad.matmul(ts[0], ts[1])),
                  [u(-1, 1, (3, 3)), u(-1, 1, (2, 3, 4))]))
    cases.append(("matmul(3d,2d)",
                  lambda ts: loss_of(ad.matmul(ts[0], ts[1])),
                  [u(-1, 1, (2, 3, 4)), u(-1, 1, (4, 2))]))
    cases.append(("pairwise_dot",
                  lambda ts: loss_of(ad.pairwise_dot(ts[0])),
                  [u(-1, 1, (2, 3, 5))]))
    cases.append(("add+mul_scalar",
                  lambda ts: loss_of(ad.mul_scalar(ad.add(ts[0], ts[1]), 0.7)),
                  [u(-1, 1, (3, 4)), u(-1, 1, (3, 4))]))
    cases.append(("concat_channels",
                  lambda ts: loss_of(ad.concat_channels([ts[0], ts[1]])),
                  [u(-1, 1, (2, 2, 3, 3)), u(-1, 1, (2, 3, 3, 3))]))
    cases.append(("reshape+transpose_last2",
                  lambda ts: loss_of(ad.transpose_last2(ad.reshape(ts[0], (2, 3, 4)))),
                  [u(-1, 1, (6, 4))]))
    cases.append(("time_slice",
                  lambda ts: loss_of(ad.add(ad.time_slice(ts[0], 0), ad.time_slice(ts[0], 2))),
                  [u(-1, 1, (2, 3, 2, 2))]))
    cases.append(("mse",
                  lambda ts: ad.mse(ts[0], ts[1]),
                  [u(-1, 1, (3, 4)), u(-1, 1, (3, 4))]))
    cases.append(("depthwise_xcorr(odd)",
                  lambda ts: loss_of(ad.depthwise_xcorr(ts[0], ts[1])),
                  [u(-1, 1, (2, 2, 5, 5)), u(-1, 1, (2, 2, 3, 3))]))
    cases.append(("depthwise_xcorr(even)",
                  lambda ts: loss_of(ad.depthwise_xcorr(ts[0], ts[1])),
                  [u(-1, 1, (1, 2, 4, 4)), u(-1, 1, (1, 2, 2, 2))]))
    return cases


def run_suite(trials: int = DEFAULT_TRIALS, tolerance: float = DEFAULT_TOLERANCE,
              seed: int = 1234, extra_cases: Callable[[np.random.Generator], list] | None = None,
              verbose: bool = False) -> list[tuple[str, float, bool]]:
    """Run every case `trials` times; returns (name, worst_error, passed) rows."""
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}
    for _ in range(trials):
        cases = standard_cases(rng)
        if extra_cases is not None:
            cases = cases + extra_cases(rng)
        for name, build_loss, arrays in cases:
            err = relative_gradient_error(build_loss, arrays)
            results[name] = max(results.get(name, 0.0), err)
    rows = [(name, err, err < tolerance) for name, err in results.items()]
    if verbose:
        for name, err, ok in rows:
            print(f"{'ok  ' if ok else 'FAIL'} {name:28s} max rel err {err:.3e}")
    return rows

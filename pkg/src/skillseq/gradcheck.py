"""Finite-difference verification of every layer and loss gradient.

For each randomly configured operation the analytic gradient from the
tape is compared against central differences

    (f(x + h e_i) - f(x - h e_i)) / (2 h),   h = 1e-5

for every element of every input and parameter.  The reported error is

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-4)

which behaves like a relative error for ordinary gradients and like a
scaled absolute error when both sides vanish.  Inputs are sampled away
from activation kinks (|x| >= 0.05 for selu/relu paths) so the two-sided
difference never straddles a non-differentiable point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .layers import LayerSpec, ForwardContext, forward_stack, init_stack_params, wrap_params
from .seeding import make_rng

__all__ = ["GradCheckResult", "check_operation", "run_gradcheck", "OPERATIONS"]

H = 1e-5
ERROR_FLOOR = 1e-4

OPERATIONS = (
    "conv1d",
    "dense",
    "selu",
    "sigmoid",
    "softmax",
    "gap",
    "scse",
    "residual-scse-block",
    "gaussian-noise",
    "bce",
    "mse",
    "cosine",
    "activity-penalty",
)


@dataclass(frozen=True)
class GradCheckResult:
    operation: str
    seed: int
    n_elements: int
    max_error: float

    @property
    def passed(self):
        return self.max_error < 1e-4


def _avoid_kinks(x, margin=0.05):
    near = np.abs(x) < margin
    return x + near * np.sign(x + (x == 0.0)) * margin


def _numeric_grad(f, arrays):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + H
            hi = f()
            flat[i] = keep - H
            lo = f()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * H)
        grads.append(g)
    return grads


def _compare(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), ERROR_FLOOR)
        err = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
        worst = max(worst, err)
    return worst


def _random_target(rng, shape, kind):
    if kind == "bce":
        return rng.uniform(0.05, 0.95, size=shape)
    t = rng.normal(0.0, 1.0, size=shape)
    if kind == "cosine":
        while float(np.linalg.norm(t)) < 0.3:
            t = rng.normal(0.0, 1.0, size=shape)
    return t


def check_operation(op, seed):
    """Gradient-check one operation under one random configuration."""
    rng = make_rng(seed, 991)
    T = int(rng.integers(3, 9))
    C = int(rng.integers(1, 5)) * 2  # even so reduction 2 divides it

    if op in ("bce", "mse", "cosine"):
        n = int(rng.integers(2, 7))
        raw = rng.uniform(0.1, 0.9, size=n) if op == "bce" else rng.normal(0.0, 1.0, size=n)
        if op == "cosine":
            while float(np.linalg.norm(raw)) < 0.3:
                raw = rng.normal(0.0, 1.0, size=n)
        target = _random_target(rng, (n,), op)
        weight = float(rng.uniform(0.5, 2.0))
        x = tz.parameter(raw)

        loss = tz.loss_eval(op, x, target, weight)
        tz.backward(loss)
        analytic = [x.grad.copy()]

        def evaluate():
            return float(tz.loss_eval(op, tz.constant(raw), target, weight).data)

        numeric = _numeric_grad(evaluate, [raw])
        err = _compare(analytic, numeric)
        return GradCheckResult(op, seed, raw.size, err)

    if op == "activity-penalty":
        raw = rng.normal(0.0, 1.0, size=(T, C))
        coeff = float(rng.uniform(0.5, 2.0))
        x = tz.parameter(raw)
        loss = tz.activity_penalty(x, coeff)
        tz.backward(loss)
        analytic = [x.grad.copy()]

        def evaluate():
            return float(tz.activity_penalty(tz.constant(raw), coeff).data)

        numeric = _numeric_grad(evaluate, [raw])
        return GradCheckResult(op, seed, raw.size, _compare(analytic, numeric))

    # layer path: build a one-layer stack, reduce with a fixed projection
    # so the scalar loss exercises every output element
    if op == "conv1d":
        cout = int(rng.integers(1, 5))
        spec = LayerSpec("conv1d", in_channels=C, out_channels=cout,
                         kernel_size=int(rng.integers(0, 3)) * 2 + 1,
                         dilation=int(rng.integers(1, 4)))
    elif op == "dense":
        spec = LayerSpec("dense", in_channels=C, out_channels=int(rng.integers(1, 5)))
    elif op == "scse":
        spec = LayerSpec("scse", in_channels=C, reduction=2)
    elif op == "residual-scse-block":
        spec = LayerSpec("residual-scse-block", in_channels=C,
                         kernel_size=int(rng.integers(0, 2)) * 2 + 1,
                         dilation=int(rng.integers(1, 3)), reduction=2)
    elif op == "gaussian-noise":
        spec = LayerSpec("gaussian-noise", sigma=float(rng.uniform(0.001, 0.1)))
    else:
        spec = LayerSpec(op)

    specs = (spec,)
    if op == "dense":
        x_raw = _avoid_kinks(rng.normal(0.0, 1.0, size=C))
    elif op == "softmax":
        x_raw = rng.normal(0.0, 1.0, size=int(rng.integers(2, 7)))
    else:
        x_raw = _avoid_kinks(rng.normal(0.0, 1.0, size=(T, C)))

    arrays = init_stack_params(specs, make_rng(seed, 992))
    # give biases nonzero values so their gradients are exercised off-origin
    for name, arr in arrays.items():
        if "w" not in name:
            arrays[name] = rng.normal(0.0, 0.3, size=arr.shape)
    names = sorted(arrays)

    noise = None
    if op == "gaussian-noise":
        noise = make_rng(seed, 993).normal(0.0, spec.sigma, size=x_raw.shape)

    def run(x_tensor, param_tensors):
        ctx = ForwardContext(train=True, rng=_FixedNoise(noise)) if op == "gaussian-noise" \
            else ForwardContext()
        return forward_stack(specs, param_tensors, x_tensor, ctx)

    # scalarize via a fixed random projection so every output element
    # contributes to the loss
    x = tz.parameter(x_raw)
    params = wrap_params(arrays)
    out = run(x, params)
    proj = make_rng(seed, 994).normal(0.0, 1.0, size=out.data.shape)
    loss = _dot_with(out, proj)
    tz.backward(loss)
    analytic = [x.grad if x.grad is not None else np.zeros_like(x_raw)]
    analytic += [params[n].grad if params[n].grad is not None else np.zeros_like(arrays[n])
                 for n in names]

    def evaluate():
        xt = tz.constant(x_raw)
        pt = wrap_params(arrays, requires_grad=False)
        o = run(xt, pt)
        return float(np.sum(o.data * proj))

    numeric = _numeric_grad(evaluate, [x_raw] + [arrays[n] for n in names])
    err = _compare(analytic, numeric)
    n_el = x_raw.size + sum(arrays[n].size for n in names)
    return GradCheckResult(op, seed, n_el, err)


class _FixedNoise:
    """Stands in for a Generator so repeated forwards add identical noise."""

    def __init__(self, noise):
        self.noise = noise

    def normal(self, loc, scale, size):
        return self.noise


def _dot_with(out, proj):
    """Scalar loss sum(out * proj) as a graph node."""
    t = out

    def bwd(g):
        if t.requires_grad:
            t.accumulate(g * proj)

    data = np.array(float(np.sum(t.data * proj)))
    node = tz.Tensor(data, requires_grad=t.requires_grad, parents=(t,),
                     bwd=bwd if t.requires_grad else None)
    return node


def run_gradcheck(configs_per_op=20, base_seed=0):
    """Check every operation under ``configs_per_op`` random configs."""
    results = []
    for oi, op in enumerate(OPERATIONS):
        for j in range(configs_per_op):
            results.append(check_operation(op, base_seed * 100000 + oi * 1000 + j))
    return results

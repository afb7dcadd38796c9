"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its parents and a backward closure on a tape
implied by the graph structure.  Gradients are accumulated additively,
so calling ``backward`` twice doubles every gradient; callers that want
fresh gradients must zero them first (see ``zero_grads``).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "backward",
    "zero_grads",
]


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray (possibly zero-dimensional).
    ``grad`` is allocated lazily on first accumulation.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "bwd")

    def __init__(self, data, requires_grad=False, parents=(), bwd=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g)  # copy: g may be shared downstream
        else:
            self.grad += g

    def assert_finite(self, where=""):
        if not np.isfinite(self.data).all():
            raise FloatingPointError(f"non-finite values in tensor {where or 'node'}")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data):
    """Leaf tensor that participates in gradient computation."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data):
    """Leaf tensor excluded from gradient computation."""
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=False)


def _node(data, parents, bwd):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents, bwd=bwd if req else None)


def topo_order(root):
    """Parents-before-children ordering of the graph reachable from root."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(node) into ``grad`` of every reachable node.

    ``root`` must be scalar shaped (ndim 0).  Existing gradients are kept
    and added to.
    """
    if root.data.ndim != 0:
        raise ValueError(f"backward expects a scalar root, got shape {root.data.shape}")
    order = topo_order(root)
    root.accumulate(np.array(1.0))
    for node in reversed(order):
        if node.bwd is not None and node.grad is not None:
            node.bwd(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def conv1d(x, w, b, dilation=1):
    """Temporal convolution with zero 'same' padding and centered odd kernel.

    x: (T, C_in), w: (K, C_in, C_out), b: (C_out,).  Output (T, C_out):

        out[t, o] = b[o] + sum_{k, c} x[t + (k - K//2) * dilation, c] * w[k, c, o]

    with out-of-range input treated as zero.
    """
    xd, wd, bd = x.data, w.data, b.data
    T, cin = xd.shape
    K = wd.shape[0]
    if K % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {K}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    pad = (K // 2) * dilation
    xp = np.zeros((T + 2 * pad, cin))
    xp[pad:pad + T] = xd
    # taps2[t, c*K + k] = xp[t + k*dilation, c]; flattened this way the
    # whole contraction is a single BLAS matmul
    taps2 = np.empty((T, cin * K))
    for k in range(K):
        taps2[:, k::K] = xp[k * dilation:k * dilation + T]
    w2 = wd.transpose(1, 0, 2).reshape(cin * K, -1)
    out = taps2 @ w2 + bd

    def bwd(g):
        if w.requires_grad:
            dw2 = taps2.T @ g
            w.accumulate(dw2.reshape(cin, K, -1).transpose(1, 0, 2))
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))
        if x.requires_grad:
            dtaps = (g @ w2.T).reshape(T, cin, K)
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[k * dilation:k * dilation + T] += dtaps[:, :, k]
            x.accumulate(gxp[pad:pad + T])

    return _node(out, (x, w, b), bwd)


def dense(x, w, b):
    """Affine map of a vector: (C_in,) @ (C_in, C_out) + (C_out,)."""
    out = x.data @ w.data + b.data

    def bwd(g):
        if w.requires_grad:
            w.accumulate(np.outer(x.data, g))
        if b.requires_grad:
            b.accumulate(g)
        if x.requires_grad:
            x.accumulate(w.data @ g)

    return _node(out, (x, w, b), bwd)


def time_affine(x, w, b):
    """Per-timestep scalar projection: (T, C) @ (C,) + () -> (T,)."""
    out = x.data @ w.data + b.data

    def bwd(g):
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(np.array(g.sum()))
        if x.requires_grad:
            x.accumulate(np.outer(g, w.data))

    return _node(out, (x, w, b), bwd)


# canonical scaled-exponential constants
SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def selu(x):
    xd = x.data
    neg = xd <= 0.0
    ex = np.exp(np.minimum(xd, 0.0))
    out = np.where(neg, SELU_LAMBDA * SELU_ALPHA * (ex - 1.0), SELU_LAMBDA * xd)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * np.where(neg, SELU_LAMBDA * SELU_ALPHA * ex, SELU_LAMBDA))

    return _node(out, (x,), bwd)


def relu(x):
    mask = x.data > 0.0
    out = np.where(mask, x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * mask)

    return _node(out, (x,), bwd)


def _sigmoid_raw(xd):
    # clip keeps exp finite; exact for |x| < 500
    return 1.0 / (1.0 + np.exp(-np.clip(xd, -500.0, 500.0)))


def sigmoid(x):
    out = _sigmoid_raw(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * out * (1.0 - out))

    return _node(out, (x,), bwd)


def softmax(x):
    """Softmax over a 1-D vector."""
    z = x.data - x.data.max()
    e = np.exp(z)
    out = e / e.sum()

    def bwd(g):
        if x.requires_grad:
            x.accumulate(out * (g - np.dot(g, out)))

    return _node(out, (x,), bwd)


def gap(x):
    """Global average over time: (T, C) -> (C,)."""
    T = x.data.shape[0]
    out = x.data.mean(axis=0)

    def bwd(g):
        if x.requires_grad:
            gx = np.empty_like(x.data)
            gx[:] = g / T
            x.accumulate(gx)

    return _node(out, (x,), bwd)


def add(x, y):
    if x.data.shape != y.data.shape:
        raise ValueError(f"add shape mismatch {x.data.shape} vs {y.data.shape}")
    out = x.data + y.data

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g)
        if y.requires_grad:
            y.accumulate(g)

    return _node(out, (x, y), bwd)


def add_n(tensors):
    """Sum of same-shaped tensors as a single graph node."""
    tensors = tuple(tensors)
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out = out + t.data

    def bwd(g):
        for t in tensors:
            if t.requires_grad:
                t.accumulate(g)

    return _node(out, tensors, bwd)


def scale_channels(x, s):
    """(T, C) scaled per channel by (C,)."""
    out = x.data * s.data

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * s.data)
        if s.requires_grad:
            s.accumulate((g * x.data).sum(axis=0))

    return _node(out, (x, s), bwd)


def scale_time(x, q):
    """(T, C) scaled per timestep by (T,)."""
    out = x.data * q.data[:, None]

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * q.data[:, None])
        if q.requires_grad:
            q.accumulate((g * x.data).sum(axis=1))

    return _node(out, (x, q), bwd)


def scse_op(x, cw1, cb1, cw2, cb2, sw, sb):
    """Concurrent channel and spatial squeeze-excitation, summed.

    Channel branch: gate = sigmoid(W2 @ relu(W1 @ mean_t(x) + b1) + b2),
    scales each channel.  Spatial branch: gate = sigmoid(x @ w + b),
    scales each timestep.  Output is the elementwise sum of both scaled
    copies; with all-zero parameters both gates are 0.5 and the block is
    the identity.  Fused into one node with a hand-derived backward.
    """
    xd = x.data
    T, C = xd.shape
    z = xd.mean(axis=0)
    u1 = z @ cw1.data + cb1.data
    h = np.where(u1 > 0.0, u1, 0.0)
    u2 = h @ cw2.data + cb2.data
    s = _sigmoid_raw(u2)
    v = xd @ sw.data + sb.data
    q = _sigmoid_raw(v)
    out = xd * s + xd * q[:, None]

    def bwd(g):
        gx = g * s + g * q[:, None]
        gxd_sum_t = (g * xd).sum(axis=0)
        du2 = gxd_sum_t * s * (1.0 - s)
        dh = cw2.data @ du2
        du1 = np.where(u1 > 0.0, dh, 0.0)
        dv = (g * xd).sum(axis=1) * q * (1.0 - q)
        if cw2.requires_grad:
            cw2.accumulate(np.outer(h, du2))
            cb2.accumulate(du2)
        if cw1.requires_grad:
            cw1.accumulate(np.outer(z, du1))
            cb1.accumulate(du1)
        if sw.requires_grad:
            sw.accumulate(xd.T @ dv)
            sb.accumulate(np.array(dv.sum()))
        if x.requires_grad:
            gx += (cw1.data @ du1)[None, :] / T
            gx += np.outer(dv, sw.data)
            x.accumulate(gx)

    return _node(out, (x, cw1, cb1, cw2, cb2, sw, sb), bwd)


def add_noise(x, noise):
    """Shift by a fixed (non-differentiated) noise array."""
    out = x.data + noise

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g)

    return _node(out, (x,), bwd)


def activity_penalty(x, coeff):
    """Scalar penalty coeff * mean(x ** 2)."""
    n = x.data.size
    out = np.array(coeff * float(np.mean(np.square(x.data))))

    def bwd(g):
        if x.requires_grad:
            x.accumulate((2.0 * coeff / n) * x.data * g)

    return _node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# losses (scalar outputs)
# ---------------------------------------------------------------------------

_BCE_EPS = 1e-7


def bce_loss(pred, target, weight=1.0):
    """Mean binary cross-entropy; targets must lie in [0, 1].

    Predictions are clipped to [1e-7, 1 - 1e-7] before the logs; clipped
    entries receive zero gradient.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {pred.data.shape}")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("binary cross-entropy targets must lie in [0, 1]")
    p = np.clip(pred.data, _BCE_EPS, 1.0 - _BCE_EPS)
    inside = (pred.data > _BCE_EPS) & (pred.data < 1.0 - _BCE_EPS)
    n = p.size
    out = np.array(-weight * float(np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))))

    def bwd(g):
        if pred.requires_grad:
            d = (weight / n) * (-t / p + (1.0 - t) / (1.0 - p))
            pred.accumulate(g * d * inside)

    return _node(out, (pred,), bwd)


def mse_loss(pred, target, weight=1.0):
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {pred.data.shape}")
    diff = pred.data - t
    n = max(diff.size, 1)
    out = np.array(weight * float(np.mean(np.square(diff))))

    def bwd(g):
        if pred.requires_grad:
            pred.accumulate(g * (2.0 * weight / n) * diff)

    return _node(out, (pred,), bwd)


def cosine_loss(pred, target, weight=1.0):
    """1 - cosine similarity between 1-D vectors; 0 iff parallel."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {pred.data.shape}")
    np_ = float(np.linalg.norm(pred.data))
    nt = float(np.linalg.norm(t))
    if nt == 0.0:
        raise ValueError("cosine loss target has zero norm")
    if np_ == 0.0:
        raise ValueError("cosine loss prediction has zero norm")
    cos = float(np.dot(pred.data, t)) / (np_ * nt)
    out = np.array(weight * (1.0 - cos))

    def bwd(g):
        if pred.requires_grad:
            d = -(t / (np_ * nt) - cos * pred.data / (np_ * np_))
            pred.accumulate(g * weight * d)

    return _node(out, (pred,), bwd)


_LOSS_FNS = {"bce": bce_loss, "mse": mse_loss, "cosine": cosine_loss}


def loss_eval(kind, pred, target, sample_weight=1.0):
    """Evaluate one of the named losses as a scalar graph node."""
    if kind not in _LOSS_FNS:
        raise ValueError(f"loss kind must be one of {sorted(_LOSS_FNS)}, got '{kind}'")
    return _LOSS_FNS[kind](pred, target, sample_weight)

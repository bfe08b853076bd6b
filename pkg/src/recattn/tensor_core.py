"""Dense fp64 tensor primitives with explicit backward passes.

Each differentiable primitive returns ``(out, backward)`` where ``backward``
may be called at most once with the upstream gradient and returns the
gradients of the inputs in declaration order.  All arrays are float64 and
row-major; primitives never mutate their inputs.
"""

import struct

import numpy as np

from .errors import DimensionError, FormatError, ValidationError

TNSR_MAGIC = b"TNSR1\n"


class Rng:
    """Seeded random generator (PCG64); identical seed gives an identical
    sample sequence on every platform."""

    def __init__(self, seed):
        self.seed = seed
        self._g = np.random.default_rng(seed)

    def uniform(self, lo, hi, shape=None):
        return self._g.uniform(lo, hi, shape)

    def normal(self, scale=1.0, shape=None):
        return self._g.normal(0.0, scale, shape)

    def integers(self, n):
        return int(self._g.integers(0, n))

    def permutation(self, n):
        return self._g.permutation(n)


def _once(fn, name):
    state = {"used": False}

    def backward(grad):
        if state["used"]:
            raise ValidationError(f"backward of {name} already consumed")
        state["used"] = True
        return fn(np.asarray(grad, dtype=np.float64))

    return backward


def _as_f64(x):
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# TNSR binary format: magic, u32 rank, rank x u64 dims, little-endian fp64.
# ---------------------------------------------------------------------------

def tnsr_bytes(arr):
    arr = _as_f64(arr)
    head = TNSR_MAGIC + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype("<f8").tobytes(order="C")


def tnsr_from_bytes(buf, source="<bytes>"):
    if buf[: len(TNSR_MAGIC)] != TNSR_MAGIC:
        raise FormatError(f"{source}: bad TNSR magic")
    off = len(TNSR_MAGIC)
    if len(buf) < off + 4:
        raise FormatError(f"{source}: truncated TNSR header")
    (rank,) = struct.unpack_from("<I", buf, off)
    off += 4
    if len(buf) < off + 8 * rank:
        raise FormatError(f"{source}: truncated TNSR dims")
    shape = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    count = 1
    for d in shape:
        count *= d
    payload = buf[off : off + 8 * count]
    if len(payload) != 8 * count:
        raise FormatError(f"{source}: truncated TNSR payload")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return arr.reshape(shape)


def write_tnsr(path, arr):
    with open(path, "wb") as fh:
        fh.write(tnsr_bytes(arr))


def read_tnsr(path):
    with open(path, "rb") as fh:
        return tnsr_from_bytes(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# Differentiable primitives.
# ---------------------------------------------------------------------------

def affine(x, w, b):
    """out[n,j] = sum_a x[n,a] w[a,j] + b[j]."""
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine: x {x.shape} incompatible with w {w.shape}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"affine: b {b.shape} incompatible with w {w.shape}")
    out = x @ w + b

    def back(g):
        return g @ w.T, x.T @ g, g.sum(axis=0)

    return out, _once(back, "affine")


def conv2d(x, k, b, stride):
    """3x3 cross-correlation with zero padding 1, stride 1 or 2."""
    x, k, b = _as_f64(x), _as_f64(k), _as_f64(b)
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d: need rank-4 x and k, got {x.shape}, {k.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = k.shape
    if (kh, kw) != (3, 3):
        raise DimensionError(f"conv2d: kernels must be 3x3, got {kh}x{kw}")
    if kc != c:
        raise DimensionError(f"conv2d: x channels {c} != kernel channels {kc}")
    if b.shape != (o,):
        raise DimensionError(f"conv2d: bias {b.shape} incompatible with {o} kernels")
    if stride not in (1, 2):
        raise ValidationError(f"conv2d: stride must be 1 or 2, got {stride}")
    if h + 2 < 3 or w + 2 < 3:
        raise DimensionError(f"conv2d: kernel larger than padded {h}x{w} input")
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    xp = np.zeros((n, c, h + 2, w + 2))
    xp[:, :, 1 : h + 1, 1 : w + 1] = x

    out = np.empty((n, o, ho, wo))
    out[:] = b[None, :, None, None]
    slabs = []
    for di in range(3):
        for dj in range(3):
            xs = xp[:, :, di : di + (ho - 1) * stride + 1 : stride,
                    dj : dj + (wo - 1) * stride + 1 : stride]
            slabs.append(xs)
            out += np.einsum("nchw,oc->nohw", xs, k[:, :, di, dj])

    def back(g):
        db = g.sum(axis=(0, 2, 3))
        dk = np.zeros_like(k)
        dxp = np.zeros_like(xp)
        for idx, (di, dj) in enumerate((a, bb) for a in range(3) for bb in range(3)):
            xs = slabs[idx]
            dk[:, :, di, dj] = np.einsum("nohw,nchw->oc", g, xs)
            dxp[:, :, di : di + (ho - 1) * stride + 1 : stride,
                dj : dj + (wo - 1) * stride + 1 : stride] += np.einsum(
                "nohw,oc->nchw", g, k[:, :, di, dj])
        return dxp[:, :, 1 : h + 1, 1 : w + 1], dk, db

    return out, _once(back, "conv2d")


def relu(x):
    x = _as_f64(x)
    out = np.maximum(x, 0.0)

    def back(g):
        return (g * (x > 0.0),)

    return out, _once(back, "relu")


def sigmoid(x):
    x = _as_f64(x)
    out = 1.0 / (1.0 + np.exp(-x))

    def back(g):
        return (g * out * (1.0 - out),)

    return out, _once(back, "sigmoid")


def tanh(x):
    x = _as_f64(x)
    out = np.tanh(x)

    def back(g):
        return (g * (1.0 - out * out),)

    return out, _once(back, "tanh")


def gap(x):
    """Global average pooling over the two trailing spatial axes."""
    x = _as_f64(x)
    if x.ndim != 4:
        raise DimensionError(f"gap: need rank-4 input, got shape {x.shape}")
    n, c, h, w = x.shape
    out = x.mean(axis=(2, 3))

    def back(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return out, _once(back, "gap")


def softmax(x):
    """Row softmax with max-subtraction; rows sum to 1."""
    x = _as_f64(x)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class."""
    probs = _as_f64(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2:
        raise DimensionError(f"cross_entropy: need NxC probs, got {probs.shape}")
    n, c = probs.shape
    if labels.shape != (n,):
        raise ValidationError(f"cross_entropy: {n} rows but {labels.shape} labels")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValidationError(f"cross_entropy: label out of range [0,{c})")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ValidationError("cross_entropy: probability rows must sum to 1")
    picked = probs[np.arange(n), labels]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def softmax_xe(logits, labels):
    """Fused softmax + cross-entropy; backward is (probs - onehot)/N."""
    logits = _as_f64(logits)
    labels = np.asarray(labels, dtype=np.int64)
    probs = softmax(logits)
    loss = cross_entropy(probs, labels)
    n, c = probs.shape

    def back(scale):
        g = probs.copy()
        g[np.arange(n), labels] -= 1.0
        return (g * (float(scale) / n),)

    return loss, probs, _once(back, "softmax_xe")


def grad_check(op, inputs, eps=1e-5, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``op(*inputs)`` must return ``(out, backward)``.  The check projects the
    output onto a fixed random direction and differentiates every element of
    every input.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    out, back = op(*inputs)
    r = np.random.default_rng(seed).standard_normal(np.shape(out))
    analytic = back(r)
    if not isinstance(analytic, tuple):
        analytic = (analytic,)
    worst = 0.0
    for idx, a in enumerate(inputs):
        flat = a.reshape(-1)
        ana = np.asarray(analytic[idx]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            plus = float(np.sum(op(*inputs)[0] * r))
            flat[j] = orig - eps
            minus = float(np.sum(op(*inputs)[0] * r))
            flat[j] = orig
            num = (plus - minus) / (2.0 * eps)
            err = abs(ana[j] - num) / max(abs(ana[j]) + abs(num), 1e-8)
            worst = max(worst, err)
    return worst

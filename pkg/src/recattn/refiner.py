"""Stacked uni-directional LSTM that re-reads the same feature vector.

The refiner feeds one patch feature through T time steps; every step sees the
identical input (computed once) and the top layer's hidden state at each step
is the refined representation handed to attention.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError


@dataclass
class LstmLayerParams:
    """Gate parameters stacked along the last axis in order i, f, g, o."""

    wx: np.ndarray  # (D_in, 4D)
    wh: np.ndarray  # (D, 4D)
    bias: np.ndarray  # (4D,)

    @property
    def hidden(self):
        return self.wh.shape[0]

    @property
    def d_in(self):
        return self.wx.shape[0]


@dataclass
class RefinerParams:
    layers: list
    time_steps: int
    hidden: int = field(default=0)

    def __post_init__(self):
        if not self.hidden:
            self.hidden = self.layers[-1].hidden


def init_layer(rng, d_in, d):
    """Uniform(-1/sqrt(D), 1/sqrt(D)) weights; forget bias +1, others 0."""
    s = 1.0 / np.sqrt(d)
    wx = rng.uniform(-s, s, (d_in, 4 * d))
    wh = rng.uniform(-s, s, (d, 4 * d))
    bias = np.zeros(4 * d)
    bias[d : 2 * d] = 1.0
    return LstmLayerParams(wx=wx, wh=wh, bias=bias)


def init_refiner(rng, d_in, d, n_layers, time_steps):
    if time_steps < 1:
        raise ValidationError(f"refiner: time_steps must be >= 1, got {time_steps}")
    layers = [init_layer(rng, d_in if i == 0 else d, d) for i in range(n_layers)]
    return RefinerParams(layers=layers, time_steps=time_steps, hidden=d)


def lstm_cell(params, x, h, c):
    """One LSTM step; returns (h', c')."""
    h2, c2, _ = lstm_cell_cached(params, x, h, c)
    return h2, c2


def lstm_cell_cached(params, x, h, c):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    d = params.hidden
    if x.shape[1] != params.d_in:
        raise DimensionError(f"lstm_cell: input {x.shape} incompatible with wx {params.wx.shape}")
    if h.shape[1] != d or c.shape[1] != d:
        raise DimensionError(f"lstm_cell: state {h.shape}/{c.shape} incompatible with hidden {d}")
    z = x @ params.wx + h @ params.wh + params.bias
    i = 1.0 / (1.0 + np.exp(-z[:, :d]))
    f = 1.0 / (1.0 + np.exp(-z[:, d : 2 * d]))
    g = np.tanh(z[:, 2 * d : 3 * d])
    o = 1.0 / (1.0 + np.exp(-z[:, 3 * d :]))
    c2 = f * c + i * g
    tc2 = np.tanh(c2)
    h2 = o * tc2
    cache = (x, h, c, i, f, g, o, tc2)
    return h2, c2, cache


def _cell_backward(params, cache, dh, dc):
    """Backward through one cell; returns (dx, dh_prev, dc_prev, dwx, dwh, db)."""
    x, h, c, i, f, g, o, tc2 = cache
    d = params.hidden
    do = dh * tc2
    dc_total = dc + dh * o * (1.0 - tc2 * tc2)
    df = dc_total * c
    dc_prev = dc_total * f
    di = dc_total * g
    dg = dc_total * i
    dz = np.empty((x.shape[0], 4 * d))
    dz[:, :d] = di * i * (1.0 - i)
    dz[:, d : 2 * d] = df * f * (1.0 - f)
    dz[:, 2 * d : 3 * d] = dg * (1.0 - g * g)
    dz[:, 3 * d :] = do * o * (1.0 - o)
    dx = dz @ params.wx.T
    dh_prev = dz @ params.wh.T
    return dx, dh_prev, dc_prev, x.T @ dz, h.T @ dz, dz.sum(axis=0)


def unroll(params, f):
    """Feed f through T steps; element t is the top layer's hidden state."""
    outs, _ = unroll_with_cache(params, f)
    return outs


def unroll_with_cache(params, f, time_steps=None):
    t_total = params.time_steps if time_steps is None else time_steps
    if t_total < 1:
        raise ValidationError(f"unroll: time_steps must be >= 1, got {t_total}")
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    n = f.shape[0]
    h = [np.zeros((n, lay.hidden)) for lay in params.layers]
    c = [np.zeros((n, lay.hidden)) for lay in params.layers]
    caches = []
    outs = []
    for _ in range(t_total):
        x = f
        step_caches = []
        for li, lay in enumerate(params.layers):
            h[li], c[li], cache = lstm_cell_cached(lay, x, h[li], c[li])
            step_caches.append(cache)
            x = h[li]
        caches.append(step_caches)
        outs.append(h[-1].copy())
    return outs, caches


def unroll_backward(params, caches, douts):
    """BPTT; douts[t] is the gradient at the top layer's step-t output.

    Returns (df, grads) with grads a list of (dwx, dwh, dbias) per layer; df
    accumulates over every step's shared-input connection."""
    n_layers = len(params.layers)
    t_total = len(caches)
    n = douts[-1].shape[0] if douts else 1
    dh_next = [np.zeros((n, lay.hidden)) for lay in params.layers]
    dc_next = [np.zeros((n, lay.hidden)) for lay in params.layers]
    grads = [(np.zeros_like(l.wx), np.zeros_like(l.wh), np.zeros_like(l.bias))
             for l in params.layers]
    df = np.zeros((n, params.layers[0].d_in))
    for t in range(t_total - 1, -1, -1):
        dx_up = None
        for li in range(n_layers - 1, -1, -1):
            dh = dh_next[li].copy()
            if li == n_layers - 1:
                dh += douts[t]
            if dx_up is not None:
                dh += dx_up
            dx, dh_prev, dc_prev, dwx, dwh, db = _cell_backward(
                params.layers[li], caches[t][li], dh, dc_next[li])
            dh_next[li] = dh_prev
            dc_next[li] = dc_prev
            gwx, gwh, gb = grads[li]
            gwx += dwx
            gwh += dwh
            gb += db
            dx_up = dx
        df += dx_up
    return df, grads

"""Soft attention over the refiner's per-step outputs, plus the summation
baseline used by the aggregation ablation."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class AttentionParams:
    """One scoring vector per time step, stacked as (T, D).

    With ``shared=True`` a single (1, D) vector scores every step (ablation
    harness variant)."""

    w: np.ndarray
    shared: bool = False

    def vector(self, t):
        return self.w[0] if self.shared else self.w[t]


@dataclass
class AttentionOutput:
    aggregate: np.ndarray  # (D,) or (N, D)
    alphas: np.ndarray  # (T,) or (N, T)


def init_attention(rng, time_steps, d, shared=False):
    rows = 1 if shared else time_steps
    s = 1.0 / np.sqrt(d)
    return AttentionParams(w=rng.uniform(-s, s, (rows, d)), shared=shared)


def _stack(hs):
    arrs = [np.atleast_2d(np.asarray(h, dtype=np.float64)) for h in hs]
    return np.stack(arrs, axis=0)  # (T, N, D)


def attend(params, hs):
    """Weighted aggregation: alphas = softmax_t(w_t . h_t), sum alphas h_t."""
    agg, alphas, _ = attend_with_cache(params, hs)
    if agg.shape[0] == 1:
        return AttentionOutput(aggregate=agg[0], alphas=alphas[0])
    return AttentionOutput(aggregate=agg, alphas=alphas)


def attend_with_cache(params, hs):
    h = _stack(hs)  # (T, N, D)
    t_total, n, d = h.shape
    rows = 1 if params.shared else t_total
    if params.w.shape != (rows, d):
        raise ValidationError(
            f"attend: {t_total} steps of dim {d} incompatible with weights {params.w.shape}")
    wv = np.broadcast_to(params.w, (t_total, d))
    scores = np.einsum("tnd,td->nt", h, wv)
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    alphas = e / e.sum(axis=1, keepdims=True)  # (N, T)
    agg = np.einsum("nt,tnd->nd", alphas, h)

    def back(dagg):
        dagg = np.atleast_2d(np.asarray(dagg, dtype=np.float64))
        dalpha = np.einsum("nd,tnd->nt", dagg, h)
        ds = alphas * (dalpha - (alphas * dalpha).sum(axis=1, keepdims=True))
        dh = alphas.T[:, :, None] * dagg[None, :, :] + ds.T[:, :, None] * wv[:, None, :]
        dw_full = np.einsum("nt,tnd->td", ds, h)
        dw = dw_full.sum(axis=0, keepdims=True) if params.shared else dw_full
        return dw, list(dh)

    return agg, alphas, back


def sum_prefix(hs, k):
    """Unweighted sum of the first k step outputs."""
    t_total = len(hs)
    if not 1 <= k <= t_total:
        raise ValidationError(f"sum_prefix: k must be in [1,{t_total}], got {k}")
    h = _stack(hs)
    out = h[:k].sum(axis=0)
    return out[0] if out.shape[0] == 1 and np.asarray(hs[0]).ndim == 1 else out

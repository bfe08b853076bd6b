"""Two-stream architecture: global image classifier plus the recurrently
refined patch stream, joint cross-entropy loss, and weighted fusion.

Local-stream variants (used by the ablation harness):

* ``attention``  - unroll -> soft attention -> head (full model)
* ``lstm_last``  - unroll -> final step output; trained with cross-entropy
                   on every step's output
* ``cnn_only``   - patch feature vector straight into the head
* ``sum``        - unweighted sum of the first k step outputs
* ``step``       - probe a single step output (per-step accuracy protocol)
* ``global_only``- local stream disabled
"""

from dataclasses import dataclass

import numpy as np

from . import attention as attn
from . import backbone as bb
from . import refiner as rf
from .errors import ConfigError, TrainingError, ValidationError
from .tensor_core import affine, gap, relu, softmax_xe, softmax

LOCAL_MODES = ("attention", "lstm_last", "cnn_only", "sum", "step", "global_only")


@dataclass
class TwoStreamModel:
    global_backbone: bb.BackboneParams
    global_head_w: np.ndarray  # (C_feat, C)
    global_head_b: np.ndarray
    local_backbone: bb.BackboneParams
    refiner: rf.RefinerParams
    attention: attn.AttentionParams
    local_fc1_w: np.ndarray  # (D, D)
    local_fc1_b: np.ndarray
    local_fc2_w: np.ndarray  # (D, C)
    local_fc2_b: np.ndarray

    @property
    def n_classes(self):
        return self.global_head_b.shape[0]

    @property
    def time_steps(self):
        return self.refiner.time_steps


@dataclass
class Prediction:
    global_probs: np.ndarray
    local_probs: np.ndarray
    fused_probs: np.ndarray
    alphas: np.ndarray


def init_model(rng, n_classes, c_in=1, channels=(8, 16, 32), hidden=32,
               lstm_layers=2, time_steps=10, attention_shared=False):
    if channels[-1] != hidden:
        raise ConfigError(
            f"feature channels {channels[-1]} must equal refiner hidden size {hidden}")
    d = hidden
    s_head = np.sqrt(6.0 / d)
    m = TwoStreamModel(
        global_backbone=bb.init_backbone(rng, c_in, channels),
        global_head_w=rng.uniform(-s_head, s_head, (d, n_classes)),
        global_head_b=np.zeros(n_classes),
        local_backbone=bb.init_backbone(rng, c_in, channels),
        refiner=rf.init_refiner(rng, d, d, lstm_layers, time_steps),
        attention=attn.init_attention(rng, time_steps, d, shared=attention_shared),
        local_fc1_w=rng.uniform(-s_head, s_head, (d, d)),
        # Small positive bias keeps the head's relu alive early on: the
        # refiner's outputs start tiny and a dead first layer never recovers.
        local_fc1_b=np.full(d, 0.1),
        local_fc2_w=rng.uniform(-s_head, s_head, (d, n_classes)),
        local_fc2_b=np.zeros(n_classes),
    )
    if m.local_fc2_b.shape != m.global_head_b.shape:
        raise ConfigError("class-count mismatch between global and local heads")
    return m


def named_params(model):
    """All trainable tensors in declared field order (checkpoint order)."""
    out = []
    for stream, p in (("global_backbone", model.global_backbone),
                      ("local_backbone", model.local_backbone)):
        for i, (k, b) in enumerate(zip(p.kernels, p.biases)):
            out.append((f"{stream}.conv{i}.k", k))
            out.append((f"{stream}.conv{i}.b", b))
    out.append(("global_head.w", model.global_head_w))
    out.append(("global_head.b", model.global_head_b))
    for i, lay in enumerate(model.refiner.layers):
        out.append((f"refiner.layer{i}.wx", lay.wx))
        out.append((f"refiner.layer{i}.wh", lay.wh))
        out.append((f"refiner.layer{i}.bias", lay.bias))
    out.append(("attention.w", model.attention.w))
    out.append(("local_head.fc1.w", model.local_fc1_w))
    out.append(("local_head.fc1.b", model.local_fc1_b))
    out.append(("local_head.fc2.w", model.local_fc2_w))
    out.append(("local_head.fc2.b", model.local_fc2_b))
    return out


def _head_forward(model, x):
    a1, back1 = affine(np.atleast_2d(x), model.local_fc1_w, model.local_fc1_b)
    r1, backr = relu(a1)
    logits, back2 = affine(r1, model.local_fc2_w, model.local_fc2_b)

    def back(dlogits):
        dr1, dw2, db2 = back2(dlogits)
        (da1,) = backr(dr1)
        dx, dw1, db1 = back1(da1)
        return dx, {"local_head.fc1.w": dw1, "local_head.fc1.b": db1,
                    "local_head.fc2.w": dw2, "local_head.fc2.b": db2}

    return logits, back


def local_logits(model, patches_arr, mode="attention", step=None, sum_k=None):
    """Local-stream logits (no softmax) for a batch of prepared patches."""
    fmap, _ = bb.forward_map(model.local_backbone, patches_arr)
    f, _ = gap(fmap)
    alphas = None
    if mode == "cnn_only":
        agg = f
    else:
        hs, _ = rf.unroll_with_cache(model.refiner, f)
        if mode == "attention":
            agg, alphas, _ = attn.attend_with_cache(model.attention, hs)
        elif mode == "lstm_last":
            agg = hs[-1]
        elif mode == "sum":
            k = model.time_steps if sum_k is None else sum_k
            agg = attn.sum_prefix(hs, k)
        elif mode == "step":
            if step is None or not 1 <= step <= model.time_steps:
                raise ValidationError(f"step must be in [1,{model.time_steps}], got {step}")
            agg = hs[step - 1]
        else:
            raise ValidationError(f"unknown local mode {mode!r}")
    logits, _ = _head_forward(model, agg)
    return logits, alphas


def forward_batch(model, images, patches_arr, fusion=(1.0, 1.0),
                  local_mode="attention", step=None, sum_k=None):
    """Probability outputs for a batch; returns dict of arrays."""
    wg, wl = float(fusion[0]), float(fusion[1])
    if wg + wl <= 0.0:
        raise ValidationError("fusion weights must have a positive sum")
    gmap, _ = bb.forward_map(model.global_backbone, images)
    gvec, _ = gap(gmap)
    glogits, _ = affine(gvec, model.global_head_w, model.global_head_b)
    gprobs = softmax(glogits)
    n = images.shape[0]
    if local_mode == "global_only":
        lprobs = np.full((n, model.n_classes), 1.0 / model.n_classes)
        alphas = None
    else:
        llogits, alphas = local_logits(model, patches_arr, local_mode, step, sum_k)
        lprobs = softmax(llogits)
    fused = wg * gprobs + wl * lprobs
    fused /= fused.sum(axis=1, keepdims=True)
    return {"global_probs": gprobs, "local_probs": lprobs,
            "fused_probs": fused, "alphas": alphas}


def forward(model, image, patch, fusion=(1.0, 1.0), local_mode="attention",
            step=None, sum_k=None):
    """Single-sample prediction; image and patch are 1xCxHxW."""
    out = forward_batch(model, image, patch, fusion, local_mode, step, sum_k)
    t = model.time_steps
    alphas = out["alphas"][0] if out["alphas"] is not None else np.zeros(t)
    return Prediction(global_probs=out["global_probs"][0],
                      local_probs=out["local_probs"][0],
                      fused_probs=out["fused_probs"][0],
                      alphas=alphas)


def zero_grads(model):
    return {name: np.zeros_like(p) for name, p in named_params(model)}


def loss_and_grads(model, images, patches_arr, labels, lam=1.0,
                   local_mode="attention", sum_k=None):
    """Joint loss mean_n [XE(global) + lam * XE(local)] with full gradients."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= model.n_classes:
        raise ValidationError(f"label out of range [0,{model.n_classes})")
    grads = zero_grads(model)

    # Global stream.
    gmap, gbacks = bb.forward_map(model.global_backbone, images)
    gvec, gap_back = gap(gmap)
    glogits, ghead_back = affine(gvec, model.global_head_w, model.global_head_b)
    gloss, _, gxe_back = softmax_xe(glogits, labels)
    (dglogits,) = gxe_back(1.0)
    dgvec, dghw, dghb = ghead_back(dglogits)
    grads["global_head.w"] += dghw
    grads["global_head.b"] += dghb
    (dgmap,) = gap_back(dgvec)
    _, dgk, dgb = bb.backward_map(gbacks, dgmap)
    for i in range(len(dgk)):
        grads[f"global_backbone.conv{i}.k"] += dgk[i]
        grads[f"global_backbone.conv{i}.b"] += dgb[i]

    if local_mode == "global_only" or lam == 0.0:
        return gloss, grads

    # Local stream forward with caches.
    lmap, lbacks = bb.forward_map(model.local_backbone, patches_arr)
    f, lgap_back = gap(lmap)
    if local_mode == "cnn_only":
        logits, head_back = _head_forward(model, f)
        lloss, _, lxe_back = softmax_xe(logits, labels)
        (dlogits,) = lxe_back(lam)
        df, head_grads = head_back(dlogits)
        for k, v in head_grads.items():
            grads[k] += v
    else:
        hs, caches = rf.unroll_with_cache(model.refiner, f)
        t_total = len(hs)
        if local_mode == "attention":
            agg, _, attn_back = attn.attend_with_cache(model.attention, hs)
            logits, head_back = _head_forward(model, agg)
            lloss, _, lxe_back = softmax_xe(logits, labels)
            (dlogits,) = lxe_back(lam)
            dagg, head_grads = head_back(dlogits)
            for k, v in head_grads.items():
                grads[k] += v
            dw, dhs = attn_back(dagg)
            grads["attention.w"] += dw
        elif local_mode == "lstm_last":
            # Trained with cross-entropy on every step's output (mean over
            # steps); inference uses only the final step.
            losses = []
            dhs = []
            for h_t in hs:
                logits, head_back = _head_forward(model, h_t)
                l_t, _, lxe_back = softmax_xe(logits, labels)
                losses.append(l_t)
                (dlogits,) = lxe_back(lam / t_total)
                dh_t, head_grads = head_back(dlogits)
                for k, v in head_grads.items():
                    grads[k] += v
                dhs.append(dh_t)
            lloss = float(np.mean(losses))
        elif local_mode == "sum":
            k_pref = model.time_steps if sum_k is None else sum_k
            agg = attn.sum_prefix(hs, k_pref)
            logits, head_back = _head_forward(model, agg)
            lloss, _, lxe_back = softmax_xe(logits, labels)
            (dlogits,) = lxe_back(lam)
            dagg, head_grads = head_back(dlogits)
            for k, v in head_grads.items():
                grads[k] += v
            dhs = [dagg if t < k_pref else np.zeros_like(dagg)
                   for t in range(t_total)]
        else:
            raise ValidationError(f"unknown local mode {local_mode!r}")
        df, rgrads = rf.unroll_backward(model.refiner, caches, dhs)
        for i, (dwx, dwh, db) in enumerate(rgrads):
            grads[f"refiner.layer{i}.wx"] += dwx
            grads[f"refiner.layer{i}.wh"] += dwh
            grads[f"refiner.layer{i}.bias"] += db

    (dlmap,) = lgap_back(df)
    _, dlk, dlb = bb.backward_map(lbacks, dlmap)
    for i in range(len(dlk)):
        grads[f"local_backbone.conv{i}.k"] += dlk[i]
        grads[f"local_backbone.conv{i}.b"] += dlb[i]
    return gloss + lam * lloss, grads


def sgd_step(model, grads, lr):
    """In-place p <- p - lr * g over named parameters in declared order."""
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    for name, p in named_params(model):
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")
        p -= lr * g
    return model


def select_patch(rng, patch_list):
    """Uniform random choice driven by the seeded Rng."""
    if not patch_list:
        raise ValidationError("select_patch: empty patch list")
    return patch_list[rng.integers(len(patch_list))]


def eval_step_feature(model, images, patches_arr, labels, t, fusion=(1.0, 1.0)):
    """Fused accuracy when the local head consumes the step-t output directly."""
    if not 1 <= t <= model.time_steps:
        raise ValidationError(f"step must be in [1,{model.time_steps}], got {t}")
    out = forward_batch(model, images, patches_arr, fusion,
                        local_mode="step", step=t)
    pred = out["fused_probs"].argmax(axis=1)
    return float((pred == np.asarray(labels)).mean())

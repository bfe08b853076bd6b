"""Grad-CAM heatmaps over the local backbone's final spatial map, one per
refinement step.

The class score for step t is the local-head logit computed from that step's
output alone (bypassing attention), so each heatmap shows what a single
refinement step attends to.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import backbone as bb
from . import refiner as rf
from .errors import ValidationError
from .model import _head_forward
from .tensor_core import gap


@dataclass
class Heatmap:
    values: np.ndarray  # (h, w) in [0, 1]
    step: int
    class_id: int
    patch_id: str = "0"


def channel_weighted_cam(fmap, weights):
    """relu(sum_c weights_c * map_c), max-normalized; fmap is (C, h, w)."""
    cam = np.maximum(np.einsum("c,chw->hw", weights, fmap), 0.0)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return cam


def grad_cam_step(model, patch, t, class_id, patch_id="0"):
    """Heatmap for the step-t representation's class logit."""
    if not 1 <= t <= model.time_steps:
        raise ValidationError(f"step must be in [1,{model.time_steps}], got {t}")
    if not 0 <= class_id < model.n_classes:
        raise ValidationError(f"class must be in [0,{model.n_classes}), got {class_id}")
    fmap, _ = bb.forward_map(model.local_backbone, patch)
    f, gap_back = gap(fmap)
    hs, caches = rf.unroll_with_cache(model.refiner, f, time_steps=t)
    logits, head_back = _head_forward(model, hs[-1])
    dlogits = np.zeros_like(logits)
    dlogits[0, class_id] = 1.0
    dh_t, _ = head_back(dlogits)
    douts = [np.zeros_like(dh_t) for _ in range(t - 1)] + [dh_t]
    df, _ = rf.unroll_backward(model.refiner, caches, douts)
    (dmap,) = gap_back(df)
    weights = dmap[0].mean(axis=(1, 2))
    return Heatmap(values=channel_weighted_cam(fmap[0], weights),
                   step=t, class_id=class_id, patch_id=patch_id)


def export_heatmap(hm, path):
    """Write an 8-bit grayscale PGM (P5) plus a sibling CSV of raw floats."""
    v = np.asarray(hm.values, dtype=np.float64)
    h, w = v.shape
    data = np.round(255.0 * v).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes(order="C"))
    csv_path = str(path).rsplit(".", 1)[0] + ".csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in v:
            writer.writerow([repr(float(x)) for x in row])


def read_pgm(path):
    """Read back an exported P5 heatmap as floats in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head, _, rest = raw.partition(b"255\n")
    fields = head.split()
    if fields[0] != b"P5":
        raise ValidationError(f"{path}: not a P5 PGM")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(rest[: w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / 255.0

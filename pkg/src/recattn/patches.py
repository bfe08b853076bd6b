"""Patch specification, grid generation, cropping and bilinear resizing.

Patches stand in for an external proposal network: coordinates arrive either
from the synthetic generator or from a patch-list CSV
(`image_id,x_tl,y_tl,x_br,y_br`, integers, no header).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError


@dataclass(frozen=True)
class PatchSpec:
    """Rectangle given by top-left and bottom-right pixel corners, origin at
    the image top-left, x left-to-right, y top-to-bottom."""

    x_tl: int
    y_tl: int
    x_br: int
    y_br: int

    def validate(self, width=None, height=None, context=""):
        where = f" ({context})" if context else ""
        if not (0 <= self.x_tl < self.x_br and 0 <= self.y_tl < self.y_br):
            raise ValidationError(f"degenerate patch {self}{where}")
        if width is not None and self.x_br > width:
            raise ValidationError(f"patch {self} exceeds image width {width}{where}")
        if height is not None and self.y_br > height:
            raise ValidationError(f"patch {self} exceeds image height {height}{where}")

    @property
    def width(self):
        return self.x_br - self.x_tl

    @property
    def height(self):
        return self.y_br - self.y_tl


def grid_patches(width, height, n, scale):
    """n patches of size (scale*W, scale*H) centered on a sqrt(n) x sqrt(n)
    grid, clamped in bounds."""
    if n not in (1, 4, 9):
        raise ValidationError(f"grid_patches: n must be 1, 4 or 9, got {n}")
    if not 0.0 < scale <= 1.0:
        raise ValidationError(f"grid_patches: scale must be in (0,1], got {scale}")
    g = math.isqrt(n)
    pw = max(1, round(scale * width))
    ph = max(1, round(scale * height))
    out = []
    for gy in range(g):
        for gx in range(g):
            cx = (2 * gx + 1) * width / (2 * g)
            cy = (2 * gy + 1) * height / (2 * g)
            x0 = min(max(round(cx - pw / 2), 0), width - pw)
            y0 = min(max(round(cy - ph / 2), 0), height - ph)
            p = PatchSpec(x0, y0, x0 + pw, y0 + ph)
            p.validate(width, height)
            out.append(p)
    return out


def _resize_axis(values, size_in, size_out):
    """Bilinear sample positions with half-pixel centers along one axis."""
    src = (np.arange(size_out) + 0.5) * (size_in / size_out) - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, size_in - 1)
    frac = src - i0
    return i0, i1, frac


def crop_resize(image, p, out_h, out_w):
    """Crop patch p out of image (1xCxHxW) and bilinearly resize.

    Exact copy when the output size equals the crop size."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 4:
        raise ValidationError(f"crop_resize: need 1xCxHxW image, got {image.shape}")
    _, _, h, w = image.shape
    p.validate(w, h)
    crop = image[:, :, p.y_tl : p.y_br, p.x_tl : p.x_br]
    ch, cw = crop.shape[2], crop.shape[3]
    if (ch, cw) == (out_h, out_w):
        return crop.copy()
    y0, y1, fy = _resize_axis(None, ch, out_h)
    x0, x1, fx = _resize_axis(None, cw, out_w)
    rows = crop[:, :, y0, :] * (1.0 - fy)[None, None, :, None] + \
        crop[:, :, y1, :] * fy[None, None, :, None]
    out = rows[:, :, :, x0] * (1.0 - fx)[None, None, None, :] + \
        rows[:, :, :, x1] * fx[None, None, None, :]
    return out


def load_patch_list(path):
    """Parse a patch-list CSV into {image_id: [PatchSpec, ...]}."""
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            image_id = parts[0]
            try:
                coords = [int(v) for v in parts[1:]]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer coordinate") from None
            p = PatchSpec(*coords)
            p.validate(context=f"image_id {image_id}")
            table.setdefault(image_id, []).append(p)
    return table

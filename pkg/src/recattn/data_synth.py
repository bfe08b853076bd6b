"""Deterministic synthetic fine-grained dataset.

Every image shares one large-scale background pattern; classes differ only by
a small class-specific motif stamped at a random in-bounds location, plus
Gaussian noise.  The generator also emits per-image patch proposals (the
stand-in for an external part-proposal tool): a tight crop around the motif
followed by two jittered copies.

Directory layout per split: ``manifest.csv`` (image_id,label,file — no
header), ``patches.csv`` (patch-list format) and ``tensors/<image_id>.tnsr``.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .patches import PatchSpec, load_patch_list
from .tensor_core import Rng, read_tnsr, write_tnsr


@dataclass
class SyntheticSpec:
    classes: int = 8
    per_class_train: int = 100
    per_class_test: int = 40
    channels: int = 1
    height: int = 32
    width: int = 32
    motif_size: int = 5
    noise_std: float = 0.3
    seed: int = 0


@dataclass
class Sample:
    image_id: str
    image: np.ndarray  # (C, H, W)
    label: int
    patches: list = field(default_factory=list)


def _background(spec):
    yy, xx = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    bg = 0.5 + 0.25 * np.sin(2 * np.pi * yy / spec.height) * \
        np.cos(2 * np.pi * xx / spec.width)
    return np.broadcast_to(bg, (spec.channels, spec.height, spec.width)).copy()


def _motifs(spec):
    """Striped texture motifs in fine-grained pairs.

    Classes 2k and 2k+1 share a stripe orientation and differ only in stripe
    period, so coarse whole-image features confuse the pair while a tight
    crop resolves it."""
    ms = spec.motif_size
    yy, xx = np.meshgrid(np.arange(ms), np.arange(ms), indexing="ij")
    n_orient = (spec.classes + 1) // 2
    motifs = []
    for c in range(spec.classes):
        angle = np.pi * (c // 2) / n_orient
        period = 2.0 + (c % 2)
        phase = (yy * np.sin(angle) + xx * np.cos(angle)) * (2 * np.pi / period)
        m = 0.5 + 1.5 * np.sign(np.sin(phase + 0.01))
        motifs.append(np.broadcast_to(m, (spec.channels, ms, ms)).copy())
    return motifs


def _motif_patch(spec, y, x, margin=2):
    """Tight crop around the motif (a proposal-network stand-in)."""
    x0 = max(x - margin, 0)
    y0 = max(y - margin, 0)
    x1 = min(x + spec.motif_size + margin, spec.width)
    y1 = min(y + spec.motif_size + margin, spec.height)
    return PatchSpec(x0, y0, x1, y1)


def generate(spec):
    """Deterministic (train, test) sample lists for the given spec."""
    if spec.classes < 2:
        raise ValidationError(f"need at least 2 classes, got {spec.classes}")
    if spec.motif_size > min(spec.height, spec.width):
        raise ValidationError(
            f"motif {spec.motif_size} does not fit in {spec.height}x{spec.width} image")
    rng = Rng(spec.seed)
    bg = _background(spec)
    motifs = _motifs(spec)

    def make_split(tag, per_class):
        samples = []
        for c in range(spec.classes):
            for i in range(per_class):
                y = rng.integers(spec.height - spec.motif_size + 1)
                x = rng.integers(spec.width - spec.motif_size + 1)
                img = bg.copy()
                img[:, y : y + spec.motif_size, x : x + spec.motif_size] = motifs[c]
                if spec.noise_std > 0:
                    img += rng.normal(spec.noise_std, img.shape)
                # Proposals: one tight motif crop plus two jittered crops,
                # mimicking part proposals that all cover the object part.
                pats = [_motif_patch(spec, y, x)]
                for _ in range(2):
                    jy = min(max(y + rng.integers(7) - 3, 0),
                             spec.height - spec.motif_size)
                    jx = min(max(x + rng.integers(7) - 3, 0),
                             spec.width - spec.motif_size)
                    pats.append(_motif_patch(spec, jy, jx))
                samples.append(Sample(
                    image_id=f"{tag}_c{c}_{i:04d}",
                    image=img,
                    label=c,
                    patches=pats))
        return samples

    return make_split("tr", spec.per_class_train), make_split("te", spec.per_class_test)


def write_dataset(path, samples):
    os.makedirs(os.path.join(path, "tensors"), exist_ok=True)
    with open(os.path.join(path, "manifest.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for s in samples:
            rel = f"tensors/{s.image_id}.tnsr"
            writer.writerow([s.image_id, s.label, rel])
            write_tnsr(os.path.join(path, rel), s.image)
    with open(os.path.join(path, "patches.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for s in samples:
            for p in s.patches:
                writer.writerow([s.image_id, p.x_tl, p.y_tl, p.x_br, p.y_br])


def read_dataset(path):
    manifest = os.path.join(path, "manifest.csv")
    if not os.path.exists(manifest):
        raise FormatError(f"{manifest}: missing manifest")
    patch_file = os.path.join(path, "patches.csv")
    patch_map = load_patch_list(patch_file) if os.path.exists(patch_file) else {}
    samples = []
    with open(manifest, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{manifest}:{lineno}: expected 3 fields, got {len(row)}")
            image_id, label_str, rel = row
            try:
                label = int(label_str)
            except ValueError:
                raise FormatError(f"{manifest}:{lineno}: non-integer label") from None
            image = read_tnsr(os.path.join(path, rel))
            samples.append(Sample(image_id=image_id, image=image, label=label,
                                  patches=patch_map.get(image_id, [])))
    return samples

"""Small trainable CNN producing a spatial feature map and its GAP vector.

Three 3x3 stride-2 conv+relu layers; the final map feeds both Grad-CAM and
(via GAP) the classifier streams.  Global and local streams each own an
independent instance.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor_core import conv2d, gap, relu


@dataclass
class BackboneParams:
    kernels: list  # (C_out, C_in, 3, 3) per layer
    biases: list  # (C_out,) per layer

    @property
    def c_feat(self):
        return self.kernels[-1].shape[0]

    @property
    def c_in(self):
        return self.kernels[0].shape[1]


def init_backbone(rng, c_in, channels):
    kernels, biases = [], []
    prev = c_in
    for c_out in channels:
        # He-style uniform bound; keeps activations O(1) through the stack.
        s = np.sqrt(6.0 / (prev * 9))
        kernels.append(rng.uniform(-s, s, (c_out, prev, 3, 3)))
        biases.append(np.zeros(c_out))
        prev = c_out
    return BackboneParams(kernels=kernels, biases=biases)


def forward_map(params, x):
    """Conv/relu stack with caches for backward; x is (N, C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"backbone: need NxCxHxW input, got {x.shape}")
    if x.shape[2] < 8 or x.shape[3] < 8:
        raise DimensionError(f"backbone: input {x.shape[2]}x{x.shape[3]} below 8x8 minimum")
    backs = []
    h = x
    for k, b in zip(params.kernels, params.biases):
        h, back_c = conv2d(h, k, b, stride=2)
        h, back_r = relu(h)
        backs.append((back_c, back_r))
    return h, backs


def backward_map(backs, g):
    """Returns (dx, dkernels, dbiases) aligned with the layer order."""
    dks = []
    dbs = []
    for back_c, back_r in reversed(backs):
        (g,) = back_r(g)
        g, dk, db = back_c(g)
        dks.append(dk)
        dbs.append(db)
    return g, dks[::-1], dbs[::-1]


def extract_map(params, image):
    """Final spatial feature map (retained for Grad-CAM)."""
    out, _ = forward_map(params, image)
    return out


def extract_vector(params, image):
    """GAP of the final map; the feature fed to the refiner."""
    out, _ = forward_map(params, image)
    vec, _ = gap(out)
    return vec

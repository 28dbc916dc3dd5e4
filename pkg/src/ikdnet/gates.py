"""Knowledge-guided gating: the point stream steers the image stream.

GkgGate compresses a projected point-feature map into a spatial attention map
in (0,1) that rescales the image features before concatenation. CkgGate forms
per-class feature centers from a coarse point-derived segmentation, spreads
them back over pixels, and fuses them into the class logits.
"""

import numpy as np

from .engine import ContractViolation
from .engine import ops
from .nn import BatchNorm, Conv2d


def _check_spatial(op, *maps):
    ref = maps[0].shape[-2:]
    for m in maps[1:]:
        if m.shape[-2:] != ref:
            raise ContractViolation(
                f"{op}: spatial dims differ: {[tuple(m.shape) for m in maps]}"
            )


def gkg_apply(f_global, x_img, x_pc):
    """Rescale every image channel by the attention map, then stack on the
    point channels: output has C_img + C_pc channels."""
    _check_spatial("gkg_apply", f_global, x_img, x_pc)
    return ops.concat([ops.mul(x_img, f_global), x_pc], axis=0)


class GkgGate:
    """Spatial attention from the point stream (channel avg/max -> 7x7 conv
    -> BN -> ReLU -> sigmoid), applied multiplicatively to the image stream."""

    KERNEL = 7

    def __init__(self, store, name):
        self.conv = Conv2d(store, f"{name}.g", 2, 1, self.KERNEL)
        self.bn = BatchNorm(store, f"{name}.bn", 1, axis=0)

    def attention_map(self, x_pc, training):
        avg = ops.reduce_mean(x_pc, axis=0, keepdims=True)
        mx = ops.reduce_max(x_pc, axis=0, keepdims=True)
        squeezed = ops.concat([avg, mx], axis=0)
        return ops.sigmoid(ops.relu(self.bn(self.conv(squeezed), training)))

    def __call__(self, x_img, x_pc, training):
        f_global = self.attention_map(x_pc, training)
        return gkg_apply(f_global, x_img, x_pc), f_global


class CkgGate:
    """Coarse-to-fine head: class centers from the coarse segmentation,
    per-pixel redistribution, 1x1 fusion down to the class logits."""

    def __init__(self, store, name, channels, num_classes, reduction=4, min_reduced=8):
        self.channels = channels
        self.reduced = max(channels // reduction, min(min_reduced, channels))
        self.num_classes = num_classes
        self.reduce = Conv2d(store, f"{name}.reduce", channels, self.reduced, 1)
        self.bn = BatchNorm(store, f"{name}.bn", self.reduced, axis=0)
        self.fuse = Conv2d(store, f"{name}.fuse", channels + self.reduced, num_classes, 1)

    @staticmethod
    def _check_normalized(p_coarse, tol=1e-4):
        sums = p_coarse.data.sum(axis=0)
        if np.abs(sums - 1.0).max() > tol:
            raise ContractViolation(
                f"coarse probabilities not normalized (max |sum-1| = "
                f"{np.abs(sums - 1.0).max():.2e})"
            )

    def class_map(self, p_coarse, x_img, training):
        """Per-class center map (num_classes, reduced); rows sum to 1."""
        _check_spatial("ckg_class_map", p_coarse, x_img)
        self._check_normalized(p_coarse)
        ncls, h, w = p_coarse.shape
        xr = ops.relu(self.bn(self.reduce(x_img), training))
        xr2 = ops.reshape(xr, (self.reduced, h * w))
        pc2 = ops.reshape(p_coarse, (ncls, h * w))
        raw = ops.matmul(pc2, ops.transpose(xr2, (1, 0)))
        return ops.softmax(raw, axis=1)

    @staticmethod
    def attend(p_coarse, f_class):
        """Spread class centers back per pixel, weighted by the coarse
        distribution: every pixel is a convex combination of center rows."""
        ncls, h, w = p_coarse.shape
        if f_class.shape[0] != ncls:
            raise ContractViolation(
                f"ckg_attend: {ncls} coarse classes vs {f_class.shape} class map"
            )
        pc2 = ops.reshape(p_coarse, (ncls, h * w))
        fine = ops.matmul(ops.transpose(pc2, (1, 0)), f_class)  # (HW, reduced)
        return ops.reshape(ops.transpose(fine, (1, 0)), (f_class.shape[1], h, w))

    def fuse_map(self, x_img, f_fine):
        _check_spatial("ckg_fuse", x_img, f_fine)
        return self.fuse(ops.concat([x_img, f_fine], axis=0))

    def __call__(self, p_coarse, x_img, training):
        f_class = self.class_map(p_coarse, x_img, training)
        f_fine = self.attend(p_coarse, f_class)
        return self.fuse_map(x_img, f_fine)

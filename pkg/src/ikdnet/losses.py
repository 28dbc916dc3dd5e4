"""Training objective: two cross-entropy terms plus a pixel-wise KL constraint.

The point-stream distribution acts as a soft target for the image stream: by
default no gradient flows into it through the similarity term. Probabilities
are clamped at 1e-12 before any log.
"""

from dataclasses import dataclass

import numpy as np

from .engine import ContractViolation, Tensor
from .engine import ops

LOG_EPS = 1e-12
ROW_SUM_TOL = 1e-4


@dataclass
class LossBreakdown:
    l_ce_img: float
    l_ce_pc: float
    l_pi_sc: float
    l_total: float


def _one_hot_like(p, labels, class_axis):
    c = p.shape[class_axis]
    labels = np.asarray(labels, dtype=np.int64)
    expected = tuple(s for i, s in enumerate(p.shape) if i != class_axis)
    if labels.shape != expected:
        raise ContractViolation(f"labels shape {labels.shape} vs predictions {p.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractViolation(
            f"invalid label index: range [{labels.min()}, {labels.max()}] with {c} classes"
        )
    class_shape = [1] * len(p.shape)
    class_shape[class_axis] = c
    ids = np.arange(c).reshape(class_shape)
    return (np.expand_dims(labels, class_axis) == ids).astype(p.dtype)


def _check_rows_normalized(p, class_axis):
    sums = p.data.sum(axis=class_axis)
    worst = np.abs(sums - 1.0).max() if sums.size else 0.0
    if worst > ROW_SUM_TOL:
        raise ContractViolation(
            f"predicted distributions not normalized (max |sum-1| = {worst:.2e})"
        )


def cross_entropy_loss(p, labels, class_axis, ignore_mask=None):
    """Mean -log p[true class] over non-ignored elements.

    ``p`` holds probabilities (not logits): (C,H,W) with class_axis=0 for
    maps, (N,C) with class_axis=1 for per-point rows.
    """
    _check_rows_normalized(p, class_axis)
    onehot = _one_hot_like(p, labels, class_axis)
    if ignore_mask is not None:
        keep = ~np.asarray(ignore_mask, dtype=bool)
        onehot = onehot * np.expand_dims(keep, class_axis).astype(p.dtype)
        count = int(keep.sum())
    else:
        count = int(np.prod([s for i, s in enumerate(p.shape) if i != class_axis]))
    if count == 0:
        raise ContractViolation("cross_entropy_loss: no elements left to average")
    picked = ops.mul(ops.log(ops.clamp_min(p, LOG_EPS)), Tensor(onehot, dtype=p.dtype))
    return ops.scale(ops.reduce_sum(picked), -1.0 / count)


def pixel_similarity_loss(p_img, p_pc, hole_mask=None, detach_target=True):
    """Mean over valid pixels of sum_c p_img * log(p_img / p_pc).

    ``p_pc`` is treated as a constant target unless ``detach_target`` is
    False (ablation mode); hole pixels are excluded from the mean.
    """
    if p_img.shape != p_pc.shape:
        raise ContractViolation(
            f"pixel_similarity_loss: shapes {p_img.shape} vs {p_pc.shape}"
        )
    target = p_pc.detach() if detach_target else p_pc
    log_ratio = ops.sub(
        ops.log(ops.clamp_min(p_img, LOG_EPS)),
        ops.log(ops.clamp_min(target, LOG_EPS)),
    )
    per_elem = ops.mul(p_img, log_ratio)
    if hole_mask is not None:
        valid = ~np.asarray(hole_mask, dtype=bool)
        count = int(valid.sum())
        if count == 0:
            raise ContractViolation("pixel_similarity_loss: every pixel is masked")
        per_elem = ops.mul(
            per_elem, Tensor(valid[None, :, :].astype(p_img.data.dtype), dtype=p_img.dtype)
        )
    else:
        count = int(np.prod(p_img.shape[1:]))
    return ops.scale(ops.reduce_sum(per_elem), 1.0 / count)


def holistic_loss(p_img, y_img, p_pc_points, y_points, p_pc_projected, hole_mask,
                  use_pc_ce=True, use_similarity=True, detach_target=True):
    """Unweighted sum of the enabled terms.

    Returns (LossBreakdown, total Tensor); disabled terms report 0 and do not
    enter the sum, which makes the single-loss ablation configurations exact.
    """
    total = cross_entropy_loss(p_img, y_img, class_axis=0)
    l_img = total.item()
    l_pc = 0.0
    l_sim = 0.0
    if use_pc_ce:
        ce_pc = cross_entropy_loss(p_pc_points, y_points, class_axis=1)
        l_pc = ce_pc.item()
        total = ops.add(total, ce_pc)
    if use_similarity:
        sim = pixel_similarity_loss(
            p_img, p_pc_projected, hole_mask, detach_target=detach_target
        )
        l_sim = sim.item()
        total = ops.add(total, sim)
    return LossBreakdown(l_ce_img=l_img, l_ce_pc=l_pc, l_pi_sc=l_sim,
                         l_total=total.item()), total

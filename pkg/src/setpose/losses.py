"""Training losses: the composite Hungarian loss and its components.

All functions accept plain float64 arrays or traced ``autodiff.Tensor``
inputs on the prediction side; ground-truth inputs are plain arrays.  With
traced inputs the returned scalars carry the computation graph, so
``backward()`` on the total produces gradients for every prediction.

Box layout is ``[cx, cy, w, h]`` normalized to the image size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, DegenerateBox
from .geometry import rot6d_to_matrix

if TYPE_CHECKING:  # pragma: no cover - annotations only
    from .matching import Assignment, TargetSet

MIN_BOX_SIDE = 1e-6
POSE_MODES = ("disentangled", "point_matching", "ploss")


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the Hungarian loss terms."""

    box_giou_weight: float = 2.0
    box_l1_weight: float = 5.0
    pose_weight: float = 0.05
    eos_weight: float = 0.4

    def __post_init__(self):
        for name in ("box_giou_weight", "box_l1_weight", "pose_weight", "eos_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class LossBreakdown:
    """Total loss and its three components.

    ``total = class_term + box_term + pose_weight * pose_term``; the total
    keeps the computation graph when predictions were traced, the component
    fields are detached scalars for logging.
    """

    total: object
    class_term: float
    box_term: float
    pose_term: float


def _check_boxes(b):
    d = ad.asdata(b)
    if d.shape[-1] != 4:
        raise DegenerateBox(f"boxes must have last dimension 4, got {d.shape}")
    if np.any(d[..., 2:] <= 0.0):
        raise DegenerateBox("box with non-positive width or height")


def _corners(b):
    cx, cy = ad.index_last(b, 0), ad.index_last(b, 1)
    w = ad.maximum(ad.index_last(b, 2), MIN_BOX_SIDE)
    h = ad.maximum(ad.index_last(b, 3), MIN_BOX_SIDE)
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5, w * h


def giou_loss(box_a, box_b):
    """Generalized-IoU loss ``1 - GIoU``, in [0, 2].

    Inputs are (..., 4) center-size boxes and broadcast against each other;
    the result drops the last axis.  Zero iff the boxes coincide.
    """
    _check_boxes(box_a)
    _check_boxes(box_b)
    ax1, ay1, ax2, ay2, area_a = _corners(box_a)
    bx1, by1, bx2, by2, area_b = _corners(box_b)
    iw = ad.maximum(ad.minimum(ax2, bx2) - ad.maximum(ax1, bx1), 0.0)
    ih = ad.maximum(ad.minimum(ay2, by2) - ad.maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = area_a + area_b - inter
    iou = inter / union
    enclose = (ad.maximum(ax2, bx2) - ad.minimum(ax1, bx1)) * \
              (ad.maximum(ay2, by2) - ad.minimum(ay1, by1))
    giou = iou - (enclose - union) / enclose
    return 1.0 - giou


def box_l1(box_a, box_b):
    return ad.sum(ad.absolute(box_a - box_b), axis=-1)


def box_loss(box_a, box_b, weights: LossWeights):
    """Weighted GIoU + L1 box loss."""
    return weights.box_giou_weight * giou_loss(box_a, box_b) + \
        weights.box_l1_weight * box_l1(box_a, box_b)


def rotation_loss(rotation_gt, rotation_pred, points):
    """Symmetry-aware point-based rotation loss.

    Asymmetric objects: mean over model points of |R x - R_hat x|.
    Symmetric objects: for each ground-truth-rotated point, the distance to
    the closest predicted-rotated point (exact O(m^2) pairing).
    """
    pts = points.points
    m = len(pts)
    a = pts @ np.asarray(rotation_gt, dtype=np.float64).T
    rt = rotation_pred.transpose((1, 0)) if ad.is_tensor(rotation_pred) \
        else np.asarray(rotation_pred, dtype=np.float64).T
    b = pts @ rt
    if points.symmetric:
        diff = b.reshape(1, m, 3) - a.reshape(m, 1, 3)
        d = ad.l2norm(diff, axis=-1)
        return ad.sum(ad.amin(d, axis=1)) * (1.0 / m)
    return ad.sum(ad.l2norm(b - a, axis=-1)) * (1.0 / m)


def pose_loss(rotation_gt, translation_gt, rotation_pred, translation_pred, points):
    """Disentangled pose loss: point-based rotation term plus L2 translation."""
    t_err = ad.l2norm(translation_pred - np.asarray(translation_gt, dtype=np.float64))
    return rotation_loss(rotation_gt, rotation_pred, points) + t_err


def point_matching_loss(rotation_gt, translation_gt, rotation_pred,
                        translation_pred, points, mode="full"):
    """Coupled point-matching pose loss over fully transformed clouds.

    ``mode='full'`` takes closest-point minima for symmetric objects and
    paired distances otherwise; ``mode='ploss_only'`` always pairs points,
    skipping the expensive symmetric branch.
    """
    if mode not in ("full", "ploss_only"):
        raise ConfigError(f"unknown point-matching mode {mode!r}")
    pts = points.points
    m = len(pts)
    a = pts @ np.asarray(rotation_gt, dtype=np.float64).T + \
        np.asarray(translation_gt, dtype=np.float64)
    rt = rotation_pred.transpose((1, 0)) if ad.is_tensor(rotation_pred) \
        else np.asarray(rotation_pred, dtype=np.float64).T
    b = (pts @ rt) + translation_pred
    if mode == "full" and points.symmetric:
        diff = b.reshape(1, m, 3) - a.reshape(m, 1, 3)
        d = ad.l2norm(diff, axis=-1)
        return ad.sum(ad.amin(d, axis=1)) * (1.0 / m)
    return ad.sum(ad.l2norm(b - a, axis=-1)) * (1.0 / m)


def class_loss(preds, targets: "TargetSet", assignment: "Assignment", eos_weight):
    """Mean weighted negative log-likelihood over all N prediction slots.

    Matched slots are supervised with their ground-truth class; unmatched
    slots with the no-object class, down-weighted by ``eos_weight``.  The
    sum is divided by N.
    """
    logits = preds.logits
    n_slots, n_logits = ad.asdata(logits).shape
    eos_index = n_logits - 1
    target_class = np.full(n_slots, eos_index, dtype=np.intp)
    slot_weight = np.full(n_slots, float(eos_weight))
    for i, j in assignment.pairs:
        target_class[j] = targets.objects[i].class_id
        slot_weight[j] = 1.0
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[(np.arange(n_slots), target_class)]
    return -ad.sum(picked * slot_weight) * (1.0 / n_slots)


def hungarian_loss(preds, targets: "TargetSet", assignment: "Assignment",
                   weights: LossWeights, points_lookup, pose_mode="disentangled"):
    """Composite set loss over the matched pairs of one image.

    Class NLL is normalized by the slot count N; the box and pose sums are
    averaged over the n matched objects.  ``points_lookup`` maps class id to
    ModelPoints.  ``pose_mode`` selects the pose term: 'disentangled'
    (default), 'point_matching', or 'ploss'.
    """
    if pose_mode not in POSE_MODES:
        raise ConfigError(f"unknown pose mode {pose_mode!r}; expected one of {POSE_MODES}")
    n = len(targets.objects)
    class_term = class_loss(preds, targets, assignment, weights.eos_weight)
    if n == 0:
        total = class_term
        return LossBreakdown(total=total, class_term=float(class_term),
                             box_term=0.0, pose_term=0.0)

    box_acc = None
    pose_acc = None
    for i, j in assignment.pairs:
        obj = targets.objects[i]
        bl = box_loss(obj.bbox, preds.boxes[j], weights)
        box_acc = bl if box_acc is None else box_acc + bl
        points = points_lookup[obj.class_id]
        rot_pred = rot6d_to_matrix(preds.rot6d[j])
        trans_pred = preds.translations[j]
        if pose_mode == "disentangled":
            pl = pose_loss(obj.pose.rotation, obj.pose.translation,
                           rot_pred, trans_pred, points)
        elif pose_mode == "point_matching":
            pl = point_matching_loss(obj.pose.rotation, obj.pose.translation,
                                     rot_pred, trans_pred, points, mode="full")
        else:
            pl = point_matching_loss(obj.pose.rotation, obj.pose.translation,
                                     rot_pred, trans_pred, points, mode="ploss_only")
        pose_acc = pl if pose_acc is None else pose_acc + pl

    box_term = box_acc * (1.0 / n)
    pose_term = pose_acc * (1.0 / n)
    total = class_term + box_term + weights.pose_weight * pose_term
    return LossBreakdown(total=total, class_term=float(class_term),
                         box_term=float(box_term), pose_term=float(pose_term))

"""Matching costs between ground-truth objects and prediction slots, and
the optimal bipartite assignment over them.

The matching cost is detached from any gradient tape: assignments are
recomputed per image on plain arrays and the losses are then evaluated on
the matched pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import CardinalityError, ConfigError, DegenerateInput
from .geometry import Pose, rot6d_to_matrix
from .losses import giou_loss

MATCH_VARIANTS = ("object_only", "with_pose")


def check_gt_bbox(bbox):
    """Validate a ground-truth box: center in [0,1], sides in (0,1]."""
    b = np.asarray(bbox, dtype=np.float64).reshape(4)
    cx, cy, w, h = b
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise DegenerateInput(f"ground-truth box center ({cx}, {cy}) outside [0, 1]")
    if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
        raise DegenerateInput(f"ground-truth box sides ({w}, {h}) outside (0, 1]")
    return b


@dataclass(frozen=True)
class GroundTruthObject:
    """One annotated object: class, normalized box, 6D pose."""

    class_id: int
    bbox: np.ndarray
    pose: Pose
    model_points_ref: int = None

    def __post_init__(self):
        if self.class_id < 0:
            raise DegenerateInput("class_id must be a real class, not the no-object slot")
        object.__setattr__(self, "bbox", check_gt_bbox(self.bbox))
        if self.model_points_ref is None:
            object.__setattr__(self, "model_points_ref", self.class_id)


@dataclass
class TargetSet:
    """Ground-truth objects of one image (n of them, n <= N)."""

    objects: list

    def __len__(self):
        return len(self.objects)

    def class_ids(self):
        return np.array([o.class_id for o in self.objects], dtype=np.intp)

    def bboxes(self):
        if not self.objects:
            return np.zeros((0, 4))
        return np.stack([o.bbox for o in self.objects])


@dataclass(frozen=True)
class PredictionTuple:
    """One decoder slot: class logits, box, raw rot6d, translation."""

    class_logits: np.ndarray
    bbox: np.ndarray
    rot6d: np.ndarray
    translation: np.ndarray


@dataclass
class PredictionSet:
    """Fixed-cardinality set of N prediction tuples, stored columnwise."""

    logits: np.ndarray        # (N, C+1)
    boxes: np.ndarray         # (N, 4)
    rot6d: np.ndarray         # (N, 6)
    translations: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64)
        n = len(self.logits)
        shapes = (self.boxes.shape, self.rot6d.shape, self.translations.shape)
        if shapes != ((n, 4), (n, 6), (n, 3)):
            raise CardinalityError(f"inconsistent prediction set shapes: {shapes}")

    def __len__(self):
        return len(self.logits)

    def probs(self):
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def __getitem__(self, i) -> PredictionTuple:
        return PredictionTuple(self.logits[i], self.boxes[i],
                               self.rot6d[i], self.translations[i])


@dataclass(frozen=True)
class Assignment:
    """Injective map from ground-truth indices to prediction slots.

    ``pairs`` holds (gt_index, pred_index) sorted by gt index and covers
    exactly the gt indices 0..n-1 with distinct prediction slots.
    """

    pairs: tuple

    def __post_init__(self):
        pairs = tuple(sorted((int(i), int(j)) for i, j in self.pairs))
        gts = [i for i, _ in pairs]
        preds = [j for _, j in pairs]
        if gts != list(range(len(pairs))):
            raise CardinalityError(f"gt indices must be exactly 0..n-1, got {gts}")
        if len(set(preds)) != len(preds):
            raise CardinalityError(f"prediction indices must be distinct, got {preds}")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_arrays(cls, gt_indices, pred_indices):
        return cls(tuple(zip(np.asarray(gt_indices).tolist(),
                             np.asarray(pred_indices).tolist())))

    def __len__(self):
        return len(self.pairs)

    def pred_indices(self):
        return np.array([j for _, j in self.pairs], dtype=np.intp)

    def total_cost(self, cost):
        cost = np.asarray(cost, dtype=np.float64)
        if not self.pairs:
            return 0.0
        rows = np.array([i for i, _ in self.pairs])
        return float(cost[rows, self.pred_indices()].sum())


@dataclass(frozen=True)
class MatchCostConfig:
    """Matching-cost variant and box-term weights (shared with the loss)."""

    variant: str = "object_only"
    box_l1_weight: float = 5.0
    box_giou_weight: float = 2.0

    def __post_init__(self):
        if self.variant not in MATCH_VARIANTS:
            raise ConfigError(f"unknown matching variant {self.variant!r}; "
                              f"expected one of {MATCH_VARIANTS}")
        if self.box_l1_weight < 0 or self.box_giou_weight < 0:
            raise ConfigError("matching box weights must be >= 0")


def geodesic_angle(rot_a, rot_b):
    """Angular distance in radians between rotations, batched over leading dims."""
    a = np.asarray(rot_a, dtype=np.float64)
    b = np.asarray(rot_b, dtype=np.float64)
    tr = np.einsum("...ij,...ij->...", a, b)  # trace(a^T b)
    return np.arccos(np.clip((tr - 1.0) * 0.5, -1.0, 1.0))


def pairwise_match_cost(gt: GroundTruthObject, pred: PredictionTuple,
                        cfg: MatchCostConfig, points=None):
    """Matching cost of one (ground truth, prediction) pair.

    ``object_only``: -p_hat(class) plus the weighted GIoU + L1 box term.
    ``with_pose``: additionally the geodesic rotation angle (radians) and
    the L2 translation distance.  ``points`` is accepted for interface
    symmetry with the loss side; the pose cost terms do not use it.
    """
    z = pred.class_logits - pred.class_logits.max()
    e = np.exp(z)
    prob = e[gt.class_id] / e.sum()
    cost = -prob \
        + cfg.box_giou_weight * float(giou_loss(gt.bbox, pred.bbox)) \
        + cfg.box_l1_weight * float(np.abs(gt.bbox - pred.bbox).sum())
    if cfg.variant == "with_pose":
        rot_pred = rot6d_to_matrix(pred.rot6d)
        cost += float(geodesic_angle(gt.pose.rotation, rot_pred))
        cost += float(np.linalg.norm(gt.pose.translation - pred.translation))
    return float(cost)


def build_cost_matrix(targets: TargetSet, preds: PredictionSet,
                      cfg: MatchCostConfig, points_lookup=None):
    """The n x N matrix of pairwise matching costs (vectorized).

    Entry (i, j) equals ``pairwise_match_cost(targets[i], preds[j], cfg)``.
    """
    n, n_slots = len(targets), len(preds)
    if n > n_slots:
        raise CardinalityError(f"{n} ground-truth objects exceed {n_slots} prediction slots")
    if n == 0:
        return np.zeros((0, n_slots))
    probs = preds.probs()
    cls_cost = -probs[:, targets.class_ids()].T            # (n, N)
    gt_boxes = targets.bboxes()
    giou = giou_loss(gt_boxes[:, None, :], preds.boxes[None, :, :])
    l1 = np.abs(gt_boxes[:, None, :] - preds.boxes[None, :, :]).sum(-1)
    cost = cls_cost + cfg.box_giou_weight * giou + cfg.box_l1_weight * l1
    if cfg.variant == "with_pose":
        rot_pred = rot6d_to_matrix(preds.rot6d)            # (N, 3, 3)
        rot_gt = np.stack([o.pose.rotation for o in targets.objects])
        ang = geodesic_angle(rot_gt[:, None], rot_pred[None, :])
        t_gt = np.stack([o.pose.translation for o in targets.objects])
        t_dist = np.linalg.norm(t_gt[:, None, :] - preds.translations[None, :, :], axis=-1)
        cost = cost + ang + t_dist
    if not np.all(np.isfinite(cost)):
        raise DegenerateInput("matching cost matrix has non-finite entries")
    return cost


def hungarian_assign(cost) -> Assignment:
    """Minimum-cost injective assignment of rows (gt) to columns (slots)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise CardinalityError(f"cost matrix must be 2D, got shape {cost.shape}")
    n, n_slots = cost.shape
    if n > n_slots:
        raise CardinalityError(f"{n} ground-truth objects exceed {n_slots} prediction slots")
    if not np.all(np.isfinite(cost)):
        raise DegenerateInput("cost matrix entries must be finite")
    rows, cols = linear_sum_assignment(cost)
    return Assignment.from_arrays(rows, cols)

"""Pose evaluation: ADD / ADD-S distances, accuracy-threshold curves with
exact AUC, the 0.1-diameter accuracy criterion, and per-class aggregation.

Distances are in meters.  The accuracy at a threshold tau counts distances
strictly below tau; the AUC integrates the resulting step function exactly
over (0, max_threshold] and normalizes by the maximum threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import DegenerateInput, EmptyInput
from .geometry import ModelPoints, Pose, rot6d_to_matrix, transform_points

DEFAULT_MAX_THRESHOLD = 0.1


def add_distance(gt: Pose, pred: Pose, points: ModelPoints):
    """Average distance of model points under the two poses.

    :param gt: ground-truth pose.
    :param pred: estimated pose.
    :param points: 3D model points in the object frame.
    :return: mean over points of |(R x + t) - (R_hat x + t_hat)|, meters.
    """
    a = transform_points(points, gt)
    b = transform_points(points, pred)
    return float(np.linalg.norm(a - b, axis=1).mean())


def adds_distance(gt: Pose, pred: Pose, points: ModelPoints):
    """Average closest-point distance, for objects with symmetries.

    :param gt: ground-truth pose.
    :param pred: estimated pose.
    :param points: 3D model points in the object frame.
    :return: mean over ground-truth-transformed points of the distance to
        the nearest estimated-transformed point, meters.  Never exceeds
        ``add_distance`` on the same inputs.
    """
    a = transform_points(points, gt)
    b = transform_points(points, pred)
    return float(cdist(a, b).min(axis=1).mean())


@dataclass(frozen=True)
class MetricCurve:
    """Accuracy-threshold curve sampled at every distinct distance."""

    thresholds: np.ndarray
    accuracies: np.ndarray
    auc: float


def accuracy_auc(distances, max_threshold=DEFAULT_MAX_THRESHOLD) -> MetricCurve:
    """Exact accuracy-threshold curve and its normalized area.

    accuracy(tau) is the fraction of distances strictly below tau; each
    distance d contributes max(0, max_threshold - d) to the un-normalized
    area, which is the exact integral of the step function.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyInput("accuracy_auc needs at least one distance")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise DegenerateInput("distances must be finite and >= 0")
    auc = float(np.clip(1.0 - d / max_threshold, 0.0, 1.0).mean())
    ds = np.sort(d)
    taus = np.unique(np.concatenate([[0.0], ds[ds <= max_threshold], [max_threshold]]))
    acc = np.searchsorted(ds, taus, side="left") / d.size
    return MetricCurve(thresholds=taus, accuracies=acc, auc=auc)


@dataclass(frozen=True)
class EvalRecord:
    """One evaluated ground-truth object."""

    image_id: int
    class_id: int
    distance_add: float
    distance_adds: float
    diameter: float
    symmetric: bool

    def __post_init__(self):
        if self.distance_add < 0 or self.distance_adds < 0:
            raise DegenerateInput("distances must be >= 0")
        if self.diameter <= 0:
            raise DegenerateInput("diameter must be > 0")

    def sym_aware_distance(self):
        """ADD-S for symmetric classes, ADD otherwise (the ADD(-S) rule)."""
        return self.distance_adds if self.symmetric else self.distance_add


def add_01d_accuracy(records, use_adds_for_symmetric=True):
    """Fraction of records whose distance is below 10% of the object diameter."""
    records = list(records)
    if not records:
        raise EmptyInput("add_01d_accuracy needs at least one record")
    hits = 0
    for r in records:
        dist = r.sym_aware_distance() if use_adds_for_symmetric else r.distance_add
        hits += dist < 0.1 * r.diameter
    return hits / len(records)


@dataclass(frozen=True)
class ClassMetrics:
    class_id: int
    name: str
    auc_add_s: float
    auc_add_sym_aware: float
    add01d: float
    n_records: int


@dataclass(frozen=True)
class MetricsTable:
    """Per-class rows plus the uniform mean over classes."""

    rows: tuple
    mean_auc_add_s: float
    mean_auc_add_sym_aware: float
    mean_add01d: float
    n_records: int


def aggregate(records, names=None, max_threshold=DEFAULT_MAX_THRESHOLD) -> MetricsTable:
    """Per-class and mean AUC / 0.1d tables over evaluation records.

    ``names`` optionally maps class ids to display names.  The mean row
    averages the per-class values uniformly.
    """
    records = list(records)
    if not records:
        raise EmptyInput("aggregate needs at least one record")
    names = names or {}
    by_class = {}
    for r in records:
        by_class.setdefault(r.class_id, []).append(r)
    rows = []
    for class_id in sorted(by_class):
        rs = by_class[class_id]
        adds = [r.distance_adds for r in rs]
        aware = [r.sym_aware_distance() for r in rs]
        rows.append(ClassMetrics(
            class_id=class_id,
            name=names.get(class_id, f"class_{class_id}"),
            auc_add_s=accuracy_auc(adds, max_threshold).auc,
            auc_add_sym_aware=accuracy_auc(aware, max_threshold).auc,
            add01d=add_01d_accuracy(rs),
            n_records=len(rs)))
    return MetricsTable(
        rows=tuple(rows),
        mean_auc_add_s=float(np.mean([r.auc_add_s for r in rows])),
        mean_auc_add_sym_aware=float(np.mean([r.auc_add_sym_aware for r in rows])),
        mean_add01d=float(np.mean([r.add01d for r in rows])),
        n_records=len(records))


# ---- evaluation-time pairing of predictions to ground truth -------------------

def pair_predictions(targets, preds):
    """Greedy confidence pairing of prediction slots to ground-truth objects.

    For a ground-truth object of class c every slot is a candidate scored
    by its probability of c; candidates are consumed globally in order of
    decreasing score (ties by gt then slot index), each slot at most once.
    Returns one slot index per object, or None when no slot is left.
    """
    probs = preds.probs()
    candidates = []
    for i, obj in enumerate(targets.objects):
        for j in range(len(probs)):
            candidates.append((-probs[j, obj.class_id], i, j))
    candidates.sort()
    paired = [None] * len(targets.objects)
    used = set()
    for _, i, j in candidates:
        if paired[i] is None and j not in used:
            paired[i] = j
            used.add(j)
    return paired


def records_for_image(image_id, targets, preds, points_by_class,
                      max_threshold=DEFAULT_MAX_THRESHOLD):
    """EvalRecords for one image; unmatched objects get the clamped distance.

    A ground-truth object with no usable prediction of its class receives
    distance max_threshold (the +inf clamp for integration).
    """
    paired = pair_predictions(targets, preds)
    records = []
    for i, obj in enumerate(targets.objects):
        points = points_by_class[obj.class_id]
        j = paired[i]
        if j is None:
            d_add = d_adds = max_threshold
        else:
            try:
                pose_hat = Pose(rot6d_to_matrix(preds.rot6d[j]), preds.translations[j])
            except DegenerateInput:
                d_add = d_adds = max_threshold
            else:
                d_add = add_distance(obj.pose, pose_hat, points)
                d_adds = adds_distance(obj.pose, pose_hat, points)
        records.append(EvalRecord(image_id=image_id, class_id=obj.class_id,
                                  distance_add=d_add, distance_adds=d_adds,
                                  diameter=points.diameter,
                                  symmetric=points.symmetric))
    return records


# ---- CSV export ----------------------------------------------------------------

def write_metrics_csv(table: MetricsTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "auc_add_s", "auc_add_sym_aware", "add01d", "n_records"])
        for r in table.rows:
            w.writerow([r.name, repr(r.auc_add_s), repr(r.auc_add_sym_aware),
                        repr(r.add01d), r.n_records])
        w.writerow(["mean", repr(table.mean_auc_add_s),
                    repr(table.mean_auc_add_sym_aware),
                    repr(table.mean_add01d), table.n_records])


def write_curve_csv(curve: MetricCurve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "accuracy"])
        for t, a in zip(curve.thresholds, curve.accuracies):
            w.writerow([repr(float(t)), repr(float(a))])

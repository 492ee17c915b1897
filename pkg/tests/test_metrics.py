import csv

import numpy as np
import pytest

from setpose import (DegenerateInput, EmptyInput, EvalRecord, GroundTruthObject,
                     ModelPoints, Pose, PredictionSet, TargetSet, accuracy_auc,
                     add_01d_accuracy, add_distance, adds_distance, aggregate,
                     compose, matrix_to_rot6d, pair_predictions, random_rotation,
                     records_for_image, write_curve_csv, write_metrics_csv)
from conftest import random_gt_box

ROT_Z_90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
UNIT_CUBE = np.array([[x, y, z] for x in (-.5, .5) for y in (-.5, .5)
                      for z in (-.5, .5)])


def make_record(image_id=0, class_id=0, add=0.0, adds=0.0, diameter=0.2,
                symmetric=False):
    return EvalRecord(image_id=image_id, class_id=class_id, distance_add=add,
                      distance_adds=adds, diameter=diameter, symmetric=symmetric)


def random_pose(rng):
    t = rng.uniform(-0.3, 0.3, size=3)
    t[2] = rng.uniform(0.5, 1.5)
    return Pose(random_rotation(rng), t)


class TestDistances:
    def test_identical_poses(self, rng):
        pose = random_pose(rng)
        points = ModelPoints(rng.normal(size=(10, 3)))
        assert add_distance(pose, pose, points) == 0.0
        assert adds_distance(pose, pose, points) == 0.0

    def test_pure_translation_equals_offset_norm(self, rng):
        pose = random_pose(rng)
        delta = np.array([0.03, -0.01, 0.02])
        shifted = Pose(pose.rotation, pose.translation + delta)
        points = ModelPoints(rng.normal(size=(20, 3)))
        assert abs(add_distance(pose, shifted, points) - np.linalg.norm(delta)) < 1e-12

    def test_cube_quarter_turn_enumeration(self):
        t = np.array([0.0, 0.0, 1.0])
        gt = Pose(np.eye(3), t)
        pred = Pose(ROT_Z_90, t)
        expected = np.mean([np.linalg.norm(x - ROT_Z_90 @ x) for x in UNIT_CUBE])
        assert abs(add_distance(gt, pred, ModelPoints(UNIT_CUBE)) - expected) < 1e-12

    def test_adds_never_exceeds_add(self, rng):
        for _ in range(300):
            points = ModelPoints(rng.normal(scale=0.1, size=(12, 3)))
            a, b = random_pose(rng), random_pose(rng)
            assert adds_distance(a, b, points) <= add_distance(a, b, points) + 1e-12

    def test_symmetric_ring(self, rng):
        # 16-point ring: a half-turn about z maps the ring onto itself, so
        # the closest-point distance vanishes while ADD stays at the full
        # chord length (2 * radius)
        radius = 0.11
        angles = 2 * np.pi * np.arange(16) / 16
        ring = np.stack([radius * np.cos(angles), radius * np.sin(angles),
                         np.zeros(16)], axis=1)
        points = ModelPoints(ring, symmetric=True)
        half_turn = np.diag([-1.0, -1.0, 1.0])
        t = np.array([0.0, 0.0, 1.0])
        gt, pred = Pose(np.eye(3), t), Pose(half_turn, t)
        assert adds_distance(gt, pred, points) < 1e-9
        assert add_distance(gt, pred, points) > 0.1
        assert abs(add_distance(gt, pred, points) - 2 * radius) < 1e-12

    def test_add_invariant_under_common_rigid_transform(self, rng):
        # applying one rigid transform to both transformed clouds is an
        # isometry, so the mean pairwise distance cannot change
        points = ModelPoints(rng.normal(scale=0.1, size=(15, 3)))
        a, b = random_pose(rng), random_pose(rng)
        extra = Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
        base = add_distance(a, b, points)
        moved = add_distance(compose(extra, a), compose(extra, b), points)
        assert abs(base - moved) < 1e-9
        moved_s = adds_distance(compose(extra, a), compose(extra, b), points)
        assert abs(adds_distance(a, b, points) - moved_s) < 1e-9


class TestAccuracyAuc:
    def test_all_zero_distances(self):
        assert accuracy_auc([0.0, 0.0, 0.0]).auc == 1.0

    def test_all_beyond_threshold(self):
        assert accuracy_auc([0.1, 0.5, 2.0]).auc == 0.0

    def test_single_distance_half(self):
        curve = accuracy_auc([0.05])
        assert abs(curve.auc - 0.5) < 1e-15

    def test_curve_shape(self):
        curve = accuracy_auc([0.02, 0.02, 0.07, 0.3])
        assert curve.thresholds[0] == 0.0
        assert curve.thresholds[-1] == 0.1
        assert np.all(np.diff(curve.thresholds) > 0)
        assert np.all(np.diff(curve.accuracies) >= 0)
        # accuracy uses strict inequality: at tau = 0.02 the two 0.02
        # distances do not count yet
        idx = np.where(curve.thresholds == 0.02)[0][0]
        assert curve.accuracies[idx] == 0.0

    def test_step_integral_matches_riemann(self, rng):
        taus = (np.arange(100000) + 0.5) / 100000 * 0.1
        for _ in range(10):
            d = rng.uniform(0, 0.2, size=int(rng.integers(1, 40)))
            auc = accuracy_auc(d).auc
            ds = np.sort(d)
            riemann = (np.searchsorted(ds, taus, side="left") / d.size).mean()
            assert abs(auc - riemann) < 1e-4

    def test_monotone_in_added_records(self, rng):
        d = list(rng.uniform(0, 0.2, size=9))
        base = accuracy_auc(d).auc
        assert accuracy_auc(d + [0.0]).auc >= base
        assert accuracy_auc(d + [0.5]).auc <= base

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            accuracy_auc([])

    def test_negative_rejected(self):
        with pytest.raises(DegenerateInput):
            accuracy_auc([-0.1])


class TestAdd01d:
    def test_all_zero(self):
        records = [make_record(add=0.0, adds=0.0) for _ in range(5)]
        assert add_01d_accuracy(records) == 1.0

    def test_distance_equal_to_diameter_fails(self):
        assert add_01d_accuracy([make_record(add=0.2, adds=0.2, diameter=0.2)]) == 0.0

    def test_counting(self, rng):
        records, expected = [], 0
        for _ in range(50):
            diameter = rng.uniform(0.1, 0.4)
            add = rng.uniform(0, 0.06)
            symmetric = bool(rng.integers(2))
            adds = add * rng.uniform(0.2, 1.0)
            records.append(make_record(add=add, adds=adds, diameter=diameter,
                                       symmetric=symmetric))
            chosen = adds if symmetric else add
            expected += chosen < 0.1 * diameter
        assert add_01d_accuracy(records) == expected / 50

    def test_symmetric_uses_adds(self):
        r = make_record(add=0.05, adds=0.001, diameter=0.2, symmetric=True)
        assert add_01d_accuracy([r]) == 1.0
        assert add_01d_accuracy([r], use_adds_for_symmetric=False) == 0.0


class TestAggregate:
    def test_single_class_all_zero(self):
        table = aggregate([make_record() for _ in range(4)])
        assert len(table.rows) == 1
        assert table.rows[0].auc_add_s == 1.0
        assert table.mean_auc_add_s == 1.0
        assert table.mean_add01d == 1.0

    def test_mean_is_uniform_over_classes(self):
        # class 0 -> AUC 0.8; class 1 -> AUC 0.6 (one record each)
        records = [make_record(class_id=0, add=0.02, adds=0.02),
                   make_record(class_id=1, add=0.04, adds=0.04)]
        table = aggregate(records)
        assert abs(table.rows[0].auc_add_s - 0.8) < 1e-12
        assert abs(table.rows[1].auc_add_s - 0.6) < 1e-12
        assert abs(table.mean_auc_add_s - 0.7) < 1e-12

    def test_sym_aware_column_uses_adds_for_symmetric(self):
        records = [make_record(class_id=0, add=0.5, adds=0.0, symmetric=True)]
        table = aggregate(records)
        assert table.rows[0].auc_add_sym_aware == 1.0
        assert table.rows[0].auc_add_s == 1.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            aggregate([])


class TestPairing:
    def _targets(self, rng, class_ids):
        objects = [GroundTruthObject(c, random_gt_box(rng), random_pose(rng))
                   for c in class_ids]
        return TargetSet(objects)

    def test_ground_truth_predictions_pair_in_order(self, rng):
        targets = self._targets(rng, [0, 1, 1])
        logits = np.full((5, 4), -30.0)
        for i, obj in enumerate(targets.objects):
            logits[i, obj.class_id] = 30.0
        preds = PredictionSet(logits=logits,
                              boxes=np.tile([0.5, 0.5, 0.1, 0.1], (5, 1)),
                              rot6d=np.tile([1, 0, 0, 0, 1, 0.], (5, 1)),
                              translations=np.tile([0, 0, 1.0], (5, 1)))
        assert pair_predictions(targets, preds) == [0, 1, 2]

    def test_each_slot_used_once(self, rng):
        targets = self._targets(rng, [2, 2, 2])
        preds = PredictionSet(logits=rng.normal(size=(4, 4)),
                              boxes=np.tile([0.5, 0.5, 0.1, 0.1], (4, 1)),
                              rot6d=np.tile([1, 0, 0, 0, 1, 0.], (4, 1)),
                              translations=np.tile([0, 0, 1.0], (4, 1)))
        paired = pair_predictions(targets, preds)
        assert len(set(paired)) == 3

    def test_more_objects_than_slots_leaves_none(self, rng):
        targets = self._targets(rng, [0, 1])
        preds = PredictionSet(logits=np.zeros((1, 4)),
                              boxes=np.array([[0.5, 0.5, 0.1, 0.1]]),
                              rot6d=np.array([[1, 0, 0, 0, 1, 0.]]),
                              translations=np.array([[0, 0, 1.0]]))
        paired = pair_predictions(targets, preds)
        assert sorted(x is None for x in paired) == [False, True]


class TestRecords:
    def test_exact_predictions_give_zero_distances(self, rng):
        targets = TargetSet([GroundTruthObject(0, random_gt_box(rng),
                                               random_pose(rng))])
        obj = targets.objects[0]
        logits = np.full((2, 4), -30.0)
        logits[0, 0] = 30.0
        logits[1, 3] = 30.0
        preds = PredictionSet(
            logits=logits,
            boxes=np.stack([obj.bbox, [0.5, 0.5, 0.1, 0.1]]),
            rot6d=np.stack([matrix_to_rot6d(obj.pose.rotation), [1, 0, 0, 0, 1, 0.]]),
            translations=np.stack([obj.pose.translation, [0, 0, 1.0]]))
        points = {0: ModelPoints(rng.normal(size=(8, 3)))}
        records = records_for_image(7, targets, preds, points)
        assert records[0].image_id == 7
        assert records[0].distance_add < 1e-12
        assert records[0].distance_adds < 1e-12
        assert records[0].diameter == points[0].diameter

    def test_unpaired_object_gets_clamped_distance(self, rng):
        targets = TargetSet([GroundTruthObject(0, random_gt_box(rng),
                                               random_pose(rng)),
                             GroundTruthObject(0, random_gt_box(rng),
                                               random_pose(rng))])
        preds = PredictionSet(logits=np.zeros((1, 4)),
                              boxes=np.array([[0.5, 0.5, 0.1, 0.1]]),
                              rot6d=np.array([[1, 0, 0, 0, 1, 0.]]),
                              translations=np.array([[0, 0, 1.0]]))
        points = {0: ModelPoints(rng.normal(size=(8, 3)))}
        records = records_for_image(0, targets, preds, points)
        clamped = [r for r in records if r.distance_add == 0.1]
        assert len(clamped) == 1

    def test_degenerate_rot6d_treated_as_missing(self, rng):
        targets = TargetSet([GroundTruthObject(0, random_gt_box(rng),
                                               random_pose(rng))])
        preds = PredictionSet(logits=np.zeros((1, 4)),
                              boxes=np.array([[0.5, 0.5, 0.1, 0.1]]),
                              rot6d=np.zeros((1, 6)),
                              translations=np.array([[0, 0, 1.0]]))
        points = {0: ModelPoints(rng.normal(size=(8, 3)))}
        records = records_for_image(0, targets, preds, points)
        assert records[0].distance_add == 0.1


class TestCsvExport:
    def test_metrics_csv(self, tmp_path, rng):
        records = [make_record(class_id=0), make_record(class_id=1, add=0.05, adds=0.04)]
        table = aggregate(records, names={0: "block", 1: "disc"})
        path = tmp_path / "metrics.csv"
        write_metrics_csv(table, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["class", "auc_add_s", "auc_add_sym_aware", "add01d",
                           "n_records"]
        assert rows[1][0] == "block"
        assert rows[-1][0] == "mean"
        assert float(rows[-1][1]) == table.mean_auc_add_s

    def test_curve_csv(self, tmp_path):
        curve = accuracy_auc([0.05, 0.02])
        path = tmp_path / "curve.csv"
        write_curve_csv(curve, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["threshold", "accuracy"]
        assert len(rows) == len(curve.thresholds) + 1
        assert float(rows[1][0]) == 0.0

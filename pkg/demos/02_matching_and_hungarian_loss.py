#!/usr/bin/env python3
"""Bipartite matching and the Hungarian loss on a toy image.

Builds two ground-truth objects and a five-slot prediction set, prints the
pairwise matching-cost matrix, solves the optimal assignment, and breaks
the resulting loss into its class / box / pose components.
"""
import numpy as np

from setpose import (GroundTruthObject, LossWeights, MatchCostConfig,
                     ModelPoints, Pose, PredictionSet, TargetSet,
                     build_cost_matrix, hungarian_assign, hungarian_loss,
                     matrix_to_rot6d, random_rotation)

rng = np.random.default_rng(1)

points = {c: ModelPoints(rng.normal(scale=0.05, size=(32, 3)),
                         symmetric=(c == 2)) for c in range(3)}
targets = TargetSet([
    GroundTruthObject(0, np.array([0.3, 0.35, 0.25, 0.2]),
                      Pose(random_rotation(rng), [-0.1, 0.0, 0.9])),
    GroundTruthObject(2, np.array([0.7, 0.6, 0.2, 0.3]),
                      Pose(random_rotation(rng), [0.15, 0.05, 1.1])),
])

# five slots: slot 3 is a near-perfect match for object 0, slot 1 for
# object 2, the rest are noise
n_slots, n_classes = 5, 3
logits = rng.normal(size=(n_slots, n_classes + 1))
boxes = rng.uniform(0.2, 0.8, size=(n_slots, 4))
rot6d = rng.normal(size=(n_slots, 6))
translations = rng.normal(size=(n_slots, 3))
for slot, obj in ((3, targets.objects[0]), (1, targets.objects[1])):
    logits[slot] = -3.0
    logits[slot, obj.class_id] = 6.0
    boxes[slot] = obj.bbox + rng.normal(scale=0.01, size=4)
    rot6d[slot] = matrix_to_rot6d(obj.pose.rotation) + rng.normal(scale=0.3, size=6)
    translations[slot] = obj.pose.translation + rng.normal(scale=0.01, size=3)
preds = PredictionSet(logits, boxes, rot6d, translations)

for variant in ("object_only", "with_pose"):
    cfg = MatchCostConfig(variant=variant)
    cost = build_cost_matrix(targets, preds, cfg, points)
    assignment = hungarian_assign(cost)
    print(f"--- variant {variant} ---")
    print("cost matrix:")
    print(cost.round(3))
    print("optimal pairs (gt -> slot):", assignment.pairs,
          " total cost:", round(assignment.total_cost(cost), 4))

print()
assignment = hungarian_assign(build_cost_matrix(targets, preds,
                                                MatchCostConfig(), points))
for mode in ("disentangled", "point_matching", "ploss"):
    breakdown = hungarian_loss(preds, targets, assignment, LossWeights(),
                               points, pose_mode=mode)
    print(f"hungarian loss [{mode:>15}]: total {float(breakdown.total):.6f} "
          f"(class {breakdown.class_term:.4f}, box {breakdown.box_term:.4f}, "
          f"pose {breakdown.pose_term:.6f})")

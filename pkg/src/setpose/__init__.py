"""Multi-object 6D pose estimation as fixed-cardinality set prediction.

The library covers the full pipeline at desk scale: rotation
representations and rigid geometry, bipartite matching with a composite
Hungarian loss, ADD / ADD-S evaluation with exact accuracy-threshold AUC,
a small trainable encoder-decoder transformer built on an in-package
reverse-mode autodiff engine, and a synthetic scene generator.
"""

from .exceptions import (BehindCamera, CardinalityError, ConfigError,
                         DegenerateBox, DegenerateInput, EmptyInput, EmptyMesh,
                         GraphError, ParseError, SetPoseError, ShapeError)
from .geometry import (CameraIntrinsics, ModelPoints, Pose,
                       allocentric_to_egocentric, compose,
                       egocentric_to_allocentric, load_ply_vertices,
                       matrix_to_rot6d, points_diameter, random_rotation,
                       rot6d_to_matrix, subsample_points, transform_points)
from .matching import (Assignment, GroundTruthObject, MatchCostConfig,
                       PredictionSet, PredictionTuple, TargetSet,
                       build_cost_matrix, geodesic_angle, hungarian_assign,
                       pairwise_match_cost)
from .losses import (LossBreakdown, LossWeights, box_loss, class_loss,
                     giou_loss, hungarian_loss, point_matching_loss, pose_loss,
                     rotation_loss)
from .metrics import (EvalRecord, MetricCurve, MetricsTable, accuracy_auc,
                      add_01d_accuracy, add_distance, adds_distance, aggregate,
                      pair_predictions, records_for_image, write_curve_csv,
                      write_metrics_csv)
from .network import (ForwardOutput, ModelConfig, forward, init_parameters,
                      prediction_heads, sine_positional_encoding)
from .training import (AdamW, TrainConfig, clip_gradients, image_loss,
                       load_checkpoint, predict_dataset, save_checkpoint, train,
                       write_loss_log)
from .data import (Dataset, ObjectCatalog, SceneConfig, generate_dataset,
                   generate_scene, load_dataset, make_default_catalog, project,
                   save_dataset)

__version__ = "0.1.0"

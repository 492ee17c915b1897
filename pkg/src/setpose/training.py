"""Training loop, AdamW optimizer, gradient clipping, and checkpoint I/O.

The reference path is sequential and deterministic for a fixed seed: batch
order comes from one seeded generator, parameters are updated in sorted
name order, and all arithmetic is float64.  Checkpoints are single JSON
documents with base64-encoded row-major float64 tensor payloads, so a
save/load round trip is bitwise exact.
"""

from __future__ import annotations

import base64
import csv
import json
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore
from .exceptions import ConfigError, DegenerateInput, ParseError
from .geometry import (Pose, allocentric_to_egocentric,
                       egocentric_to_allocentric, matrix_to_rot6d,
                       rot6d_to_matrix)
from .losses import LossWeights, hungarian_loss
from .matching import (Assignment, GroundTruthObject, MatchCostConfig, TargetSet,
                       build_cost_matrix, hungarian_assign)
from .network import ModelConfig, ForwardOutput, config_from_dict, config_to_dict, \
    forward, head_parameter_names, init_parameters

CHECKPOINT_FORMAT_VERSION = 1
ROTATION_FRAMES = ("egocentric", "allocentric")


@dataclass
class TrainConfig:
    """Optimization schedule and training-time options."""

    lr: float = 1e-4
    lr_after_decay: float = 1e-5
    decay_at_iteration: int = 900
    total_iterations: int = 1000
    batch_size: int = 16
    grad_clip_norm: float = 0.1
    weight_decay: float = 1e-4
    seed: int = 0
    freeze_transformer: bool = False
    aux_loss: bool = False
    pose_loss: str = "disentangled"
    rotation_frame: str = "egocentric"

    def __post_init__(self):
        for name in ("lr", "lr_after_decay", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.total_iterations < 0 or self.batch_size < 1:
            raise ConfigError("total_iterations must be >= 0 and batch_size >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.rotation_frame not in ROTATION_FRAMES:
            raise ConfigError(f"rotation_frame must be one of {ROTATION_FRAMES}")


def train_config_from_dict(d) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**d)


class AdamW:
    """Decoupled-weight-decay Adam over a ParameterStore.

    Parameters are visited in sorted name order; ``trainable`` optionally
    restricts updates to a subset of names.
    """

    def __init__(self, store: ParameterStore, lr=1e-4, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=1e-4, trainable=None):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.trainable = None if trainable is None else set(trainable)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.store.items():
            if self.trainable is not None and name not in self.trainable:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)


def gradient_norm(store: ParameterStore, names=None):
    """Global L2 norm over gradient buffers, reduced in sorted name order."""
    total = 0.0
    for name, p in store.items():
        if names is not None and name not in names:
            continue
        total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_gradients(store: ParameterStore, max_norm, names=None):
    """Scale gradients so their global norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = gradient_norm(store, names)
    if norm > max_norm:
        scale = max_norm / norm
        for name, p in store.items():
            if names is not None and name not in names:
                continue
            p.grad = p.grad * scale
    return norm


@dataclass
class LogRow:
    """One training iteration in the loss log."""

    iteration: int
    total: float
    class_term: float
    box_term: float
    pose_term: float
    lr: float


def write_loss_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "total", "class", "box", "pose", "lr"])
        for r in rows:
            w.writerow([r.iteration, repr(r.total), repr(r.class_term),
                        repr(r.box_term), repr(r.pose_term), repr(r.lr)])


def _targets_in_frame(targets: TargetSet, frame) -> TargetSet:
    if frame == "egocentric":
        return targets
    converted = []
    for o in targets.objects:
        allo = egocentric_to_allocentric(o.pose)
        converted.append(GroundTruthObject(o.class_id, o.bbox, allo))
    return TargetSet(converted)


def image_loss(out: ForwardOutput, targets: TargetSet, match_cfg: MatchCostConfig,
               weights: LossWeights, points_by_class, pose_mode="disentangled"):
    """Match one image's prediction set to its targets and evaluate the loss.

    The assignment is solved on detached values; the returned breakdown's
    total carries the prediction graph.
    """
    detached = out.to_prediction_set()
    if len(targets) > 0:
        cost = build_cost_matrix(targets, detached, match_cfg, points_by_class)
        assignment = hungarian_assign(cost)
    else:
        assignment = Assignment(())
    return hungarian_loss(out, targets, assignment, weights, points_by_class,
                          pose_mode=pose_mode), assignment


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset,
          weights: LossWeights = None, match_cfg: MatchCostConfig = None,
          store: ParameterStore = None, progress=None):
    """Train on a dataset of (image, TargetSet) samples.

    ``dataset`` must expose ``samples`` (list with ``.image`` and
    ``.targets``) and ``points_by_class()``.  Returns (store, rows) where
    rows is the per-iteration loss log.  Deterministic for fixed seeds.
    """
    weights = weights or LossWeights()
    match_cfg = match_cfg or MatchCostConfig()
    if store is None:
        store = init_parameters(model_cfg)
    samples = dataset.samples
    if not samples:
        raise ConfigError("training dataset is empty")
    max_objects = max(len(s.targets) for s in samples)
    if max_objects > model_cfg.n_queries:
        raise ConfigError(f"a scene has {max_objects} objects but the model "
                          f"has only {model_cfg.n_queries} query slots")
    points_by_class = dataset.points_by_class()

    trainable = set(head_parameter_names(store)) if train_cfg.freeze_transformer else None
    opt = AdamW(store, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay,
                trainable=trainable)
    rng = np.random.default_rng(train_cfg.seed)
    order = []
    rows = []
    for it in range(train_cfg.total_iterations):
        lr = train_cfg.lr_after_decay if it >= train_cfg.decay_at_iteration else train_cfg.lr
        batch_idx = []
        for _ in range(train_cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(samples)))
            batch_idx.append(order.pop())

        store.zero_grad()
        batch_total = None
        acc = np.zeros(3)  # class, box, pose component means
        total_value = 0.0
        for si in batch_idx:
            sample = samples[si]
            targets = _targets_in_frame(sample.targets, train_cfg.rotation_frame)
            out = forward(sample.image, store, model_cfg, return_aux=train_cfg.aux_loss)
            breakdown, _ = image_loss(out, targets, match_cfg, weights,
                                      points_by_class, train_cfg.pose_loss)
            loss_i = breakdown.total
            comps = np.array([breakdown.class_term, breakdown.box_term,
                              breakdown.pose_term])
            if train_cfg.aux_loss and out.aux:
                for aux_out in out.aux:
                    aux_breakdown, _ = image_loss(aux_out, targets, match_cfg,
                                                  weights, points_by_class,
                                                  train_cfg.pose_loss)
                    loss_i = loss_i + aux_breakdown.total
                    comps += [aux_breakdown.class_term, aux_breakdown.box_term,
                              aux_breakdown.pose_term]
            total_value += float(loss_i)
            acc += comps
            batch_total = loss_i if batch_total is None else batch_total + loss_i

        batch_loss = batch_total * (1.0 / len(batch_idx))
        batch_loss.backward()
        if trainable is not None:
            for name, p in store.items():
                if name not in trainable:
                    p.grad = np.zeros_like(p.grad)
        clip_gradients(store, train_cfg.grad_clip_norm,
                       names=trainable)
        opt.step(lr=lr)
        acc /= len(batch_idx)
        rows.append(LogRow(iteration=it, total=total_value / len(batch_idx),
                           class_term=acc[0], box_term=acc[1], pose_term=acc[2],
                           lr=lr))
        if progress is not None:
            progress(rows[-1])
    return store, rows


def predict_dataset(store, model_cfg: ModelConfig, dataset, rotation_frame="egocentric"):
    """Detached prediction sets for every sample, graph recording off.

    With ``rotation_frame='allocentric'`` the predicted rotations are
    interpreted in the viewing-ray frame and converted back to egocentric
    using the predicted translation.
    """
    preds = []
    with ad.no_grad():
        for sample in dataset.samples:
            out = forward(sample.image, store, model_cfg)
            pset = out.to_prediction_set()
            if rotation_frame == "allocentric":
                for j in range(len(pset)):
                    try:
                        rot = rot6d_to_matrix(pset.rot6d[j])
                        ego = allocentric_to_egocentric(
                            Pose(rot, pset.translations[j]))
                    except DegenerateInput:
                        continue
                    pset.rot6d[j] = matrix_to_rot6d(ego.rotation)
            preds.append(pset)
    return preds


# ---- checkpoint I/O ------------------------------------------------------------

def save_checkpoint(path, store: ParameterStore, model_cfg: ModelConfig,
                    train_cfg: TrainConfig):
    """Single-file JSON checkpoint with exact float64 payloads."""
    tensors = {}
    for name, p in store.items():
        tensors[name] = {
            "shape": list(p.data.shape),
            "dtype": "float64",
            "data": base64.b64encode(np.ascontiguousarray(p.data).tobytes()).decode("ascii"),
        }
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": config_to_dict(model_cfg),
        "train_config": asdict(train_cfg),
        "tensors": tensors,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


def load_checkpoint(path):
    """Returns (store, model_cfg, train_cfg) reconstructed bit-exactly."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("format_version", "model_config", "train_config", "tensors"):
        if key not in doc:
            raise ParseError(f"{path}: missing checkpoint field {key!r}")
    if doc["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint format version "
                         f"{doc['format_version']}")
    model_cfg = config_from_dict(doc["model_config"])
    train_cfg = train_config_from_dict(doc["train_config"])
    store = init_parameters(model_cfg)
    state = {}
    for name, spec in doc["tensors"].items():
        raw = base64.b64decode(spec["data"])
        arr = np.frombuffer(raw, dtype=np.float64).reshape(spec["shape"]).copy()
        state[name] = arr
    store.load_state_dict(state)
    return store, model_cfg, train_cfg

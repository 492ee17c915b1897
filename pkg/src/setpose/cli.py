"""Command-line interface: dataset generation, training, evaluation,
matching debug, and standalone metric computation.

Configuration lives in an optional JSON file with one section per
subsystem (model / train / loss / match / data); command-line flags and
generic ``--set section.key=value`` overrides take precedence.  Every
command echoes the merged configuration into its output directory as
``effective_config.json``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .data import (SceneConfig, catalog_from_meshes, generate_dataset,
                   load_annotations, load_catalog, load_dataset,
                   make_default_catalog, save_dataset)
from .exceptions import (BehindCamera, CardinalityError, ConfigError,
                         DegenerateBox, DegenerateInput, EmptyInput, EmptyMesh,
                         GraphError, ParseError, ShapeError)
from .geometry import Pose
from .losses import LossWeights
from .matching import (GroundTruthObject, MatchCostConfig, PredictionSet,
                       TargetSet, build_cost_matrix, hungarian_assign)
from .metrics import (aggregate, accuracy_auc, records_for_image,
                      write_curve_csv, write_metrics_csv)
from .network import ModelConfig, forward
from .training import (TrainConfig, load_checkpoint, predict_dataset,
                       save_checkpoint, train, write_loss_log)

OUT_DIR_ENV = "SETPOSE_OUT_DIR"
PREDICTIONS_FORMAT_VERSION = 1

_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "match": MatchCostConfig,
    "data": SceneConfig,
}


@dataclasses.dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    loss: LossWeights
    match: MatchCostConfig
    data: SceneConfig

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(config_path=None, overrides=()) -> RunConfig:
    """Merge config-file sections with ``section.key=value`` overrides.

    Unknown sections or keys are errors.
    """
    values = {name: {} for name in _SECTIONS}
    if config_path:
        with open(config_path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{config_path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{config_path}: config root must be an object")
        for section, body in doc.items():
            if section not in _SECTIONS:
                raise ConfigError(f"{config_path}: unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"{config_path}: section {section!r} must be an object")
            values[section].update(body)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        section, field = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in override {item!r}")
        values[section][field] = _parse_value(raw)
    built = {}
    for section, cls in _SECTIONS.items():
        known = set(cls.__dataclass_fields__)
        unknown = set(values[section]) - known
        if unknown:
            raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
        built[section] = cls(**values[section])
    return RunConfig(**built)


def write_effective_config(out_dir, run_config: RunConfig):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.json"), "w") as fh:
        json.dump(run_config.to_dict(), fh, sort_keys=True, indent=1)


def _resolve_out(args):
    if args.out:
        return args.out
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return env
    raise _Usage(f"--out is required (or set {OUT_DIR_ENV})")


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 here; code 2 is reserved for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---- prediction-set JSON ---------------------------------------------------------

def save_prediction_sets(path, preds_by_image):
    doc = {
        "version": PREDICTIONS_FORMAT_VERSION,
        "scenes": [
            {
                "image_id": image_id,
                "logits": p.logits.tolist(),
                "boxes": p.boxes.tolist(),
                "rot6d": p.rot6d.tolist(),
                "translations": p.translations.tolist(),
            }
            for image_id, p in preds_by_image
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


def _prediction_set_from_doc(doc, context):
    fields = {}
    for key in ("logits", "boxes", "rot6d", "translations"):
        if key not in doc:
            raise ParseError(f"{context}: missing required field {key!r}")
        fields[key] = np.asarray(doc[key], dtype=np.float64)
    try:
        return PredictionSet(**fields)
    except CardinalityError as exc:
        raise ParseError(f"{context}: {exc}") from exc


def load_prediction_sets(path):
    """Returns {image_id: PredictionSet} from a predictions JSON file."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("version") != PREDICTIONS_FORMAT_VERSION:
        raise ParseError(f"{path}: missing or unsupported predictions version")
    out = {}
    for idx, scene in enumerate(doc.get("scenes", [])):
        ctx = f"{path}: scenes[{idx}]"
        if "image_id" not in scene:
            raise ParseError(f"{ctx}: missing required field 'image_id'")
        out[int(scene["image_id"])] = _prediction_set_from_doc(scene, ctx)
    return out


def _targets_from_file(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if "objects" not in doc:
        raise ParseError(f"{path}: missing required field 'objects'")
    objects = []
    for idx, obj in enumerate(doc["objects"]):
        ctx = f"{path}: objects[{idx}]"
        for key in ("class_id", "bbox", "R", "t"):
            if key not in obj:
                raise ParseError(f"{ctx}: missing required field {key!r}")
        rot = np.asarray(obj["R"], dtype=np.float64)
        if rot.size != 9:
            raise ParseError(f"{ctx}: R must have 9 entries")
        objects.append(GroundTruthObject(
            class_id=int(obj["class_id"]),
            bbox=np.asarray(obj["bbox"], dtype=np.float64),
            pose=Pose(rot.reshape(3, 3), np.asarray(obj["t"], dtype=np.float64))))
    return TargetSet(objects)


# ---- subcommands ------------------------------------------------------------------

def cmd_gen_data(args):
    rc = load_run_config(args.config, args.set or [])
    out_dir = _resolve_out(args)
    if args.mesh_dir:
        meshes = [os.path.join(args.mesh_dir, f)
                  for f in sorted(os.listdir(args.mesh_dir)) if f.endswith(".ply")]
        scale = 1e-3 if args.mesh_units == "mm" else 1.0
        symmetric = [int(x) for x in args.symmetric_classes.split(",") if x != ""]
        catalog = catalog_from_meshes(meshes, n_points=rc.data.n_points,
                                      seed=args.seed, scale=scale,
                                      symmetric_ids=symmetric)
    else:
        catalog = make_default_catalog(n_points=rc.data.n_points, seed=args.seed)
    dataset = generate_dataset(catalog, rc.data, args.scenes, base_seed=args.seed)
    os.makedirs(out_dir, exist_ok=True)
    save_dataset(out_dir, dataset)
    write_effective_config(out_dir, rc)
    n_objects = sum(len(s.targets) for s in dataset.samples)
    print(f"wrote {len(dataset)} scenes with {n_objects} objects "
          f"({catalog.n_classes} classes) to {out_dir}")
    return 0


def cmd_train(args):
    overrides = list(args.set or [])
    if args.iterations is not None:
        overrides.append(f"train.total_iterations={args.iterations}")
    if args.batch_size is not None:
        overrides.append(f"train.batch_size={args.batch_size}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.freeze_transformer:
        overrides.append("train.freeze_transformer=true")
    if args.aux_loss:
        overrides.append("train.aux_loss=true")
    rc = load_run_config(args.config, overrides)
    out_dir = _resolve_out(args)
    dataset = load_dataset(args.data)
    h, w = dataset.samples[0].image.shape[:2] if dataset.samples else \
        (rc.model.image_h, rc.model.image_w)
    model_cfg = dataclasses.replace(rc.model, n_classes=dataset.catalog.n_classes,
                                    image_h=h, image_w=w)
    rc = dataclasses.replace(rc, model=model_cfg)
    store, rows = train(model_cfg, rc.train, dataset, weights=rc.loss,
                        match_cfg=rc.match)
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), store, model_cfg, rc.train)
    write_loss_log(rows, os.path.join(out_dir, "loss_log.csv"))
    write_effective_config(out_dir, rc)
    final = rows[-1].total if rows else float("nan")
    print(f"trained {len(rows)} iterations on {len(dataset)} scenes; "
          f"final loss {final:.4f}; wrote {out_dir}")
    return 0


def _dump_attention(out_dir, image, store, model_cfg):
    attn_dir = os.path.join(out_dir, "attention")
    os.makedirs(attn_dir, exist_ok=True)
    out = forward(image, store, model_cfg, return_attn=True)
    groups = [("enc_self", out.enc_attn), ("dec_self", out.dec_self_attn),
              ("dec_cross", out.dec_cross_attn)]
    for prefix, mats in groups:
        for layer, mat in enumerate(mats):
            for head in range(mat.shape[0]):
                path = os.path.join(attn_dir, f"{prefix}_l{layer}_h{head}.csv")
                np.savetxt(path, mat[head], delimiter=",")


def cmd_eval(args):
    rc = load_run_config(args.config, args.set or [])
    out_dir = _resolve_out(args)
    store, model_cfg, ckpt_train_cfg = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.catalog.n_classes != model_cfg.n_classes:
        raise ConfigError(
            f"checkpoint expects {model_cfg.n_classes} classes but the dataset "
            f"catalog has {dataset.catalog.n_classes}")
    rc = dataclasses.replace(rc, model=model_cfg, train=ckpt_train_cfg)
    preds = predict_dataset(store, model_cfg, dataset,
                            rotation_frame=ckpt_train_cfg.rotation_frame)
    points_by_class = dataset.points_by_class()
    records = []
    for sample, pred in zip(dataset.samples, preds):
        records.extend(records_for_image(sample.image_id, sample.targets, pred,
                                         points_by_class))
    table = aggregate(records, dataset.catalog.names())
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(table, os.path.join(out_dir, "metrics.csv"))
    write_curve_csv(accuracy_auc([r.distance_adds for r in records]),
                    os.path.join(out_dir, "curve_add_s.csv"))
    write_curve_csv(accuracy_auc([r.sym_aware_distance() for r in records]),
                    os.path.join(out_dir, "curve_add_sym_aware.csv"))
    save_prediction_sets(os.path.join(out_dir, "predictions.json"),
                         [(s.image_id, p) for s, p in zip(dataset.samples, preds)])
    write_effective_config(out_dir, rc)
    if args.attn_dump and dataset.samples:
        _dump_attention(out_dir, dataset.samples[0].image, store, model_cfg)
    print(f"evaluated {len(records)} objects over {len(dataset)} scenes")
    print(f"mean AUC of ADD-S:   {table.mean_auc_add_s:.4f}")
    print(f"mean AUC of ADD(-S): {table.mean_auc_add_sym_aware:.4f}")
    print(f"mean ADD(-S) 0.1d:   {table.mean_add01d:.4f}")
    return 0


def cmd_metrics(args):
    rc = load_run_config(args.config, args.set or [])
    out_dir = _resolve_out(args)
    catalog = load_catalog(os.path.join(args.data, "catalog.json"))
    _, annotations = load_annotations(os.path.join(args.data, "annotations.json"))
    preds_by_image = load_prediction_sets(args.predictions)
    points_by_class = catalog.points_by_class()
    records = []
    for ann in annotations:
        if ann.image_id not in preds_by_image:
            raise ParseError(f"{args.predictions}: no predictions for image "
                             f"{ann.image_id}")
        records.extend(records_for_image(ann.image_id, ann.target_set(),
                                         preds_by_image[ann.image_id],
                                         points_by_class))
    table = aggregate(records, catalog.names())
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(table, os.path.join(out_dir, "metrics.csv"))
    write_curve_csv(accuracy_auc([r.distance_adds for r in records]),
                    os.path.join(out_dir, "curve_add_s.csv"))
    write_curve_csv(accuracy_auc([r.sym_aware_distance() for r in records]),
                    os.path.join(out_dir, "curve_add_sym_aware.csv"))
    write_effective_config(out_dir, rc)
    print(f"computed metrics for {len(records)} objects; "
          f"mean AUC of ADD-S {table.mean_auc_add_s:.4f}, "
          f"mean AUC of ADD(-S) {table.mean_auc_add_sym_aware:.4f}, "
          f"mean 0.1d {table.mean_add01d:.4f}")
    return 0


def cmd_match_debug(args):
    rc = load_run_config(args.config, args.set or [])
    targets = _targets_from_file(args.targets)
    with open(args.predictions) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.predictions}: invalid JSON: {exc}") from exc
    preds = _prediction_set_from_doc(doc, args.predictions)
    variant = args.variant.replace("-", "_")
    cfg = MatchCostConfig(variant=variant,
                          box_l1_weight=rc.match.box_l1_weight,
                          box_giou_weight=rc.match.box_giou_weight)
    cost = build_cost_matrix(targets, preds, cfg)
    assignment = hungarian_assign(cost)
    total = assignment.total_cost(cost)
    if args.json:
        print(json.dumps({
            "variant": variant,
            "cost_matrix": cost.tolist(),
            "pairs": [list(p) for p in assignment.pairs],
            "total_cost": total,
        }, sort_keys=True))
    else:
        print(f"cost matrix ({cost.shape[0]} ground truth x {cost.shape[1]} slots, "
              f"variant={variant}):")
        for row in cost:
            print("  " + " ".join(f"{v:10.4f}" for v in row))
        print("pairs (gt -> slot):", ", ".join(f"{i}->{j}" for i, j in assignment.pairs))
        print(f"total cost: {total:.6f}")
    return 0


def build_parser():
    parser = _Parser(prog="setpose",
                     description="Multi-object 6D pose estimation as set prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file with model/train/loss/match/data sections")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV})")
    p.add_argument("--scenes", type=int, default=100, help="number of scenes (default 100)")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    p.add_argument("--mesh-dir", help="build the catalog from ascii PLY meshes in this directory")
    p.add_argument("--mesh-units", choices=["m", "mm"], default="m",
                   help="units of the PLY meshes (mm are converted to meters)")
    p.add_argument("--symmetric-classes", default="",
                   help="comma-separated class ids to flag symmetric (with --mesh-dir)")
    add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV})")
    p.add_argument("--iterations", type=int, help="override train.total_iterations")
    p.add_argument("--batch-size", type=int, help="override train.batch_size")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--freeze-transformer", action="store_true",
                   help="train only the prediction heads")
    p.add_argument("--aux-loss", action="store_true",
                   help="add the Hungarian loss on intermediate decoder layers")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV})")
    p.add_argument("--attn-dump", action="store_true",
                   help="export attention matrices of the first image as CSV")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="compute metrics from annotation and prediction files")
    p.add_argument("--data", required=True, help="dataset directory (annotations + catalog)")
    p.add_argument("--predictions", required=True, help="predictions JSON file")
    p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV})")
    add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("match-debug", help="print the cost matrix and optimal assignment")
    p.add_argument("--targets", required=True, help="JSON file with an 'objects' list")
    p.add_argument("--predictions", required=True, help="JSON file with one prediction set")
    p.add_argument("--variant", choices=["object-only", "with-pose"],
                   default="object-only")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    add_common(p)
    p.set_defaults(func=cmd_match_debug)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ConfigError, FileNotFoundError, IsADirectoryError,
            NotADirectoryError, EmptyInput, EmptyMesh, CardinalityError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateInput, DegenerateBox, BehindCamera, GraphError,
            ShapeError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())

"""Synthetic desk-scale scenes: generation, rendering, annotation I/O.

Scenes place a few catalog objects at random poses inside the camera
frustum and render their projected point hulls flat-shaded with a class
color plus a brighter one-face orientation marker, so pose is visually
recoverable from RGB alone.  Annotations are a single JSON document per
dataset; images are binary PPM (P6).

All randomness flows through ``numpy.random.default_rng`` seeded per scene
as ``base_seed + image_id``, so generation is reproducible and could be
parallelized per scene.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .exceptions import BehindCamera, ConfigError, EmptyMesh, ParseError
from .geometry import (CameraIntrinsics, ModelPoints, Pose, random_rotation,
                       subsample_points, transform_points)
from .matching import GroundTruthObject, TargetSet

ANNOTATION_FORMAT_VERSION = 1
CATALOG_FORMAT_VERSION = 1


def project(camera: CameraIntrinsics, point):
    """Pinhole projection of one camera-frame point to pixel coordinates."""
    x, y, z = np.asarray(point, dtype=np.float64).reshape(3)
    if z <= 1e-6:
        raise BehindCamera(f"point with z = {z} cannot be projected")
    return np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])


def project_points(camera: CameraIntrinsics, points):
    """Vectorized projection of (n, 3) camera-frame points, z must be > 0."""
    pts = np.asarray(points, dtype=np.float64)
    if np.any(pts[:, 2] <= 1e-6):
        raise BehindCamera("points at or behind the camera plane")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = camera.fx * pts[:, 0] / pts[:, 2] + camera.cx
    uv[:, 1] = camera.fy * pts[:, 1] / pts[:, 2] + camera.cy
    return uv


# ---- object catalog -------------------------------------------------------------

@dataclass(frozen=True)
class CatalogClass:
    class_id: int
    name: str
    points: ModelPoints
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "color",
                           np.clip(np.asarray(self.color, dtype=np.float64).reshape(3), 0, 1))


@dataclass
class ObjectCatalog:
    """Per-class model points, symmetry flags, and display colors."""

    classes: list

    def __post_init__(self):
        ids = [c.class_id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ConfigError(f"class ids must be dense 0..C-1, got {ids}")

    @property
    def n_classes(self):
        return len(self.classes)

    def points_by_class(self):
        return {c.class_id: c.points for c in self.classes}

    def names(self):
        return {c.class_id: c.name for c in self.classes}


def _block_vertices():
    # solid rectangular block, 15 x 10 x 6 cm
    gx, gy, gz = np.meshgrid(np.linspace(-0.075, 0.075, 5),
                             np.linspace(-0.05, 0.05, 4),
                             np.linspace(-0.03, 0.03, 3), indexing="ij")
    return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


def _wedge_vertices():
    # triangular prism tapering along +x, 18 x 12 x 7.5 cm
    pts = []
    for x in np.linspace(-0.09, 0.09, 7):
        half = 0.06 * (0.09 - x) / 0.18 + 0.006
        for y in np.linspace(-half, half, 4):
            for z in np.linspace(-0.0375, 0.0375, 3):
                pts.append((x, y, z))
    return np.asarray(pts)


def _disc_vertices():
    # flat annulus in the xy plane, rotationally symmetric about z
    pts = []
    for radius in (0.045, 0.075):
        for k in range(16):
            ang = 2.0 * np.pi * k / 16
            for z in (-0.009, 0.009):
                pts.append((radius * np.cos(ang), radius * np.sin(ang), z))
    return np.asarray(pts)


def make_default_catalog(n_points=64, seed=0) -> ObjectCatalog:
    """Built-in three-class catalog; the disc class is rotationally symmetric."""
    specs = [
        ("block", _block_vertices(), False, (0.90, 0.20, 0.15)),
        ("wedge", _wedge_vertices(), False, (0.20, 0.85, 0.25)),
        ("disc", _disc_vertices(), True, (0.20, 0.35, 0.90)),
    ]
    classes = []
    for class_id, (name, verts, symmetric, color) in enumerate(specs):
        points = subsample_points(verts, n_points, seed=seed + class_id,
                                  symmetric=symmetric)
        classes.append(CatalogClass(class_id, name, points, np.array(color)))
    return ObjectCatalog(classes)


def catalog_from_meshes(mesh_paths, n_points=64, seed=0, scale=1.0,
                        symmetric_ids=()):
    """Catalog built from ascii PLY meshes, one class per file (sorted)."""
    from .geometry import load_ply_vertices

    rng = np.random.default_rng(seed)
    classes = []
    for class_id, path in enumerate(sorted(mesh_paths)):
        verts = load_ply_vertices(path, scale=scale)
        name = os.path.splitext(os.path.basename(path))[0]
        points = subsample_points(verts, n_points, seed=seed + class_id,
                                  symmetric=class_id in set(symmetric_ids))
        classes.append(CatalogClass(class_id, name, points,
                                    rng.uniform(0.2, 0.95, size=3)))
    if not classes:
        raise EmptyMesh("no mesh files given")
    return ObjectCatalog(classes)


# ---- scene generation -------------------------------------------------------------

@dataclass
class SceneConfig:
    """Synthetic scene generator settings."""

    image_h: int = 64
    image_w: int = 64
    fx: float = 80.0
    fy: float = 80.0
    n_objects_min: int = 1
    n_objects_max: int = 2
    z_min: float = 0.92
    z_max: float = 0.98
    margin_px: float = 7.0
    min_center_dist_px: float = 18.0
    background: float = 0.03
    n_points: int = 64

    def __post_init__(self):
        if self.n_objects_min < 0 or self.n_objects_max < self.n_objects_min:
            raise ConfigError("need 0 <= n_objects_min <= n_objects_max")
        if self.z_min <= 0 or self.z_max < self.z_min:
            raise ConfigError("need 0 < z_min <= z_max")
        if self.image_h < 8 or self.image_w < 8:
            raise ConfigError("image too small")

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.image_w / 2.0, self.image_h / 2.0)


@dataclass(frozen=True)
class AnnotatedObject:
    class_id: int
    pose: Pose
    bbox: np.ndarray  # (4,) cx cy w h normalized


@dataclass(frozen=True)
class SceneAnnotation:
    image_id: int
    camera: CameraIntrinsics
    objects: tuple
    file: str = None

    def target_set(self) -> TargetSet:
        return TargetSet([GroundTruthObject(o.class_id, o.bbox, o.pose)
                          for o in self.objects])


def _fill_hull(image, uv, color):
    """Paint the convex hull of 2D pixel points (or splat them when degenerate)."""
    h, w = image.shape[:2]

    def splat(points):
        for u, v in points:
            ui, vi = int(round(u)), int(round(v))
            if 0 <= vi < h and 0 <= ui < w:
                image[vi, ui] = color

    if len(uv) < 3:
        splat(uv)
        return
    try:
        hull = ConvexHull(uv)
    except QhullError:
        splat(uv)
        return
    verts = uv[hull.vertices]  # counterclockwise
    lo = np.floor(verts.min(axis=0)).astype(int)
    hi = np.ceil(verts.max(axis=0)).astype(int)
    u0, v0 = np.clip(lo, 0, [w - 1, h - 1])
    u1, v1 = np.clip(hi, 0, [w - 1, h - 1])
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    inside = np.ones(uu.shape, dtype=bool)
    for k in range(len(verts)):
        a = verts[k]
        b = verts[(k + 1) % len(verts)]
        cross = (b[0] - a[0]) * (vv - a[1]) - (b[1] - a[1]) * (uu - a[0])
        inside &= cross >= -1e-9
    image[v0:v1 + 1, u0:u1 + 1][inside] = color


def render_scene(catalog: ObjectCatalog, camera: CameraIntrinsics, placed,
                 config: SceneConfig):
    """Flat-shaded painter's rendering of placed (class_id, pose) objects."""
    image = np.full((config.image_h, config.image_w, 3), config.background)
    order = sorted(range(len(placed)), key=lambda i: -placed[i][1].translation[2])
    for i in order:
        class_id, pose = placed[i]
        entry = catalog.classes[class_id]
        pts_obj = entry.points.points
        pts_cam = transform_points(pts_obj, pose)
        uv = project_points(camera, pts_cam)
        depth = pose.translation[2]
        span = max(config.z_max - config.z_min, 1e-6)
        shade = 1.0 - 0.4 * np.clip((depth - config.z_min) / span, 0.0, 1.0)
        _fill_hull(image, uv, np.clip(entry.color * shade, 0.0, 1.0))
        # orientation marker: the +x face of the object, drawn brighter
        x_lo, x_hi = pts_obj[:, 0].min(), pts_obj[:, 0].max()
        marker = pts_obj[:, 0] >= x_lo + 0.65 * (x_hi - x_lo)
        if marker.any():
            marker_color = np.clip(0.45 * entry.color * shade + 0.55, 0.0, 1.0)
            _fill_hull(image, uv[marker], marker_color)
    return image


def generate_scene(catalog: ObjectCatalog, seed, config: SceneConfig, image_id=0):
    """One deterministic synthetic scene: (image in [0,1], SceneAnnotation).

    Objects get uniform random rotations and frustum translations; all of an
    object's projected points stay inside the image margins and object
    centers keep a minimum pixel distance.
    """
    rng = np.random.default_rng(seed)
    camera = config.camera
    n_objects = int(rng.integers(config.n_objects_min, config.n_objects_max + 1))
    placed = []
    centers = []
    annotations = []
    for _ in range(n_objects):
        for _attempt in range(100):
            class_id = int(rng.integers(0, catalog.n_classes))
            rotation = random_rotation(rng)
            z = rng.uniform(config.z_min, config.z_max)
            u = rng.uniform(config.margin_px, config.image_w - 1 - config.margin_px)
            v = rng.uniform(config.margin_px, config.image_h - 1 - config.margin_px)
            translation = np.array([(u - camera.cx) * z / camera.fx,
                                    (v - camera.cy) * z / camera.fy, z])
            pose = Pose(rotation, translation)
            pts_cam = transform_points(catalog.classes[class_id].points, pose)
            if np.any(pts_cam[:, 2] <= 1e-3):
                continue
            uv = project_points(camera, pts_cam)
            if uv[:, 0].min() < 1.0 or uv[:, 0].max() > config.image_w - 2.0 or \
               uv[:, 1].min() < 1.0 or uv[:, 1].max() > config.image_h - 2.0:
                continue
            center = np.array([u, v])
            if any(np.linalg.norm(center - c) < config.min_center_dist_px
                   for c in centers):
                continue
            placed.append((class_id, pose))
            centers.append(center)
            u0, v0 = uv[:, 0].min(), uv[:, 1].min()
            u1, v1 = uv[:, 0].max(), uv[:, 1].max()
            bbox = np.array([(u0 + u1) / 2.0 / config.image_w,
                             (v0 + v1) / 2.0 / config.image_h,
                             (u1 - u0) / config.image_w,
                             (v1 - v0) / config.image_h])
            annotations.append(AnnotatedObject(class_id, pose, bbox))
            break
    image = render_scene(catalog, camera, placed, config)
    return image, SceneAnnotation(image_id=image_id, camera=camera,
                                  objects=tuple(annotations))


@dataclass
class Sample:
    image_id: int
    image: np.ndarray
    annotation: SceneAnnotation

    @property
    def targets(self) -> TargetSet:
        return self.annotation.target_set()


@dataclass
class Dataset:
    """In-memory dataset: samples plus the catalog they were drawn from."""

    samples: list
    catalog: ObjectCatalog
    camera: CameraIntrinsics

    def points_by_class(self):
        return self.catalog.points_by_class()

    def __len__(self):
        return len(self.samples)


def generate_dataset(catalog: ObjectCatalog, config: SceneConfig, n_scenes,
                     base_seed=0) -> Dataset:
    """``n_scenes`` scenes with per-scene seeds ``base_seed + image_id``."""
    samples = []
    for image_id in range(n_scenes):
        image, annotation = generate_scene(catalog, base_seed + image_id,
                                           config, image_id=image_id)
        samples.append(Sample(image_id=image_id, image=image, annotation=annotation))
    return Dataset(samples=samples, catalog=catalog, camera=config.camera)


# ---- PPM image I/O ------------------------------------------------------------------

def write_ppm(path, image):
    """Binary PPM (P6), 8 bits per channel, from a float image in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ConfigError(f"image must be (h, w, 3), got {arr.shape}")
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    """Read a binary PPM (P6) into a float image in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(blob):
            raise ParseError(f"{path}: truncated PPM header")
        c = blob[i:i + 1]
        if c == b"#":
            while i < len(blob) and blob[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j:j + 1].isspace():
                j += 1
            tokens.append(blob[i:j])
            i = j
    if tokens[0] != b"P6":
        raise ParseError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}")
    i += 1  # single whitespace after maxval
    if len(blob) - i < w * h * 3:
        raise ParseError(f"{path}: truncated pixel data")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=i)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


# ---- annotation and catalog JSON ------------------------------------------------------

def _require(doc, key, context):
    if key not in doc:
        raise ParseError(f"{context}: missing required field {key!r}")
    return doc[key]


def save_annotations(path, camera: CameraIntrinsics, annotations):
    doc = {
        "version": ANNOTATION_FORMAT_VERSION,
        "camera": {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy},
        "scenes": [
            {
                "image_id": a.image_id,
                "file": a.file or f"img_{a.image_id:05d}.ppm",
                "objects": [
                    {
                        "class_id": o.class_id,
                        "R": [float(x) for x in o.pose.rotation.reshape(-1)],
                        "t": [float(x) for x in o.pose.translation],
                        "bbox": [float(x) for x in o.bbox],
                    }
                    for o in a.objects
                ],
            }
            for a in annotations
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


def load_annotations(path):
    """Returns (camera, list of SceneAnnotation); raises ParseError naming
    the first missing or malformed field."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    version = _require(doc, "version", path)
    if version != ANNOTATION_FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported annotation version {version}")
    cam = _require(doc, "camera", path)
    camera = CameraIntrinsics(
        fx=_require(cam, "fx", f"{path}: camera"),
        fy=_require(cam, "fy", f"{path}: camera"),
        cx=_require(cam, "cx", f"{path}: camera"),
        cy=_require(cam, "cy", f"{path}: camera"))
    annotations = []
    for s_idx, scene in enumerate(_require(doc, "scenes", path)):
        ctx = f"{path}: scenes[{s_idx}]"
        image_id = _require(scene, "image_id", ctx)
        file = _require(scene, "file", ctx)
        objects = []
        for o_idx, obj in enumerate(_require(scene, "objects", ctx)):
            octx = f"{ctx}.objects[{o_idx}]"
            rot = np.asarray(_require(obj, "R", octx), dtype=np.float64)
            if rot.size != 9:
                raise ParseError(f"{octx}: R must have 9 entries")
            trans = np.asarray(_require(obj, "t", octx), dtype=np.float64)
            if trans.size != 3:
                raise ParseError(f"{octx}: t must have 3 entries")
            bbox = np.asarray(_require(obj, "bbox", octx), dtype=np.float64)
            if bbox.size != 4:
                raise ParseError(f"{octx}: bbox must have 4 entries")
            objects.append(AnnotatedObject(
                class_id=int(_require(obj, "class_id", octx)),
                pose=Pose(rot.reshape(3, 3), trans),
                bbox=bbox))
        annotations.append(SceneAnnotation(image_id=int(image_id), camera=camera,
                                           objects=tuple(objects), file=str(file)))
    return camera, annotations


def save_catalog(path, catalog: ObjectCatalog):
    doc = {
        "version": CATALOG_FORMAT_VERSION,
        "classes": [
            {
                "class_id": c.class_id,
                "name": c.name,
                "symmetric": bool(c.points.symmetric),
                "color": [float(x) for x in c.color],
                "points": [[float(v) for v in p] for p in c.points.points],
            }
            for c in catalog.classes
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


def load_catalog(path) -> ObjectCatalog:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    version = _require(doc, "version", path)
    if version != CATALOG_FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported catalog version {version}")
    classes = []
    for idx, entry in enumerate(_require(doc, "classes", path)):
        ctx = f"{path}: classes[{idx}]"
        points = ModelPoints(np.asarray(_require(entry, "points", ctx), dtype=np.float64),
                             symmetric=bool(_require(entry, "symmetric", ctx)))
        classes.append(CatalogClass(
            class_id=int(_require(entry, "class_id", ctx)),
            name=str(_require(entry, "name", ctx)),
            points=points,
            color=np.asarray(_require(entry, "color", ctx), dtype=np.float64)))
    return ObjectCatalog(classes)


# ---- dataset on disk -------------------------------------------------------------------

def save_dataset(out_dir, dataset: Dataset):
    """images/ *.ppm + annotations.json + catalog.json under ``out_dir``."""
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    annotations = []
    for sample in dataset.samples:
        fname = f"img_{sample.image_id:05d}.ppm"
        write_ppm(os.path.join(images_dir, fname), sample.image)
        ann = sample.annotation
        annotations.append(SceneAnnotation(image_id=ann.image_id, camera=ann.camera,
                                           objects=ann.objects, file=fname))
    save_annotations(os.path.join(out_dir, "annotations.json"),
                     dataset.camera, annotations)
    save_catalog(os.path.join(out_dir, "catalog.json"), dataset.catalog)


def load_dataset(data_dir) -> Dataset:
    catalog = load_catalog(os.path.join(data_dir, "catalog.json"))
    camera, annotations = load_annotations(os.path.join(data_dir, "annotations.json"))
    samples = []
    for ann in annotations:
        image = read_ppm(os.path.join(data_dir, "images", ann.file))
        samples.append(Sample(image_id=ann.image_id, image=image, annotation=ann))
    return Dataset(samples=samples, catalog=catalog, camera=camera)

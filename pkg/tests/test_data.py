import numpy as np
import pytest

from setpose import (BehindCamera, CameraIntrinsics, ParseError, Pose,
                     SceneConfig, generate_dataset, generate_scene,
                     make_default_catalog, project)
from setpose.data import (catalog_from_meshes, load_annotations, load_catalog,
                          load_dataset, project_points, read_ppm,
                          save_annotations, save_catalog, save_dataset,
                          write_ppm)
from setpose.geometry import check_rotation


@pytest.fixture(scope="module")
def catalog():
    return make_default_catalog(n_points=32, seed=0)


@pytest.fixture(scope="module")
def scene_cfg():
    return SceneConfig()


class TestProjection:
    def test_principal_point(self):
        cam = CameraIntrinsics(100.0, 100.0, 32.0, 32.0)
        assert np.array_equal(project(cam, [0.0, 0.0, 1.0]), [32.0, 32.0])

    def test_linear_offset(self):
        cam = CameraIntrinsics(100.0, 100.0, 32.0, 32.0)
        assert np.array_equal(project(cam, [0.1, 0.0, 1.0]), [42.0, 32.0])

    def test_doubling_depth_halves_offset(self):
        cam = CameraIntrinsics(100.0, 100.0, 32.0, 32.0)
        near = project(cam, [0.1, 0.05, 1.0]) - np.array([32.0, 32.0])
        far = project(cam, [0.1, 0.05, 2.0]) - np.array([32.0, 32.0])
        assert np.abs(near - 2.0 * far).max() < 1e-12

    def test_behind_camera_rejected(self):
        cam = CameraIntrinsics(100.0, 100.0, 32.0, 32.0)
        with pytest.raises(BehindCamera):
            project(cam, [0.0, 0.0, -0.5])
        with pytest.raises(BehindCamera):
            project_points(cam, [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])


class TestDefaultCatalog:
    def test_three_classes_one_symmetric(self, catalog):
        assert catalog.n_classes == 3
        flags = [c.points.symmetric for c in catalog.classes]
        assert flags.count(True) == 1
        assert catalog.classes[2].points.symmetric

    def test_dense_ids_and_positive_diameters(self, catalog):
        assert [c.class_id for c in catalog.classes] == [0, 1, 2]
        for c in catalog.classes:
            assert c.points.diameter > 0.05


class TestSceneGeneration:
    def test_deterministic(self, catalog, scene_cfg):
        img_a, ann_a = generate_scene(catalog, 42, scene_cfg)
        img_b, ann_b = generate_scene(catalog, 42, scene_cfg)
        assert np.array_equal(img_a, img_b)
        assert len(ann_a.objects) == len(ann_b.objects)
        for oa, ob in zip(ann_a.objects, ann_b.objects):
            assert oa.class_id == ob.class_id
            assert np.array_equal(oa.pose.rotation, ob.pose.rotation)
            assert np.array_equal(oa.bbox, ob.bbox)

    def test_empty_scene(self, catalog):
        cfg = SceneConfig(n_objects_min=0, n_objects_max=0)
        img, ann = generate_scene(catalog, 0, cfg)
        assert len(ann.objects) == 0
        assert np.all(img == cfg.background)

    def test_bboxes_contain_all_projected_points(self, catalog, scene_cfg):
        for seed in range(10):
            _, ann = generate_scene(catalog, seed, scene_cfg)
            for obj in ann.objects:
                pts = catalog.classes[obj.class_id].points.points
                cam_pts = pts @ obj.pose.rotation.T + obj.pose.translation
                uv = project_points(ann.camera, cam_pts)
                u = uv[:, 0] / scene_cfg.image_w
                v = uv[:, 1] / scene_cfg.image_h
                cx, cy, w, h = obj.bbox
                assert u.min() >= cx - w / 2 - 1e-9
                assert u.max() <= cx + w / 2 + 1e-9
                assert v.min() >= cy - h / 2 - 1e-9
                assert v.max() <= cy + h / 2 + 1e-9
                # tight: the extremes touch the box edges
                assert abs(u.min() - (cx - w / 2)) < 1e-9
                assert abs(u.max() - (cx + w / 2)) < 1e-9

    def test_poses_valid_and_in_front(self, catalog, scene_cfg):
        for seed in range(10):
            _, ann = generate_scene(catalog, seed, scene_cfg)
            for obj in ann.objects:
                check_rotation(obj.pose.rotation)
                assert obj.pose.translation[2] > 0

    def test_center_separation(self, catalog, scene_cfg):
        for seed in range(10):
            _, ann = generate_scene(catalog, seed, scene_cfg)
            centers = [project(ann.camera, o.pose.translation) for o in ann.objects]
            for i in range(len(centers)):
                for j in range(i + 1, len(centers)):
                    assert np.linalg.norm(centers[i] - centers[j]) >= \
                        scene_cfg.min_center_dist_px - 1e-9

    def test_dataset_reproducible_and_seed_derived(self, catalog, scene_cfg):
        ds_a = generate_dataset(catalog, scene_cfg, 4, base_seed=9)
        ds_b = generate_dataset(catalog, scene_cfg, 4, base_seed=9)
        for sa, sb in zip(ds_a.samples, ds_b.samples):
            assert np.array_equal(sa.image, sb.image)
        img2, _ = generate_scene(catalog, 9 + 2, scene_cfg, image_id=2)
        assert np.array_equal(ds_a.samples[2].image, img2)


class TestPpm:
    def test_roundtrip_quantized(self, tmp_path, rng):
        img = rng.uniform(0, 1, size=(10, 12, 3))
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        back = read_ppm(path)
        assert back.shape == (10, 12, 3)
        assert np.array_equal(np.round(img * 255), np.round(back * 255))

    def test_rejects_non_p6(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ParseError):
            read_ppm(path)

    def test_rejects_truncated(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n4 4\n255\n\x00\x00")
        with pytest.raises(ParseError):
            read_ppm(path)


class TestAnnotationsIO:
    def test_roundtrip_structural_identity(self, tmp_path, catalog, scene_cfg):
        anns = [generate_scene(catalog, s, scene_cfg, image_id=s)[1] for s in range(3)]
        path = tmp_path / "annotations.json"
        save_annotations(path, scene_cfg.camera, anns)
        camera, loaded = load_annotations(path)
        assert camera == scene_cfg.camera
        assert len(loaded) == 3
        for orig, back in zip(anns, loaded):
            assert back.image_id == orig.image_id
            assert len(back.objects) == len(orig.objects)
            for oa, ob in zip(orig.objects, back.objects):
                assert ob.class_id == oa.class_id
                # JSON floats use repr; the round trip is double exact
                assert np.array_equal(ob.pose.rotation, oa.pose.rotation)
                assert np.array_equal(ob.pose.translation, oa.pose.translation)
                assert np.array_equal(ob.bbox, oa.bbox)

    def test_missing_field_names_it(self, tmp_path):
        path = tmp_path / "annotations.json"
        path.write_text('{"version": 1, "camera": {"fx": 1.0, "fy": 1.0, "cx": 0}, '
                        '"scenes": []}')
        with pytest.raises(ParseError, match="cy"):
            load_annotations(path)

    def test_missing_object_field_names_it(self, tmp_path):
        path = tmp_path / "annotations.json"
        path.write_text(
            '{"version": 1, '
            '"camera": {"fx": 1.0, "fy": 1.0, "cx": 0.5, "cy": 0.5}, '
            '"scenes": [{"image_id": 0, "file": "x.ppm", '
            '"objects": [{"class_id": 0, "R": [1,0,0,0,1,0,0,0,1], '
            '"bbox": [0.5,0.5,0.1,0.1]}]}]}')
        with pytest.raises(ParseError, match="'t'"):
            load_annotations(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "annotations.json"
        path.write_text("{nope")
        with pytest.raises(ParseError):
            load_annotations(path)


class TestCatalogIO:
    def test_roundtrip(self, tmp_path, catalog):
        path = tmp_path / "catalog.json"
        save_catalog(path, catalog)
        loaded = load_catalog(path)
        assert loaded.n_classes == catalog.n_classes
        for orig, back in zip(catalog.classes, loaded.classes):
            assert back.name == orig.name
            assert back.points.symmetric == orig.points.symmetric
            assert np.array_equal(back.points.points, orig.points.points)
            assert back.points.diameter == orig.points.diameter

    def test_missing_field(self, tmp_path):
        path = tmp_path / "catalog.json"
        path.write_text('{"version": 1, "classes": [{"class_id": 0, "name": "x", '
                        '"symmetric": false, "color": [1, 0, 0]}]}')
        with pytest.raises(ParseError, match="points"):
            load_catalog(path)


class TestDatasetIO:
    def test_save_load_roundtrip(self, tmp_path, catalog, scene_cfg):
        dataset = generate_dataset(catalog, scene_cfg, 3, base_seed=1)
        save_dataset(tmp_path, dataset)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == 3
        for orig, back in zip(dataset.samples, loaded.samples):
            assert np.array_equal(np.round(orig.image * 255),
                                  np.round(back.image * 255))
            assert len(back.targets) == len(orig.targets)


class TestMeshCatalog:
    def test_catalog_from_ply(self, tmp_path):
        for name, scale in (("a.ply", 1.0), ("b.ply", 2.0)):
            (tmp_path / name).write_text("\n".join([
                "ply", "format ascii 1.0", "element vertex 4",
                "property float x", "property float y", "property float z",
                "end_header",
                f"0 0 0", f"{scale} 0 0", f"0 {scale} 0", f"0 0 {scale}", ""]))
        catalog = catalog_from_meshes([tmp_path / "a.ply", tmp_path / "b.ply"],
                                      n_points=4, seed=0, scale=1e-3,
                                      symmetric_ids=[1])
        assert catalog.n_classes == 2
        assert catalog.classes[0].name == "a"
        assert not catalog.classes[0].points.symmetric
        assert catalog.classes[1].points.symmetric
        assert abs(catalog.classes[0].points.diameter - np.sqrt(2) * 1e-3) < 1e-12

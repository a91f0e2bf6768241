import json
import logging
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from scenes import clutter_scene
from sqgrasp.cli import main
from sqgrasp.cloud import PointCloud, save_pcd
from sqgrasp.errors import ParameterError
from sqgrasp.fit import radial_error
from sqgrasp.pipeline import PipelineConfig, run_on_cloud, run_pipeline, table_frame
from sqgrasp.scene import PlaneModel


def write_config(path, scene_pcd, out_dir, seed=0, **extra):
    cfg = {"input": str(scene_pcd), "output_dir": str(out_dir), "seed": seed, **extra}
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    scene = clutter_scene(sigma=0.002, seed=1)
    save_pcd(scene.cloud, d / "scene.pcd")
    return d / "scene.pcd", scene


def objects_json(out_dir):
    return sorted(p for p in out_dir.glob("object_*.json"))


class TestConfig:
    def test_requires_seed(self, tmp_path, scene_file):
        with pytest.raises(ParameterError):
            PipelineConfig.from_dict({"input": str(scene_file[0])})

    def test_requires_existing_input(self, tmp_path):
        with pytest.raises(ParameterError):
            PipelineConfig.from_dict({"input": str(tmp_path / "nope.pcd"), "seed": 0})

    def test_relative_paths(self, tmp_path, scene_file):
        (tmp_path / "g.json").write_text(json.dumps({"width_m": 0.1, "depth_m": 0.09, "alpha_deg": 30}))
        save_pcd(PointCloud(np.zeros((3, 3))), tmp_path / "s.pcd")
        (tmp_path / "c.json").write_text(json.dumps({"input": "s.pcd", "seed": 1, "gripper": "g.json", "output_dir": "o"}))
        cfg = PipelineConfig.load(tmp_path / "c.json")
        assert cfg.input == tmp_path / "s.pcd" and cfg.output_dir == tmp_path / "o"
        assert cfg.gripper.alpha == pytest.approx(math.radians(30))


class TestRunPipeline:
    def test_three_objects_exports(self, tmp_path, scene_file):
        cfg = PipelineConfig.load(write_config(tmp_path / "c.json", scene_file[0], tmp_path / "out"))
        result = run_pipeline(cfg)
        assert result.exit_code == 0
        assert len(objects_json(tmp_path / "out")) == 3
        assert len(list((tmp_path / "out").glob("*.pcd"))) == 6
        for p in objects_json(tmp_path / "out"):
            d = json.loads(p.read_text())
            assert d["fit"]["converged"] and d["grasp_counts"]["accepted"] >= 1

    def test_fits_close_to_truth(self, scene_file):
        _, scene = scene_file
        res = run_on_cloud(scene.cloud, PipelineConfig(None, None, 0, camera_pose=scene.camera))
        assert len(res.objects) == 3
        for o in res.objects:
            truth = min(scene.objects, key=lambda t: np.linalg.norm(t.pose.translation - o.fit.sq.pose.translation))
            assert radial_error(truth, o.fit.sq) <= 15.0

    def test_empty_scene(self, tmp_path, caplog):
        g = np.arange(-0.3, 0.3, 0.01)
        gx, gy = np.meshgrid(g, g)
        table = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, 0.8)])
        save_pcd(PointCloud(table), tmp_path / "t.pcd")
        cfg = PipelineConfig.load(write_config(tmp_path / "c.json", tmp_path / "t.pcd", tmp_path / "out"))
        with caplog.at_level(logging.WARNING):
            result = run_pipeline(cfg)
        assert result.exit_code == 0 and len(result.objects) == 0
        assert "no objects" in caplog.text
        assert json.loads((tmp_path / "out" / "summary.json").read_text())["n_objects"] == 0

    def test_seed_stability(self, scene_file):
        _, scene = scene_file
        a = run_on_cloud(scene.cloud, PipelineConfig(None, None, 1))
        b = run_on_cloud(scene.cloud, PipelineConfig(None, None, 2))
        assert len(a.objects) == len(b.objects) == 3
        for x, y in zip(a.objects, b.objects):
            assert_allclose(y.fit.sq.shape, x.fit.sq.shape, rtol=0.01)

    def test_byte_identical_without_timings(self, tmp_path, scene_file):
        outs = []
        for run in ("a", "b"):
            cfg = write_config(tmp_path / f"{run}.json", scene_file[0], tmp_path / run, timings=False)
            assert main(["pipeline", "--config", str(cfg)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
        assert outs[0] == outs[1]

    def test_failure_exit_code(self, tmp_path):
        # four points survive clustering but are too few to fit once mirrored
        g = np.arange(-0.3, 0.3, 0.01)
        gx, gy = np.meshgrid(g, g)
        table = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
        rng = np.random.default_rng(0)
        speck = np.column_stack([rng.uniform(0, 0.001, (4, 2)), np.full(4, 0.05)])
        save_pcd(PointCloud(np.vstack([table, speck]), "world"), tmp_path / "s.pcd")
        cfg = write_config(
            tmp_path / "c.json", tmp_path / "s.pcd", tmp_path / "out", segmentation={"min_size": 3}, mirror={"outlier_k": 0}
        )
        assert main(["pipeline", "--config", str(cfg)]) == 1
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["n_objects"] == 1 and summary["n_fitted"] == 0


class TestComposition:
    def test_subcommands_equal_pipeline(self, tmp_path, scene_file):
        pcd, _ = scene_file
        cfg = write_config(tmp_path / "c.json", pcd, tmp_path / "pipe", timings=False)
        assert main(["pipeline", "--config", str(cfg)]) == 0

        seg = tmp_path / "seg"
        assert main(["segment", "--in", str(pcd), "--seed", "0", "--out-dir", str(seg)]) == 0
        listing = json.loads((seg / "segment.json").read_text())["clusters"]
        assert len(listing) == 3
        for i, entry in enumerate(listing):
            cl = seg / entry["file"]
            mir, pose = tmp_path / f"m{i}.pcd", tmp_path / f"m{i}_pose.json"
            fit, grasp = tmp_path / f"f{i}.json", tmp_path / f"g{i}.json"
            assert main(["mirror", "--in", str(cl), "--plane", str(seg / "plane.json"), "--out", str(mir), "--pose-out", str(pose)]) == 0
            assert main(["fit", "--in", str(mir), "--pose", str(pose), "--out", str(fit), "--no-timings"]) == 0
            assert main(["grasp", "--sq", str(fit), "--plane", str(seg / "plane.json"), "--out", str(grasp)]) == 0

            ref = json.loads((tmp_path / "pipe" / f"object_{i:02d}.json").read_text())
            got_fit = json.loads(fit.read_text())
            for k in ("a1", "a2", "a3", "eps1", "eps2", "cost"):
                assert got_fit[k] == pytest.approx(ref["fit"][k], abs=1e-9)
            got_pose = json.loads(pose.read_text())
            assert_allclose(got_pose["center"], ref["pose_estimate"]["center"], atol=1e-9)
            got_grasps = json.loads(grasp.read_text())
            assert len(got_grasps) == len(ref["grasps"])
            for g, r in zip(got_grasps, ref["grasps"]):
                assert g["status"] == r["status"] and g["rank"] == r["rank"]
                assert_allclose(g["contacts"], r["contacts"], atol=1e-9)
                assert_allclose(g["approach"], r["approach"], atol=1e-9)


class TestTableFrame:
    def test_plane_maps_to_z0(self, rng):
        n = np.array([0.1, -0.5, 0.8])
        n /= np.linalg.norm(n)
        plane = PlaneModel(n, -0.4)
        T = table_frame(plane)
        # points on the plane land on z = 0, the normal maps to +z
        u = np.cross(n, [1.0, 0.0, 0.0])
        pts = 0.4 * n + rng.normal(size=(20, 1)) * u
        w = pts @ T[:3, :3].T + T[:3, 3]
        assert_allclose(w[:, 2], 0.0, atol=1e-12)
        assert_allclose(T[:3, :3] @ n, [0, 0, 1], atol=1e-12)

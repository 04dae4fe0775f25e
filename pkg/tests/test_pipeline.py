import json

import numpy as np
import pytest

from rgbdyn.cli import main as cli_main
from rgbdyn.pipeline import PipelineConfig, normalize_variant, run_pipeline
from rgbdyn.synth import cuboid_walk_json, render, scene_from_json
from rgbdyn.tum import Trajectory, load_sequence, read_depth, read_mask


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_ds")
    spec = scene_from_json(cuboid_walk_json(n_frames=10, width=256, height=192))
    frames = render(spec, out_dir=out)
    return out, spec, frames


@pytest.fixture(scope="module")
def small_static_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_static")
    spec = scene_from_json(
        cuboid_walk_json(n_frames=8, width=256, height=192, with_mover=False)
    )
    render(spec, out_dir=out)
    return out


def small_tracker():
    from rgbdyn.tracking import TrackerParams

    return TrackerParams(target_features=400, keyframe_capacity=20)


class TestVariants:
    def test_normalize(self):
        assert normalize_variant("n+g") == "N+G"
        assert normalize_variant("NONE") == "none"
        assert normalize_variant("n+g+bi") == "N+G+BI"
        assert normalize_variant("bogus") is None
        with pytest.raises(ValueError):
            PipelineConfig(dataset=".", variant="bogus")

    def test_variant_flags(self):
        cfg = PipelineConfig(dataset=".", variant="N+G+BI")
        assert cfg.uses_semantic and cfg.uses_geometry and cfg.inpaint_before_tracking
        cfg = PipelineConfig(dataset=".", variant="G")
        assert not cfg.uses_semantic and cfg.uses_geometry


class TestRunPipeline:
    def test_variant_none_static_scene(self, small_static_dataset, tmp_path):
        out = tmp_path / "run"
        cfg = PipelineConfig(
            dataset=small_static_dataset, out=out, variant="none", tracker=small_tracker()
        )
        result = run_pipeline(cfg)
        assert all(lg.tracked for lg in result.logs)
        traj = Trajectory.load(out / "trajectory.txt")
        assert len(traj) == 8  # one pose per frame
        assert (out / "metrics.json").exists()
        assert (out / "timings.csv").exists()
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["tracked_percent"] == 100.0
        assert "ate" in metrics

    def test_missing_masks_rejected(self, small_static_dataset, tmp_path):
        cfg = PipelineConfig(
            dataset=small_static_dataset,
            out=tmp_path / "x",
            variant="N",
            tracker=small_tracker(),
            masks_dir=tmp_path / "does_not_exist",
        )
        with pytest.raises(ValueError, match="mask"):
            run_pipeline(cfg)

    def test_variant_ng_runs_and_writes_masks(self, small_dataset, tmp_path):
        dataset, spec, frames = small_dataset
        out = tmp_path / "ng"
        cfg = PipelineConfig(
            dataset=dataset, out=out, variant="N+G", tracker=small_tracker()
        )
        result = run_pipeline(cfg)
        assert result.metrics["tracked_percent"] == 100.0
        mask_files = sorted((out / "masks").glob("*.png"))
        assert len(mask_files) == 10
        m = read_mask(mask_files[5])
        assert m.shape == (192, 256)

    def test_variant_g_gt_poses(self, small_dataset, tmp_path):
        dataset, spec, frames = small_dataset
        out = tmp_path / "g"
        cfg = PipelineConfig(
            dataset=dataset,
            out=out,
            variant="G",
            pose_source="ground-truth",
            tracker=small_tracker(),
            gt_masks_dir=dataset / "masks",
        )
        result = run_pipeline(cfg)
        assert "mask" in result.metrics
        # geometric segmentation alone should find most of the mover
        assert result.metrics["mask"]["iou"] > 0.5

    def test_variant_bi_inpaints_before_tracking(self, small_dataset, tmp_path):
        dataset, spec, frames = small_dataset
        out = tmp_path / "bi"
        cfg = PipelineConfig(
            dataset=dataset, out=out, variant="N+G+BI", tracker=small_tracker()
        )
        result = run_pipeline(cfg)
        assert result.metrics["tracked_percent"] == 100.0
        inpaint_files = sorted((out / "inpaint").glob("*_inpaint.png"))
        assert inpaint_files
        depth_files = sorted((out / "inpaint").glob("*_depth_inpaint.png"))
        assert depth_files
        read_depth(depth_files[0])  # parses as 16-bit depth

    def test_ground_truth_mode_requires_gt(self, small_dataset, tmp_path):
        dataset, spec, frames = small_dataset
        seq_dir = tmp_path / "nogt"
        seq_dir.mkdir()
        for name in ("rgb", "depth", "rgb.txt", "depth.txt", "intrinsics.json"):
            src = dataset / name
            dst = seq_dir / name
            if src.is_dir():
                dst.symlink_to(src)
            else:
                dst.write_bytes(src.read_bytes())
        cfg = PipelineConfig(
            dataset=seq_dir,
            out=None,
            variant="none",
            pose_source="ground-truth",
            tracker=small_tracker(),
        )
        with pytest.raises(ValueError, match="ground"):
            run_pipeline(cfg)


class TestCli:
    def test_synth_run_evaluate_round_trip(self, tmp_path):
        ds = tmp_path / "ds"
        assert (
            cli_main(
                [
                    "synth",
                    "--out",
                    str(ds),
                    "--frames",
                    "6",
                    "--width",
                    "256",
                    "--height",
                    "192",
                    "--dump-scene",
                    str(tmp_path / "scene.json"),
                ]
            )
            == 0
        )
        assert (ds / "rgb.txt").exists()
        assert (tmp_path / "scene.json").exists()
        run_out = tmp_path / "run"
        assert (
            cli_main(
                [
                    "run",
                    "--dataset",
                    str(ds),
                    "--out",
                    str(run_out),
                    "--variant",
                    "N+G",
                    "--target-features",
                    "400",
                ]
            )
            == 0
        )
        metrics_out = tmp_path / "metrics.json"
        aligned_out = tmp_path / "aligned.txt"
        assert (
            cli_main(
                [
                    "evaluate",
                    "--est",
                    str(run_out / "trajectory.txt"),
                    "--gt",
                    str(ds / "groundtruth.txt"),
                    "--out",
                    str(metrics_out),
                    "--aligned-out",
                    str(aligned_out),
                    "--segment-lengths",
                    "0.05",
                ]
            )
            == 0
        )
        metrics = json.loads(metrics_out.read_text())
        assert "ate" in metrics
        Trajectory.load(aligned_out)

    def test_custom_scene_file(self, tmp_path):
        scene = cuboid_walk_json(n_frames=3, width=128, height=96)
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(scene))
        out = tmp_path / "ds"
        assert cli_main(["synth", "--out", str(out), "--scene", str(path)]) == 0
        seq = load_sequence(out)
        assert len(seq) == 3

    def test_segment_and_sweep(self, small_dataset, tmp_path):
        dataset, spec, frames = small_dataset
        seg_out = tmp_path / "seg"
        assert (
            cli_main(
                [
                    "segment",
                    "--dataset",
                    str(dataset),
                    "--out",
                    str(seg_out),
                    "--gt-masks",
                    str(dataset / "masks"),
                ]
            )
            == 0
        )
        masks = sorted((seg_out / "masks").glob("*.png"))
        assert len(masks) == 10
        csv_out = tmp_path / "sweep.csv"
        assert (
            cli_main(
                [
                    "sweep",
                    "--dataset",
                    str(dataset),
                    "--out",
                    str(csv_out),
                    "--taus",
                    "0.2",
                    "0.4",
                    "0.8",
                ]
            )
            == 0
        )
        lines = csv_out.read_text().strip().splitlines()
        assert lines[0] == "tau_z,precision,recall,score"
        assert len(lines) == 4

    def test_inpaint_command(self, small_dataset, tmp_path):
        dataset, spec, frames = small_dataset
        out = tmp_path / "inp"
        assert (
            cli_main(
                ["inpaint", "--dataset", str(dataset), "--out", str(out), "--max-frames", "8"]
            )
            == 0
        )
        files = sorted((out / "inpaint").glob("*_inpaint.png"))
        assert files
        cov = sorted((out / "inpaint").glob("*_coverage.png"))
        assert cov and read_mask(cov[-1]).any()

    def test_error_paths(self, tmp_path):
        assert cli_main(["run", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2

    def test_config_file_with_flag_precedence(self, small_dataset, tmp_path):
        dataset, spec, frames = small_dataset
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(
            json.dumps(
                {
                    "variant": "N+G",
                    "pose_source": "ground-truth",
                    "max_frames": 4,
                    "tracker": {"target_features": 300, "keyframe_capacity": 20},
                    "seg": {"tau_z": 0.3},
                }
            )
        )
        out = tmp_path / "from_config"
        # no --variant flag: the config file's variant applies
        assert (
            cli_main(
                [
                    "run",
                    "--dataset",
                    str(dataset),
                    "--out",
                    str(out),
                    "--config",
                    str(cfg_path),
                ]
            )
            == 0
        )
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["variant"] == "N+G"
        assert metrics["pose_source"] == "ground-truth"
        assert metrics["frames"] == 4
        # explicit flag beats the config file
        out2 = tmp_path / "flag_wins"
        assert (
            cli_main(
                [
                    "run",
                    "--dataset",
                    str(dataset),
                    "--out",
                    str(out2),
                    "--config",
                    str(cfg_path),
                    "--variant",
                    "none",
                ]
            )
            == 0
        )
        metrics2 = json.loads((out2 / "metrics.json").read_text())
        assert metrics2["variant"] == "none"

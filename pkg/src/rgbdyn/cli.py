"""Command-line surface: run, synth, evaluate, segment, inpaint, sweep."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dynaseg import SegParams, collect_keypoint_tests, segment_frame, sweep_tau_z, SweepSample
from .evaluate import MaskMetricsAccumulator, aligned_trajectory, ate, rpe
from .inpaint import inpaint_frame
from .pipeline import PipelineConfig, build_keyframes_from_gt, run_pipeline
from .synth import cuboid_walk_json, load_scene, render, scene_from_json
from .tracking import TrackerParams
from .tum import Trajectory, load_sequence, read_mask, write_depth, write_mask, write_rgb


def _add_run(sub):
    p = sub.add_parser("run", help="run a pipeline variant over a dataset")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--variant", default=None, help="none, N, G, N+G or N+G+BI")
    p.add_argument("--pose-source", default=None, choices=["tracked", "ground-truth"])
    p.add_argument("--masks", type=Path, default=None, help="semantic mask directory")
    p.add_argument("--gt-masks", type=Path, default=None, help="labels for mask metrics")
    p.add_argument("--config", type=Path, default=None, help="JSON config; flags win")
    p.add_argument("--tau-z", type=float, default=None)
    p.add_argument("--keyframes-inpaint", type=int, default=None)
    p.add_argument("--save-inpaint", action="store_true")
    p.add_argument("--target-features", type=int, default=None)
    p.add_argument("--max-frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    return p


def _cmd_run(args) -> int:
    if args.config is not None:
        config = PipelineConfig.from_json(
            args.config,
            dataset=str(args.dataset),
            out=str(args.out),
            variant=args.variant,  # flags win only when given explicitly
            pose_source=args.pose_source,
        )
    else:
        config = PipelineConfig(
            dataset=args.dataset,
            out=args.out,
            variant=args.variant or "none",
            pose_source=args.pose_source or "tracked",
        )
    if args.masks is not None:
        config.masks_dir = args.masks
    if args.gt_masks is not None:
        config.gt_masks_dir = args.gt_masks
    if args.tau_z is not None:
        config.seg = SegParams(**{**config.seg.__dict__, "tau_z": args.tau_z})
    if args.keyframes_inpaint is not None:
        config.inpaint_keyframes = args.keyframes_inpaint
    if args.save_inpaint:
        config.save_inpaint = True
    if args.target_features is not None:
        config.tracker = TrackerParams(
            **{**config.tracker.__dict__, "target_features": args.target_features}
        )
    if args.max_frames is not None:
        config.max_frames = args.max_frames
    if args.seed is not None:
        config.seed = args.seed

    result = run_pipeline(config)
    m = result.metrics
    print(f"variant {m['variant']}: {m['frames']} frames, "
          f"tracked {m['tracked_percent']:.1f}%, keyframes {m['keyframes']}")
    if "ate" in m:
        print(f"ATE rmse {m['ate']['rmse']:.4f} m over {m['ate']['matched_pairs']} pairs")
    if "rpe" in m:
        print(f"RPE {m['rpe']['translational_percent']:.2f}% "
              f"RRE {m['rpe']['rotational_deg_per_100m']:.3f} deg/100m")
    if "mask" in m:
        print(f"mask P {m['mask']['precision']:.3f} R {m['mask']['recall']:.3f} "
              f"IoU {m['mask']['iou']:.3f}")
    print(f"outputs in {result.out_dir}")
    return 0


def _add_synth(sub):
    p = sub.add_parser("synth", help="render a synthetic TUM-format dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--scene", type=Path, default=None, help="scene-spec JSON file")
    p.add_argument("--preset", default="cuboid-walk", choices=["cuboid-walk", "static"])
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-scene", type=Path, default=None, help="write the scene JSON used")
    return p


def _cmd_synth(args) -> int:
    if args.scene is not None:
        spec = load_scene(args.scene)
        data = json.loads(Path(args.scene).read_text())
    else:
        data = cuboid_walk_json(
            n_frames=args.frames,
            width=args.width,
            height=args.height,
            with_mover=args.preset == "cuboid-walk",
            seed=args.seed,
        )
        spec = scene_from_json(data)
    if args.dump_scene is not None:
        args.dump_scene.write_text(json.dumps(data, indent=2) + "\n")
    frames = render(spec, out_dir=args.out)
    print(f"rendered {len(frames)} frames to {args.out}")
    return 0


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="compare an estimated trajectory against ground truth")
    p.add_argument("--est", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None, help="metrics JSON path")
    p.add_argument("--aligned-out", type=Path, default=None, help="aligned trajectory path")
    p.add_argument("--max-diff", type=float, default=0.02)
    p.add_argument("--with-scale", action="store_true")
    p.add_argument("--segment-lengths", type=float, nargs="+", default=[0.1, 0.2, 0.5, 1.0])
    return p


def _cmd_evaluate(args) -> int:
    est = Trajectory.load(args.est)
    gt = Trajectory.load(args.gt)
    report = ate(est, gt, max_diff=args.max_diff, with_scale=args.with_scale)
    metrics = {"ate": report.to_dict()}
    print(f"ATE  rmse {report.rmse:.6f} m  mean {report.mean:.6f}  "
          f"median {report.median:.6f}  max {report.max:.6f}  pairs {report.matched_pairs}")
    try:
        rpe_report = rpe(est, gt, segment_lengths=args.segment_lengths, max_diff=args.max_diff)
        metrics["rpe"] = rpe_report.to_dict()
        print(f"RPE  {rpe_report.translational_percent:.3f} %   "
              f"RRE  {rpe_report.rotational_deg_per_100m:.4f} deg/100m  "
              f"segments {rpe_report.n_segments}")
    except ValueError as e:
        print(f"RPE  skipped ({e})")
    if args.out is not None:
        args.out.write_text(json.dumps(metrics, indent=2) + "\n")
    if args.aligned_out is not None:
        aligned_trajectory(est, report).save(args.aligned_out)
    return 0


def _add_segment(sub):
    p = sub.add_parser("segment", help="segmentation only, poses from ground truth")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--tau-z", type=float, default=0.4)
    p.add_argument("--keyframe-stride", type=int, default=2)
    p.add_argument("--gt-masks", type=Path, default=None, help="labels for P/R report")
    p.add_argument("--max-frames", type=int, default=None)
    return p


def _cmd_segment(args) -> int:
    seq = load_sequence(args.dataset)
    params = SegParams(**{**SegParams().__dict__, "tau_z": args.tau_z})
    out = args.out
    (out / "masks").mkdir(parents=True, exist_ok=True)
    acc = MaskMetricsAccumulator()
    for i, frame, keyframes in build_keyframes_from_gt(
        seq, stride=args.keyframe_stride, max_frames=args.max_frames
    ):
        dyn = segment_frame(frame, keyframes, frame.record.gt_pose, params)
        stem = frame.record.rgb_path.stem
        write_mask(out / "masks" / f"{stem}.png", dyn.fused)
        if args.gt_masks is not None:
            gt_path = args.gt_masks / f"{stem}.png"
            if gt_path.exists() and keyframes:
                acc.add(dyn.fused, read_mask(gt_path))
    if acc.per_frame:
        rep = acc.report()
        print(f"mask P {rep.precision:.3f} R {rep.recall:.3f} IoU {rep.iou:.3f} "
              f"({len(acc.per_frame)} frames)")
    print(f"masks in {out / 'masks'}")
    return 0


def _add_inpaint(sub):
    p = sub.add_parser("inpaint", help="inpainting only, poses from ground truth")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--masks", type=Path, default=None,
                   help="mask directory (defaults to the dataset's masks/)")
    p.add_argument("--keyframe-stride", type=int, default=2)
    p.add_argument("--keyframes-inpaint", type=int, default=20)
    p.add_argument("--max-frames", type=int, default=None)
    return p


def _cmd_inpaint(args) -> int:
    seq = load_sequence(args.dataset, masks_dir=args.masks)
    out = args.out
    (out / "inpaint").mkdir(parents=True, exist_ok=True)
    n = 0
    for i, frame, keyframes in build_keyframes_from_gt(
        seq, stride=args.keyframe_stride, max_frames=args.max_frames
    ):
        if frame.semantic_mask is None:
            continue
        result = inpaint_frame(
            frame,
            frame.semantic_mask,
            keyframes,
            frame.record.gt_pose,
            max_keyframes=args.keyframes_inpaint,
        )
        stem = frame.record.rgb_path.stem
        write_rgb(out / "inpaint" / f"{stem}_inpaint.png", result.rgb)
        write_depth(out / "inpaint" / f"{stem}_depth_inpaint.png", result.depth)
        write_mask(out / "inpaint" / f"{stem}_coverage.png", result.coverage)
        n += 1
    print(f"inpainted {n} frames into {out / 'inpaint'}")
    return 0


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="threshold sweep for the depth-difference test")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--labels", type=Path, default=None,
                   help="label mask directory (defaults to the dataset's masks/)")
    p.add_argument("--out", required=True, type=Path, help="CSV output path")
    p.add_argument("--taus", type=float, nargs="+",
                   default=[round(0.1 * i, 1) for i in range(1, 11)])
    p.add_argument("--weights", type=float, nargs=2, default=[0.7, 0.3])
    p.add_argument("--keyframe-stride", type=int, default=2)
    p.add_argument("--max-frames", type=int, default=None)
    return p


def collect_sweep_samples(seq, labels_dir=None, stride=2, max_frames=None, params=None):
    """Threshold-free keypoint tests labeled by ground-truth masks."""
    params = params or SegParams()
    samples = []
    for i, frame, keyframes in build_keyframes_from_gt(seq, stride=stride, max_frames=max_frames):
        if not keyframes:
            continue
        if labels_dir is not None:
            path = Path(labels_dir) / f"{frame.record.rgb_path.stem}.png"
            if not path.exists():
                continue
            label_mask = read_mask(path)
        elif frame.semantic_mask is not None:
            label_mask = frame.semantic_mask
        else:
            continue
        for vote in collect_keypoint_tests(frame, keyframes, frame.record.gt_pose, params):
            samples.append(
                SweepSample(
                    delta_z=vote.delta_z,
                    border_var_high=vote.border_var_high,
                    gt_dynamic=bool(label_mask[vote.v, vote.u]),
                )
            )
    return samples


def _cmd_sweep(args) -> int:
    seq = load_sequence(args.dataset)
    samples = collect_sweep_samples(
        seq, labels_dir=args.labels, stride=args.keyframe_stride, max_frames=args.max_frames
    )
    if not samples:
        print("no labeled keypoint tests collected", file=sys.stderr)
        return 1
    best, rows = sweep_tau_z(samples, args.taus, weights=tuple(args.weights))
    lines = ["tau_z,precision,recall,score"]
    for tau, precision, recall, score in rows:
        lines.append(f"{tau:.3f},{precision:.6f},{recall:.6f},{score:.6f}")
    args.out.write_text("\n".join(lines) + "\n")
    print(f"swept {len(rows)} thresholds over {len(samples)} keypoint tests")
    print(f"best tau_z = {best:.3f} (table in {args.out})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rgbdyn", description="RGB-D SLAM front-end for dynamic scenes"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_synth(sub)
    _add_evaluate(sub)
    _add_segment(sub)
    _add_inpaint(sub)
    _add_sweep(sub)
    args = parser.parse_args(argv)
    commands = {
        "run": _cmd_run,
        "synth": _cmd_synth,
        "evaluate": _cmd_evaluate,
        "segment": _cmd_segment,
        "inpaint": _cmd_inpaint,
        "sweep": _cmd_sweep,
    }
    try:
        return commands[args.command](args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Batch pipeline: per-frame orchestration of the tracking variants.

Variants (masks = semantic mask files shipped with the dataset):

* ``none``  - plain tracking, nothing masked.
* ``N``     - features dropped inside semantic masks only.
* ``G``     - multi-view geometric segmentation only.
* ``N+G``   - provisional track on semantic-static features, geometric
  segmentation, final track on fused-static features.
* ``N+G+BI`` - as N+G, but the masked background is inpainted before the
  final track, which then also uses features in reconstructed areas.

Background inpainting otherwise runs after tracking (the reconstruction
depends on the pose, so painting first feeds pose errors back into
tracking; kept only as the explicit BI variant).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

import logging

from .dynaseg import SegParams, segment_frame
from .evaluate import ate, mask_metrics, rpe, tracked_fraction
from .features import filter_keypoints_by_mask
from .geometry import Pose
from .inpaint import inpaint_frame
from .tracking import (
    TrackerParams,
    TrackState,
    detect_static_keypoints,
    estimate_frame_pose,
    insert_keyframe,
    select_keyframe,
    track_frame,
)
from .tum import Frame, Sequence, Trajectory, load_sequence, write_depth, write_mask, write_rgb

VARIANTS = ("none", "N", "G", "N+G", "N+G+BI")

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    dataset: Path
    out: Optional[Path] = None
    variant: str = "none"
    pose_source: str = "tracked"  # or "ground-truth"
    seg: SegParams = field(default_factory=SegParams)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    inpaint_keyframes: int = 20
    save_inpaint: bool = False
    save_masks: bool = True
    masks_dir: Optional[Path] = None
    gt_masks_dir: Optional[Path] = None  # labels for mask metrics only
    seed: int = 0
    max_frames: Optional[int] = None

    def __post_init__(self) -> None:
        variant = normalize_variant(self.variant)
        if variant is None:
            raise ValueError(f"unknown variant {self.variant!r}; options: {VARIANTS}")
        self.variant = variant
        if self.pose_source not in ("tracked", "ground-truth"):
            raise ValueError("pose_source must be 'tracked' or 'ground-truth'")

    @property
    def uses_semantic(self) -> bool:
        return "N" in self.variant.split("+")

    @property
    def uses_geometry(self) -> bool:
        return "G" in self.variant.split("+")

    @property
    def inpaint_before_tracking(self) -> bool:
        return self.variant.endswith("+BI")

    @staticmethod
    def from_json(path, **overrides) -> "PipelineConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        seg = SegParams(**data.pop("seg", {}))
        tracker = TrackerParams(**data.pop("tracker", {}))
        for key in ("dataset", "out", "masks_dir", "gt_masks_dir"):
            if data.get(key) is not None:
                data[key] = Path(data[key])
        return PipelineConfig(seg=seg, tracker=tracker, **data)


def normalize_variant(name: str) -> Optional[str]:
    cleaned = name.strip().upper().replace(" ", "")
    if cleaned in ("NONE", ""):
        return "none"
    for v in VARIANTS[1:]:
        if cleaned == v:
            return v
    return None


@dataclass
class FrameLog:
    index: int
    timestamp: float
    tracked: bool
    inliers: int
    is_keyframe: bool
    pose: Pose
    timings: dict = field(default_factory=dict)


@dataclass
class RunResult:
    config: PipelineConfig
    logs: list
    fused_masks: list  # None when segmentation did not run for a frame
    out_dir: Optional[Path]
    metrics: dict = field(default_factory=dict)

    def trajectory(self) -> Trajectory:
        rows = [(lg.timestamp, lg.pose) for lg in self.logs if lg.tracked]
        return Trajectory([t for t, _ in rows], [p for _, p in rows])


class _StageTimer:
    def __init__(self):
        self.times: dict[str, float] = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.times[name] = timer.times.get(name, 0.0) + time.perf_counter() - self.t0

        return _Ctx()


def _gt_pose_or_fail(frame: Frame, config: PipelineConfig) -> Pose:
    if frame.record.gt_pose is None:
        raise ValueError(
            f"pose_source=ground-truth but frame {frame.timestamp:.6f} has no ground truth"
        )
    return frame.record.gt_pose


def run_pipeline(config: PipelineConfig, sequence: Optional[Sequence] = None) -> RunResult:
    """Run one variant over a dataset; optionally write all outputs."""
    seq = sequence or load_sequence(
        config.dataset, masks_dir=config.masks_dir, require_masks=config.uses_semantic
    )
    if config.uses_semantic:
        missing = [r.timestamp for r in seq.records if r.mask_path is None]
        if missing:
            raise ValueError(
                f"variant {config.variant} requires masks; {len(missing)} frames have none"
            )
    n_frames = len(seq.records)
    if config.max_frames is not None:
        n_frames = min(n_frames, config.max_frames)
    if n_frames == 0:
        raise ValueError(f"dataset {config.dataset} has no associated rgb/depth frames")

    state = TrackState(seq.config.intrinsics, config.tracker)
    logs: list[FrameLog] = []
    fused_masks: list = []
    out = Path(config.out) if config.out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if config.save_masks and config.uses_geometry:
            (out / "masks").mkdir(exist_ok=True)
        if config.save_inpaint or config.inpaint_before_tracking:
            (out / "inpaint").mkdir(exist_ok=True)

    for i in range(n_frames):
        frame = seq.load_frame(i)
        timer = _StageTimer()
        gt_pose = (
            _gt_pose_or_fail(frame, config) if config.pose_source == "ground-truth" else None
        )
        semantic = frame.semantic_mask if config.uses_semantic else None
        h, w = frame.depth.shape
        stem = frame.record.rgb_path.stem

        with timer.stage("detect"):
            keypoints = detect_static_keypoints(state, frame, None)

        fused = None
        working_frame = frame
        final_keypoints = keypoints
        if not state.initialized:
            # no keyframes yet: geometry cannot run, track on what masks exist
            if config.uses_geometry:
                logger.info(
                    "frame %.6f: empty keyframe buffer, tracking without geometric mask",
                    frame.timestamp,
                )
            static0 = ~semantic if semantic is not None else None
            with timer.stage("low_cost_track"):
                result = track_frame(
                    state, frame, static_mask=static0, pose_override=gt_pose, keypoints=keypoints
                )
            if config.uses_geometry:
                fused = semantic.copy() if semantic is not None else np.zeros((h, w), bool)
        else:
            sem_keypoints = keypoints
            if semantic is not None and semantic.any():
                sem_keypoints = filter_keypoints_by_mask(
                    keypoints, semantic, config.tracker.contour_margin
                )
            with timer.stage("low_cost_track"):
                provisional = estimate_frame_pose(state, sem_keypoints, pose_override=gt_pose)

            if config.uses_geometry:
                with timer.stage("multi_view_geometry"):
                    seg_frame = frame if semantic is not None else replace(frame, semantic_mask=None)
                    dyn = segment_frame(
                        seg_frame, state.keyframes, provisional.pose, config.seg
                    )
                    fused = dyn.fused
            elif semantic is not None:
                fused = semantic
            else:
                fused = np.zeros((h, w), bool)

            if config.inpaint_before_tracking and fused.any():
                with timer.stage("background_inpainting"):
                    inp = inpaint_frame(
                        frame,
                        fused,
                        state.keyframes,
                        provisional.pose,
                        max_keyframes=config.inpaint_keyframes,
                    )
                working_frame = replace(frame, rgb=inp.rgb, depth=inp.depth)
                residual = fused & ~inp.coverage
                with timer.stage("detect"):
                    final_keypoints = detect_static_keypoints(
                        state, working_frame, residual if residual.any() else None
                    )
                with timer.stage("final_track"):
                    result = track_frame(
                        state,
                        working_frame,
                        pose_override=gt_pose,
                        keypoints=final_keypoints,
                    )
                if out is not None:
                    write_rgb(out / "inpaint" / f"{stem}_inpaint.png", inp.rgb)
                    write_depth(out / "inpaint" / f"{stem}_depth_inpaint.png", inp.depth)
                    write_mask(out / "inpaint" / f"{stem}_coverage.png", inp.coverage)
            else:
                with timer.stage("final_track"):
                    result = track_frame(
                        state,
                        working_frame,
                        static_mask=~fused if fused.any() else None,
                        pose_override=gt_pose,
                        keypoints=keypoints,
                    )

        kf_snapshot = list(state.keyframes)
        is_kf = False
        with timer.stage("keyframe"):
            if result.tracked and select_keyframe(state, result):
                insert_keyframe(state, working_frame, result, dynamic_mask=fused)
                is_kf = True

        if not result.tracked:
            # lost: reinitialize from the next frame, keep the prediction as seed
            state.reset(seed_pose=result.pose)

        if (
            config.save_inpaint
            and not config.inpaint_before_tracking
            and out is not None
            and fused is not None
            and fused.any()
        ):
            with timer.stage("background_inpainting"):
                inp = inpaint_frame(
                    frame,
                    fused,
                    kf_snapshot,
                    result.pose,
                    max_keyframes=config.inpaint_keyframes,
                )
            write_rgb(out / "inpaint" / f"{stem}_inpaint.png", inp.rgb)
            write_depth(out / "inpaint" / f"{stem}_depth_inpaint.png", inp.depth)
            write_mask(out / "inpaint" / f"{stem}_coverage.png", inp.coverage)

        if out is not None and config.save_masks and config.uses_geometry and fused is not None:
            write_mask(out / "masks" / f"{stem}.png", fused)

        fused_masks.append(fused)
        logs.append(
            FrameLog(
                index=i,
                timestamp=frame.timestamp,
                tracked=result.tracked,
                inliers=result.inliers,
                is_keyframe=is_kf,
                pose=result.pose,
                timings=timer.times,
            )
        )

    result = RunResult(config=config, logs=logs, fused_masks=fused_masks, out_dir=out)
    result.metrics = _summarize(result, seq, config)
    if out is not None:
        result.trajectory().save(out / "trajectory.txt")
        (out / "metrics.json").write_text(json.dumps(result.metrics, indent=2) + "\n")
        _write_timings(out / "timings.csv", logs)
    return result


def _summarize(result: RunResult, seq: Sequence, config: PipelineConfig) -> dict:
    logs = result.logs
    metrics: dict = {
        "variant": config.variant,
        "pose_source": config.pose_source,
        "frames": len(logs),
        "tracked_percent": tracked_fraction([lg.tracked for lg in logs]),
        "keyframes": sum(lg.is_keyframe for lg in logs),
    }
    gt_rows = [
        (r.timestamp, r.gt_pose) for r in seq.records[: len(logs)] if r.gt_pose is not None
    ]
    est = result.trajectory()
    if len(gt_rows) >= 2 and len(est) >= 2:
        gt = Trajectory([t for t, _ in gt_rows], [p for _, p in gt_rows])
        try:
            metrics["ate"] = ate(est, gt).to_dict()
        except ValueError:
            pass
        try:
            metrics["rpe"] = rpe(est, gt).to_dict()
        except ValueError:
            pass
    if config.gt_masks_dir is not None:
        from .tum import read_mask

        preds, gts = [], []
        for lg, fused in zip(logs, result.fused_masks):
            if fused is None:
                continue
            gt_path = Path(config.gt_masks_dir) / (seq.records[lg.index].rgb_path.stem + ".png")
            if gt_path.exists():
                preds.append(fused)
                gts.append(read_mask(gt_path))
        if preds:
            metrics["mask"] = mask_metrics(preds, gts).to_dict()
    return metrics


def _write_timings(path: Path, logs) -> None:
    stages = ["detect", "low_cost_track", "multi_view_geometry", "final_track",
              "background_inpainting", "keyframe"]
    lines = ["frame,timestamp," + ",".join(stages)]
    for lg in logs:
        cells = [str(lg.index), f"{lg.timestamp:.6f}"]
        cells += [f"{lg.timings.get(s, 0.0) * 1000:.3f}" for s in stages]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def build_keyframes_from_gt(
    seq: Sequence,
    stride: int = 2,
    max_frames: Optional[int] = None,
    use_masks: bool = True,
    tracker: Optional[TrackerParams] = None,
):
    """Stride-spaced ground-truth keyframes for single-stage runs.

    Every ``stride``-th frame becomes a keyframe with its ground-truth pose;
    dataset masks (when present and ``use_masks``) both exclude features and
    are retained as the keyframe's dynamic mask.  Yields (index, keyframes)
    pairs so callers can process each frame against its past.
    """
    from .tracking import Keyframe

    tracker = tracker or TrackerParams()
    n = len(seq.records) if max_frames is None else min(len(seq.records), max_frames)
    keyframes: list = []
    for i in range(n):
        frame = seq.load_frame(i)
        if frame.record.gt_pose is None:
            raise ValueError(f"frame {frame.timestamp:.6f} has no ground-truth pose")
        yield i, frame, keyframes
        if i % stride == 0:
            mask = frame.semantic_mask if use_masks else None
            kps = detect_static_keypoints(_DetectProxy(seq, tracker), frame, mask)
            depths = np.array(
                [frame.depth[int(round(kp.v)), int(round(kp.u))] for kp in kps]
            )
            keyframes.append(
                Keyframe(
                    frame_id=i,
                    timestamp=frame.timestamp,
                    pose=frame.record.gt_pose,
                    keypoints=kps,
                    kp_depths=depths,
                    mappoint_ids=[None] * len(kps),
                    rgb=frame.rgb,
                    depth=frame.depth,
                    dynamic_mask=mask,
                )
            )


class _DetectProxy:
    """Just enough of TrackState for detect_static_keypoints."""

    def __init__(self, seq: Sequence, tracker: TrackerParams):
        self.k = seq.config.intrinsics
        self.params = tracker

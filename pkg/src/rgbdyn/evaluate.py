"""Trajectory and mask metrics.

ATE follows the TUM protocol: timestamp association, closed-form rigid
alignment of the matched translations (optionally with scale for
monocular-style evaluation), then the RMSE of the aligned residuals.
Relative errors follow the KITTI protocol: relative motions compared over
fixed path lengths, translational drift as a percentage and rotational
drift in degrees per 100 m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Pose
from .tum import Trajectory, associate


@dataclass
class AteReport:
    rmse: float
    mean: float
    median: float
    max: float
    alignment: Pose
    scale: float
    matched_pairs: int

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean": self.mean,
            "median": self.median,
            "max": self.max,
            "scale": self.scale,
            "matched_pairs": self.matched_pairs,
        }


@dataclass
class RpeReport:
    translational_percent: float
    rotational_deg_per_100m: float
    per_length: dict = field(default_factory=dict)
    n_segments: int = 0

    def to_dict(self) -> dict:
        return {
            "translational_percent": self.translational_percent,
            "rotational_deg_per_100m": self.rotational_deg_per_100m,
            "per_length": {str(k): v for k, v in self.per_length.items()},
            "n_segments": self.n_segments,
        }


@dataclass
class MaskReport:
    precision: float
    recall: float
    iou: float
    per_frame: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "iou": self.iou}


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = False):
    """Least-squares similarity transform: dst ~ s * R @ src + t.

    Closed-form solution via the SVD of the centered covariance, with the
    determinant correction for reflections.  Returns (R, t, s).
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.shape[0] < 2:
        raise ValueError("need two equally-sized point sets with >= 2 points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = (xs**2).sum() / len(src)
        s = float(np.trace(np.diag(D) @ S) / var_s) if var_s > 0 else 1.0
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return R, t, s


def ate(
    est: Trajectory,
    gt: Trajectory,
    max_diff: float = 0.02,
    with_scale: bool = False,
) -> AteReport:
    """Absolute trajectory error after optimal rigid alignment (est -> gt)."""
    pairs, _ = associate(
        [(t, None) for t in est.times], [(t, None) for t in gt.times], max_diff
    )
    if len(pairs) < 2:
        raise ValueError(f"need >= 2 matched timestamp pairs, got {len(pairs)}")
    p_est = np.array([est.poses[i].t for i, _ in pairs])
    p_gt = np.array([gt.poses[j].t for _, j in pairs])
    R, t, s = umeyama_alignment(p_est, p_gt, with_scale)
    residuals = p_gt - (s * (p_est @ R.T) + t)
    errs = np.linalg.norm(residuals, axis=1)
    return AteReport(
        rmse=float(np.sqrt(np.mean(errs**2))),
        mean=float(errs.mean()),
        median=float(np.median(errs)),
        max=float(errs.max()),
        alignment=Pose.from_rt(R, t),
        scale=s,
        matched_pairs=len(pairs),
    )


def aligned_trajectory(est: Trajectory, report: AteReport) -> Trajectory:
    """Apply an ATE alignment to a trajectory (for external plotting)."""
    A = report.alignment
    poses = [
        Pose(
            A.compose(p).q,
            report.scale * (A.rotation_matrix() @ p.t) + A.t,
        )
        for p in est.poses
    ]
    return Trajectory(est.times, poses)


def _path_lengths(positions: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def rpe(
    est: Trajectory,
    gt: Trajectory,
    segment_lengths: Sequence[float] = (0.1, 0.2, 0.5, 1.0),
    max_diff: float = 0.02,
    step: int = 1,
) -> RpeReport:
    """KITTI-style relative pose error over fixed ground-truth path lengths."""
    pairs, _ = associate(
        [(t, None) for t in est.times], [(t, None) for t in gt.times], max_diff
    )
    if len(pairs) < 2:
        raise ValueError("need >= 2 matched timestamp pairs")
    e_poses = [est.poses[i] for i, _ in pairs]
    g_poses = [gt.poses[j] for _, j in pairs]
    dist = _path_lengths(np.array([p.t for p in g_poses]))

    per_length: dict[float, dict] = {}
    t_errs_all, r_errs_all = [], []
    for L in segment_lengths:
        t_errs, r_errs = [], []
        for i in range(0, len(g_poses), step):
            j = int(np.searchsorted(dist, dist[i] + L))
            if j >= len(g_poses):
                break
            rel_gt = g_poses[j].relative_to(g_poses[i])
            rel_est = e_poses[j].relative_to(e_poses[i])
            err = rel_est.relative_to(rel_gt)  # rel_gt^-1 * rel_est
            t_errs.append(np.linalg.norm(err.t) / L * 100.0)
            r_errs.append(np.degrees(err.rotation_angle()) / L * 100.0)
        if t_errs:
            per_length[L] = {
                "translational_percent": float(np.mean(t_errs)),
                "rotational_deg_per_100m": float(np.mean(r_errs)),
                "n_segments": len(t_errs),
            }
            t_errs_all.extend(t_errs)
            r_errs_all.extend(r_errs)
    if not t_errs_all:
        raise ValueError("trajectory shorter than every segment length")
    return RpeReport(
        translational_percent=float(np.mean(t_errs_all)),
        rotational_deg_per_100m=float(np.mean(r_errs_all)),
        per_length=per_length,
        n_segments=len(t_errs_all),
    )


def tracked_fraction(tracked_flags: Sequence[bool]) -> float:
    """Percentage of frames with trusted tracking."""
    flags = list(tracked_flags)
    if not flags:
        return 0.0
    return 100.0 * sum(bool(f) for f in flags) / len(flags)


class MaskMetricsAccumulator:
    """Streaming pixel-level precision/recall/IoU over a frame sequence."""

    def __init__(self) -> None:
        self.tp = 0
        self.fp = 0
        self.fn = 0
        self.per_frame: list[dict] = []

    def add(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = np.asarray(pred, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if pred.shape != gt.shape:
            raise ValueError("prediction/ground-truth shape mismatch")
        tp = int((pred & gt).sum())
        fp = int((pred & ~gt).sum())
        fn = int((~pred & gt).sum())
        self.tp += tp
        self.fp += fp
        self.fn += fn
        self.per_frame.append(
            {
                "precision": _safe_precision(tp, fp),
                "recall": _safe_recall(tp, fn),
                "iou": _safe_iou(tp, fp, fn),
            }
        )

    def report(self) -> MaskReport:
        return MaskReport(
            precision=_safe_precision(self.tp, self.fp),
            recall=_safe_recall(self.tp, self.fn),
            iou=_safe_iou(self.tp, self.fp, self.fn),
            per_frame=self.per_frame,
        )


def _safe_precision(tp: int, fp: int) -> float:
    # no predicted positives: vacuously precise
    return tp / (tp + fp) if (tp + fp) > 0 else 1.0


def _safe_recall(tp: int, fn: int) -> float:
    # no actual positives: vacuously complete
    return tp / (tp + fn) if (tp + fn) > 0 else 1.0


def _safe_iou(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    return tp / denom if denom > 0 else 1.0


def mask_metrics(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> MaskReport:
    """Batch pixel metrics aggregated over frames (TP/FP/FN pooled)."""
    preds = list(pred)
    gts = list(gt)
    if len(preds) != len(gts):
        raise ValueError("prediction/ground-truth count mismatch")
    acc = MaskMetricsAccumulator()
    for p, g in zip(preds, gts):
        acc.add(p, g)
    return acc.report()

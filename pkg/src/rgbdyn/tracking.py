"""Frame-to-map camera tracking over static image areas.

A deliberately light tracker: RGB-D bootstrapping from the first frame,
depth-initialized landmarks, constant-velocity prediction, windowed
descriptor matching against the local map, and pose-only Gauss-Newton on
Huber-robustified reprojection errors.  There is no bundle adjustment, loop
closure or relocalization; lost tracking is reported to the caller.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .features import (
    detect,
    filter_keypoints_by_mask,
    match_within_windows,
    to_gray,
)
from .geometry import (
    Intrinsics,
    PixelObs,
    Pose,
    backproject,
    project_points,
    projection_jacobian,
)


class DegenerateProblem(Exception):
    """Too few or too degenerate correspondences to solve for a pose."""


@dataclass
class TrackerParams:
    target_features: int = 1000
    grid: tuple = (8, 6)
    fast_threshold: float = 20.0
    contour_margin: int = 3
    match_max_hamming: int = 64
    match_window: float = 15.0
    huber_delta: float = math.sqrt(5.991)
    inlier_chi2: float = 5.991  # 95% for 2 DoF, sigma = 1 px
    min_inliers: int = 15
    max_iterations: int = 20
    min_cost_decrease: float = 1e-6
    keyframe_every: int = 10
    keyframe_min_ratio: float = 0.7
    keyframe_capacity: int = 30


@dataclass
class MapPoint:
    id: int
    position: np.ndarray  # (3,) world
    descriptor: np.ndarray  # (32,) uint8
    observation_count: int = 1
    last_seen_frame: int = 0


@dataclass
class Keyframe:
    """A retained frame: pose, features, and the images later stages need."""

    frame_id: int
    timestamp: float
    pose: Pose
    keypoints: list
    kp_depths: np.ndarray
    mappoint_ids: list
    rgb: np.ndarray
    depth: np.ndarray
    dynamic_mask: Optional[np.ndarray] = None


@dataclass
class TrackResult:
    pose: Pose
    inliers: int
    tracked: bool
    n_visible: int = 0
    n_matches: int = 0
    cost: float = 0.0
    keypoints: list = field(default_factory=list)
    matched_ids: list = field(default_factory=list)  # map point id per keypoint, or None


@dataclass
class PoseOptResult:
    pose: Pose
    inlier_flags: np.ndarray
    cost: float
    converged: bool


def _point_positions(correspondences) -> np.ndarray:
    pts = [np.asarray(getattr(p, "position", p), dtype=float) for p, _ in correspondences]
    return np.array(pts).reshape(-1, 3)


def _huber_cost(res_norm: np.ndarray, delta: float) -> float:
    cost = np.where(
        res_norm <= delta, 0.5 * res_norm**2, delta * (res_norm - 0.5 * delta)
    )
    return float(cost.sum())


def _residuals(pose: Pose, X_w: np.ndarray, meas: np.ndarray, k: Intrinsics):
    X_c = pose.apply_inverse(X_w)
    z = X_c[:, 2]
    ok = z > 1e-6
    safe_z = np.where(ok, z, 1.0)
    u = k.fx * X_c[:, 0] / safe_z + k.cx
    v = k.fy * X_c[:, 1] / safe_z + k.cy
    r = np.stack([u, v], axis=1) - meas
    # behind-camera points get a constant large residual so a pose that
    # pushes points backwards never looks cheaper
    norms = np.where(ok, np.hypot(r[:, 0], r[:, 1]), 1e6)
    return r, norms, ok


def _gauss_newton(pose, X_w, meas, k, huber_delta, max_iterations, min_cost_decrease):
    """Monotone Huber Gauss-Newton; returns (pose, cost, converged)."""
    r, norms, ok = _residuals(pose, X_w, meas, k)
    cost = _huber_cost(norms, huber_delta)
    converged = False
    for _ in range(max_iterations):
        weights = np.where(norms <= huber_delta, 1.0, huber_delta / np.maximum(norms, 1e-12))
        weights = np.where(ok, weights, 0.0)
        J = np.zeros((len(X_w), 2, 6))
        for i in np.nonzero(ok)[0]:
            J[i] = projection_jacobian(pose, X_w[i], k)
        H = np.einsum("n,nij,nik->jk", weights, J, J)
        g = np.einsum("n,nij,ni->j", weights, J, r)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        if np.linalg.norm(step) < 1e-14:
            converged = True
            break

        improved = False
        scale = 1.0
        for _ in range(8):
            cand = Pose.exp(scale * step).compose(pose)
            rc, nc, okc = _residuals(cand, X_w, meas, k)
            cc = _huber_cost(nc, huber_delta)
            if cc < cost:
                decrease = cost - cc
                pose, r, norms, ok, cost = cand, rc, nc, okc, cc
                improved = True
                break
            scale *= 0.5
        if not improved:
            # stalled: a true minimum if the gradient vanished, else flagged
            converged = bool(np.linalg.norm(g) < 1e-9)
            break
        if decrease < min_cost_decrease:
            converged = True
            break
    else:
        converged = True  # budget spent while still making progress
    return pose, cost, converged


def optimize_pose(
    initial: Pose,
    correspondences,
    k: Intrinsics,
    huber_delta: float = math.sqrt(5.991),
    max_iterations: int = 20,
    min_cost_decrease: float = 1e-6,
    inlier_chi2: float = 5.991,
    refine_rounds: int = 2,
) -> PoseOptResult:
    """Gauss-Newton on the 6-DoF twist (left perturbation of the pose).

    ``correspondences`` pairs a world point (or MapPoint) with its measured
    pixel.  Iterates never increase the robust cost: a step that would is
    halved, and when no improving step exists the best iterate is returned,
    flagged ``converged=False`` unless the gradient already vanished.

    After the robust solve, chi-square outliers are dropped and the pose is
    re-solved on the surviving set (up to ``refine_rounds`` times); a
    refinement is kept only if it also lowers the robust cost over the full
    correspondence set, so the returned cost never exceeds the initial one.
    """
    if len(correspondences) < 6:
        raise DegenerateProblem(f"need >= 6 correspondences, got {len(correspondences)}")
    X_w = _point_positions(correspondences)
    meas = np.array([[px.u, px.v] for _, px in correspondences], dtype=float)

    _, norms0, _ = _residuals(initial, X_w, meas, k)
    initial_cost = _huber_cost(norms0, huber_delta)
    pose, cost, converged = _gauss_newton(
        initial, X_w, meas, k, huber_delta, max_iterations, min_cost_decrease
    )
    for _ in range(refine_rounds):
        _, norms, ok = _residuals(pose, X_w, meas, k)
        flags = (norms**2 < inlier_chi2) & ok
        if flags.sum() < 6 or flags.all():
            break
        cand, _, cand_conv = _gauss_newton(
            pose, X_w[flags], meas[flags], k, huber_delta, max_iterations, min_cost_decrease
        )
        _, cand_norms, cand_ok = _residuals(cand, X_w, meas, k)
        cand_cost = _huber_cost(cand_norms, huber_delta)
        cand_flags = (cand_norms**2 < inlier_chi2) & cand_ok
        # the inlier-only re-solve may shuffle what the (hopeless) outliers
        # cost; keep it as long as the original guarantee and the inlier
        # count do not regress
        if cand_cost <= initial_cost and cand_flags.sum() >= flags.sum():
            pose, cost, converged = cand, cand_cost, cand_conv
        else:
            break

    _, norms, ok = _residuals(pose, X_w, meas, k)
    inlier_flags = (norms**2 < inlier_chi2) & ok
    return PoseOptResult(pose=pose, inlier_flags=inlier_flags, cost=cost, converged=converged)


class TrackState:
    """Single-writer tracker state: local map, keyframes, motion model."""

    def __init__(self, intrinsics: Intrinsics, params: Optional[TrackerParams] = None):
        self.k = intrinsics
        self.params = params or TrackerParams()
        if self.params.keyframe_capacity < 20:
            raise ValueError("keyframe capacity must be >= 20 (inpainting needs 20)")
        self.mappoints: dict[int, MapPoint] = {}
        self.keyframes: deque[Keyframe] = deque(maxlen=self.params.keyframe_capacity)
        self.last_pose: Optional[Pose] = None
        self.velocity: Optional[Pose] = None  # relative motion, previous -> last
        self.frame_index = 0
        self.frames_since_kf = 0
        self.inliers_at_last_kf = 0
        self._next_id = 0
        self.initialized = False

    def reset(self, seed_pose: Optional[Pose] = None) -> None:
        """Drop the map and keyframes; the next frame bootstraps again."""
        self.mappoints.clear()
        self.keyframes.clear()
        self.velocity = None
        self.last_pose = seed_pose
        self.initialized = False
        self.frames_since_kf = 0

    def predicted_pose(self) -> Pose:
        if self.last_pose is None:
            return Pose.identity()
        if self.velocity is None:
            return self.last_pose
        return self.last_pose.compose(self.velocity)

    def new_mappoint(self, position, descriptor) -> MapPoint:
        mp = MapPoint(
            id=self._next_id,
            position=np.asarray(position, dtype=float),
            descriptor=descriptor,
            observation_count=1,
            last_seen_frame=self.frame_index,
        )
        self._next_id += 1
        self.mappoints[mp.id] = mp
        return mp


def detect_static_keypoints(state: TrackState, frame, dynamic_mask=None):
    """Detect corners and drop those on or near dynamic segments."""
    p = state.params
    kps = detect(
        to_gray(frame.rgb),
        target_count=p.target_features,
        grid=p.grid,
        threshold=p.fast_threshold,
    )
    if dynamic_mask is not None and dynamic_mask.any():
        kps = filter_keypoints_by_mask(kps, dynamic_mask, p.contour_margin)
    return kps


def _kp_depth(frame, kp) -> float:
    return float(frame.depth[int(round(kp.v)), int(round(kp.u))])


def _bootstrap(state: TrackState, frame, keypoints, pose: Pose) -> TrackResult:
    matched_ids: list = [None] * len(keypoints)
    created = 0
    for i, kp in enumerate(keypoints):
        z = _kp_depth(frame, kp)
        if z <= 0:
            continue
        X = pose.apply(backproject(PixelObs(kp.u, kp.v, z), state.k))
        matched_ids[i] = state.new_mappoint(X, kp.descriptor).id
        created += 1
    state.initialized = True
    state.last_pose = pose
    state.velocity = None
    return TrackResult(
        pose=pose,
        inliers=created,
        tracked=True,
        n_visible=created,
        n_matches=created,
        keypoints=keypoints,
        matched_ids=matched_ids,
    )


def _match_map(state: TrackState, keypoints, pred: Pose):
    """Project the map through ``pred`` and match within a search window."""
    p = state.params
    ids = list(state.mappoints.keys())
    if not ids or not keypoints:
        return [], 0
    positions = np.array([state.mappoints[i].position for i in ids])
    uv, _, valid = project_points(pred.apply_inverse(positions), state.k)
    vis_idx = np.nonzero(valid)[0]
    if vis_idx.size == 0:
        return [], 0
    desc = np.stack([state.mappoints[ids[i]].descriptor for i in vis_idx])
    pairs = match_within_windows(
        desc, uv[vis_idx], keypoints, window=p.match_window, max_hamming=p.match_max_hamming
    )
    matches = [(ids[vis_idx[qi]], kj) for qi, kj, _ in pairs]
    return matches, int(vis_idx.size)


def estimate_frame_pose(
    state: TrackState,
    keypoints,
    pose_override: Optional[Pose] = None,
) -> TrackResult:
    """Match the map against detected keypoints and solve the pose.

    Pure with respect to tracker state: no motion-model or map bookkeeping
    happens here, so a provisional estimate can run before the final one.
    With ``pose_override`` (ground-truth mode) the solve is skipped but
    matching and inlier classification still run.
    """
    p = state.params
    if not state.initialized:
        raise RuntimeError("tracker not initialized; track a first frame")
    pred = pose_override if pose_override is not None else state.predicted_pose()
    matches, n_visible = _match_map(state, keypoints, pred)
    if (
        pose_override is None
        and len(matches) < p.min_inliers
        and state.velocity is not None
    ):
        # motion model failed to bring enough candidates into the windows
        fallback, n_vis2 = _match_map(state, keypoints, state.last_pose)
        if len(fallback) > len(matches):
            pred, matches, n_visible = state.last_pose, fallback, n_vis2

    matched_ids: list = [None] * len(keypoints)
    correspondences = []
    for mp_id, kj in matches:
        kp = keypoints[kj]
        correspondences.append((state.mappoints[mp_id], PixelObs(kp.u, kp.v)))
        matched_ids[kj] = mp_id

    if pose_override is not None:
        pose = pose_override
        flags = _chi2_flags(pose, correspondences, state.k, p.inlier_chi2)
        inliers = int(flags.sum()) if len(correspondences) else 0
        cost = 0.0
    elif len(correspondences) >= 6:
        opt = optimize_pose(
            pred,
            correspondences,
            state.k,
            huber_delta=p.huber_delta,
            max_iterations=p.max_iterations,
            min_cost_decrease=p.min_cost_decrease,
            inlier_chi2=p.inlier_chi2,
        )
        pose, cost = opt.pose, opt.cost
        flags = opt.inlier_flags
        inliers = int(flags.sum())
    else:
        pose, cost, flags, inliers = pred, 0.0, np.zeros(len(correspondences), bool), 0

    tracked = inliers >= p.min_inliers or pose_override is not None
    # drop associations the optimizer rejected
    for idx, (mp_id, kj) in enumerate(matches):
        if len(flags) and not flags[idx]:
            matched_ids[kj] = None
    return TrackResult(
        pose=pose if tracked else pred,
        inliers=inliers,
        tracked=tracked,
        n_visible=n_visible,
        n_matches=len(matches),
        cost=cost,
        keypoints=keypoints,
        matched_ids=matched_ids,
    )


def commit_frame(state: TrackState, result: TrackResult) -> None:
    """Fold a tracked result into the state: stats and motion model."""
    state.frame_index += 1
    if not result.tracked:
        return
    for kj, mp_id in enumerate(result.matched_ids):
        if mp_id is None:
            continue
        mp = state.mappoints[mp_id]
        mp.observation_count += 1
        mp.last_seen_frame = state.frame_index
    if state.last_pose is not None:
        state.velocity = result.pose.relative_to(state.last_pose)
    state.last_pose = result.pose
    state.frames_since_kf += 1


def track_frame(
    state: TrackState,
    frame,
    static_mask: Optional[np.ndarray] = None,
    pose_override: Optional[Pose] = None,
    keypoints=None,
) -> TrackResult:
    """Estimate this frame's pose from static-area features and commit it.

    ``static_mask`` marks usable pixels (true = static); its complement is
    removed from detection with a contour margin.  The first call bootstraps
    the map instead (RGB-D allows tracking from the very first frame).  When
    ``pose_override`` is given (ground-truth mode) the optimization is
    skipped but matching and bookkeeping still run.
    """
    p = state.params
    dynamic_mask = None
    if static_mask is not None:
        dynamic_mask = ~np.asarray(static_mask, dtype=bool)
    if keypoints is None:
        keypoints = detect_static_keypoints(state, frame, dynamic_mask)
    elif dynamic_mask is not None and dynamic_mask.any():
        keypoints = filter_keypoints_by_mask(keypoints, dynamic_mask, p.contour_margin)

    if not state.initialized:
        state.frame_index += 1
        pose0 = pose_override if pose_override is not None else (state.last_pose or Pose.identity())
        return _bootstrap(state, frame, keypoints, pose0)

    result = estimate_frame_pose(state, keypoints, pose_override)
    commit_frame(state, result)
    return result


def _chi2_flags(pose, correspondences, k, chi2):
    if not correspondences:
        return np.zeros(0, dtype=bool)
    X_w = _point_positions(correspondences)
    meas = np.array([[px.u, px.v] for _, px in correspondences])
    X_c = pose.apply_inverse(X_w)
    z = np.maximum(X_c[:, 2], 1e-9)
    u = k.fx * X_c[:, 0] / z + k.cx
    v = k.fy * X_c[:, 1] / z + k.cy
    err2 = (u - meas[:, 0]) ** 2 + (v - meas[:, 1]) ** 2
    return (err2 < chi2) & (X_c[:, 2] > 1e-6)


def select_keyframe(state: TrackState, result: TrackResult) -> bool:
    """Keyframe when enough frames passed or map coverage got thin.

    Coverage is measured against the last keyframe's inlier count rather
    than the visible-map count, which an occluder (a mover crossing the
    view) deflates without the view actually being under-mapped.
    """
    if not state.keyframes:
        return True
    if not result.tracked:
        return False
    if state.frames_since_kf >= state.params.keyframe_every:
        return True
    ratio = result.inliers / max(1, state.inliers_at_last_kf)
    return ratio < state.params.keyframe_min_ratio


def insert_keyframe(state: TrackState, frame, result: TrackResult, dynamic_mask=None) -> Keyframe:
    """Retain the frame and create landmarks from unmatched static corners."""
    kp_depths = np.array([_kp_depth(frame, kp) for kp in result.keypoints], dtype=float)
    mappoint_ids = list(result.matched_ids)
    for i, kp in enumerate(result.keypoints):
        if mappoint_ids[i] is not None or kp_depths[i] <= 0:
            continue
        X = result.pose.apply(backproject(PixelObs(kp.u, kp.v, kp_depths[i]), state.k))
        mappoint_ids[i] = state.new_mappoint(X, kp.descriptor).id
    kf = Keyframe(
        frame_id=state.frame_index,
        timestamp=frame.timestamp,
        pose=result.pose,
        keypoints=result.keypoints,
        kp_depths=kp_depths,
        mappoint_ids=mappoint_ids,
        rgb=frame.rgb,
        depth=frame.depth,
        dynamic_mask=None if dynamic_mask is None else np.asarray(dynamic_mask, dtype=bool),
    )
    state.keyframes.append(kf)
    state.frames_since_kf = 0
    state.inliers_at_last_kf = result.inliers
    return kf

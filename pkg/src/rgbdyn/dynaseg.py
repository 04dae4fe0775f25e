"""Multi-view detection of moving content, fused with semantic masks.

Keypoints from the highest-overlap keyframes are reprojected into the
current frame; a keypoint whose projected depth exceeds the measured depth
by more than ``tau_z`` sits in front of where the old surface should be,
i.e. something moved.  High-parallax keypoints are skipped as potential
occlusions, depth-edge keypoints are vetoed by a local variance test, pixel
masks grow from the surviving dynamic keypoints through the depth image,
and the geometric mask is fused with an (optional) semantic mask: where
both detect an object the geometric contour wins, and each source keeps
its exclusive detections.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import Intrinsics, PixelObs, Pose, backproject, parallax_angle, project


@dataclass(frozen=True)
class SegParams:
    tau_z: float = 0.4  # meters of projected-minus-measured depth
    parallax_max: float = 30.0  # degrees; beyond this the point may be occluded
    overlap_keyframes: int = 5
    border_patch: int = 7  # px window of the depth-variance veto
    border_var_max: float = 0.04  # m^2 (0.2 m std)
    grow_depth_tol: float = 0.05  # meters between neighbors while growing
    grow_connectivity: int = 8
    overlap_d_norm: float = 0.5  # m, keyframe-overlap score normalizer
    overlap_theta_norm: float = 30.0  # degrees
    fuse_overlap: float = 0.2  # semantic component handed over to geometry above this

    def __post_init__(self) -> None:
        if not self.tau_z > 0:
            raise ValueError("tau_z must be positive")
        if not 0 < self.parallax_max < 90:
            raise ValueError("parallax_max must be in (0, 90)")
        if self.overlap_keyframes < 1:
            raise ValueError("overlap_keyframes must be >= 1")
        if self.grow_connectivity not in (4, 8):
            raise ValueError("grow_connectivity must be 4 or 8")


class KeypointLabel(Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    HIGH_PARALLAX = "high_parallax"
    NO_DEPTH = "no_depth"
    OUT_OF_VIEW = "out_of_view"


@dataclass
class KeypointTest:
    """Outcome of projecting one keyframe keypoint into the current frame."""

    label: KeypointLabel
    u: float = np.nan
    v: float = np.nan
    z_proj: float = np.nan
    z_meas: float = np.nan

    @property
    def delta_z(self) -> float:
        return self.z_proj - self.z_meas


@dataclass
class DynMask:
    geometric: np.ndarray
    semantic: np.ndarray
    fused: np.ndarray
    dynamic_keypoints: list = field(default_factory=list)  # (u, v) int pixels


def select_overlap_keyframes(
    kf_buffer: Sequence,
    current_pose: Pose,
    n: int,
    params: SegParams = SegParams(),
    exclude_timestamp: Optional[float] = None,
):
    """The n keyframes closest to the current view in translation + rotation.

    Score is the equal-weight normalized sum ||t_rel||/d_norm +
    theta_rel/theta_norm; lowest scores overlap most.  Ties prefer the more
    recent keyframe, deterministically.
    """
    scored = []
    for idx, kf in enumerate(kf_buffer):
        if exclude_timestamp is not None and kf.timestamp == exclude_timestamp:
            continue
        dist = float(np.linalg.norm(kf.pose.t - current_pose.t))
        theta = np.degrees(kf.pose.relative_to(current_pose).rotation_angle())
        score = dist / params.overlap_d_norm + theta / params.overlap_theta_norm
        scored.append((score, -idx, kf))
    scored.sort(key=lambda s: (s[0], s[1]))
    return [kf for _, _, kf in scored[:n]]


def bilinear_depth(depth: np.ndarray, u: float, v: float) -> Optional[float]:
    """Depth at a sub-pixel location, over valid (> 0) neighbors only."""
    vals, weights = _bilinear_terms(depth, np.array([u]), np.array([v]))
    w = weights[0]
    if w.sum() <= 0:
        return None
    return float((vals[0] * w).sum() / w.sum())


def _bilinear_terms(depth: np.ndarray, us: np.ndarray, vs: np.ndarray):
    h, w = depth.shape
    u0 = np.clip(np.floor(us).astype(int), 0, w - 1)
    v0 = np.clip(np.floor(vs).astype(int), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = np.clip(us - u0, 0.0, 1.0)
    fv = np.clip(vs - v0, 0.0, 1.0)
    vals = np.stack(
        [depth[v0, u0], depth[v0, u1], depth[v1, u0], depth[v1, u1]], axis=1
    )
    weights = np.stack(
        [(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=1
    )
    weights = np.where(vals > 0, weights, 0.0)
    return vals, weights


def classify_keypoint(
    x: PixelObs,
    z_kf: float,
    pose_kf: Pose,
    pose_cf: Pose,
    cf_depth: np.ndarray,
    k: Intrinsics,
    p: SegParams = SegParams(),
) -> KeypointTest:
    """Label one keyframe keypoint by multi-view depth consistency.

    The keypoint (with its keyframe depth) is lifted to a world point,
    projected into the current frame, and compared against the measured
    depth there: projected depth exceeding the measurement by more than
    ``tau_z`` means an occluder that was not there before, i.e. motion.
    """
    if not z_kf > 0:
        raise ValueError("keyframe keypoint needs positive depth")
    X = pose_kf.apply(backproject(PixelObs(x.u, x.v, z_kf), k))
    obs = project(pose_cf.apply_inverse(X), k)
    if obs is None:
        return KeypointTest(KeypointLabel.OUT_OF_VIEW)
    alpha = parallax_angle(X, pose_kf.t, pose_cf.t)
    if alpha > p.parallax_max:
        return KeypointTest(KeypointLabel.HIGH_PARALLAX, obs.u, obs.v, obs.depth)
    z_meas = bilinear_depth(cf_depth, obs.u, obs.v)
    if z_meas is None:
        return KeypointTest(KeypointLabel.NO_DEPTH, obs.u, obs.v, obs.depth)
    label = (
        KeypointLabel.DYNAMIC
        if obs.depth - z_meas > p.tau_z
        else KeypointLabel.STATIC
    )
    return KeypointTest(label, obs.u, obs.v, obs.depth, z_meas)


def depth_patch_variance(depth: np.ndarray, u: float, v: float, patch: int) -> Optional[float]:
    """Variance of valid depths in a patch x patch window, None if empty."""
    h, w = depth.shape
    r = patch // 2
    ui, vi = int(round(u)), int(round(v))
    window = depth[max(0, vi - r) : vi + r + 1, max(0, ui - r) : ui + r + 1]
    vals = window[window > 0]
    if vals.size == 0:
        return None
    return float(np.var(vals))


def border_correction(
    test: KeypointTest, cf_depth: np.ndarray, p: SegParams = SegParams()
) -> KeypointTest:
    """Veto dynamic labels sitting on rough depth: likely an object border."""
    if test.label is not KeypointLabel.DYNAMIC:
        return test
    var = depth_patch_variance(cf_depth, test.u, test.v, p.border_patch)
    if var is not None and var > p.border_var_max:
        return KeypointTest(KeypointLabel.STATIC, test.u, test.v, test.z_proj, test.z_meas)
    return test


def grow_mask(
    seeds: Iterable[tuple[int, int]],
    depth: np.ndarray,
    p: SegParams = SegParams(),
) -> np.ndarray:
    """Flood-fill from seed pixels through depth-similar neighbors.

    A neighbor joins when both pixels have valid depth differing by at most
    ``grow_depth_tol``; that relation is symmetric, so the result is the
    union of the connected components containing the seeds.  Seeds
    themselves are always part of the mask (even over invalid depth).
    """
    h, w = depth.shape
    mask = np.zeros((h, w), dtype=bool)
    seeds = [(int(u), int(v)) for u, v in seeds]
    for u, v in seeds:
        if not (0 <= u < w and 0 <= v < h):
            raise ValueError(f"seed ({u}, {v}) outside the image")
        mask[v, u] = True
    if not seeds:
        return mask

    valid = depth > 0
    labels = _tolerance_components(depth, valid, p)
    seed_labels = set()
    for u, v in seeds:
        if valid[v, u]:
            seed_labels.add(labels[v, u])
    if seed_labels:
        mask |= np.isin(labels, list(seed_labels)) & valid
    return mask


def _tolerance_components(depth: np.ndarray, valid: np.ndarray, p: SegParams) -> np.ndarray:
    """Connected components of the |depth difference| <= tol pixel graph."""
    h, w = depth.shape
    idx = np.arange(h * w).reshape(h, w)
    offsets = [(0, 1), (1, 0)]
    if p.grow_connectivity == 8:
        offsets += [(1, 1), (1, -1)]
    rows, cols = [], []
    for dv, du in offsets:
        v0 = slice(max(0, -dv), h - max(0, dv))
        u0 = slice(max(0, -du), w - max(0, du))
        v1 = slice(max(0, dv), h - max(0, -dv))
        u1 = slice(max(0, du), w - max(0, -du))
        ok = (
            valid[v0, u0]
            & valid[v1, u1]
            & (np.abs(depth[v0, u0] - depth[v1, u1]) <= p.grow_depth_tol)
        )
        rows.append(idx[v0, u0][ok])
        cols.append(idx[v1, u1][ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(h * w, h * w)
    )
    _, labels = connected_components(graph, directed=False)
    return labels.reshape(h, w)


def fuse_masks(
    geometric: np.ndarray, semantic: np.ndarray, overlap_threshold: float = 0.2
) -> np.ndarray:
    """Combine geometric and semantic masks, geometric contours winning.

    Semantic connected components overlapping the geometric mask by more
    than ``overlap_threshold`` of their area describe objects the geometry
    already found, so they are dropped in favor of the sharper geometric
    contour; disjoint semantic components (and the whole geometric mask)
    are kept.
    """
    geometric = np.asarray(geometric, dtype=bool)
    semantic = np.asarray(semantic, dtype=bool)
    if geometric.shape != semantic.shape:
        raise ValueError("mask size mismatch")
    fused = geometric.copy()
    if not semantic.any():
        return fused
    labels, n = ndimage.label(semantic, structure=np.ones((3, 3), dtype=int))
    for comp in range(1, n + 1):
        sel = labels == comp
        overlap = (sel & geometric).sum() / sel.sum()
        if overlap <= overlap_threshold:
            fused |= sel
    return fused


def depth_variance_map(depth: np.ndarray, patch: int) -> np.ndarray:
    """Per-pixel variance of valid depths in a centered patch window.

    NaN where the window holds no valid depth.  Interior pixels match
    :func:`depth_patch_variance`; within patch//2 of the border the window
    is reflected rather than clipped.
    """
    valid = (depth > 0).astype(np.float64)
    d = np.where(depth > 0, depth, 0.0)
    size = patch
    count = ndimage.uniform_filter(valid, size, mode="reflect") * size * size
    s1 = ndimage.uniform_filter(d, size, mode="reflect") * size * size
    s2 = ndimage.uniform_filter(d * d, size, mode="reflect") * size * size
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / count
        var = np.maximum(s2 / count - mean * mean, 0.0)
    var[count < 0.5] = np.nan
    return var


def _classify_keyframe_batch(
    kf, pose_cf: Pose, cf_depth: np.ndarray, k: Intrinsics, p: SegParams, var_map=None
):
    """Vectorized, threshold-free keypoint tests for one keyframe.

    Returns (measured, uvs, delta_z, border_high): ``measured`` marks
    keypoints with a definitive comparison (in view, acceptable parallax,
    valid depth); a measured keypoint is dynamic at threshold tau when
    ``delta_z > tau`` and its border veto is off.  Matches the scalar
    classify_keypoint()/border_correction() semantics away from the image
    border (the variance window reflects instead of clipping there).
    """
    n = len(kf.keypoints)
    measured = np.zeros(n, dtype=bool)
    uvs = np.full((n, 2), np.nan)
    dzs = np.full(n, np.nan)
    border_high = np.zeros(n, dtype=bool)
    has_depth = kf.kp_depths > 0
    if not has_depth.any():
        return measured, uvs, dzs, border_high
    idx = np.nonzero(has_depth)[0]
    us = np.array([kf.keypoints[i].u for i in idx])
    vs = np.array([kf.keypoints[i].v for i in idx])
    zs = kf.kp_depths[idx]

    X_cam = np.stack([(us - k.cx) / k.fx * zs, (vs - k.cy) / k.fy * zs, zs], axis=1)
    X_w = kf.pose.apply(X_cam)
    X_cf = pose_cf.apply_inverse(X_w)
    z_proj = X_cf[:, 2]
    ok = z_proj > 1e-6
    safe_z = np.where(ok, z_proj, 1.0)
    u2 = k.fx * X_cf[:, 0] / safe_z + k.cx
    v2 = k.fy * X_cf[:, 1] / safe_z + k.cy
    in_view = ok & (u2 >= 0) & (u2 < k.width) & (v2 >= 0) & (v2 < k.height)

    r1 = kf.pose.t - X_w
    r2 = pose_cf.t - X_w
    cross = np.linalg.norm(np.cross(r1, r2), axis=1)
    dot = np.einsum("ij,ij->i", r1, r2)
    alpha = np.degrees(np.arctan2(cross, dot))
    usable = in_view & (alpha <= p.parallax_max)

    z_meas = np.full(len(idx), np.nan)
    if usable.any():
        vals, weights = _bilinear_terms(cf_depth, u2[usable], v2[usable])
        wsum = weights.sum(axis=1)
        has_meas = wsum > 0
        zm = np.full(int(usable.sum()), np.nan)
        zm[has_meas] = (vals * weights).sum(axis=1)[has_meas] / wsum[has_meas]
        z_meas[usable] = zm

    uvs[idx, 0] = u2
    uvs[idx, 1] = v2
    got = usable & np.isfinite(z_meas)
    measured[idx[got]] = True
    dzs[idx[got]] = (z_proj - z_meas)[got]

    if got.any():
        if var_map is None:
            var_map = depth_variance_map(cf_depth, p.border_patch)
        ui = np.clip(np.round(u2[got]).astype(int), 0, k.width - 1)
        vi = np.clip(np.round(v2[got]).astype(int), 0, k.height - 1)
        var = var_map[vi, ui]
        border_high[idx[got]] = np.isfinite(var) & (var > p.border_var_max)
    return measured, uvs, dzs, border_high


@dataclass
class KeypointVote:
    """One keyframe observation projected into the current frame."""

    key: tuple  # map-point id or (keyframe id, keypoint index)
    kf_id: int  # source keyframe
    kf_timestamp: float
    kf_kp_index: int  # keypoint index within the source keyframe
    u: int
    v: int
    delta_z: float
    border_var_high: bool

    def dynamic_at(self, tau: float) -> bool:
        return self.delta_z > tau and not self.border_var_high


def collect_keypoint_tests(
    frame,
    kf_buffer: Sequence,
    current_pose: Pose,
    p: SegParams = SegParams(),
    intrinsics: Optional[Intrinsics] = None,
) -> list[KeypointVote]:
    """All definitive keypoint tests of the selected overlap keyframes."""
    k = intrinsics if intrinsics is not None else frame.intrinsics
    kfs = select_overlap_keyframes(
        kf_buffer, current_pose, p.overlap_keyframes, p, exclude_timestamp=frame.timestamp
    )
    var_map = depth_variance_map(frame.depth, p.border_patch)
    out: list[KeypointVote] = []
    for kf in kfs:
        measured, uvs, dzs, border_high = _classify_keyframe_batch(
            kf, current_pose, frame.depth, k, p, var_map=var_map
        )
        for i in np.nonzero(measured)[0]:
            mp_id = kf.mappoint_ids[i] if kf.mappoint_ids else None
            key = ("mp", mp_id) if mp_id is not None else ("kp", kf.frame_id, int(i))
            out.append(
                KeypointVote(
                    key=key,
                    kf_id=kf.frame_id,
                    kf_timestamp=kf.timestamp,
                    kf_kp_index=int(i),
                    u=int(round(uvs[i, 0])),
                    v=int(round(uvs[i, 1])),
                    delta_z=float(dzs[i]),
                    border_var_high=bool(border_high[i]),
                )
            )
    return out


def segment_frame(
    frame,
    kf_buffer: Sequence,
    current_pose: Pose,
    p: SegParams = SegParams(),
    intrinsics: Optional[Intrinsics] = None,
) -> DynMask:
    """Full per-frame dynamic segmentation against the keyframe buffer.

    Keypoint votes are grouped by map point (a landmark seen from several
    keyframes votes once per keyframe); a current-frame pixel seeds the
    region growing only when dynamic votes outnumber static ones.  With an
    empty buffer this degrades to semantic-only masking.
    """
    k = intrinsics if intrinsics is not None else frame.intrinsics
    h, w = frame.depth.shape
    semantic = (
        np.asarray(frame.semantic_mask, dtype=bool)
        if getattr(frame, "semantic_mask", None) is not None
        else np.zeros((h, w), dtype=bool)
    )
    tests = collect_keypoint_tests(frame, kf_buffer, current_pose, p, k)
    votes: dict = {}
    for t in tests:
        dynamic = t.delta_z > p.tau_z and not t.border_var_high
        votes.setdefault(t.key, []).append((dynamic, t.u, t.v))

    seeds = []
    for key in sorted(votes.keys(), key=str):
        entries = votes[key]
        dyn = sum(1 for d, _, _ in entries if d)
        stat = len(entries) - dyn
        if dyn > stat:
            for d, u, v in entries:
                if d and 0 <= u < w and 0 <= v < h:
                    seeds.append((u, v))
    seeds = sorted(set(seeds))

    geometric = (
        grow_mask(seeds, frame.depth, p) if seeds else np.zeros((h, w), dtype=bool)
    )
    fused = fuse_masks(geometric, semantic, p.fuse_overlap)
    return DynMask(
        geometric=geometric, semantic=semantic, fused=fused, dynamic_keypoints=seeds
    )


@dataclass
class SweepSample:
    """One definitive keypoint test, threshold-free, for the tau_z sweep."""

    delta_z: float
    border_var_high: bool
    gt_dynamic: bool


def sweep_tau_z(
    samples: Sequence[SweepSample],
    candidates: Sequence[float],
    weights: tuple[float, float] = (0.7, 0.3),
):
    """Pick the threshold maximizing w_p * precision + w_r * recall.

    The depth differences do not depend on the threshold, so each candidate
    is scored by re-thresholding the recorded samples; ties go to the
    smaller threshold.  Returns (best_tau, rows) with one
    (tau, precision, recall, score) row per candidate.
    """
    if not candidates:
        raise ValueError("no candidate thresholds")
    w_p, w_r = weights
    rows = []
    best_tau, best_score = None, -np.inf
    for tau in sorted(candidates):
        tp = fp = fn = 0
        for s in samples:
            pred = (s.delta_z > tau) and not s.border_var_high
            if pred and s.gt_dynamic:
                tp += 1
            elif pred and not s.gt_dynamic:
                fp += 1
            elif not pred and s.gt_dynamic:
                fn += 1
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / (tp + fn) if (tp + fn) > 0 else 1.0
        score = w_p * precision + w_r * recall
        rows.append((tau, precision, recall, score))
        if score > best_score:
            best_tau, best_score = tau, score
    return best_tau, rows

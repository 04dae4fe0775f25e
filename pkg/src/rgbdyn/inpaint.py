"""Background inpainting: paint dynamic segments from previous keyframes.

Forward-warps each keyframe's valid-depth pixels (minus that keyframe's own
dynamic mask) into the current view with nearest-pixel splatting and a
z-buffer.  Keyframes are consumed most-recent-first; once a masked pixel is
written, older samples only replace it when they are clearly nearer
(a different, closer surface).  Masked pixels that no keyframe explains are
left blank: black RGB and zero depth, reported by the coverage map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Intrinsics, PixelObs, Pose, backproject, project

# samples within this depth band are treated as the same surface
SAME_SURFACE_TOL = 0.05


@dataclass
class InpaintResult:
    rgb: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray  # true where a masked pixel was reconstructed
    source_count: np.ndarray  # keyframe samples that landed on each pixel
    source_index: np.ndarray  # index into the keyframe list, -1 = none


def splat(
    src_pixel: PixelObs,
    src_depth: float,
    pose_src: Pose,
    pose_dst: Pose,
    k: Intrinsics,
) -> Optional[PixelObs]:
    """Forward-warp one source pixel into the destination view.

    Back-project, transform, project, then snap to the nearest integer
    pixel; the result carries the projected depth.  ``None`` when the point
    falls behind the destination camera or outside its image.
    """
    X_w = pose_src.apply(backproject(PixelObs(src_pixel.u, src_pixel.v, src_depth), k))
    obs = project(pose_dst.apply_inverse(X_w), k)
    if obs is None:
        return None
    ui = int(round(obs.u))
    vi = int(round(obs.v))
    if not (0 <= ui < k.width and 0 <= vi < k.height):
        return None
    return PixelObs(float(ui), float(vi), obs.depth)


def _warp_keyframe(kf, current_pose: Pose, k: Intrinsics, target_mask: np.ndarray):
    """All keyframe samples landing on masked target pixels (vectorized).

    Within the keyframe, duplicate targets resolve by z-buffer (nearest
    depth wins); ties are broken deterministically by source pixel order.
    Returns (vi, ui, depth, rgb) arrays of the surviving samples.
    """
    depth = kf.depth
    valid = depth > 0
    if kf.dynamic_mask is not None:
        valid = valid & ~kf.dynamic_mask
    vs, us = np.nonzero(valid)
    if len(vs) == 0:
        return None
    zs = depth[vs, us]
    X_cam = np.stack([(us - k.cx) / k.fx * zs, (vs - k.cy) / k.fy * zs, zs], axis=1)
    X_w = kf.pose.apply(X_cam)
    X_cf = current_pose.apply_inverse(X_w)
    z_cf = X_cf[:, 2]
    ok = z_cf > 1e-6
    safe_z = np.where(ok, z_cf, 1.0)
    u2 = np.round(k.fx * X_cf[:, 0] / safe_z + k.cx).astype(np.int64)
    v2 = np.round(k.fy * X_cf[:, 1] / safe_z + k.cy).astype(np.int64)
    ok &= (u2 >= 0) & (u2 < k.width) & (v2 >= 0) & (v2 < k.height)
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return None
    hit_mask = target_mask[v2[idx], u2[idx]]
    idx = idx[hit_mask]
    if idx.size == 0:
        return None
    # z-buffer within this keyframe: write farthest first, nearest last
    order = np.argsort(-z_cf[idx], kind="stable")
    idx = idx[order]
    return v2[idx], u2[idx], z_cf[idx], kf.rgb[vs[idx], us[idx]]


def inpaint_frame(
    frame,
    mask: np.ndarray,
    keyframes: Sequence,
    current_pose: Pose,
    k: Optional[Intrinsics] = None,
    max_keyframes: int = 20,
) -> InpaintResult:
    """Reconstruct the masked regions of a frame from previous keyframes.

    Pixels outside the mask are returned untouched.  The most recent
    ``max_keyframes`` keyframes contribute, newest first; an older sample
    overwrites an existing one only when it is nearer by more than
    ``SAME_SURFACE_TOL`` (z-buffering across sources).
    """
    if k is None:
        k = frame.intrinsics
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.depth.shape:
        raise ValueError("mask size mismatch")
    rgb = frame.rgb.copy()
    depth = frame.depth.copy()
    rgb[mask] = 0
    depth[mask] = 0.0

    h, w = mask.shape
    zbuf = np.full((h, w), np.inf)
    written = np.zeros((h, w), dtype=bool)
    source_count = np.zeros((h, w), dtype=np.int16)
    source_index = np.full((h, w), -1, dtype=np.int16)

    recent = list(keyframes)[-max_keyframes:]
    for kf_idx, kf in zip(range(len(recent) - 1, -1, -1), reversed(recent)):
        warped = _warp_keyframe(kf, current_pose, k, mask)
        if warped is None:
            continue
        vi, ui, zi, ci = warped
        np.add.at(source_count, (vi, ui), 1)
        take_new = ~written[vi, ui] | (zi < zbuf[vi, ui] - SAME_SURFACE_TOL)
        vi, ui, zi, ci = vi[take_new], ui[take_new], zi[take_new], ci[take_new]
        # within the batch the nearest sample was ordered last, so plain
        # fancy-index assignment leaves exactly the z-buffer winner
        zbuf[vi, ui] = zi
        rgb[vi, ui] = ci
        depth[vi, ui] = zi
        written[vi, ui] = True
        source_index[vi, ui] = kf_idx

    return InpaintResult(
        rgb=rgb,
        depth=depth,
        coverage=written,
        source_count=source_count,
        source_index=source_index,
    )

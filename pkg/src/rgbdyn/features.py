"""Oriented corner keypoints with binary descriptors.

Single-scale detection: segment-test corners scored by their Harris
response, bucketed over a coarse grid for spatial uniformity, oriented by
the intensity centroid, and described by 256 pairwise intensity
comparisons sampled with a fixed pattern rotated to the keypoint
orientation.  All stages are pairwise/gradient based, so results are
invariant to a constant intensity offset, and every ordering is made
explicit so repeated runs produce identical keypoint lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# Bresenham circle of radius 3 used by the segment test, in circular order.
_RING = np.array(
    [
        (0, 3), (1, 3), (2, 2), (3, 1), (3, 0), (3, -1), (2, -2), (1, -3),
        (0, -3), (-1, -3), (-2, -2), (-3, -1), (-3, 0), (-3, 1), (-2, 2), (-1, 3),
    ]
)  # (dv, du)

PATCH_MARGIN = 16  # keypoints keep this distance from the border
_ORIENT_RADIUS = 15
_PATTERN_RADIUS = 13  # stays inside the margin under any rotation


def _make_pattern(n_pairs: int = 256, sigma: float = 6.5, seed: int = 20210405):
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n_pairs * 2:
        cand = np.round(rng.normal(0.0, sigma, size=(n_pairs, 2)))
        keep = np.hypot(cand[:, 0], cand[:, 1]) <= _PATTERN_RADIUS
        pts.extend(cand[keep].tolist())
    pts = np.array(pts[: n_pairs * 2], dtype=np.float64)
    return pts[:n_pairs], pts[n_pairs:]


_PATTERN_A, _PATTERN_B = _make_pattern()

_disc_v, _disc_u = np.meshgrid(
    np.arange(-_ORIENT_RADIUS, _ORIENT_RADIUS + 1),
    np.arange(-_ORIENT_RADIUS, _ORIENT_RADIUS + 1),
    indexing="ij",
)
_disc_keep = _disc_v**2 + _disc_u**2 <= _ORIENT_RADIUS**2
_DISC_DV = _disc_v[_disc_keep].astype(np.int64)
_DISC_DU = _disc_u[_disc_keep].astype(np.int64)


@dataclass(frozen=True)
class Keypoint:
    u: float
    v: float
    response: float
    angle: float  # degrees
    descriptor: np.ndarray  # (32,) uint8, 256 bits


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    hamming: int


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def _segment_test(gray: np.ndarray, threshold: float, arc: int) -> np.ndarray:
    padded = np.pad(gray, 3, mode="edge")
    h, w = gray.shape
    ring = np.empty((16, h, w), dtype=gray.dtype)
    for k, (dv, du) in enumerate(_RING):
        ring[k] = padded[3 + dv : 3 + dv + h, 3 + du : 3 + du + w]
    hi = ring > gray + threshold
    lo = ring < gray - threshold
    out = np.zeros((h, w), dtype=bool)
    for arr in (hi, lo):
        wrapped = np.concatenate([arr, arr[: arc - 1]], axis=0)
        for s in range(16):
            out |= wrapped[s : s + arc].all(axis=0)
    return out


def _harris(gray: np.ndarray, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    gxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    gyy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    gxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    return gxx * gyy - gxy * gxy - k * (gxx + gyy) ** 2


def detect(
    gray: np.ndarray,
    target_count: int = 1000,
    grid: tuple[int, int] = (8, 6),
    threshold: float = 20.0,
    arc: int = 9,
) -> list[Keypoint]:
    """Detect corners and compute oriented binary descriptors.

    ``grid`` is (columns, rows) of buckets; each bucket keeps at most
    ceil(target_count / buckets) corners so detections spread over the
    image.  The returned list is ordered by (response desc, v, u).
    """
    gray = to_gray(gray)
    h, w = gray.shape
    if h < 32 or w < 32:
        raise ValueError("detection image must be at least 32x32")

    corners = _segment_test(gray, threshold, arc)
    corners[:PATCH_MARGIN], corners[-PATCH_MARGIN:] = False, False
    corners[:, :PATCH_MARGIN], corners[:, -PATCH_MARGIN:] = False, False
    if not corners.any():
        return []

    response = _harris(gray)
    scored = np.where(corners, response, -np.inf)
    local_max = scored == ndimage.maximum_filter(scored, size=3, mode="nearest")
    keep = corners & local_max & (response > 0)
    if not keep.any():
        return []

    vs, us = np.nonzero(keep)
    resp = response[vs, us]
    order = np.lexsort((us, vs, -resp))
    vs, us, resp = vs[order], us[order], resp[order]

    gx_cells, gy_cells = grid
    cap = -(-target_count // (gx_cells * gy_cells))  # ceil
    cell = (us * gx_cells // w) * gy_cells + (vs * gy_cells // h)
    counts = np.zeros(gx_cells * gy_cells, dtype=int)
    sel = []
    for i in range(len(us)):
        c = cell[i]
        if counts[c] < cap:
            counts[c] += 1
            sel.append(i)
            if len(sel) == target_count:
                break
    sel = np.array(sel, dtype=int)
    vs, us, resp = vs[sel], us[sel], resp[sel]

    blur = ndimage.gaussian_filter(gray, 2.0, mode="nearest")
    patches = blur[vs[:, None] + _DISC_DV[None, :], us[:, None] + _DISC_DU[None, :]]
    m10 = patches @ _DISC_DU.astype(np.float64)
    m01 = patches @ _DISC_DV.astype(np.float64)
    angles = np.degrees(np.arctan2(m01, m10))

    desc = _describe(blur, us, vs, angles)
    return [
        Keypoint(float(us[i]), float(vs[i]), float(resp[i]), float(angles[i]), desc[i])
        for i in range(len(us))
    ]


def _describe(blur: np.ndarray, us, vs, angles_deg) -> np.ndarray:
    rad = np.radians(angles_deg)
    ca, sa = np.cos(rad)[:, None], np.sin(rad)[:, None]

    def rotate(pattern):
        px, py = pattern[:, 0][None, :], pattern[:, 1][None, :]
        rx = np.round(ca * px - sa * py).astype(np.int64)
        ry = np.round(sa * px + ca * py).astype(np.int64)
        return rx, ry

    ax, ay = rotate(_PATTERN_A)
    bx, by = rotate(_PATTERN_B)
    va = blur[vs[:, None] + ay, us[:, None] + ax]
    vb = blur[vs[:, None] + by, us[:, None] + bx]
    bits = va < vb
    return np.packbits(bits, axis=1)


def descriptor_matrix(kps: list[Keypoint]) -> np.ndarray:
    if not kps:
        return np.zeros((0, 32), dtype=np.uint8)
    return np.stack([kp.descriptor for kp in kps])


def hamming_matrix(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between packed descriptor rows."""
    if da.size == 0 or db.size == 0:
        return np.zeros((len(da), len(db)), dtype=np.int32)
    xor = da[:, None, :] ^ db[None, :, :]
    return np.bitwise_count(xor).sum(axis=2, dtype=np.int32)


def match(
    a: list[Keypoint],
    b: list[Keypoint],
    max_hamming: int = 64,
    ratio: float = 0.8,
) -> list[Match]:
    """Mutual nearest-neighbor matching with a best/second-best ratio test."""
    if not a or not b:
        return []
    D = hamming_matrix(descriptor_matrix(a), descriptor_matrix(b))
    best_j = D.argmin(axis=1)
    best = D[np.arange(len(a)), best_j]
    best_i = D.argmin(axis=0)
    matches = []
    for i in range(len(a)):
        j = int(best_j[i])
        d = int(best[i])
        if d > max_hamming or int(best_i[j]) != i:
            continue
        if len(b) >= 2:
            second = int(np.partition(D[i], 1)[1])
            if not d < ratio * second:
                continue
        matches.append(Match(i, j, d))
    return matches


def mask_dilation(mask: np.ndarray, margin: int) -> np.ndarray:
    """Pixels inside the mask or within ``margin`` (Euclidean) of it."""
    mask = np.asarray(mask, dtype=bool)
    if margin <= 0 or not mask.any():
        return mask.copy()
    dist = ndimage.distance_transform_edt(~mask)
    return dist <= margin


def filter_keypoints_by_mask(
    kps: list[Keypoint], mask: np.ndarray, contour_margin: int = 3
) -> list[Keypoint]:
    """Drop keypoints inside the mask or within ``contour_margin`` px of it.

    Segment contours turn into high-gradient areas in the image, so corners
    hugging a mask boundary are unreliable and are removed along with the
    masked interior.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    for kp in kps:
        if not (0 <= kp.u < w and 0 <= kp.v < h):
            raise ValueError("keypoint outside mask bounds; mask/image size mismatch?")
    if not mask.any():
        return list(kps)
    dilated = mask_dilation(mask, contour_margin)
    return [
        kp
        for kp in kps
        if not dilated[int(round(kp.v)), int(round(kp.u))]
    ]


def match_within_windows(
    query_desc: np.ndarray,
    query_uv: np.ndarray,
    kps: list[Keypoint],
    window: float = 15.0,
    max_hamming: int = 64,
) -> list[tuple[int, int, int]]:
    """Best Hamming match for each query among keypoints within a window.

    Used by the tracker: projected map points search only a local pixel
    neighborhood.  Assignments are one-to-one, lowest distance first.
    Returns (query_index, keypoint_index, hamming) triples.
    """
    if len(kps) == 0 or len(query_desc) == 0:
        return []
    kp_uv = np.array([[kp.u, kp.v] for kp in kps])
    kp_desc = descriptor_matrix(kps)
    candidates = []
    for qi in range(len(query_desc)):
        du = np.abs(kp_uv[:, 0] - query_uv[qi, 0])
        dv = np.abs(kp_uv[:, 1] - query_uv[qi, 1])
        near = np.nonzero((du <= window) & (dv <= window))[0]
        if near.size == 0:
            continue
        dists = np.bitwise_count(kp_desc[near] ^ query_desc[qi]).sum(axis=1)
        order = np.argsort(dists, kind="stable")
        for o in order[:3]:  # a few alternates in case the best is taken
            d = int(dists[o])
            if d <= max_hamming:
                candidates.append((d, qi, int(near[o])))
    candidates.sort()
    used_q, used_k = set(), set()
    out = []
    for d, qi, kj in candidates:
        if qi in used_q or kj in used_k:
            continue
        used_q.add(qi)
        used_k.add(kj)
        out.append((qi, kj, d))
    out.sort(key=lambda t: t[0])
    return out

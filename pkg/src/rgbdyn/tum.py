"""TUM RGB-D sequence ingestion and trajectory file I/O.

File conventions (shared with the synthetic renderer, which emits the same
layout):

* ``rgb.txt`` / ``depth.txt``: lines ``timestamp filename``, ``#`` comments.
* ``groundtruth.txt`` and estimated trajectories: lines
  ``timestamp tx ty tz qx qy qz qw``.
* depth images: 16-bit grayscale PNG, 1/5000 m per unit, 0 = invalid.
* semantic masks: 8-bit grayscale PNG, 0 = static, nonzero = dynamic,
  matched to RGB frames by filename stem in a sibling ``masks/`` directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .geometry import Intrinsics, Pose, quat_slerp

DEPTH_SCALE = 5000.0
ASSOCIATION_MAX_DIFF = 0.02


class SequenceError(ValueError):
    """A dataset directory is missing or malformed."""


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    rgb_path: Path
    depth_path: Path
    mask_path: Optional[Path] = None
    gt_pose: Optional[Pose] = None


@dataclass
class Frame:
    """A fully loaded frame; images share the same height and width."""

    record: FrameRecord
    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: Intrinsics
    semantic_mask: Optional[np.ndarray] = None

    @property
    def timestamp(self) -> float:
        return self.record.timestamp


class Trajectory:
    """Time-ordered pose sequence, comparable against ground truth."""

    def __init__(self, times: Sequence[float], poses: Sequence[Pose]):
        times = [float(t) for t in times]
        if len(times) != len(poses):
            raise ValueError("times and poses length mismatch")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("timestamps must be strictly increasing")
        self.times = np.array(times, dtype=float)
        self.poses = list(poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.times, self.poses))

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    @staticmethod
    def load(path) -> "Trajectory":
        times, poses = [], []
        for parts in _parse_table(path):
            if len(parts) < 8:
                raise SequenceError(f"{path}: expected 8 columns, got {len(parts)}")
            t, tx, ty, tz, qx, qy, qz, qw = (float(x) for x in parts[:8])
            times.append(t)
            poses.append(Pose([qw, qx, qy, qz], [tx, ty, tz]))
        return Trajectory(times, poses)

    def save(self, path) -> None:
        lines = ["# timestamp tx ty tz qx qy qz qw"]
        for t, p in self:
            w, x, y, z = p.q
            tx, ty, tz = p.t
            lines.append(
                f"{t:.6f} {tx:.9f} {ty:.9f} {tz:.9f} {x:.9f} {y:.9f} {z:.9f} {w:.9f}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def _parse_table(path):
    path = Path(path)
    if not path.exists():
        raise SequenceError(f"missing file: {path}")
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append(line.split())
    return rows


def read_file_list(path) -> list[tuple[float, str]]:
    """Read a TUM-style ``timestamp filename`` listing."""
    out = []
    for parts in _parse_table(path):
        if len(parts) < 2:
            raise SequenceError(f"{path}: expected 'timestamp filename' lines")
        out.append((float(parts[0]), parts[1]))
    out.sort(key=lambda x: x[0])
    return out


def associate(list_a, list_b, max_diff: float = ASSOCIATION_MAX_DIFF):
    """Greedy mutual-nearest timestamp matching.

    Candidate pairs within ``max_diff`` are taken smallest-|dt| first, each
    entry used at most once; the result is sorted by time.  Returns
    ``(pairs, n_unmatched)`` where pairs are (index_a, index_b).
    """
    ta = [float(t) for t, _ in list_a]
    tb = [float(t) for t, _ in list_b]
    candidates = []
    j0 = 0
    for i, t in enumerate(ta):
        # both lists are time-sorted; scan only the nearby window in b
        while j0 < len(tb) and tb[j0] < t - max_diff:
            j0 += 1
        j = j0
        while j < len(tb) and tb[j] <= t + max_diff:
            candidates.append((abs(t - tb[j]), t, tb[j], i, j))
            j += 1
    candidates.sort()
    used_a, used_b = set(), set()
    pairs = []
    for _, _, _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort(key=lambda ij: ta[ij[0]])
    unmatched = (len(ta) - len(pairs)) + (len(tb) - len(pairs))
    return pairs, unmatched


def read_depth(path, depth_scale: float = DEPTH_SCALE) -> np.ndarray:
    """Decode a 16-bit depth PNG to meters; raw 0 stays 0.0 (invalid)."""
    img = Image.open(path)
    if img.mode not in ("I", "I;16", "I;16B", "I;16L"):
        raise SequenceError(
            f"{path}: expected 16-bit single-channel PNG, got mode {img.mode!r}"
        )
    raw = np.asarray(img, dtype=np.uint32)
    if raw.ndim != 2:
        raise SequenceError(f"{path}: expected single-channel depth image")
    return raw.astype(np.float64) / depth_scale


def write_depth(path, depth_m: np.ndarray, depth_scale: float = DEPTH_SCALE) -> None:
    raw = np.round(np.asarray(depth_m, dtype=np.float64) * depth_scale)
    raw = np.clip(raw, 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def read_rgb(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def write_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


def read_mask(path) -> np.ndarray:
    """Read a mask PNG: nonzero pixels are dynamic."""
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 0


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def gt_pose_at(traj: Trajectory, t: float, max_gap: float = 0.1) -> Optional[Pose]:
    """Interpolated ground-truth pose at time ``t``.

    Translation is interpolated linearly and rotation spherically between the
    bracketing samples; returns ``None`` when the nearest bracket is further
    than ``max_gap`` away.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    times = traj.times
    i = int(np.searchsorted(times, t))
    if i == 0 or i == len(times):
        j = 0 if i == 0 else len(times) - 1
        if abs(times[j] - t) > max_gap:
            return None
        return traj.poses[j]
    t0, t1 = times[i - 1], times[i]
    if min(t - t0, t1 - t) > max_gap:
        return None
    if t1 == t0:
        return traj.poses[i - 1]
    s = (t - t0) / (t1 - t0)
    pa, pb = traj.poses[i - 1], traj.poses[i]
    q = quat_slerp(pa.q, pb.q, s)
    tr = (1.0 - s) * pa.t + s * pb.t
    return Pose(q, tr)


@dataclass
class SequenceConfig:
    intrinsics: Intrinsics
    depth_scale: float = DEPTH_SCALE
    association_max_diff: float = ASSOCIATION_MAX_DIFF
    gt_max_gap: float = 0.1

    @staticmethod
    def load(path) -> "SequenceConfig":
        data = json.loads(Path(path).read_text())
        k = Intrinsics(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )
        return SequenceConfig(
            intrinsics=k,
            depth_scale=float(data.get("depth_scale", DEPTH_SCALE)),
            association_max_diff=float(data.get("association_max_diff", ASSOCIATION_MAX_DIFF)),
            gt_max_gap=float(data.get("gt_max_gap", 0.1)),
        )

    def save(self, path) -> None:
        k = self.intrinsics
        Path(path).write_text(
            json.dumps(
                {
                    "fx": k.fx,
                    "fy": k.fy,
                    "cx": k.cx,
                    "cy": k.cy,
                    "width": k.width,
                    "height": k.height,
                    "depth_scale": self.depth_scale,
                    "association_max_diff": self.association_max_diff,
                },
                indent=2,
            )
            + "\n"
        )


@dataclass
class Sequence:
    directory: Path
    config: SequenceConfig
    records: list[FrameRecord]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def load_frame(self, index: int) -> Frame:
        rec = self.records[index]
        rgb = read_rgb(rec.rgb_path)
        depth = read_depth(rec.depth_path, self.config.depth_scale)
        # sensor range: anything outside (0.01, 100) m is invalid
        depth[(depth <= 0.01) | (depth >= 100.0)] = 0.0
        mask = read_mask(rec.mask_path) if rec.mask_path is not None else None
        if depth.shape != rgb.shape[:2]:
            raise SequenceError(f"rgb/depth size mismatch for frame {index}")
        if mask is not None and mask.shape != depth.shape:
            raise SequenceError(f"mask size mismatch for frame {index}")
        return Frame(
            record=rec,
            rgb=rgb,
            depth=depth,
            intrinsics=self.config.intrinsics,
            semantic_mask=mask,
        )

    def frames(self):
        for i in range(len(self.records)):
            yield self.load_frame(i)


def load_sequence(
    directory,
    config: Optional[SequenceConfig] = None,
    masks_dir=None,
    require_masks: bool = False,
) -> Sequence:
    """Build the associated, time-sorted frame record list for a sequence.

    Images are loaded lazily through :meth:`Sequence.load_frame`.  Masks are
    matched to RGB frames by identical filename stem; ground-truth poses are
    interpolated onto RGB timestamps when ``groundtruth.txt`` is present.
    """
    directory = Path(directory)
    if config is None:
        cfg_path = directory / "intrinsics.json"
        if not cfg_path.exists():
            raise SequenceError(
                f"no config given and missing file: {cfg_path} "
                "(TUM distributes intrinsics out-of-band)"
            )
        config = SequenceConfig.load(cfg_path)

    rgb_list = read_file_list(directory / "rgb.txt")
    depth_list = read_file_list(directory / "depth.txt")
    pairs, dropped = associate(rgb_list, depth_list, config.association_max_diff)

    gt = None
    gt_path = directory / "groundtruth.txt"
    if gt_path.exists():
        gt = Trajectory.load(gt_path)

    if masks_dir is None and (directory / "masks").is_dir():
        masks_dir = directory / "masks"
    masks_dir = Path(masks_dir) if masks_dir is not None else None

    records = []
    last_t = None
    for ia, ib in pairs:
        t, rgb_rel = rgb_list[ia]
        _, depth_rel = depth_list[ib]
        if last_t is not None and t <= last_t:
            continue
        last_t = t
        mask_path = None
        if masks_dir is not None:
            candidate = masks_dir / (Path(rgb_rel).stem + ".png")
            if candidate.exists():
                mask_path = candidate
            elif require_masks:
                raise SequenceError(f"missing mask file: {candidate}")
        gt_pose = gt_pose_at(gt, t, config.gt_max_gap) if gt is not None else None
        records.append(
            FrameRecord(
                timestamp=t,
                rgb_path=directory / rgb_rel,
                depth_path=directory / depth_rel,
                mask_path=mask_path,
                gt_pose=gt_pose,
            )
        )
    if require_masks and masks_dir is None:
        raise SequenceError(f"masks required but no masks directory in {directory}")
    return Sequence(directory=directory, config=config, records=records, dropped=dropped)


def attach_gt(sequence: Sequence, traj: Trajectory, max_gap: float = 0.1) -> Sequence:
    records = [
        replace(r, gt_pose=gt_pose_at(traj, r.timestamp, max_gap)) for r in sequence.records
    ]
    return replace(sequence, records=records)

"""Deterministic synthetic RGB-D sequence generator.

Ray-casts analytic geometry (textured rectangles and boxes) so that every
pixel's depth equals the closed-form ray intersection distance along the
optical axis.  A scene holds static geometry plus moving boxes on
piecewise-linear paths; the output directory uses the exact TUM layout
consumed by :mod:`rgbdyn.tum`, plus ``masks/`` (ground-truth dynamic masks)
and ``background/`` (the same render with dynamic objects removed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Intrinsics, Pose, quat_slerp
from .tum import SequenceConfig, write_depth, write_mask, write_rgb


def rpy_deg_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll), angles in degrees, as a quaternion."""
    qx = Pose.exp([0, 0, 0, math.radians(roll), 0, 0]).q
    qy = Pose.exp([0, 0, 0, 0, math.radians(pitch), 0]).q
    qz = Pose.exp([0, 0, 0, 0, 0, math.radians(yaw)]).q
    return Pose(qz, [0, 0, 0]).compose(Pose(qy, [0, 0, 0])).compose(Pose(qx, [0, 0, 0])).q


@dataclass(frozen=True)
class PosePath:
    """Piecewise-linear pose vs. time (slerp for rotation), clamped at ends."""

    times: tuple
    poses: tuple

    @staticmethod
    def from_waypoints(waypoints: Sequence[tuple[float, Pose]]) -> "PosePath":
        wp = sorted(waypoints, key=lambda x: x[0])
        return PosePath(tuple(t for t, _ in wp), tuple(p for _, p in wp))

    def at(self, t: float) -> Pose:
        times = self.times
        if t <= times[0]:
            return self.poses[0]
        if t >= times[-1]:
            return self.poses[-1]
        i = int(np.searchsorted(times, t, side="right"))
        t0, t1 = times[i - 1], times[i]
        s = (t - t0) / (t1 - t0)
        pa, pb = self.poses[i - 1], self.poses[i]
        return Pose(quat_slerp(pa.q, pb.q, s), (1 - s) * pa.t + s * pb.t)


def _cell_hash(ia: np.ndarray, ib: np.ndarray, seed: int) -> np.ndarray:
    h = (
        (ia * np.int64(73856093))
        ^ (ib * np.int64(19349663))
        ^ np.int64(seed * 2654435761 % (1 << 31))
    )
    h = (h ^ (h >> 13)) * np.int64(1274126177)
    return (h ^ (h >> 16)) & np.int64(0x7FFFFFFF)


@dataclass(frozen=True)
class Checker:
    """Procedural checkerboard: per-cell pseudo-random shade, seeded.

    ``detail`` > 0 overlays a second, rotated checker layer at a finer
    scale, which decorrelates corner sites across rows/columns (a single
    aligned grid puts whole corner columns on one image column).
    """

    cell: float = 0.08
    seed: int = 0
    base: int = 128
    span: int = 66
    tint: tuple = (1.0, 1.0, 1.0)
    detail: float = 0.0

    def shade(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ia = np.floor(a / self.cell).astype(np.int64)
        ib = np.floor(b / self.cell).astype(np.int64)
        level = (_cell_hash(ia, ib, self.seed) % 4).astype(np.float64) / 3.0
        gray = self.base - self.span / 2.0 + self.span * level
        if self.detail > 0:
            ca, sa = math.cos(math.radians(31.0)), math.sin(math.radians(31.0))
            cell2 = self.cell * 0.53
            ja = np.floor((ca * a - sa * b) / cell2).astype(np.int64)
            jb = np.floor((sa * a + ca * b) / cell2).astype(np.int64)
            level2 = (_cell_hash(ja, jb, self.seed + 101) % 4).astype(np.float64) / 3.0
            gray = gray + self.detail * self.span * (level2 - 0.5)
        rgb = np.stack(
            [gray * self.tint[0], gray * self.tint[1], gray * self.tint[2]], axis=-1
        )
        return np.clip(rgb, 0, 255)


@dataclass(frozen=True)
class RectPrim:
    """Finite rectangle: the local z=0 plane, |x|<=sx/2, |y|<=sy/2."""

    pose: Pose
    size: tuple  # (sx, sy)
    texture: Checker

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        """Ray parameters (inf = miss) plus texture-plane coordinates."""
        o = self.pose.apply_inverse(origin)
        R = self.pose.rotation_matrix()
        d = dirs @ R  # rotate world dirs into the local frame
        dz = d[..., 2]
        safe_dz = np.where(np.abs(dz) > 1e-12, dz, 1.0)
        s = -o[2] / safe_dz
        x = o[0] + s * d[..., 0]
        y = o[1] + s * d[..., 1]
        hit = (
            (np.abs(dz) > 1e-12)
            & (s > 1e-6)
            & (np.abs(x) <= self.size[0] / 2)
            & (np.abs(y) <= self.size[1] / 2)
        )
        s = np.where(hit, s, np.inf)
        return s, np.where(hit, x, 0.0), np.where(hit, y, 0.0)


@dataclass(frozen=True)
class BoxPrim:
    """Axis-aligned box in its local frame, with half extents."""

    pose: Pose
    half: tuple  # (hx, hy, hz)
    texture: Checker

    def at(self, pose: Pose) -> "BoxPrim":
        return BoxPrim(pose, self.half, self.texture)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        o = self.pose.apply_inverse(origin)
        R = self.pose.rotation_matrix()
        d = dirs @ R
        half = np.asarray(self.half)
        safe_d = np.where(np.abs(d) > 1e-12, d, 1e-30)
        t1 = (-half - o) / safe_d
        t2 = (half - o) / safe_d
        t_near_ax = np.minimum(t1, t2)
        t_far_ax = np.maximum(t1, t2)
        t_near = t_near_ax.max(axis=-1)
        t_far = t_far_ax.min(axis=-1)
        hit = (t_near <= t_far) & (t_near > 1e-6)
        s = np.where(hit, t_near, np.inf)
        # entering face = the axis that produced t_near
        axis = np.argmax(t_near_ax, axis=-1)
        p = o + np.where(hit, s, 0.0)[..., None] * d
        coords = {
            0: (p[..., 1], p[..., 2]),
            1: (p[..., 0] + 10.0, p[..., 2]),  # offsets decorrelate face patterns
            2: (p[..., 0], p[..., 1] + 20.0),
        }
        a = np.choose(axis, [coords[0][0], coords[1][0], coords[2][0]])
        b = np.choose(axis, [coords[0][1], coords[1][1], coords[2][1]])
        return s, a, b

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        p = self.pose.apply_inverse(point)
        return bool(np.all(np.abs(p) <= np.asarray(self.half) + margin))


@dataclass(frozen=True)
class DynamicObject:
    box: BoxPrim
    path: PosePath

    def at(self, t: float) -> BoxPrim:
        return self.box.at(self.path.at(t))


@dataclass
class SceneSpec:
    intrinsics: Intrinsics
    camera_path: PosePath
    static: list = field(default_factory=list)
    dynamic: list = field(default_factory=list)
    n_frames: int = 60
    fps: float = 30.0
    t0: float = 1000.0
    seed: int = 0
    depth_noise_sigma: float = 0.0
    pixel_noise_sigma: float = 0.0

    def validate(self) -> None:
        if self.intrinsics.width < 64 or self.intrinsics.height < 64:
            raise ValueError("resolution must be at least 64x64")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        for i in range(self.n_frames):
            t = self.t0 + i / self.fps
            cam = self.camera_path.at(t).t
            for prim in self.static:
                if isinstance(prim, BoxPrim) and prim.contains(cam, margin=0.02):
                    raise ValueError(f"camera path intersects static geometry at frame {i}")
            for obj in self.dynamic:
                if obj.at(t).contains(cam, margin=0.02):
                    raise ValueError(f"camera path intersects a dynamic object at frame {i}")


@dataclass
class SynthFrame:
    timestamp: float
    rgb: np.ndarray
    depth: np.ndarray
    gt_pose: Pose
    gt_dynamic_mask: np.ndarray
    gt_background_rgb: np.ndarray
    gt_background_depth: np.ndarray


def _ray_dirs(k: Intrinsics) -> np.ndarray:
    us, vs = np.meshgrid(np.arange(k.width), np.arange(k.height))
    return np.stack(
        [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us, dtype=float)], axis=-1
    )


def _cast(prims, origin, dirs_world, shape):
    """Nearest-hit depth, color and winning-primitive index over ``prims``."""
    depth = np.full(shape, np.inf)
    winner = np.full(shape, -1, dtype=np.int32)
    coords = []
    for idx, prim in enumerate(prims):
        s, a, b = prim.intersect(origin, dirs_world)
        coords.append((a, b))
        closer = s < depth
        depth = np.where(closer, s, depth)
        winner = np.where(closer, idx, winner)
    color = np.zeros(shape + (3,))
    for idx, prim in enumerate(prims):
        sel = winner == idx
        if sel.any():
            a, b = coords[idx]
            color[sel] = prim.texture.shade(a[sel], b[sel])
    return depth, color, winner


def render(spec: SceneSpec, out_dir=None) -> list[SynthFrame]:
    """Render the scene; optionally write a TUM-format dataset directory."""
    spec.validate()
    k = spec.intrinsics
    dirs_cam = _ray_dirs(k)
    frames = []
    rng = np.random.default_rng(spec.seed)
    for i in range(spec.n_frames):
        t = spec.t0 + i / spec.fps
        cam = spec.camera_path.at(t)
        R = cam.rotation_matrix()
        dirs_world = dirs_cam @ R.T
        movers = [obj.at(t) for obj in spec.dynamic]
        prims = list(spec.static) + movers
        n_static = len(spec.static)

        depth, color, winner = _cast(prims, cam.t, dirs_world, dirs_cam.shape[:2])
        hit = np.isfinite(depth)
        mask = hit & (winner >= n_static)

        bg_depth, bg_color, bg_winner = _cast(spec.static, cam.t, dirs_world, dirs_cam.shape[:2])
        bg_hit = np.isfinite(bg_depth)

        if spec.pixel_noise_sigma > 0:
            noise = rng.normal(0, spec.pixel_noise_sigma, color.shape)
            color = color + noise
            bg_color = bg_color + noise
        rgb = np.clip(np.round(color), 0, 255).astype(np.uint8)
        bg_rgb = np.clip(np.round(bg_color), 0, 255).astype(np.uint8)
        rgb[~hit] = 0
        bg_rgb[~bg_hit] = 0

        depth_out = np.where(hit, depth, 0.0)
        if spec.depth_noise_sigma > 0:
            depth_out = np.where(
                hit,
                np.maximum(depth_out + rng.normal(0, spec.depth_noise_sigma, depth.shape), 1e-3),
                0.0,
            )

        frames.append(
            SynthFrame(
                timestamp=t,
                rgb=rgb,
                depth=depth_out,
                gt_pose=cam,
                gt_dynamic_mask=mask,
                gt_background_rgb=bg_rgb,
                gt_background_depth=np.where(bg_hit, bg_depth, 0.0),
            )
        )

    if out_dir is not None:
        write_dataset(frames, k, out_dir)
    return frames


def write_dataset(frames: list[SynthFrame], k: Intrinsics, out_dir) -> Path:
    out = Path(out_dir)
    for sub in ("rgb", "depth", "masks", "background", "background_depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rgb_lines, depth_lines, gt_lines = [], [], []
    for f in frames:
        stem = f"{f.timestamp:.6f}"
        write_rgb(out / "rgb" / f"{stem}.png", f.rgb)
        write_depth(out / "depth" / f"{stem}.png", f.depth)
        write_mask(out / "masks" / f"{stem}.png", f.gt_dynamic_mask)
        write_rgb(out / "background" / f"{stem}.png", f.gt_background_rgb)
        write_depth(out / "background_depth" / f"{stem}.png", f.gt_background_depth)
        rgb_lines.append(f"{stem} rgb/{stem}.png")
        depth_lines.append(f"{stem} depth/{stem}.png")
        w, x, y, z = f.gt_pose.q
        tx, ty, tz = f.gt_pose.t
        gt_lines.append(
            f"{stem} {tx:.9f} {ty:.9f} {tz:.9f} {x:.9f} {y:.9f} {z:.9f} {w:.9f}"
        )
    (out / "rgb.txt").write_text("# synthetic rgb\n" + "\n".join(rgb_lines) + "\n")
    (out / "depth.txt").write_text("# synthetic depth\n" + "\n".join(depth_lines) + "\n")
    (out / "groundtruth.txt").write_text("# synthetic gt\n" + "\n".join(gt_lines) + "\n")
    SequenceConfig(intrinsics=k).save(out / "intrinsics.json")
    return out


# --- scene construction -----------------------------------------------------


def _pose_from_json(d) -> Pose:
    rpy = d.get("rpy_deg", [0, 0, 0])
    return Pose(rpy_deg_to_quat(*rpy), d["position"])


def _texture_from_json(d) -> Checker:
    return Checker(
        cell=float(d.get("cell", 0.08)),
        seed=int(d.get("seed", 0)),
        base=int(d.get("base", 128)),
        span=int(d.get("span", 66)),
        tint=tuple(d.get("tint", (1.0, 1.0, 1.0))),
        detail=float(d.get("detail", 0.0)),
    )


def _prim_from_json(d):
    tex = _texture_from_json(d.get("texture", {}))
    pose = _pose_from_json(d)
    if d["type"] == "rect":
        return RectPrim(pose, tuple(d["size"]), tex)
    if d["type"] == "box":
        return BoxPrim(pose, tuple(h / 2 for h in d["size"]), tex)
    raise ValueError(f"unknown primitive type: {d['type']!r}")


def _path_from_json(waypoints) -> PosePath:
    return PosePath.from_waypoints([(float(w["time"]), _pose_from_json(w)) for w in waypoints])


def scene_from_json(data: dict) -> SceneSpec:
    ki = data["intrinsics"]
    k = Intrinsics(
        fx=float(ki["fx"]),
        fy=float(ki["fy"]),
        cx=float(ki["cx"]),
        cy=float(ki["cy"]),
        width=int(ki["width"]),
        height=int(ki["height"]),
    )
    t0 = float(data.get("t0", 1000.0))
    static = [_prim_from_json(p) for p in data.get("static", [])]
    dynamic = []
    for d in data.get("dynamic", []):
        tex = _texture_from_json(d.get("texture", {}))
        box = BoxPrim(Pose.identity(), tuple(h / 2 for h in d["size"]), tex)
        dynamic.append(DynamicObject(box, _path_from_json(d["path"])))
    return SceneSpec(
        intrinsics=k,
        camera_path=_path_from_json(data["camera_path"]),
        static=static,
        dynamic=dynamic,
        n_frames=int(data.get("n_frames", 60)),
        fps=float(data.get("fps", 30.0)),
        t0=t0,
        seed=int(data.get("seed", 0)),
        depth_noise_sigma=float(data.get("depth_noise_sigma", 0.0)),
        pixel_noise_sigma=float(data.get("pixel_noise_sigma", 0.0)),
    )


def load_scene(path) -> SceneSpec:
    return scene_from_json(json.loads(Path(path).read_text()))


def cuboid_walk_json(
    n_frames: int = 60,
    width: int = 640,
    height: int = 480,
    with_mover: bool = True,
    seed: int = 0,
) -> dict:
    """The default acceptance scene, as an editable scene-spec dict.

    A textured wall with mounted slabs, the camera translating 0.5 m with a
    mild yaw sweep, and one textured cuboid crossing the view at 0.02 m per
    frame, close enough to cover roughly a quarter of the image.  The gap
    between the mover and everything behind it stays above 0.6 m so depth
    jumps are unambiguous.
    """
    fps = 30.0
    t0 = 1000.0
    # camera and mover speeds follow the nominal 60-frame schedule so that
    # shorter renders are truncations of the same scene, not faster replays
    t_end = t0 + 59 / fps
    scale = width / 640.0
    data = {
        "intrinsics": {
            "fx": 525.0 * scale,
            "fy": 525.0 * scale,
            "cx": width / 2 - 0.5,
            "cy": height / 2 - 0.5,
            "width": width,
            "height": height,
        },
        "n_frames": n_frames,
        "fps": fps,
        "t0": t0,
        "seed": seed,
        "camera_path": [
            {"time": t0, "position": [0.0, 0.0, 0.0], "rpy_deg": [0, -2.0, 0]},
            {"time": t_end, "position": [0.5, 0.0, 0.0], "rpy_deg": [0, 2.0, 0]},
        ],
        "static": [
            {
                "type": "rect",
                "position": [0.3, 0.0, 1.6],
                "size": [6.0, 4.0],
                "texture": {"cell": 0.09, "seed": 11, "base": 128, "span": 72, "detail": 0.9},
            },
            {
                "type": "box",
                "position": [-0.55, 0.32, 1.52],
                "size": [0.5, 0.4, 0.16],
                "texture": {"cell": 0.06, "seed": 23, "base": 140, "span": 64, "tint": [1.0, 0.92, 0.85], "detail": 0.8},
            },
            {
                "type": "box",
                "position": [0.35, -0.42, 1.50],
                "size": [0.6, 0.35, 0.16],
                "texture": {"cell": 0.055, "seed": 37, "base": 120, "span": 70, "tint": [0.88, 0.95, 1.0], "detail": 0.8},
            },
            {
                "type": "box",
                "position": [1.25, 0.3, 1.52],
                "size": [0.45, 0.45, 0.16],
                "texture": {"cell": 0.065, "seed": 51, "base": 135, "span": 68, "tint": [0.92, 1.0, 0.9], "detail": 0.8},
            },
        ],
        "dynamic": [],
    }
    if with_mover:
        # 0.02 m per frame = 0.6 m/s at 30 fps; densely textured so that an
        # unmasked tracker finds plenty of features on it
        travel = 0.02 * 59
        data["dynamic"].append(
            {
                "type": "box",
                "size": [0.32, 0.32, 0.2],
                "texture": {"cell": 0.022, "seed": 77, "base": 150, "span": 84, "tint": [1.0, 0.85, 0.8], "detail": 0.9},
                "path": [
                    {"time": t0, "position": [-0.45, 0.0, 0.68]},
                    {"time": t_end, "position": [-0.45 + travel, 0.0, 0.68]},
                ],
            }
        )
    return data


def cuboid_walk_spec(**kwargs) -> SceneSpec:
    return scene_from_json(cuboid_walk_json(**kwargs))

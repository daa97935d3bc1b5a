"""Simulated posed pinhole depth camera.

Renders z-depth frames by sphere tracing the analytic scene, injects
depth-dependent Gaussian noise and masks floor hits geometrically.  The
convention is right handed with z forward, x right, y down; depth is the
distance along the optical axis, not the ray length, so back-projection is
``pose . (D[u, v] * K^-1 [u, v, 1]^T)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Scene, scene_sdf_batch

SPHERE_TRACE_TOL = 1e-4  # m; sub-millimeter surfaces at desk scale
SPHERE_TRACE_MAX_STEPS = 256
FLOOR_MASK_TOL = 0.03  # m above/below the floor plane

_HEADER_STRUCT = struct.Struct("<IIffffff")  # 32 bytes


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    min_depth: float = 0.1
    max_depth: float = 10.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8 pixels")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.min_depth < self.max_depth):
            raise ValueError("require 0 < min_depth < max_depth")


@dataclass(frozen=True)
class CameraPose:
    """World-from-camera transform: p_world = rotation @ p_cam + position."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        object.__setattr__(self, "rotation", R)
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0.0:
            raise ValueError("rotation must be orthonormal with determinant +1")


@dataclass
class DepthFrame:
    intrinsics: CameraIntrinsics
    pose: CameraPose
    depth: np.ndarray  # (height, width) meters, 0.0 where invalid
    valid: np.ndarray  # (height, width) bool
    timestamp: float = 0.0
    hit_index: np.ndarray | None = None  # ground-truth hit labels, tests only

    def copy(self) -> "DepthFrame":
        return DepthFrame(
            self.intrinsics,
            self.pose,
            self.depth.copy(),
            self.valid.copy(),
            self.timestamp,
            None if self.hit_index is None else self.hit_index.copy(),
        )

    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))


def pixel_rays(intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame ray directions (H, W, 3), unnormalized with unit z, plus norms."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    x = (uu - intr.cx) / intr.fx
    y = (vv - intr.cy) / intr.fy
    dirs = np.stack([x, y, np.ones_like(x)], axis=-1)
    return dirs, np.linalg.norm(dirs, axis=-1)


def render_depth(scene: Scene, pose: CameraPose, intr: CameraIntrinsics,
                 timestamp: float = 0.0) -> DepthFrame:
    """Sphere-trace the scene and return a noiseless z-depth frame.

    The floor is part of the rendered geometry; pixels with no hit inside
    [min_depth, max_depth] are invalid.  Each valid pixel also records which
    primitive terminated its ray (floor = len(scene.primitives)).
    """
    dirs_cam, norms = pixel_rays(intr)
    h, w = intr.height, intr.width
    dirs_world = dirs_cam.reshape(-1, 3) @ pose.rotation.T
    dirs_world /= np.linalg.norm(dirs_world, axis=1, keepdims=True)
    n_rays = dirs_world.shape[0]

    t = np.full(n_rays, intr.min_depth * norms.reshape(-1))  # ray length, not z-depth
    alive = np.ones(n_rays, dtype=bool)
    hit = np.zeros(n_rays, dtype=bool)
    hit_idx = np.full(n_rays, -1, dtype=int)
    max_t = intr.max_depth * norms.reshape(-1)

    for _ in range(SPHERE_TRACE_MAX_STEPS):
        if not np.any(alive):
            break
        pts = pose.position[None, :] + t[alive, None] * dirs_world[alive]
        d, _, idx = scene_sdf_batch(scene, pts, include_floor=True, with_gradient=True)
        close = d < SPHERE_TRACE_TOL
        live_ids = np.flatnonzero(alive)
        newly_hit = live_ids[close]
        hit[newly_hit] = True
        hit_idx[newly_hit] = idx[close]
        alive[newly_hit] = False
        stepping = live_ids[~close]
        t[stepping] += np.maximum(d[~close], SPHERE_TRACE_TOL)
        overran = stepping[t[stepping] > max_t[stepping]]
        alive[overran] = False

    depth = np.zeros(n_rays)
    depth[hit] = t[hit] / norms.reshape(-1)[hit]  # convert ray length to z-depth
    valid = hit & (depth >= intr.min_depth) & (depth <= intr.max_depth)
    depth[~valid] = 0.0
    hit_idx[~valid] = -1
    return DepthFrame(intr, pose, depth.reshape(h, w), valid.reshape(h, w),
                      timestamp, hit_idx.reshape(h, w))


def apply_noise(frame: DepthFrame, seed: int, sigma0: float = 0.005,
                sigma1: float = 0.005) -> DepthFrame:
    """Perturb valid depths with zero-mean Gaussian noise, std sigma0 + sigma1*d^2.

    The full pixel grid is drawn in one pass so equal seeds give bit-identical
    frames regardless of the valid mask.
    """
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(frame.depth.shape)
    out = frame.copy()
    sigma = sigma0 + sigma1 * np.square(out.depth)
    noisy = out.depth + sigma * eps
    out.depth = np.where(out.valid, noisy, 0.0)
    bad = out.valid & (out.depth <= 0.0)
    if np.any(bad):
        out.valid = out.valid & ~bad
        out.depth = np.where(out.valid, out.depth, 0.0)
    return out


def backproject_grid(frame: DepthFrame) -> np.ndarray:
    """World-frame points for every pixel (invalid pixels give garbage); (H, W, 3)."""
    intr = frame.intrinsics
    dirs_cam, _ = pixel_rays(intr)
    pts_cam = dirs_cam * frame.depth[..., None]
    flat = pts_cam.reshape(-1, 3) @ frame.pose.rotation.T + frame.pose.position
    return flat.reshape(intr.height, intr.width, 3)


def backproject(frame: DepthFrame, u: int, v: int) -> np.ndarray:
    """World point of pixel (u=column, v=row). Raises on invalid pixels."""
    if not frame.valid[v, u]:
        raise ValueError(f"pixel ({u}, {v}) is invalid")
    intr = frame.intrinsics
    d = frame.depth[v, u]
    p_cam = np.array([(u - intr.cx) / intr.fx * d, (v - intr.cy) / intr.fy * d, d])
    return frame.pose.rotation @ p_cam + frame.pose.position


def mask_floor(frame: DepthFrame, scene: Scene, z_tol: float = FLOOR_MASK_TOL) -> DepthFrame:
    """Invalidate pixels whose back-projected point lies within z_tol of the floor."""
    out = frame.copy()
    if out.valid_count() == 0:
        return out
    pts = backproject_grid(out)
    near_floor = np.abs(pts[..., 2] - scene.floor_z) <= z_tol
    drop = out.valid & near_floor
    out.valid = out.valid & ~drop
    out.depth = np.where(out.valid, out.depth, 0.0)
    if out.hit_index is not None:
        out.hit_index = np.where(out.valid, out.hit_index, -1)
    return out


def valid_pixel_indices(frame: DepthFrame) -> np.ndarray:
    """(N, 2) array of (v, u) indices of valid pixels, row-major order."""
    return np.argwhere(frame.valid)


def save_frame(frame: DepthFrame, path: str | Path) -> None:
    """Debug dump: 32-byte intrinsics header then row-major float32 depths.

    The camera pose goes to ``<path>.pose`` as 12 little-endian float32
    values, the 3x4 [R | t] matrix in row-major order.
    """
    intr = frame.intrinsics
    header = _HEADER_STRUCT.pack(intr.width, intr.height, intr.fx, intr.fy,
                                 intr.cx, intr.cy, intr.min_depth, intr.max_depth)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header)
        f.write(frame.depth.astype("<f4").tobytes())
    mat = np.hstack([frame.pose.rotation, frame.pose.position[:, None]])
    with open(path.with_suffix(path.suffix + ".pose"), "wb") as f:
        f.write(mat.astype("<f4").tobytes())


def load_frame(path: str | Path) -> DepthFrame:
    path = Path(path)
    raw = path.read_bytes()
    w, h, fx, fy, cx, cy, dmin, dmax = _HEADER_STRUCT.unpack(raw[:_HEADER_STRUCT.size])
    intr = CameraIntrinsics(w, h, fx, fy, cx, cy, dmin, dmax)
    depth = np.frombuffer(raw[_HEADER_STRUCT.size:], dtype="<f4").reshape(h, w).astype(float)
    pose_raw = np.frombuffer(path.with_suffix(path.suffix + ".pose").read_bytes(),
                             dtype="<f4").reshape(3, 4).astype(float)
    pose = CameraPose(pose_raw[:, 3], pose_raw[:, :3])
    return DepthFrame(intr, pose, depth, depth > 0.0)


def look_pose(position, yaw: float, pitch_down: float = 0.0) -> CameraPose:
    """Pose of a camera at `position` facing `yaw` in the world xy plane.

    `pitch_down` tilts the optical axis below the horizon.  Camera axes are
    x right, y down, z forward.
    """
    cy_, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch_down), np.sin(pitch_down)
    forward = np.array([cy_ * cp, sy * cp, -sp])
    right = np.array([sy, -cy_, 0.0])
    down = np.cross(forward, right)
    R = np.column_stack([right, down, forward])
    return CameraPose(np.asarray(position, dtype=float), R)

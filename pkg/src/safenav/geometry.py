"""Analytic world model: exact signed distances, gradients and collision checks.

Scenes are unions of convex primitives over a distinguished horizontal floor
plane.  Every query is exact, which makes the scene usable as a raycast
target, as the barrier source for the parametric controller and as the
ground-truth oracle in evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

INFINITE_DISTANCE = float("inf")

SPHERE = "sphere"
BOX = "box"
PLANE = "plane"
CYLINDER = "cylinder"

_KINDS = (SPHERE, BOX, PLANE, CYLINDER)


@dataclass(frozen=True)
class Primitive:
    """One convex solid, in world frame, all lengths in meters.

    kind      'sphere' | 'box' | 'plane' | 'cylinder'
    center    reference point; ignored for planes
    extents   sphere: (r, -, -); box: half extents; cylinder: (r, -, half_height)
    normal    plane only, unit vector
    offset    plane only, signed distance d with surface {q : n.q = offset}
    """

    kind: str
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extents: tuple[float, float, float] = (1.0, 1.0, 1.0)
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.kind == PLANE:
            n = np.asarray(self.normal, dtype=float)
            if abs(np.linalg.norm(n) - 1.0) > 1e-9:
                raise ValueError("plane normal must be unit length")
        elif self.kind == SPHERE:
            if self.extents[0] <= 0.0:
                raise ValueError("sphere radius must be positive")
        elif self.kind == BOX:
            if min(self.extents) <= 0.0:
                raise ValueError("box half extents must be positive")
        elif self.kind == CYLINDER:
            if self.extents[0] <= 0.0 or self.extents[2] <= 0.0:
                raise ValueError("cylinder radius and half height must be positive")


def make_sphere(center, radius: float) -> Primitive:
    return Primitive(SPHERE, tuple(float(c) for c in center), (float(radius), 0.0, 0.0))


def make_box(center, half_extents) -> Primitive:
    return Primitive(BOX, tuple(float(c) for c in center), tuple(float(e) for e in half_extents))


def make_plane(normal, offset: float) -> Primitive:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    return Primitive(PLANE, normal=tuple(n.tolist()), offset=float(offset))


def make_cylinder(center, radius: float, half_height: float) -> Primitive:
    return Primitive(CYLINDER, tuple(float(c) for c in center), (float(radius), 0.0, float(half_height)))


def primitive_sdf(prim: Primitive, points: np.ndarray) -> np.ndarray:
    """Exact signed distance from each point to the primitive surface.

    Negative strictly inside, positive outside.  `points` is (..., 3).
    """
    q = np.asarray(points, dtype=float)
    scalar = q.ndim == 1
    q = np.atleast_2d(q)
    if prim.kind == SPHERE:
        d = np.linalg.norm(q - np.asarray(prim.center), axis=-1) - prim.extents[0]
    elif prim.kind == PLANE:
        d = q @ np.asarray(prim.normal) - prim.offset
    elif prim.kind == BOX:
        p = np.abs(q - np.asarray(prim.center)) - np.asarray(prim.extents)
        outside = np.linalg.norm(np.maximum(p, 0.0), axis=-1)
        inside = np.minimum(p.max(axis=-1), 0.0)
        d = outside + inside
    else:  # cylinder
        rel = q - np.asarray(prim.center)
        d2 = np.stack(
            [np.hypot(rel[..., 0], rel[..., 1]) - prim.extents[0],
             np.abs(rel[..., 2]) - prim.extents[2]],
            axis=-1,
        )
        outside = np.linalg.norm(np.maximum(d2, 0.0), axis=-1)
        inside = np.minimum(d2.max(axis=-1), 0.0)
        d = outside + inside
    return d[0] if scalar else d


def primitive_gradient(prim: Primitive, points: np.ndarray) -> np.ndarray:
    """Unit gradient of the primitive SDF (the outward surface normal).

    At degenerate points (sphere center, box diagonals) a deterministic
    subgradient is returned: ties between axes go to the lowest axis index.
    """
    q = np.asarray(points, dtype=float)
    scalar = q.ndim == 1
    q = np.atleast_2d(q)
    if prim.kind == SPHERE:
        rel = q - np.asarray(prim.center)
        n = np.linalg.norm(rel, axis=-1, keepdims=True)
        g = np.where(n > 1e-12, rel / np.maximum(n, 1e-300), np.array([1.0, 0.0, 0.0]))
    elif prim.kind == PLANE:
        g = np.broadcast_to(np.asarray(prim.normal, dtype=float), q.shape).copy()
    elif prim.kind == BOX:
        rel = q - np.asarray(prim.center)
        p = np.abs(rel) - np.asarray(prim.extents)
        sgn = np.where(rel >= 0.0, 1.0, -1.0)
        pos = np.maximum(p, 0.0)
        norm = np.linalg.norm(pos, axis=-1, keepdims=True)
        outside_g = sgn * pos / np.maximum(norm, 1e-300)
        # inside: step toward the face of maximum p, lowest axis on ties
        axis = p.argmax(axis=-1)
        inside_g = sgn * np.eye(3)[axis]
        g = np.where(norm > 1e-12, outside_g, inside_g)
    else:  # cylinder
        rel = q - np.asarray(prim.center)
        r = np.hypot(rel[..., 0], rel[..., 1])
        dr = r - prim.extents[0]
        dz = np.abs(rel[..., 2]) - prim.extents[2]
        radial = np.zeros_like(rel)
        safe_r = np.maximum(r, 1e-300)[..., None]
        radial[..., 0] = rel[..., 0] / safe_r[..., 0]
        radial[..., 1] = rel[..., 1] / safe_r[..., 0]
        radial = np.where(r[..., None] > 1e-12, radial, np.array([1.0, 0.0, 0.0]))
        axial = np.zeros_like(rel)
        axial[..., 2] = np.where(rel[..., 2] >= 0.0, 1.0, -1.0)
        p2 = np.stack([dr, dz], axis=-1)
        pos2 = np.maximum(p2, 0.0)
        n2 = np.linalg.norm(pos2, axis=-1, keepdims=True)
        outside_g = (pos2[..., :1] * radial + pos2[..., 1:] * axial) / np.maximum(n2, 1e-300)
        inside_g = np.where((dr >= dz)[..., None], radial, axial)
        g = np.where((n2 > 1e-12), outside_g, inside_g)
    return g[0] if scalar else g


@dataclass(frozen=True)
class Scene:
    """Immutable union-of-primitives world with a dedicated floor plane.

    `primitives` never contains the floor; queries may include it on demand.
    """

    primitives: tuple[Primitive, ...] = ()
    floor: Primitive = field(default_factory=lambda: make_plane((0.0, 0.0, 1.0), 0.0))
    bounds_min: tuple[float, float, float] = (-10.0, -10.0, -1.0)
    bounds_max: tuple[float, float, float] = (10.0, 10.0, 5.0)

    def __post_init__(self):
        if self.floor.kind != PLANE:
            raise ValueError("floor must be a plane")
        nz = np.asarray(self.floor.normal)
        if not (abs(nz[0]) < 1e-9 and abs(nz[1]) < 1e-9 and nz[2] > 0.0):
            raise ValueError("floor plane must have a +z normal")
        lo = np.asarray(self.bounds_min)
        hi = np.asarray(self.bounds_max)
        if np.any(hi <= lo):
            raise ValueError("scene bounds must have positive volume")

    @property
    def floor_z(self) -> float:
        return float(self.floor.offset)


class SceneQuery(NamedTuple):
    distance: float
    gradient: np.ndarray
    index: int  # minimizing primitive, len(primitives) for the floor, -1 if empty


def _included(scene: Scene, include_floor: bool) -> list[Primitive]:
    prims = list(scene.primitives)
    if include_floor:
        prims.append(scene.floor)
    return prims


def scene_sdf(scene: Scene, point, include_floor: bool = True) -> SceneQuery:
    """Signed distance and unit gradient of the scene union at one point.

    Ties between equidistant primitives break to the lowest index so repeated
    queries are reproducible; the floor sits after all other primitives.
    An empty primitive set yields an infinite-distance sentinel with zero
    gradient and index -1.
    """
    prims = _included(scene, include_floor)
    if not prims:
        return SceneQuery(INFINITE_DISTANCE, np.zeros(3), -1)
    q = np.asarray(point, dtype=float)
    dists = np.array([primitive_sdf(p, q) for p in prims])
    idx = int(np.argmin(dists))
    return SceneQuery(float(dists[idx]), primitive_gradient(prims[idx], q), idx)


def scene_sdf_batch(scene: Scene, points: np.ndarray, include_floor: bool = True,
                    with_gradient: bool = False):
    """Vectorized scene SDF over an (N, 3) array.

    Returns distances (N,) or (distances, gradients (N, 3), indices (N,))
    when `with_gradient` is set.  Empty scenes return the infinity sentinel.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    prims = _included(scene, include_floor)
    if not prims:
        d = np.full(pts.shape[0], INFINITE_DISTANCE)
        if with_gradient:
            return d, np.zeros((pts.shape[0], 3)), np.full(pts.shape[0], -1, dtype=int)
        return d
    all_d = np.stack([primitive_sdf(p, pts) for p in prims], axis=0)  # (P, N)
    idx = np.argmin(all_d, axis=0)
    d = all_d[idx, np.arange(pts.shape[0])]
    if not with_gradient:
        return d
    grads = np.zeros((pts.shape[0], 3))
    for i, prim in enumerate(prims):
        sel = idx == i
        if np.any(sel):
            grads[sel] = primitive_gradient(prim, pts[sel])
    return d, grads, idx


def min_clearance(scene: Scene, trajectory: Sequence[np.ndarray] | np.ndarray) -> float:
    """Minimum floor-excluded scene SDF over all trajectory points."""
    pts = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if pts.size == 0:
        raise ValueError("trajectory must be nonempty")
    d = scene_sdf_batch(scene, pts, include_floor=False)
    return float(np.min(d))


def sample_primitive_surface(prim: Primitive, rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform-ish random points on the primitive surface (test oracle helper)."""
    if prim.kind == SPHERE:
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return np.asarray(prim.center) + prim.extents[0] * v
    if prim.kind == BOX:
        c = np.asarray(prim.center)
        e = np.asarray(prim.extents)
        n_edge = n // 6
        n_face = n - n_edge
        face = rng.integers(0, 6, size=n_face)
        pts = rng.uniform(-1.0, 1.0, size=(n_face, 3)) * e
        for i in range(n_face):
            ax, side = divmod(face[i], 2)
            pts[i, ax] = e[ax] if side == 0 else -e[ax]
        # edges and corners carry the nearest point for many exterior queries
        edge_pts = np.empty((n_edge, 3))
        for i in range(n_edge):
            ax = rng.integers(0, 3)
            p = rng.choice([-1.0, 1.0], size=3) * e
            p[ax] = rng.uniform(-e[ax], e[ax])
            edge_pts[i] = p
        corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * e
        return np.vstack([c + pts, c + edge_pts, c + corners])
    if prim.kind == CYLINDER:
        c = np.asarray(prim.center)
        r, hz = prim.extents[0], prim.extents[2]
        n_rim = n // 6
        n_body = n - n_rim
        pts = np.zeros((n_body, 3))
        # split by area between lateral wall and the two caps
        lateral = 2.0 * math.pi * r * 2.0 * hz
        caps = 2.0 * math.pi * r * r
        p_lat = lateral / (lateral + caps)
        on_wall = rng.random(n_body) < p_lat
        ang = rng.uniform(0.0, 2.0 * math.pi, n_body)
        for i in range(n_body):
            if on_wall[i]:
                pts[i] = [r * math.cos(ang[i]), r * math.sin(ang[i]), rng.uniform(-hz, hz)]
            else:
                rr = r * math.sqrt(rng.random())
                z = hz if rng.random() < 0.5 else -hz
                pts[i] = [rr * math.cos(ang[i]), rr * math.sin(ang[i]), z]
        # rim circles: nearest point for queries off both cap and wall
        rim_ang = rng.uniform(0.0, 2.0 * math.pi, n_rim)
        rim_z = np.where(rng.random(n_rim) < 0.5, hz, -hz)
        rim = np.stack([r * np.cos(rim_ang), r * np.sin(rim_ang), rim_z], axis=1)
        return np.vstack([c + pts, c + rim])
    # plane: sample a patch around the origin projection
    n_vec = np.asarray(prim.normal)
    base = n_vec * prim.offset
    a = np.array([1.0, 0.0, 0.0]) if abs(n_vec[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n_vec, a)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n_vec, t1)
    uv = rng.uniform(-5.0, 5.0, size=(n, 2))
    return base + uv[:, :1] * t1 + uv[:, 1:] * t2

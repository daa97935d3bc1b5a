"""Online continual-learning loop for the neural distance field.

Frames stream in from the sensor; a capped keyframe store with loss-driven
admission replays old views against forgetting.  Each iteration draws points
along back-projected rays (stratified free-space depths plus Gaussian
near-surface depths), approximates ground-truth distances with the batch
minimum over the frames' surface points, and takes one optimizer step on the
combined objective.  Snapshots are published at a fixed iteration cadence.

Sampling works in ray-length coordinates: a pixel's depth is converted from
z-depth to distance along its unit ray so the near-surface band is isotropic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import DepthFrame, backproject_grid
from .losses import LossBreakdown, LossConfig, total_loss_and_cotangents
from .network import (
    AdamState,
    FieldConfig,
    FieldSnapshot,
    Params,
    adam_step,
    forward,
    init_params,
    publish_snapshot,
    value_grad_and_vjp,
)

COINCIDENT_EPS = 1e-6  # m; samples this close to a surface point skip the gradient term


@dataclass(frozen=True)
class SamplingConfig:
    frames_per_iteration: int = 3  # newest frame plus replayed keyframes
    rays_per_frame: int = 25
    n_stratified: int = 8
    n_surface: int = 4
    keyframe_capacity: int = 20
    keyframe_threshold: float = 0.05  # m, mean |h| over surface probes
    keyframe_probes: int = 200
    snapshot_every: int = 5

    def points_per_iteration(self) -> int:
        return self.frames_per_iteration * self.rays_per_frame * (self.n_stratified + self.n_surface)


@dataclass
class Keyframe:
    """A retained depth frame with its cached back-projections."""

    frame: DepthFrame
    origin: np.ndarray        # camera position
    surface_points: np.ndarray  # (N, 3) world points of valid pixels
    ray_dirs: np.ndarray      # (N, 3) unit directions
    ray_lengths: np.ndarray   # (N,) metric depth along each ray
    score: float = 0.0

    @classmethod
    def from_frame(cls, frame: DepthFrame, score: float = 0.0) -> "Keyframe":
        if frame.valid_count() == 0:
            raise ValueError("keyframe needs at least one valid pixel")
        pts = backproject_grid(frame)[frame.valid]
        origin = frame.pose.position
        rel = pts - origin
        lengths = np.linalg.norm(rel, axis=1)
        dirs = rel / lengths[:, None]
        return cls(frame, origin, pts, dirs, lengths, score)


@dataclass
class SampleBatch:
    points: np.ndarray        # (M, 3)
    origins: np.ndarray       # (M, 3)
    directions: np.ndarray    # (M, 3) unit
    s: np.ndarray             # (M,) sampled depth along the ray
    ray_depth: np.ndarray     # (M,) surface depth of the sample's ray
    bounds: np.ndarray        # (M,) batch-distance ground-truth estimate
    grad_targets: np.ndarray  # (M, 3) unit
    grad_valid: np.ndarray    # (M,) bool, false for coincident samples
    near_mask: np.ndarray     # (M,) bool
    frame_ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.points.shape[0]


class KeyframeStore:
    """Loss-scored keyframe set with lowest-score eviction at capacity."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.frames: list[Keyframe] = []

    def __len__(self) -> int:
        return len(self.frames)

    def add(self, kf: Keyframe) -> None:
        self.frames.append(kf)
        if len(self.frames) > self.capacity:
            scores = np.array([f.score for f in self.frames])
            self.frames.pop(int(np.argmin(scores)))  # ties evict the oldest


def probe_score(params: Params, config: FieldConfig, kf: Keyframe,
                rng: np.random.Generator, n_probes: int) -> float:
    """Mean absolute field value at random surface points of the frame.

    This is the near-surface residual in its L1 form with a zero target: a
    frame whose surface the field already explains scores low.
    """
    n = kf.surface_points.shape[0]
    idx = rng.integers(0, n, size=min(n_probes, n))
    h = forward(params, config, kf.surface_points[idx])
    return float(np.mean(np.abs(h)))


def admit_keyframe(store: KeyframeStore, frame: DepthFrame, params: Params,
                   config: FieldConfig, rng: np.random.Generator,
                   sampling: SamplingConfig) -> bool:
    """Admit the frame when the store is empty or its probe loss clears the bar."""
    if frame.valid_count() == 0:
        return False
    kf = Keyframe.from_frame(frame)
    if len(store) == 0:
        kf.score = float("inf")  # nothing to compare against yet
        store.add(kf)
        return True
    kf.score = probe_score(params, config, kf, rng, sampling.keyframe_probes)
    if kf.score > sampling.keyframe_threshold:
        store.add(kf)
        return True
    return False


def sample_batch(latest: Keyframe, replays: list[Keyframe], rng: np.random.Generator,
                 sampling: SamplingConfig, loss_cfg: LossConfig,
                 min_depth: float) -> SampleBatch:
    """Draw supervised 3D samples along rays of the newest and replayed frames."""
    frames = [latest] + list(replays)
    eps = loss_cfg.eps_band
    all_points = []
    all_origins = []
    all_dirs = []
    all_s = []
    all_depth = []
    for kf in frames:
        n_valid = kf.surface_points.shape[0]
        ray_idx = rng.integers(0, n_valid, size=sampling.rays_per_frame)
        dirs = kf.ray_dirs[ray_idx]
        lengths = kf.ray_lengths[ray_idx]
        per_ray = []
        if sampling.n_stratified > 0:
            lo = np.minimum(min_depth, lengths)  # degenerate rays keep a valid interval
            span = lengths + eps - lo
            u = rng.random((sampling.rays_per_frame, sampling.n_stratified))
            bins = (np.arange(sampling.n_stratified) + u) / sampling.n_stratified
            per_ray.append(lo[:, None] + bins * span[:, None])
        if sampling.n_surface > 0:
            jitter = rng.normal(0.0, eps / 3.0, size=(sampling.rays_per_frame, sampling.n_surface))
            s_surf = np.clip(lengths[:, None] + jitter, min_depth, lengths[:, None] + 0.999 * eps)
            per_ray.append(s_surf)
        s = np.concatenate(per_ray, axis=1)  # (R, K)
        k = s.shape[1]
        all_points.append(kf.origin[None, None, :] + s[:, :, None] * dirs[:, None, :])
        all_origins.append(np.broadcast_to(kf.origin, (sampling.rays_per_frame, k, 3)))
        all_dirs.append(np.broadcast_to(dirs[:, None, :], (sampling.rays_per_frame, k, 3)))
        all_s.append(s)
        all_depth.append(np.broadcast_to(lengths[:, None], s.shape))

    points = np.concatenate([p.reshape(-1, 3) for p in all_points])
    origins = np.concatenate([o.reshape(-1, 3) for o in all_origins])
    dirs = np.concatenate([d.reshape(-1, 3) for d in all_dirs])
    s = np.concatenate([x.ravel() for x in all_s])
    depth = np.concatenate([x.ravel() for x in all_depth])

    surface_set = np.concatenate([kf.surface_points for kf in frames])
    tree = cKDTree(surface_set)
    nn_dist, nn_idx = tree.query(points, k=1)

    ray_term = depth - s
    bounds = np.sign(ray_term) * np.minimum(np.abs(ray_term), nn_dist)
    near = np.abs(ray_term) < eps

    grad_valid = nn_dist >= COINCIDENT_EPS
    rel = points - surface_set[nn_idx]
    safe = np.maximum(nn_dist, COINCIDENT_EPS)
    targets = np.sign(bounds)[:, None] * rel / safe[:, None]
    targets[~grad_valid] = np.array([0.0, 0.0, 1.0])  # placeholder, masked out

    return SampleBatch(points, origins, dirs, s, depth, bounds, targets,
                       grad_valid, near, frame_ids=[id(kf.frame) for kf in frames])


def batch_distance_bound(point: np.ndarray, s: float, ray_depth: float,
                         surface_points: np.ndarray) -> float:
    """Single-sample form of the bound: sign(D - s) * min(|D - s|, batch minimum)."""
    if surface_points.size == 0:
        raise ValueError("surface point set is empty")
    nearest = float(np.min(np.linalg.norm(surface_points - np.asarray(point), axis=1)))
    ray_term = ray_depth - s
    return float(np.sign(ray_term) * min(abs(ray_term), nearest))


def gradient_target(point: np.ndarray, bound: float,
                    surface_points: np.ndarray) -> tuple[np.ndarray, bool]:
    """Unit direction from the nearest batch surface point, signed like the bound.

    Returns (target, valid); coincident samples are excluded from the
    gradient objective.
    """
    rel = np.asarray(point) - surface_points
    dist = np.linalg.norm(rel, axis=1)
    i = int(np.argmin(dist))
    if dist[i] < COINCIDENT_EPS:
        return np.array([0.0, 0.0, 1.0]), False
    return np.sign(bound) * rel[i] / dist[i], True


@dataclass
class TrainerState:
    """Single-writer training context owning the live parameters."""

    field_config: FieldConfig
    loss_config: LossConfig
    sampling: SamplingConfig
    params: Params
    optimizer: AdamState
    rng: np.random.Generator
    store: KeyframeStore
    min_depth: float = 0.1
    compute_dtype: type = np.float32  # training GEMMs; audits use float64
    latest: Keyframe | None = None
    iteration: int = 0
    version: int = 0
    snapshot: FieldSnapshot | None = None
    region_min: np.ndarray = field(default_factory=lambda: np.full(3, np.inf))
    region_max: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))
    log_rows: list = field(default_factory=list)
    wall_start: float = field(default_factory=time.perf_counter)

    @classmethod
    def create(cls, field_config: FieldConfig | None = None,
               loss_config: LossConfig | None = None,
               sampling: SamplingConfig | None = None,
               seed: int = 0, learning_rate: float = 1e-3,
               min_depth: float = 0.1) -> "TrainerState":
        field_config = field_config or FieldConfig()
        params = init_params(field_config, seed=seed)
        return cls(
            field_config=field_config,
            loss_config=loss_config or LossConfig(),
            sampling=sampling or SamplingConfig(),
            params=params,
            optimizer=AdamState.for_params(params, learning_rate=learning_rate),
            rng=np.random.default_rng(seed + 0x5AFE),
            store=KeyframeStore((sampling or SamplingConfig()).keyframe_capacity),
            min_depth=min_depth,
        )

    def observe_frame(self, frame: DepthFrame) -> bool:
        """Register a sensor frame; returns whether it entered the keyframe store."""
        if frame.valid_count() == 0:
            return False
        self.latest = Keyframe.from_frame(frame)
        return admit_keyframe(self.store, frame, self.params, self.field_config,
                              self.rng, self.sampling)

    def can_train(self) -> bool:
        return self.latest is not None and len(self.store) > 0

    def publish(self) -> FieldSnapshot:
        self.version += 1
        region = np.stack([self.region_min, self.region_max])
        if not np.all(np.isfinite(region)):
            region = np.zeros((2, 3))
        self.snapshot = publish_snapshot(self.params, self.field_config,
                                         self.version, region)
        return self.snapshot


def train_iteration(state: TrainerState) -> LossBreakdown | None:
    """One sample/loss/gradient/update cycle; publishes on the configured cadence."""
    if not state.can_train():
        return None
    n_replay = min(state.sampling.frames_per_iteration - 1, len(state.store))
    replay_idx = state.rng.choice(len(state.store), size=n_replay, replace=False)
    replays = [state.store.frames[i] for i in replay_idx]
    batch = sample_batch(state.latest, replays, state.rng, state.sampling,
                         state.loss_config, state.min_depth)

    h, u, vjp = value_grad_and_vjp(state.params, state.field_config, batch.points,
                                   dtype=state.compute_dtype)
    breakdown, h_bar, u_bar = total_loss_and_cotangents(
        h, u, batch.bounds, batch.grad_targets, batch.near_mask,
        state.loss_config, grad_mask=batch.grad_valid)
    grads = vjp(h_bar, u_bar)
    state.params = adam_step(state.params, state.optimizer, grads)

    state.region_min = np.minimum(state.region_min, batch.points.min(axis=0))
    state.region_max = np.maximum(state.region_max, batch.points.max(axis=0))

    state.iteration += 1
    if state.iteration % state.sampling.snapshot_every == 0 or state.snapshot is None:
        state.publish()
    state.log_rows.append((
        state.iteration,
        time.perf_counter() - state.wall_start,
        breakdown.total,
        breakdown.near_surface,
        breakdown.free_space,
        breakdown.gradient,
        breakdown.eikonal,
        len(state.store),
        state.version,
    ))
    return breakdown


TRAINING_LOG_HEADER = ("iteration,wall_clock_s,total_loss,near_surface_loss,"
                       "free_space_loss,gradient_loss,eikonal_loss,keyframes,snapshot_version")


def write_training_log(state: TrainerState, path) -> None:
    lines = [TRAINING_LOG_HEADER]
    for row in state.log_rows:
        it, wall, *losses, kf, ver = row
        loss_txt = ",".join(f"{x:.6g}" for x in losses)
        lines.append(f"{it},{wall:.3f},{loss_txt},{kf},{ver}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")

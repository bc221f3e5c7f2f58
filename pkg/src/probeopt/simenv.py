"""Ground-truth simulator of the force-controlled probe search.

Replaces the physical cell at desk scale: samples perturbed environments,
renders a top-down observation image, and executes probe-search programs
against a linear-spring contact model with sensed-force noise. The surface
plane is z = 0; the hole is a vertical cylinder with a hard capture radius,
so an exact geometric success oracle exists (``geometric_success``).

Seed scheme: episode seed = base seed + episode index; within an episode the
purpose streams are ``default_rng((episode_seed, 0..3))`` for environment,
image, execution, and parameter sampling respectively (see ``episode_seeds``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Pose, TaskParams, Trajectory, TrajectoryPoint

DEFAULT_HOME = (0.0, 0.0, 20.0)


class WorkspaceError(ValueError):
    """A commanded position lies outside the simulated workspace box."""


@dataclass(frozen=True)
class EnvState:
    """Ground truth of one sampled environment (hidden from the models)."""

    hole_center: tuple[float, float]
    visual_marker: tuple[float, float]
    capture_radius: float
    hole_depth: float
    surface_stiffness: float
    force_noise_sigma: float

    def __post_init__(self):
        if self.capture_radius <= 0 or self.hole_depth <= 0 or self.surface_stiffness <= 0:
            raise ValueError("capture_radius, hole_depth, stiffness must be positive")
        if self.force_noise_sigma < 0:
            raise ValueError("force_noise_sigma must be non-negative")


@dataclass(frozen=True)
class EnvImage:
    """Grayscale top-down observation; intensities in [0, 1]."""

    pixels: np.ndarray   # (H, W)
    pixel_pitch: float   # mm per pixel

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class SimConfig:
    """All simulator constants; every field is positive unless noted."""

    offset_bound: float = 2.0        # mm, hole offset ~ U(-b, b) per axis
    residual_bound: float = 0.5      # mm, marker-to-hole residual per axis
    capture_radius: float = 0.75     # mm
    hole_depth: float = 5.0          # mm, capture depth threshold
    stiffness: float = 10.0          # N/mm
    force_noise_sigma: float = 0.3   # N
    sample_dt: float = 0.01          # s
    image_size: int = 32             # px per side
    pixel_pitch: float = 0.25        # mm/px
    image_noise_sigma: float = 0.05
    disc_radius: float = 1.5         # mm, rendered marker disc
    background_intensity: float = 0.7
    disc_intensity: float = 0.1
    home: tuple[float, float, float] = DEFAULT_HOME
    workspace_limit: float = 10.0    # mm, +/- box for commanded xy

    def __post_init__(self):
        for name in ("capture_radius", "hole_depth", "stiffness", "sample_dt",
                     "image_size", "pixel_pitch", "disc_radius", "workspace_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("offset_bound", "residual_bound", "force_noise_sigma", "image_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def episode_seeds(base_seed: int, index: int) -> tuple[tuple[int, int], ...]:
    """(env, image, execution, params) seed tuples for episode ``index``."""
    ep = int(base_seed) + int(index)
    return ((ep, 0), (ep, 1), (ep, 2), (ep, 3))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_environment(seed, cfg: SimConfig) -> EnvState:
    """Hole offset ~ U(-offset_bound, +offset_bound) per axis; the visible
    marker sits within +/- residual_bound of the true hole center."""
    rng = _as_rng(seed)
    hx = rng.uniform(-cfg.offset_bound, cfg.offset_bound)
    hy = rng.uniform(-cfg.offset_bound, cfg.offset_bound)
    mx = hx + rng.uniform(-cfg.residual_bound, cfg.residual_bound)
    my = hy + rng.uniform(-cfg.residual_bound, cfg.residual_bound)
    return EnvState(hole_center=(hx, hy), visual_marker=(mx, my),
                    capture_radius=cfg.capture_radius, hole_depth=cfg.hole_depth,
                    surface_stiffness=cfg.stiffness, force_noise_sigma=cfg.force_noise_sigma)


def render_image(env: EnvState, cfg: SimConfig, seed) -> EnvImage:
    """Orthographic top-down rendering of the marker disc.

    The disc edge blends linearly over one pixel pitch so sub-pixel marker
    shifts remain visible; additive Gaussian noise, clamped to [0, 1].
    """
    rng = _as_rng(seed)
    n = cfg.image_size
    half = (n - 1) / 2.0
    xs = (np.arange(n) - half) * cfg.pixel_pitch
    ys = (half - np.arange(n)) * cfg.pixel_pitch
    gx, gy = np.meshgrid(xs, ys)
    dist = np.hypot(gx - env.visual_marker[0], gy - env.visual_marker[1])
    coverage = np.clip((cfg.disc_radius - dist) / cfg.pixel_pitch + 0.5, 0.0, 1.0)
    img = cfg.background_intensity + (cfg.disc_intensity - cfg.background_intensity) * coverage
    img = img + rng.normal(0.0, cfg.image_noise_sigma, size=(n, n))
    return EnvImage(pixels=np.clip(img, 0.0, 1.0), pixel_pitch=cfg.pixel_pitch)


# -- trapezoidal profile (plain numpy; the planner keeps its own tensor copy) --

def _profile(d: float, v: float, a: float) -> tuple[float, float, float, float]:
    """(t_acc, t_cruise, total, v_peak) of the speed profile over distance d."""
    if d <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    if d >= v * v / a:
        t_acc = v / a
        t_cruise = (d - v * v / a) / v
        return t_acc, t_cruise, 2.0 * t_acc + t_cruise, v
    v_peak = math.sqrt(a * d)
    t_acc = v_peak / a
    return t_acc, 0.0, 2.0 * t_acc, v_peak


def _dist_at(t: np.ndarray, d: float, v: float, a: float) -> np.ndarray:
    t_acc, t_cruise, total, v_peak = _profile(d, v, a)
    if total == 0.0:
        return np.zeros_like(t)
    d_acc = 0.5 * a * t_acc * t_acc
    rem = total - t
    return np.where(t < t_acc, 0.5 * a * t * t,
                    np.where(t > total - t_acc, d - 0.5 * a * rem * rem,
                             d_acc + v_peak * (t - t_acc)))


def _time_at_dist(s: float, d: float, v: float, a: float) -> float:
    """Inverse of the profile: time at which distance s has been covered."""
    t_acc, t_cruise, total, v_peak = _profile(d, v, a)
    d_acc = 0.5 * a * t_acc * t_acc
    s = min(max(s, 0.0), d)
    if s <= d_acc:
        return math.sqrt(2.0 * s / a)
    if s <= d_acc + v_peak * t_cruise:
        return t_acc + (s - d_acc) / v_peak
    return total - math.sqrt(max(2.0 * (d - s) / a, 0.0))


def _segment_samples(p0: np.ndarray, p1: np.ndarray, v: float, a: float,
                     dt: float, t_stop: float | None = None,
                     p_stop: np.ndarray | None = None):
    """(local_times, positions) sampled at dt with the endpoint appended exactly.

    With ``t_stop`` the segment is cut short at that time and the final sample
    snaps to ``p_stop`` (force-controlled stop).
    """
    d = float(np.linalg.norm(p1 - p0))
    _, _, total, _ = _profile(d, v, a)
    end_t = total if t_stop is None else min(t_stop, total)
    end_p = p1 if p_stop is None else p_stop
    if end_t <= 0.0:
        return np.empty(0), np.empty((0, 3))
    m = int(math.floor((end_t - 1e-12 * max(1.0, end_t)) / dt))
    times = np.concatenate([dt * np.arange(1, m + 1), [end_t]])
    s = _dist_at(times, d, v, a)
    direction = (p1 - p0) / d if d > 0 else np.zeros(3)
    pos = p0[None, :] + s[:, None] * direction[None, :]
    pos[-1] = end_p
    return times, pos


# -- program execution -----------------------------------------------------------

@dataclass
class ExecutionRecord:
    """One dataset sample: parameters, observation, and the executed trajectory."""

    seed: int
    env: EnvState
    params: TaskParams
    image: EnvImage | None
    trajectory: Trajectory

    @property
    def success(self) -> bool:
        return self.trajectory.success

    @property
    def n_probes(self) -> int:
        return self.trajectory.n_probes

    @property
    def cycle_time(self) -> float:
        return self.trajectory.cycle_time


def _validate(env: EnvState, params: TaskParams, cfg: SimConfig) -> None:
    pen = params.f_contact / env.surface_stiffness
    if pen >= params.probe_depth:
        raise ValueError(
            f"contact stop penetration {pen:.3f} mm reaches the commanded probe depth "
            f"{params.probe_depth} mm; success detection would be ambiguous")
    lim = cfg.workspace_limit
    for px, py in params.probe_positions():
        if abs(px) > lim or abs(py) > lim:
            raise WorkspaceError(f"probe at ({px:.2f}, {py:.2f}) outside +/-{lim} mm workspace")
    if abs(params.point_to.x) > lim or abs(params.point_to.y) > lim:
        raise WorkspaceError("approach target outside workspace")


def _probe_phases(env: EnvState, probe_xy, params: TaskParams, start_pose: np.ndarray,
                  dt: float):
    """Phases of one probe cycle: list of (times, positions) plus hole_found."""
    px, py = float(probe_xy[0]), float(probe_xy[1])
    top = np.array([px, py, params.depart_height])
    phases = []
    lt, lp = _segment_samples(start_pose, top, params.v_lateral, params.accel, dt)
    phases.append((lt, lp))

    target = np.array([px, py, -params.probe_depth])
    hit = math.hypot(px - env.hole_center[0], py - env.hole_center[1]) <= env.capture_radius
    if hit:
        ct, cp = _segment_samples(top, target, params.v_descent, params.accel, dt)
        phases.append((ct, cp))
        return phases, True

    pen = params.f_contact / env.surface_stiffness
    stop_z = -pen
    d_cmd = params.depart_height + params.probe_depth
    t_stop = _time_at_dist(params.depart_height + pen, d_cmd, params.v_descent, params.accel)
    p_stop = np.array([px, py, stop_z])
    ct, cp = _segment_samples(top, target, params.v_descent, params.accel, dt,
                              t_stop=t_stop, p_stop=p_stop)
    phases.append((ct, cp))
    rt, rp = _segment_samples(p_stop, top, params.v_descent, params.accel, dt)
    phases.append((rt, rp))
    return phases, False


def execute_probe(env: EnvState, probe_xy, params: TaskParams, seed,
                  cfg: SimConfig | None = None, start_pose: Pose | None = None,
                  start_time: float = 0.0):
    """Simulate one probe cycle; returns (trajectory points, hole_found).

    The cycle starts at ``start_pose`` (default: point_to at depart height),
    moves laterally to the probe position, descends until contact stops the
    motion or the commanded depth is reached force-free (hole found), and
    departs back up unless the hole was found.
    """
    cfg = cfg or SimConfig()
    px, py = float(probe_xy[0]), float(probe_xy[1])
    if abs(px) > cfg.workspace_limit or abs(py) > cfg.workspace_limit:
        raise WorkspaceError(f"probe at ({px:.2f}, {py:.2f}) outside "
                             f"+/-{cfg.workspace_limit} mm workspace")
    pen = params.f_contact / env.surface_stiffness
    if pen >= params.probe_depth:
        raise ValueError("contact stop penetration reaches the commanded probe depth")
    rng = _as_rng(seed)
    if start_pose is None:
        start_pose = Pose(params.point_to.x, params.point_to.y, params.depart_height)
    phases, found = _probe_phases(env, (px, py), params, start_pose.as_array(), cfg.sample_dt)
    times, pos = _stack_phases(phases, start_time)
    fz = _sensed_force(env, pos, in_hole=found, rng=rng)
    pts = [TrajectoryPoint(float(t), Pose(*p), float(f)) for t, p, f in zip(times, pos, fz)]
    return pts, found


def _stack_phases(phases, t0: float):
    all_t, all_p = [], []
    t = t0
    for times, pos in phases:
        if times.size:
            all_t.append(t + times)
            all_p.append(pos)
            t = t + times[-1]
    if not all_t:
        return np.empty(0), np.empty((0, 3))
    return np.concatenate(all_t), np.concatenate(all_p)


def _sensed_force(env: EnvState, pos: np.ndarray, in_hole: bool,
                  rng: np.random.Generator) -> np.ndarray:
    """Noiseless spring contact force plus per-sample Gaussian sensor noise."""
    contact = np.zeros(len(pos)) if in_hole else env.surface_stiffness * np.maximum(0.0, -pos[:, 2])
    return contact + rng.normal(0.0, env.force_noise_sigma, size=len(pos))


def execute_program(env: EnvState, params: TaskParams, seed,
                    cfg: SimConfig | None = None) -> ExecutionRecord:
    """Run approach plus the probe loop with early exit on the first hole hit.

    Deterministic in (env, params, seed). Only TaskParams parameterize the
    executed motion; predicted trajectories are not accepted here.
    """
    if not isinstance(params, TaskParams):
        raise TypeError(f"execute_program requires TaskParams, got {type(params).__name__}")
    cfg = cfg or SimConfig()
    _validate(env, params, cfg)
    rng = _as_rng(seed)
    dt = cfg.sample_dt

    home = np.array(cfg.home, dtype=np.float64)
    pt = params.point_to.as_array()
    seg_t, seg_p = _segment_samples(home, pt, params.v_lateral, params.accel, dt)
    times = [np.array([0.0]), seg_t]
    poses = [home[None, :], seg_p]
    hole_flags = [np.zeros(1, dtype=bool), np.zeros(seg_t.size, dtype=bool)]
    t_cursor = seg_t[-1] if seg_t.size else 0.0
    cursor_pose = pt.copy()
    n_samples = 1 + seg_t.size

    boundaries = []
    success = False
    for offset in params.pattern:
        probe_xy = (params.point_to.x + offset[0], params.point_to.y + offset[1])
        phases, found = _probe_phases(env, probe_xy, params, cursor_pose, dt)
        ph_t, ph_p = _stack_phases(phases, t_cursor)
        start_idx = n_samples
        times.append(ph_t)
        poses.append(ph_p)
        hole_flags.append(np.full(ph_t.size, found))
        n_samples += ph_t.size
        boundaries.append((start_idx, n_samples))
        t_cursor = ph_t[-1]
        cursor_pose = ph_p[-1]
        if found:
            success = True
            break

    t = np.concatenate(times)
    pos = np.concatenate(poses)
    in_hole = np.concatenate(hole_flags)
    contact = np.where(in_hole, 0.0, env.surface_stiffness * np.maximum(0.0, -pos[:, 2]))
    fz = contact + rng.normal(0.0, env.force_noise_sigma, size=t.size)
    traj = Trajectory(t, pos, fz, success, boundaries)
    seed_label = int(seed) if isinstance(seed, (int, np.integer)) else -1
    return ExecutionRecord(seed=seed_label, env=env, params=params,
                           image=None, trajectory=traj)


def geometric_success(env: EnvState, params: TaskParams) -> bool:
    """Independent oracle: some probe lands within the capture radius."""
    positions = params.probe_positions()
    d = np.hypot(positions[:, 0] - env.hole_center[0], positions[:, 1] - env.hole_center[1])
    return bool(np.any(d <= env.capture_radius))

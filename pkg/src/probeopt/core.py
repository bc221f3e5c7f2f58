"""Domain types shared by all modules: geometry, trajectories, task parameters,
the skill-based program representation, baseline patterns, and evaluation metrics.

Units are millimeters, seconds, and newtons throughout. The task frame puts the
surface plane at z = 0 with the nominal hole axis through the origin; z grows
away from the surface. All types are immutable values after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class UndefinedMetricError(ValueError):
    """A metric is requested on counts that cannot define it."""


@dataclass(frozen=True)
class Pose:
    """Cartesian end-effector position; orientation is fixed identity."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class TrajectoryPoint:
    """One sample of the end-effector state: time, pose, sensed Z-force."""

    t: float
    pose: Pose
    fz: float

    def __post_init__(self):
        if self.t < 0 or not math.isfinite(self.t):
            raise ValueError(f"invalid timestamp {self.t}")
        if not math.isfinite(self.fz):
            raise ValueError(f"non-finite force {self.fz}")


class Trajectory:
    """Timed end-effector samples with a success flag and per-probe index ranges.

    Stored as parallel read-only arrays (t, pos[n,3], fz); ``points`` yields
    the TrajectoryPoint view. ``probe_boundaries`` holds one half-open
    ``(start, end)`` index range per executed probe, in execution order,
    covering only samples inside the search phase (the approach lies before
    the first range).
    """

    __slots__ = ("t", "pos", "fz", "success", "probe_boundaries")

    def __init__(self, t, pos, fz, success, probe_boundaries=()):
        t = np.asarray(t, dtype=np.float64)
        pos = np.asarray(pos, dtype=np.float64)
        fz = np.asarray(fz, dtype=np.float64)
        if t.ndim != 1 or pos.shape != (t.size, 3) or fz.shape != (t.size,):
            raise ValueError(f"inconsistent trajectory arrays: t{t.shape} pos{pos.shape} fz{fz.shape}")
        if t.size == 0:
            raise ValueError("empty trajectory")
        if t[0] < 0 or not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be non-negative and strictly increasing")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(fz))):
            raise ValueError("non-finite trajectory values")
        bounds = tuple((int(s), int(e)) for s, e in probe_boundaries)
        prev_end = 0
        for s, e in bounds:
            if not (0 <= s < e <= t.size) or s < prev_end:
                raise ValueError(f"probe boundaries not disjoint/ordered: {bounds}")
            prev_end = e
        for arr in (t, pos, fz):
            arr.setflags(write=False)
        self.t = t
        self.pos = pos
        self.fz = fz
        self.success = bool(success)
        self.probe_boundaries = bounds

    @classmethod
    def from_points(cls, points, success, probe_boundaries=()):
        t = [p.t for p in points]
        pos = [[p.pose.x, p.pose.y, p.pose.z] for p in points]
        fz = [p.fz for p in points]
        return cls(t, pos, fz, success, probe_boundaries)

    def __len__(self) -> int:
        return self.t.size

    def point(self, i: int) -> TrajectoryPoint:
        return TrajectoryPoint(float(self.t[i]), Pose(*self.pos[i]), float(self.fz[i]))

    @property
    def points(self) -> tuple[TrajectoryPoint, ...]:
        return tuple(self.point(i) for i in range(len(self)))

    @property
    def cycle_time(self) -> float:
        return float(self.t[-1])

    @property
    def n_probes(self) -> int:
        return len(self.probe_boundaries)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Trajectory)
                and self.success == other.success
                and self.probe_boundaries == other.probe_boundaries
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.pos, other.pos)
                and np.array_equal(self.fz, other.fz))


@dataclass(frozen=True)
class TaskParams:
    """The probe-search program parameters; ``point_to`` and ``pattern`` are
    the optimizable part, the remaining fields parameterize the controller."""

    point_to: Pose
    pattern: tuple[tuple[float, float], ...]
    v_lateral: float = 50.0    # mm/s
    v_descent: float = 20.0    # mm/s
    accel: float = 500.0       # mm/s^2
    f_contact: float = 5.0     # N, contact stop threshold
    probe_depth: float = 6.0   # mm, commanded depth below the surface plane
    depart_height: float = 5.0  # mm

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple((float(dx), float(dy)) for dx, dy in self.pattern))
        if len(self.pattern) == 0:
            raise ValueError("pattern must contain at least one probe")
        for name in ("v_lateral", "v_descent", "accel", "f_contact", "probe_depth", "depart_height"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    @property
    def k(self) -> int:
        return len(self.pattern)

    def pattern_array(self) -> np.ndarray:
        return np.array(self.pattern, dtype=np.float64)

    def probe_positions(self) -> np.ndarray:
        """Absolute (x, y) of every probe: point_to plus each pattern offset."""
        return self.pattern_array() + np.array([self.point_to.x, self.point_to.y])


@dataclass(frozen=True)
class ParamDomain:
    """Axis-aligned boxes declaring the legal (and sampled) parameter ranges."""

    point_to_box: tuple[tuple[float, float], ...] = ((-2.0, 2.0), (-2.0, 2.0), (5.0, 5.0))
    pattern_box: tuple[tuple[float, float], ...] = ((-2.0, 2.0), (-2.0, 2.0))
    v_lateral_range: tuple[float, float] = (40.0, 60.0)
    v_descent_range: tuple[float, float] = (15.0, 25.0)
    accel_range: tuple[float, float] = (400.0, 600.0)
    f_contact_range: tuple[float, float] = (3.0, 8.0)

    def __post_init__(self):
        for name in ("point_to_box", "pattern_box", "v_lateral_range",
                     "v_descent_range", "accel_range", "f_contact_range"):
            box = getattr(self, name)
            pairs = box if isinstance(box[0], (tuple, list)) else (box,)
            for lo, hi in pairs:
                if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                    raise ValueError(f"{name}: invalid range ({lo}, {hi})")
        if len(self.point_to_box) != 3 or len(self.pattern_box) != 2:
            raise ValueError("point_to_box needs 3 axes, pattern_box needs 2")

    def contains(self, params: TaskParams, tol: float = 1e-9) -> bool:
        pt = (params.point_to.x, params.point_to.y, params.point_to.z)
        for v, (lo, hi) in zip(pt, self.point_to_box):
            if v < lo - tol or v > hi + tol:
                return False
        for dx, dy in params.pattern:
            for v, (lo, hi) in zip((dx, dy), self.pattern_box):
                if v < lo - tol or v > hi + tol:
                    return False
        for v, (lo, hi) in ((params.v_lateral, self.v_lateral_range),
                            (params.v_descent, self.v_descent_range),
                            (params.accel, self.accel_range),
                            (params.f_contact, self.f_contact_range)):
            if v < lo - tol or v > hi + tol:
                return False
        return True

    def clamp(self, point_to: np.ndarray, pattern: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project the free variables onto their boxes (idempotent)."""
        pt_lo = np.array([b[0] for b in self.point_to_box])
        pt_hi = np.array([b[1] for b in self.point_to_box])
        pat_lo = np.array([b[0] for b in self.pattern_box])
        pat_hi = np.array([b[1] for b in self.pattern_box])
        return (np.clip(point_to, pt_lo, pt_hi), np.clip(pattern, pat_lo, pat_hi))

    def sample(self, rng: np.random.Generator, k: int, base: TaskParams | None = None) -> TaskParams:
        """Draw TaskParams uniformly from the domain (the collection distribution)."""
        pt = [rng.uniform(lo, hi) for lo, hi in self.point_to_box]
        pattern = tuple((rng.uniform(*self.pattern_box[0]), rng.uniform(*self.pattern_box[1]))
                        for _ in range(k))
        kw = {}
        if base is not None:
            kw = dict(probe_depth=base.probe_depth, depart_height=base.depart_height)
        return TaskParams(
            point_to=Pose(*pt), pattern=pattern,
            v_lateral=rng.uniform(*self.v_lateral_range),
            v_descent=rng.uniform(*self.v_descent_range),
            accel=rng.uniform(*self.accel_range),
            f_contact=rng.uniform(*self.f_contact_range),
            **kw,
        )


# -- skill-based program representation ---------------------------------------

@dataclass(frozen=True)
class LinearMotion:
    target: Pose
    v: float
    a: float


@dataclass(frozen=True)
class ContactMotion:
    direction: tuple[float, float, float]
    distance: float
    v: float
    a: float
    f_stop: float


@dataclass(frozen=True)
class ProbeSearch:
    params: TaskParams


Skill = LinearMotion | ContactMotion | ProbeSearch


@dataclass(frozen=True)
class Program:
    """A sequence of parameterized skills with exactly one ProbeSearch."""

    skills: tuple[Skill, ...]

    def __post_init__(self):
        object.__setattr__(self, "skills", tuple(self.skills))
        n = sum(1 for s in self.skills if isinstance(s, ProbeSearch))
        if n != 1:
            raise ValueError(f"program must contain exactly one ProbeSearch skill, found {n}")

    @property
    def probe_search(self) -> ProbeSearch:
        return next(s for s in self.skills if isinstance(s, ProbeSearch))

    def to_dict(self) -> dict:
        skills = []
        for s in self.skills:
            if isinstance(s, LinearMotion):
                skills.append({"kind": "LinearMotion", "params": {
                    "target": {"x": s.target.x, "y": s.target.y, "z": s.target.z},
                    "v": s.v, "a": s.a}})
            elif isinstance(s, ContactMotion):
                skills.append({"kind": "ContactMotion", "params": {
                    "direction": list(s.direction), "distance": s.distance,
                    "v": s.v, "a": s.a, "f_stop": s.f_stop}})
            else:
                p = s.params
                skills.append({"kind": "ProbeSearch", "params": {
                    "point_to": {"x": p.point_to.x, "y": p.point_to.y, "z": p.point_to.z},
                    "pattern": [list(off) for off in p.pattern],
                    "v_lateral": p.v_lateral, "v_descent": p.v_descent,
                    "accel": p.accel, "f_contact": p.f_contact,
                    "probe_depth": p.probe_depth, "depart_height": p.depart_height}})
        return {"skills": skills}

    @classmethod
    def from_dict(cls, d: dict) -> "Program":
        skills: list[Skill] = []
        for s in d["skills"]:
            kind, p = s["kind"], s["params"]
            if kind == "LinearMotion":
                skills.append(LinearMotion(Pose(**p["target"]), p["v"], p["a"]))
            elif kind == "ContactMotion":
                skills.append(ContactMotion(tuple(p["direction"]), p["distance"],
                                            p["v"], p["a"], p["f_stop"]))
            elif kind == "ProbeSearch":
                skills.append(ProbeSearch(TaskParams(
                    point_to=Pose(**p["point_to"]),
                    pattern=tuple(tuple(off) for off in p["pattern"]),
                    v_lateral=p["v_lateral"], v_descent=p["v_descent"],
                    accel=p["accel"], f_contact=p["f_contact"],
                    probe_depth=p["probe_depth"], depart_height=p["depart_height"])))
            else:
                raise ValueError(f"unknown skill kind {kind!r}")
        return cls(tuple(skills))

    def save(self, path) -> None:
        # repr-based float serialization: round-trips 64-bit values exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Program":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- metric containers ---------------------------------------------------------

@dataclass(frozen=True)
class PredictionMetrics:
    """Success-classification and trajectory-error metrics over a test set."""

    f1: float
    true_pos: int
    true_neg: int
    false_pos: int
    false_neg: int
    mae_l: float  # points
    mae_p: float  # mm
    mae_f: float  # N

    @property
    def n_records(self) -> int:
        return self.true_pos + self.true_neg + self.false_pos + self.false_neg


@dataclass(frozen=True)
class OptimizationMetrics:
    """Before/after aggregates over a batch of optimization evaluations."""

    ct_before: float
    ct_after: float
    probes_before: float
    probes_after: float
    sr_before: float
    sr_after: float


# -- operations ------------------------------------------------------------------

def nominal_grid_pattern(k: int, pitch: float) -> tuple[tuple[float, float], ...]:
    """Centered axis-aligned grid of k offsets, cols x rows with |cols-rows| <= 1.

    Row-major from the most-negative corner; the grid centroid is exactly (0, 0).
    """
    if k < 1 or pitch <= 0:
        raise ValueError(f"need k >= 1 and pitch > 0, got k={k}, pitch={pitch}")
    rows = int(math.isqrt(k))
    while rows >= 1 and k % rows != 0:
        rows -= 1
    cols = k // rows
    if cols - rows > 1:
        raise ValueError(f"k={k} does not factor as cols x rows with |cols-rows| <= 1")
    offsets = []
    for r in range(rows):
        for c in range(cols):
            offsets.append(((c - (cols - 1) / 2.0) * pitch,
                            (r - (rows - 1) / 2.0) * pitch))
    return tuple(offsets)


def resample_trajectory(traj: Trajectory, n: int) -> Trajectory:
    """Resample to n points at uniform times via linear interpolation.

    Endpoints are preserved exactly; probe boundaries are remapped through time.
    """
    if len(traj) < 2:
        raise ValueError("resampling needs at least 2 points")
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    t_new = np.linspace(traj.t[0], traj.t[-1], n)
    pos = np.column_stack([np.interp(t_new, traj.t, traj.pos[:, i]) for i in range(3)])
    fz = np.interp(t_new, traj.t, traj.fz)
    pos[0], pos[-1] = traj.pos[0], traj.pos[-1]
    fz[0], fz[-1] = traj.fz[0], traj.fz[-1]
    dt = (traj.t[-1] - traj.t[0]) / (n - 1)
    bounds = []
    prev_end = 0
    for s, e in traj.probe_boundaries:
        s_new = int(round((traj.t[s] - traj.t[0]) / dt))
        e_new = int(round((traj.t[e - 1] - traj.t[0]) / dt)) + 1
        s_new = max(s_new, prev_end)
        e_new = max(min(e_new, n), s_new + 1)
        bounds.append((s_new, e_new))
        prev_end = e_new
    return Trajectory(t_new, pos, fz, traj.success, bounds)


def trajectory_metrics(pred: Trajectory, gt: Trajectory) -> tuple[int, float, float]:
    """(mae_L, mae_P, mae_F): length error in points, then mean position /
    force errors after resampling both trajectories to the shorter length."""
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("empty trajectory")
    mae_l = abs(len(pred) - len(gt))
    m = min(len(pred), len(gt))
    if m < 2:
        raise ValueError("trajectories must have at least 2 points for alignment")
    a = resample_trajectory(pred, m)
    b = resample_trajectory(gt, m)
    mae_p = float(np.mean(np.linalg.norm(a.pos - b.pos, axis=1)))
    mae_f = float(np.mean(np.abs(a.fz - b.fz)))
    return mae_l, mae_p, mae_f


def f1_score(true_pos: int, false_pos: int, false_neg: int) -> float:
    """2*tp / (2*tp + fp + fn)."""
    if min(true_pos, false_pos, false_neg) < 0:
        raise ValueError("counts must be non-negative")
    denom = 2 * true_pos + false_pos + false_neg
    if denom == 0:
        raise UndefinedMetricError("F1 undefined on all-zero counts")
    return 2.0 * true_pos / denom

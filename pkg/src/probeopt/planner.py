"""Differentiable Cartesian motion planner with trapezoidal velocity profiles.

Every duration and waypoint is a tensor, differentiable in the segment
endpoints. Distances below the full-speed threshold fall back to the
triangular profile; zero-length segments return zero duration with a zero
subgradient so coincident probes stay stable under optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import Pose, TaskParams

DEFAULT_HOME = Pose(0.0, 0.0, 20.0)


def _pose_tensor(p) -> Tensor:
    if isinstance(p, Tensor):
        return p
    if isinstance(p, Pose):
        return Tensor(p.as_array())
    return Tensor(np.asarray(p, dtype=np.float64))


def distance(frm, to) -> Tensor:
    """Euclidean endpoint distance with a zero-subgradient guard at d = 0."""
    frm, to = _pose_tensor(frm), _pose_tensor(to)
    delta = to - frm
    sq = (delta * delta).sum(axis=-1)
    zero = sq.data == 0.0
    safe = ad.where(zero, ad.lift(np.ones_like(sq.data)), sq)
    return ad.where(zero, ad.lift(np.zeros_like(sq.data)), ad.sqrt(safe))


def duration_from_distance(d, v: float, a: float) -> Tensor:
    """Trapezoid d/v + v/a when d >= v^2/a, else triangle 2*sqrt(d/a).

    Vectorized: ``d`` may hold any number of segment distances at once.
    """
    if v <= 0 or a <= 0:
        raise ValueError(f"need v > 0 and a > 0, got v={v}, a={a}")
    d = d if isinstance(d, Tensor) else ad.lift(d)
    zero = d.data == 0.0
    safe = ad.where(zero, ad.lift(np.ones_like(d.data)), d)
    trap = safe / v + (v / a)
    tri = 2.0 * ad.sqrt(safe / a)
    t = ad.where(d.data >= v * v / a, trap, tri)
    return ad.where(zero, ad.lift(np.zeros_like(d.data)), t)


def segment_duration(frm, to, v: float, a: float) -> Tensor:
    """Closed-form duration of one linear segment (scalar tensor)."""
    return duration_from_distance(distance(frm, to), v, a)


@dataclass
class PlannedSegment:
    """Timed waypoints of one linear segment; all fields are tensors."""

    times: Tensor      # (n,), from 0 to duration
    positions: Tensor  # (n, 3)
    duration: Tensor   # scalar


def plan_linear(frm, to, v: float, a: float, n_samples: int) -> PlannedSegment:
    """Sample the straight segment under the trapezoidal speed profile.

    Waypoint positions and times are differentiable in both endpoints; the
    first waypoint is ``frm`` and the last is ``to``.
    """
    if n_samples < 2:
        raise ValueError(f"need n_samples >= 2, got {n_samples}")
    frm, to = _pose_tensor(frm), _pose_tensor(to)
    d = distance(frm, to)
    total = duration_from_distance(d, v, a)
    u = np.linspace(0.0, 1.0, n_samples)
    times = total * Tensor(u)

    zero = d.data == 0.0
    d_safe = ad.where(zero, ad.lift(1.0), d)
    v_peak = ad.where(d.data >= v * v / a, ad.lift(float(v)), ad.sqrt(d_safe * a))
    t_acc = v_peak / a
    d_acc = v_peak * v_peak / (2.0 * a)
    t_total_safe = ad.where(zero, ad.lift(1.0), total)

    t = times
    in_acc = t.data < t_acc.data
    in_dec = t.data > (t_total_safe.data - t_acc.data)
    s_acc = t * t * (a / 2.0)
    s_cruise = d_acc + (t - t_acc) * v_peak
    rem = t_total_safe - t
    s_dec = d - rem * rem * (a / 2.0)
    s = ad.where(in_acc, s_acc, ad.where(in_dec, s_dec, s_cruise))
    frac = ad.where(zero, ad.lift(np.zeros(n_samples)), s / d_safe)

    delta = to - frm
    offsets = ad.matmul(ad.reshape(frac, (n_samples, 1)), ad.reshape(delta, (1, 3)))
    positions = ad.add_bias(offsets, frm)
    return PlannedSegment(times=times, positions=positions, duration=total)


@dataclass
class SearchPlan:
    """Nominal differentiable timing of one full probe search.

    ``cumulative_times[k]`` is the elapsed time after probe k+1 completes its
    lateral + descent-to-surface + depart cycle, counted from program start
    (approach included), under the nominal assumption of surface contact at
    z = 0 for every probe.
    """

    approach_duration: Tensor     # scalar
    lateral_durations: Tensor     # (K,)
    descent_duration: Tensor      # scalar, depart_height -> surface
    depart_duration: Tensor       # scalar, surface -> depart_height
    cumulative_times: Tensor      # (K,)
    probe_positions: Tensor       # (K, 2), absolute


def compose_search_plan(params: TaskParams, point_to: Tensor | None = None,
                        pattern: Tensor | None = None, home: Pose = DEFAULT_HOME) -> SearchPlan:
    """Timing of approach plus the K probe cycles, differentiable in
    ``point_to`` and ``pattern`` (tensors override the values in ``params``)."""
    pt = point_to if point_to is not None else Tensor(params.point_to.as_array())
    pat = pattern if pattern is not None else Tensor(params.pattern_array())
    k = pat.data.shape[0]
    if pat.data.shape != (k, 2) or pt.data.shape != (3,):
        raise ad.ShapeError(f"point_to {pt.data.shape}, pattern {pat.data.shape}")

    approach = segment_duration(home, pt, params.v_lateral, params.accel)

    pt_xy = pt[:2]
    positions = ad.add_bias(pat, pt_xy)  # (K, 2) absolute probe positions
    prev = ad.concat([ad.reshape(pt_xy, (1, 2)), positions[:-1, :]], axis=0)
    delta = positions - prev
    lat_d = distance_from_delta(delta)
    laterals = duration_from_distance(lat_d, params.v_lateral, params.accel)

    descent = duration_from_distance(ad.lift(float(params.depart_height)),
                                     params.v_descent, params.accel)
    depart = duration_from_distance(ad.lift(float(params.depart_height)),
                                    params.v_descent, params.accel)

    cycle = laterals + (descent + depart)  # (K,) + scalar broadcast
    ones_lt = np.tril(np.ones((k, k)))
    cum = ad.matmul(Tensor(ones_lt), ad.reshape(cycle, (k, 1)))
    cum = ad.reshape(cum, (k,)) + approach
    return SearchPlan(approach_duration=approach, lateral_durations=laterals,
                      descent_duration=descent, depart_duration=depart,
                      cumulative_times=cum, probe_positions=positions)


def distance_from_delta(delta: Tensor) -> Tensor:
    """Row-wise Euclidean norms with the same zero-distance guard as ``distance``."""
    sq = (delta * delta).sum(axis=-1)
    zero = sq.data == 0.0
    safe = ad.where(zero, ad.lift(np.ones_like(sq.data)), sq)
    return ad.where(zero, ad.lift(np.zeros_like(sq.data)), ad.sqrt(safe))

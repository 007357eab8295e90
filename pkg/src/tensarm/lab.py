"""Experiment harness: tracking, joint angles, range of motion, compliance,
repeatability under perturbation and workspace area.

Reporting conventions used throughout:

* the first 5% of every series is discarded as start-up transient before
  computing a range of motion (:data:`TRANSIENT_FRACTION`);
* recovery after an obstacle is judged on the final 10% of samples
  (:data:`RECOVERY_FRACTION`);
* angles are degrees in reports, radians internally.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .control import AntagonisticPair, ControllerProgram, SineChannel, check_program, target_table
from .dynamics import (
    Obstacle,
    SimConfig,
    SimulationError,
    WorldState,
    initial_state,
    marker_indices,
    rest_metric,
    run,
    settle,
)
from .gallery import BUILTINS, ArmInfo
from .model import CableSpec, StructureDef

Marker = tuple[str, str]

TRANSIENT_FRACTION = 0.05
RECOVERY_FRACTION = 0.10
RECOVERY_LIMIT = 0.10  # recovery_error above this fraction of max_deviation is flagged
PRESET_PERIOD = 8.0
PRESET_AMPLITUDE = 0.15  # fraction of the settled cable length
DEFAULT_DURATION = 10.0
DEFAULT_SAMPLE_PERIOD = 0.01
DEGENERATE_SEGMENT = 1e-9


def marker_name(m: Marker) -> str:
    return f"{m[0]}.{m[1]}"


def parse_marker(text: str) -> Marker:
    body, sep, node = text.partition(".")
    if not sep or not body or not node:
        raise ValueError(f"marker {text!r} must look like body.node")
    return body, node


# --------------------------------------------------------------------------
# tracking


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Marker positions sampled at a fixed period.

    ``positions[k, j]`` is marker ``j`` at ``times[k]``. ``contact[k]`` is
    true when an obstacle pushed on some node since the previous sample.
    """

    sample_period: float
    markers: tuple[Marker, ...]
    times: np.ndarray
    positions: np.ndarray
    contact: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.positions.shape != (len(self.times), len(self.markers), 3):
            raise ValueError("positions must have shape (samples, markers, 3)")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")

    def __len__(self) -> int:
        return len(self.times)

    def index(self, marker: Marker) -> int:
        try:
            return self.markers.index(tuple(marker))
        except ValueError:
            raise KeyError(f"marker {marker_name(marker)} is not in this trajectory") from None

    def series(self, marker: Marker) -> np.ndarray:
        return self.positions[:, self.index(marker), :]


def _steps(duration: float, dt: float, what: str) -> int:
    n = int(round(duration / dt))
    if n < 0 or abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"{what} must be a whole number of time steps of {dt:g} s")
    return n


def track(
    structure: StructureDef,
    initial: WorldState,
    program: ControllerProgram,
    markers: Sequence[Marker],
    duration: float = DEFAULT_DURATION,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    config: SimConfig = SimConfig(),
    settle_tol: float = 1e-4,
) -> TrajectoryRecord:
    """Run ``program`` from ``initial`` and record marker positions.

    Program time starts at zero on ``initial``. Samples are taken every
    ``sample_period`` including both endpoints, so 10 s at 0.01 s gives
    1001 samples. Active cables the program does not mention hold their
    commanded length from ``initial``.
    """
    if not duration > 0 or not sample_period > 0:
        raise ValueError("duration and sample_period must be > 0")
    check_program(program, structure)
    dt = config.dt
    n = _steps(duration, dt, "duration")
    stride = _steps(sample_period, dt, "sample_period")
    if stride == 0 or n % stride:
        raise ValueError("duration must be a whole number of sample periods")
    if rest_metric(structure, initial) > settle_tol:
        warnings.warn("tracking from a state that is not at rest; settle it first", RuntimeWarning, stacklevel=2)
    markers = tuple(tuple(m) for m in markers)
    idx = marker_indices(structure, markers)
    # the target for step k is evaluated at the end of that step
    times = (np.arange(n) + 1) * dt
    table = target_table(program, structure, times, initial.commanded_lengths)
    res = run(structure, initial, table, n, config, markers=idx, sample_stride=stride)
    t = np.arange(len(res.samples)) * sample_period
    return TrajectoryRecord(sample_period, markers, t, res.samples, res.contact)


# --------------------------------------------------------------------------
# angles


def _segments(traj: TrajectoryRecord, a0: Marker, a1: Marker, b0: Marker, b1: Marker):
    u = traj.series(a1) - traj.series(a0)
    v = traj.series(b1) - traj.series(b0)
    if np.any(np.linalg.norm(u, axis=1) < DEGENERATE_SEGMENT) or np.any(np.linalg.norm(v, axis=1) < DEGENERATE_SEGMENT):
        raise ValueError("degenerate segment: markers closer than 1e-9 m")
    return u, v


def joint_angle(traj: TrajectoryRecord, pivot: Marker, proximal: Marker, distal: Marker) -> np.ndarray:
    """Angle at ``pivot`` between the segments to ``proximal`` and ``distal``, degrees in [0, 180]."""
    u, v = _segments(traj, pivot, proximal, pivot, distal)
    cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def _plane_angle(u: np.ndarray, v: np.ndarray, normal: Sequence[float]) -> np.ndarray:
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    u = u - np.outer(u @ n, n)
    v = v - np.outer(v @ n, n)
    if np.any(np.linalg.norm(u, axis=1) < DEGENERATE_SEGMENT) or np.any(np.linalg.norm(v, axis=1) < DEGENERATE_SEGMENT):
        raise ValueError("degenerate segment: projection onto the plane vanishes")
    ang = np.arctan2(np.cross(u, v) @ n, np.einsum("ij,ij->i", u, v))
    return np.degrees(np.unwrap(np.mod(ang, 2 * np.pi)))


def signed_joint_angle(traj: TrajectoryRecord, pivot: Marker, proximal: Marker, distal: Marker,
                       normal: Sequence[float]) -> np.ndarray:
    """Unwrapped angle from the proximal to the distal segment, measured
    counter-clockwise about ``normal`` after projecting both onto the plane.

    Starts in [0, 360) and continues smoothly past 360 or below 0, which lets
    extensions beyond a straight joint be reported.
    """
    u, v = _segments(traj, pivot, proximal, pivot, distal)
    return _plane_angle(u, v, normal)


def segment_angle(traj: TrajectoryRecord, reference: tuple[Marker, Marker], moving: tuple[Marker, Marker],
                  normal: Sequence[float]) -> np.ndarray:
    """Like :func:`signed_joint_angle` for two segments that share no pivot."""
    u, v = _segments(traj, reference[0], reference[1], moving[0], moving[1])
    return _plane_angle(u, v, normal)


# --------------------------------------------------------------------------
# range of motion


@dataclass(frozen=True, eq=False)
class RangeOfMotionReport:
    motion: str
    times: np.ndarray
    values: np.ndarray
    unit: str  # "deg" or "m"
    minimum: float
    maximum: float
    sweep: float
    transient_fraction: float = TRANSIENT_FRACTION


def range_of_motion(series: Sequence[float], motion: str = "", times: Optional[Sequence[float]] = None,
                    unit: str = "deg") -> RangeOfMotionReport:
    """Min, max and sweep after dropping the first 5% of samples."""
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("empty series")
    t = np.arange(len(values), dtype=float) if times is None else np.asarray(times, dtype=float)
    kept = values[int(len(values) * TRANSIENT_FRACTION):]
    lo, hi = float(kept.min()), float(kept.max())
    return RangeOfMotionReport(motion, t, values, unit, lo, hi, hi - lo)


@dataclass(frozen=True)
class MotionSpec:
    """How to read one degree of freedom off a trajectory.

    ``kind`` is ``"angle"`` (joint angle at ``pivot``), ``"segment"`` (angle
    between the fixed ``reference`` segment and the ``moving`` segment) or
    ``"travel"`` (end effector displacement along ``axis``). With a
    ``normal`` the angle is signed in that plane; ``side`` then keeps only
    excursions of one sign relative to the first sample (+1 or -1).
    """

    name: str
    preset: str
    kind: str
    pivot: Optional[Marker] = None
    proximal: Optional[Marker] = None
    distal: Optional[Marker] = None
    reference: Optional[tuple[Marker, Marker]] = None
    moving: Optional[tuple[Marker, Marker]] = None
    normal: Optional[tuple[float, float, float]] = None
    axis: Optional[tuple[float, float, float]] = None
    side: int = 0

    @property
    def markers(self) -> tuple[Marker, ...]:
        ms = [self.pivot, self.proximal, self.distal]
        for seg in (self.reference, self.moving):
            if seg:
                ms += list(seg)
        out: list[Marker] = []
        for m in ms:
            if m is not None and m not in out:
                out.append(m)
        return tuple(out)

    @property
    def unit(self) -> str:
        return "m" if self.kind == "travel" else "deg"

    def series(self, traj: TrajectoryRecord) -> np.ndarray:
        if self.kind == "travel":
            axis = np.asarray(self.axis, float)
            return traj.series(self.distal) @ (axis / np.linalg.norm(axis))
        if self.kind == "segment":
            values = segment_angle(traj, self.reference, self.moving, self.normal)
        elif self.normal is None:
            values = joint_angle(traj, self.pivot, self.proximal, self.distal)
        else:
            values = signed_joint_angle(traj, self.pivot, self.proximal, self.distal, self.normal)
        if self.side:
            values = np.maximum(self.side * (values - values[0]), 0.0)
        return values

    def measure(self, traj: TrajectoryRecord) -> RangeOfMotionReport:
        return range_of_motion(self.series(traj), self.name, traj.times, self.unit)


def motions_for(info: ArmInfo) -> dict[str, MotionSpec]:
    """The degree-of-freedom table rows available on a built-in model.

    Left yaw is the excursion toward +x, the side of ``yaw_left``.
    """
    tip = info.end_effector
    hub, top, distal = info.elbow_markers
    yaw_normal = (0.0, -1.0, 0.0)
    out = {
        "elbow-pitch": MotionSpec("elbow-pitch", "elbow-pitch", "angle", hub, top, distal),
        "elbow-yaw-left": MotionSpec("elbow-yaw-left", "elbow-yaw", "angle", hub, top, distal,
                                     normal=yaw_normal, side=1),
        "elbow-yaw-right": MotionSpec("elbow-yaw-right", "elbow-yaw", "angle", hub, top, distal,
                                      normal=yaw_normal, side=-1),
    }
    if info.shoulder_markers:
        pivot, proximal = info.shoulder_markers
        out["shoulder-pitch"] = MotionSpec("shoulder-pitch", "shoulder-pitch", "angle", pivot, proximal, tip,
                                           normal=(1.0, 0.0, 0.0))
    if "shoulder-lift" in info.groups:
        out["shoulder-lift"] = MotionSpec("shoulder-lift", "shoulder-lift", "travel", distal=tip,
                                          axis=(0.0, 0.0, 1.0))
    if "shoulder-yaw" in info.groups:
        out["shoulder-yaw"] = MotionSpec("shoulder-yaw", "shoulder-yaw", "segment",
                                         reference=(("platform", "anchor"), ("platform", "lx0")),
                                         moving=(("humerus", "top"), ("humerus", "lx0")),
                                         normal=(0.0, 0.0, 1.0))
    return out


# --------------------------------------------------------------------------
# presets


def preset_program(structure: StructureDef, info: ArmInfo, preset: str, lengths: Sequence[float],
                   amplitude: float = PRESET_AMPLITUDE, period: float = PRESET_PERIOD) -> ControllerProgram:
    """Sinusoidal program exercising one cable group; every other active cable holds.

    ``lengths`` are the settled commanded lengths in active-cable order. A
    group that forms an antagonistic pair swings ``amplitude`` times the
    first cable's length about its settled value, the partner following at
    constant sum. Any other group winds in from the settled length by
    ``amplitude`` of each cable's length and back, once per period.
    """
    if preset not in info.groups:
        raise KeyError(f"model {info.name} has no preset {preset!r}; choose from {sorted(info.groups)}")
    actives = [c.id for c in structure.active_cables]
    settled = dict(zip(actives, map(float, lengths)))
    group = info.groups[preset]
    channels, pairs = [], []
    pair = info.pairs.get(preset)
    if pair:
        a, b = pair
        src = SineChannel(a, settled[a], amplitude * settled[a], period, 0.0)
        pairs.append(AntagonisticPair(a, b, settled[a] + settled[b], src))
    else:
        for cid in group:
            swing = amplitude * settled[cid]
            channels.append(SineChannel(cid, settled[cid] - swing / 2, swing / 2, period, math.pi / 2))
    holds = {cid: settled[cid] for cid in actives if cid not in group}
    return ControllerProgram(tuple(channels), tuple(pairs), holds)


def hold_program(structure: StructureDef, lengths: Sequence[float]) -> ControllerProgram:
    """Every active cable held at ``lengths``."""
    return ControllerProgram(holds={c.id: float(v) for c, v in zip(structure.active_cables, lengths)})


# --------------------------------------------------------------------------
# perturbation and repeatability


def perturb(structure: StructureDef, seed: int, magnitude: float) -> StructureDef:
    """Scale passive rest lengths and stiffnesses by independent factors
    ``1 + u * magnitude`` with ``u`` uniform in [-1, 1].

    Winch cables are left alone since the controller owns their lengths.
    """
    if not 0.0 <= magnitude < 0.2:
        raise ValueError("magnitude must be in [0, 0.2)")
    if magnitude == 0.0:
        return structure
    rng = np.random.default_rng(seed)
    cables: list[CableSpec] = []
    for c in structure.cables:
        if c.is_active:
            cables.append(c)
            continue
        f_len, f_k = 1.0 + magnitude * rng.uniform(-1.0, 1.0, size=2)
        rest = c.rest_length * f_len
        cables.append(replace(c, rest_length=rest, stiffness_k=c.stiffness_k * f_k,
                              min_length=min(c.min_length, rest), max_length=max(c.max_length, rest)))
    return replace(structure, cables=tuple(cables))


def summarize(values: Sequence[float]) -> tuple[float, float, float]:
    """(mean, population std dev, sample std dev); the sample value is 0 for one run."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    # deviations from the first run, so identical runs give exactly zero spread
    d = v - v[0]
    sample = float(d.std(ddof=1)) if v.size > 1 else 0.0
    return float(v[0] + d.mean()), float(d.std(ddof=0)), sample


@dataclass(frozen=True)
class RepeatabilityReport:
    motion: str
    unit: str
    seeds: tuple[int, ...]
    magnitude: float
    runs: tuple[Optional[float], ...]  # per seed; None when that run failed
    failures: dict = field(default_factory=dict)  # seed -> message
    unsettled: tuple[int, ...] = ()  # seeds whose settle did not converge
    mean: float = math.nan
    std_dev: float = math.nan  # population
    sample_std_dev: float = math.nan

    @property
    def flagged(self) -> bool:
        return bool(self.failures)


def repeatability(
    structure: StructureDef,
    program: ControllerProgram,
    motions: Union[MotionSpec, Sequence[MotionSpec]],
    runs: int = 3,
    seeds: Optional[Sequence[int]] = None,
    magnitude: float = 0.0,
    config: SimConfig = SimConfig(),
    duration: float = DEFAULT_DURATION,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    settle_time: float = 60.0,
) -> Union[RepeatabilityReport, list[RepeatabilityReport]]:
    """Perturb, settle, track and measure once per seed.

    Runs are independent; they are executed in seed order so the report
    does not depend on scheduling. A run that diverges is reported in
    ``failures`` and left out of the statistics.
    """
    single = isinstance(motions, MotionSpec)
    motions = [motions] if single else list(motions)
    seeds = tuple(range(runs)) if seeds is None else tuple(int(s) for s in seeds)
    if len(seeds) < 2:
        raise ValueError("repeatability needs at least two runs")
    markers = tuple(dict.fromkeys(m for dof in motions for m in dof.markers))
    sweeps: list[list[Optional[float]]] = [[] for _ in motions]
    failures: dict[int, str] = {}
    unsettled = []
    for seed in seeds:
        s = perturb(structure, seed, magnitude)
        try:
            w, ok = settle(s, initial_state(s), config, max_time=settle_time)
            if not ok:
                unsettled.append(seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                traj = track(s, w.at_rest(), program, markers, duration, sample_period, config)
        except SimulationError as exc:
            failures[seed] = str(exc)
            for out in sweeps:
                out.append(None)
            continue
        for out, dof in zip(sweeps, motions):
            out.append(dof.measure(traj).sweep)
    reports = []
    for dof, values in zip(motions, sweeps):
        mean, pop, sample = summarize([v for v in values if v is not None])
        reports.append(RepeatabilityReport(dof.name, dof.unit, seeds, magnitude, tuple(values),
                                           dict(failures), tuple(unsettled), mean, pop, sample))
    return reports[0] if single else reports


# --------------------------------------------------------------------------
# compliance


@dataclass(frozen=True, eq=False)
class ComplianceReport:
    free_trajectory: TrajectoryRecord
    obstructed_trajectory: TrajectoryRecord
    max_deviation: float
    contact_interval: Optional[tuple[float, float]]
    recovery_error: float
    recovery_fraction: float = RECOVERY_FRACTION

    @property
    def recovered(self) -> bool:
        return self.recovery_error <= RECOVERY_LIMIT * self.max_deviation

    @property
    def note(self) -> str:
        if self.contact_interval is None:
            return "obstacle never touched the structure"
        t_end = self.contact_interval[1]
        window = self.free_trajectory.times[-1] * (1 - self.recovery_fraction)
        if t_end > window:
            return "contact continues into the recovery window"
        return "recovered" if self.recovered else "did not recover"


def compliance_experiment(
    structure: StructureDef,
    initial: WorldState,
    program: ControllerProgram,
    obstacle: Obstacle,
    markers: Sequence[Marker],
    duration: float = DEFAULT_DURATION,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    config: SimConfig = SimConfig(),
) -> ComplianceReport:
    """Track the same program with and without ``obstacle`` and compare.

    Deviation per sample is the largest marker distance between the two
    runs. The recovery error is the mean deviation over the last 10% of
    samples.
    """
    free = track(structure, initial, program, markers, duration, sample_period, config)
    blocked = track(structure, initial, program, markers, duration, sample_period,
                    replace(config, obstacles=config.obstacles + (obstacle,)))
    dev = np.linalg.norm(blocked.positions - free.positions, axis=2).max(axis=1)
    # samples where only the obstacle run saw contact
    touched = np.asarray(blocked.contact, bool) & ~np.asarray(free.contact, bool)
    interval = None
    if touched.any():
        hits = np.flatnonzero(touched)
        interval = (float(blocked.times[max(hits[0] - 1, 0)]), float(blocked.times[hits[-1]]))
    tail = dev[len(dev) - max(1, int(round(len(dev) * RECOVERY_FRACTION))):]
    return ComplianceReport(free, blocked, float(dev.max()), interval, float(tail.mean()))


# --------------------------------------------------------------------------
# workspace


PLANES = {
    "xy": ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
    "yz": ((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
    "xz": ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
}


@dataclass(frozen=True)
class WorkspaceReport:
    plane: str
    area: float  # m^2
    angular_extent: float  # degrees
    samples: int


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area of a simple polygon given in order."""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def angular_extent(points: np.ndarray, pivot: Sequence[float], min_radius: float = 1e-9) -> float:
    """Smallest arc about ``pivot`` (degrees) that contains every point's direction."""
    d = points - np.asarray(pivot, float)
    d = d[np.linalg.norm(d, axis=1) > min_radius]
    if len(d) < 2:
        return 0.0
    ang = np.sort(np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi))
    gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * np.pi]))
    return float(np.degrees(2 * np.pi - gaps.max()))


def workspace_summary(traj: TrajectoryRecord, marker: Marker, plane: Union[str, tuple] = "yz",
                      pivot: Union[Marker, Sequence[float], None] = None) -> WorkspaceReport:
    """Area of the convex hull of ``marker``'s samples projected on ``plane``
    and their angular extent about ``pivot``.

    ``plane`` is ``"xy"``, ``"yz"``, ``"xz"`` or a pair of orthonormal
    vectors. ``pivot`` is a marker (its first sample is used) or a point;
    it defaults to the centroid of the samples.
    """
    name = plane if isinstance(plane, str) else "custom"
    e1, e2 = (np.asarray(v, float) for v in (PLANES[plane] if isinstance(plane, str) else plane))
    pts3 = traj.series(marker)
    pts = np.column_stack([pts3 @ e1, pts3 @ e2])
    if pivot is None:
        p3 = pts3.mean(axis=0)
    elif isinstance(pivot, tuple) and len(pivot) == 2 and isinstance(pivot[0], str):
        p3 = traj.series(pivot)[0]
    else:
        p3 = np.asarray(pivot, float)
    p2 = np.array([p3 @ e1, p3 @ e2])
    area = 0.0
    unique = np.unique(pts, axis=0)
    if len(unique) >= 3:
        try:
            hull = ConvexHull(unique)
            area = polygon_area(unique[hull.vertices])
        except QhullError:
            area = 0.0
    return WorkspaceReport(name, area, angular_extent(pts, p2), len(pts))


# --------------------------------------------------------------------------
# convenience for the built-in models


def settled_builtin(name: str, config: SimConfig = SimConfig(), max_time: float = 60.0):
    """(structure, info, settled state, converged) for a built-in model."""
    build, info = BUILTINS[name]
    s = build()
    w, ok = settle(s, initial_state(s), config, max_time=max_time)
    return s, info, w.at_rest(), ok

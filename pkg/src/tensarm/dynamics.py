"""Cable forces, contact, rigid-body integration and equilibrium settling.

Two code paths compute forces. The per-cable functions here
(:func:`read_cable`, :func:`cable_node_forces`, :func:`accumulate_forces`)
are plain numpy and serve as the readable reference. Time stepping runs in
:mod:`tensarm._kernels`, compiled with numba; the test-suite checks that
the two agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .model import CableSpec, RigidBodySpec, StructureDef

SEGMENT_EPS = 1e-12
DEFAULT_DT = 1e-4
DEFAULT_CONTACT_STIFFNESS = 1e5
DEFAULT_CONTACT_DAMPING = 50.0
# settle needs its velocity criterion to hold this long (s) before it
# declares convergence, so a swing passing through a turning point does
# not count as rest
DEFAULT_SETTLE_HOLD = 0.1


class SimulationError(RuntimeError):
    """Base class for failures while stepping."""


class DivergenceError(SimulationError):
    def __init__(self, step_index: int, body: str, time: float):
        self.step_index = step_index
        self.body = body
        self.time = time
        super().__init__(f"state of body {body!r} became non-finite at step {step_index} (t={time:.6g} s)")


class DegenerateSegmentError(SimulationError):
    def __init__(self, cable: str, step_index: Optional[int] = None):
        self.cable = cable
        self.step_index = step_index
        where = "" if step_index is None else f" at step {step_index}"
        super().__init__(f"cable {cable!r} has two coincident route points{where}")


# --------------------------------------------------------------------------
# state types


@dataclass(frozen=True)
class BodyState:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray  # world frame


@dataclass(frozen=True, eq=False)
class WorldState:
    """Snapshot of a whole structure. Arrays are indexed by body order
    (``positions`` etc.) or by active-cable order (``commanded_*``)."""

    time: float
    positions: np.ndarray
    orientations: np.ndarray
    velocities: np.ndarray
    angular_velocities: np.ndarray
    commanded_lengths: np.ndarray
    commanded_rates: np.ndarray

    def body_state(self, i: int) -> BodyState:
        return BodyState(self.positions[i], self.orientations[i], self.velocities[i], self.angular_velocities[i])

    @property
    def body_states(self) -> tuple[BodyState, ...]:
        return tuple(self.body_state(i) for i in range(len(self.positions)))

    def copy(self) -> "WorldState":
        return WorldState(
            self.time,
            self.positions.copy(),
            self.orientations.copy(),
            self.velocities.copy(),
            self.angular_velocities.copy(),
            self.commanded_lengths.copy(),
            self.commanded_rates.copy(),
        )

    def at_rest(self) -> "WorldState":
        w = self.copy()
        w.velocities[:] = 0.0
        w.angular_velocities[:] = 0.0
        w.commanded_rates[:] = 0.0
        return w


def initial_state(structure: StructureDef) -> WorldState:
    """Construction pose: node coordinates are world coordinates, bodies at rest,
    active cables commanded to their rest lengths."""
    nb = len(structure.bodies)
    q = np.zeros((nb, 4))
    q[:, 0] = 1.0
    actives = structure.active_cables
    return WorldState(
        time=0.0,
        positions=np.array([b.com for b in structure.bodies], dtype=float).reshape(nb, 3),
        orientations=q,
        velocities=np.zeros((nb, 3)),
        angular_velocities=np.zeros((nb, 3)),
        commanded_lengths=np.array([c.rest_length for c in actives], dtype=float),
        commanded_rates=np.zeros(len(actives)),
    )


@dataclass(frozen=True)
class CableReading:
    length: float
    elongation_X: float
    elongation_rate_V: float
    tension: float


@dataclass(frozen=True)
class Halfspace:
    """Solid region ``{x : normal . x <= offset}``; ``normal`` points out of it."""

    normal: tuple[float, float, float]
    offset: float


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class Obstacle:
    shape: Union[Halfspace, Sphere]
    contact_stiffness: float = DEFAULT_CONTACT_STIFFNESS
    contact_damping: float = DEFAULT_CONTACT_DAMPING

    def __post_init__(self):
        if not self.contact_stiffness > 0 or self.contact_damping < 0:
            raise ValueError("contact stiffness must be > 0 and damping >= 0")
        if isinstance(self.shape, Halfspace):
            n = float(np.linalg.norm(self.shape.normal))
            if abs(n - 1.0) > 1e-9:
                raise ValueError("halfspace normal must be a unit vector")
        elif isinstance(self.shape, Sphere):
            if not self.shape.radius > 0:
                raise ValueError("sphere radius must be > 0")
        else:
            raise TypeError(f"unknown obstacle shape {self.shape!r}")


@dataclass(frozen=True)
class SimConfig:
    dt: float = DEFAULT_DT
    obstacles: tuple[Obstacle, ...] = ()
    max_steps_per_call: int = 200_000

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.max_steps_per_call <= 0:
            raise ValueError("max_steps_per_call must be > 0")


# --------------------------------------------------------------------------
# reference (numpy) force path


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def axis_angle_quat(axis: Sequence[float], angle: float) -> np.ndarray:
    a = np.asarray(axis, float)
    a = a / np.linalg.norm(a)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * a])


def world_node_position(body: RigidBodySpec, state: BodyState, node_id: str) -> np.ndarray:
    local = np.asarray(body.node(node_id).local_position, float) - np.asarray(body.com, float)
    return np.asarray(state.position, float) + quat_to_matrix(state.orientation) @ local


def world_node_velocity(body: RigidBodySpec, state: BodyState, node_id: str) -> np.ndarray:
    local = np.asarray(body.node(node_id).local_position, float) - np.asarray(body.com, float)
    r = quat_to_matrix(state.orientation) @ local
    return np.asarray(state.linear_velocity, float) + np.cross(state.angular_velocity, r)


def _route_kinematics(cable: CableSpec, structure: StructureDef, world: WorldState):
    pts, vels = [], []
    for bname, nid in cable.route:
        i = structure.body_index(bname)
        body, st = structure.bodies[i], world.body_state(i)
        pts.append(world_node_position(body, st, nid))
        vels.append(world_node_velocity(body, st, nid))
    pts, vels = np.array(pts), np.array(vels)
    seg = np.diff(pts, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    if np.any(lens < SEGMENT_EPS):
        raise DegenerateSegmentError(cable.id)
    units = seg / lens[:, None]
    return pts, vels, units, lens


def read_cable(cable: CableSpec, structure: StructureDef, world: WorldState) -> CableReading:
    """Length, stretch, stretch rate and tension of one cable.

    Tension is ``k X + b V`` clamped at zero, and exactly zero whenever the
    cable is not stretched. For active cables the rest length is the
    commanded length and ``V`` is measured against the commanded rate.
    """
    _, vels, units, lens = _route_kinematics(cable, structure, world)
    length = float(lens.sum())
    rate = float(np.einsum("ij,ij->", units, np.diff(vels, axis=0)))
    if cable.is_active:
        j = structure.active_index(cable.id)
        rest, rest_rate = float(world.commanded_lengths[j]), float(world.commanded_rates[j])
    else:
        rest, rest_rate = cable.rest_length, 0.0
    x = length - rest
    v = rate - rest_rate
    tension = 0.0 if x <= 0 else max(0.0, cable.stiffness_k * x + cable.damping_b * v)
    return CableReading(length, x, v, tension)


def cable_node_forces(cable: CableSpec, structure: StructureDef, world: WorldState,
                      tension: Optional[float] = None) -> np.ndarray:
    """Force on every route node, shape ``(len(route), 3)``.

    Endpoints are pulled along their segment toward the interior; a via-point
    is a frictionless hoop and feels the tension along both neighbors.
    """
    if tension is None:
        tension = read_cable(cable, structure, world).tension
    _, _, units, _ = _route_kinematics(cable, structure, world)
    forces = np.zeros((len(cable.route), 3))
    forces[:-1] += tension * units
    forces[1:] -= tension * units
    return forces


def contact_force(obstacle: Obstacle, point: Sequence[float], velocity: Sequence[float]) -> np.ndarray:
    """Penalty force pushing ``point`` out of an obstacle.

    ``(stiffness * depth - damping * v_n)`` along the outward normal, where
    ``v_n`` is the outward normal velocity; never attractive.
    """
    p = np.asarray(point, float)
    v = np.asarray(velocity, float)
    shape = obstacle.shape
    if isinstance(shape, Halfspace):
        n = np.asarray(shape.normal, float)
        depth = shape.offset - float(n @ p)
    else:
        d = p - np.asarray(shape.center, float)
        dist = float(np.linalg.norm(d))
        n = d / dist if dist > 0 else np.array([0.0, 0.0, 1.0])
        depth = shape.radius - dist
    if depth <= 0:
        return np.zeros(3)
    mag = obstacle.contact_stiffness * depth - obstacle.contact_damping * float(n @ v)
    return max(mag, 0.0) * n


def accumulate_forces(structure: StructureDef, world: WorldState, config: SimConfig = SimConfig()):
    """Net force and torque (about each center of mass) on every body.

    Returns two ``(n_bodies, 3)`` arrays. Fixed bodies are included for
    reporting; the integrator ignores them.
    """
    nb = len(structure.bodies)
    force = np.zeros((nb, 3))
    torque = np.zeros((nb, 3))
    g = np.asarray(structure.gravity, float)
    for i, b in enumerate(structure.bodies):
        force[i] += b.mass * g

    def apply(bname: str, nid: str, f: np.ndarray) -> None:
        i = structure.body_index(bname)
        p = world_node_position(structure.bodies[i], world.body_state(i), nid)
        force[i] += f
        torque[i] += np.cross(p - world.positions[i], f)

    for c in structure.cables:
        for (bname, nid), f in zip(c.route, cable_node_forces(c, structure, world)):
            apply(bname, nid, f)
    for obs in config.obstacles:
        for i, b in enumerate(structure.bodies):
            st = world.body_state(i)
            for n in b.nodes:
                f = contact_force(obs, world_node_position(b, st, n.id), world_node_velocity(b, st, n.id))
                if np.any(f):
                    apply(b.name, n.id, f)
    return force, torque


# --------------------------------------------------------------------------
# energy


def cable_energy(structure: StructureDef, world: WorldState) -> float:
    e = 0.0
    for c in structure.cables:
        x = read_cable(c, structure, world).elongation_X
        if x > 0:
            e += 0.5 * c.stiffness_k * x * x
    return e


def mechanical_energy(structure: StructureDef, world: WorldState) -> float:
    """Kinetic + gravitational (zero at the world origin) + stored cable energy."""
    g = np.asarray(structure.gravity, float)
    e = 0.0
    for i, b in enumerate(structure.bodies):
        if b.fixed:
            continue
        v, w = world.velocities[i], world.angular_velocities[i]
        r = quat_to_matrix(world.orientations[i])
        inertia = r @ np.asarray(b.inertia) @ r.T
        e += 0.5 * b.mass * float(v @ v) + 0.5 * float(w @ inertia @ w)
        e -= b.mass * float(g @ world.positions[i])
    return e + cable_energy(structure, world)


# --------------------------------------------------------------------------
# compiled path


def pack(structure: StructureDef, config: SimConfig = SimConfig()) -> K.Packed:
    return K.pack(structure, config)


def characteristic_length(structure: StructureDef) -> float:
    """Largest node distance from its body's center of mass."""
    best = 0.0
    for b in structure.bodies:
        com = np.asarray(b.com, float)
        for n in b.nodes:
            best = max(best, float(np.linalg.norm(np.asarray(n.local_position) - com)))
    return best


def _check_status(status: int, info: np.ndarray, structure: StructureDef, world: WorldState, dt: float,
                  base_step: int = 0) -> None:
    if status == K.DIVERGED:
        step = base_step + int(info[K.INFO_STEP])
        raise DivergenceError(step, structure.bodies[int(info[K.INFO_WHO])].name, world.time + dt * int(info[K.INFO_STEP]))
    if status == K.DEGENERATE:
        raise DegenerateSegmentError(structure.cables[int(info[K.INFO_WHO])].id, base_step + int(info[K.INFO_STEP]))


def _controls_row(structure: StructureDef, world: WorldState, controls) -> np.ndarray:
    row = np.array(world.commanded_lengths, dtype=float)
    if controls is None:
        return row
    if isinstance(controls, dict):
        for cid, v in controls.items():
            row[structure.active_index(cid)] = v
        return row
    return np.asarray(controls, dtype=float).reshape(len(row))


def step(structure: StructureDef, world: WorldState, controls=None,
         config: SimConfig = SimConfig(), packed: Optional[K.Packed] = None) -> WorldState:
    """Advance one time step and return the new state (the input is left untouched).

    ``controls`` maps active cable ids to target lengths (or is a sequence
    in active-cable order); cables not given keep their commanded length.
    """
    targets = _controls_row(structure, world, controls)[None, :]
    return run(structure, world, targets, 1, config, packed=packed).state


@dataclass
class RunResult:
    state: WorldState
    steps: int
    converged: bool = False
    samples: Optional[np.ndarray] = None  # (n_samples, n_markers, 3)
    sample_times: Optional[np.ndarray] = None
    contact: Optional[np.ndarray] = None  # (n_samples,) contact seen since previous sample


def run(
    structure: StructureDef,
    world: WorldState,
    targets: np.ndarray,
    n_steps: int,
    config: SimConfig = SimConfig(),
    *,
    markers: Sequence[int] = (),
    sample_stride: int = 0,
    settle_tol: float = 0.0,
    hold_steps: int = 0,
    packed: Optional[K.Packed] = None,
) -> RunResult:
    """Step ``n_steps`` times with ``targets[min(k, len-1)]`` as the target row at step k.

    ``markers`` are global node indices (see :func:`marker_indices`), sampled
    every ``sample_stride`` steps including the first and last state. With
    ``settle_tol > 0`` the run stops early once the rest criterion has held
    for ``hold_steps`` consecutive steps.
    """
    if packed is None:
        packed = K.pack(structure, config)
    w = world.copy()
    targets = np.ascontiguousarray(targets, dtype=float)
    markers = np.asarray(markers, dtype=np.int64)
    n_samples = (n_steps // sample_stride + 1) if (sample_stride > 0 and len(markers)) else 0
    samples = np.zeros((n_samples, len(markers), 3))
    contact = np.zeros(n_samples, dtype=np.bool_)
    char_len = characteristic_length(structure)
    info = np.zeros(K.INFO_SIZE, dtype=np.int64)
    done = 0
    converged = False
    sample_cursor = 0
    while done < n_steps or (done == 0 and n_steps == 0):
        chunk = min(config.max_steps_per_call, n_steps - done)
        status = K.simulate(
            packed, w.positions, w.orientations, w.velocities, w.angular_velocities,
            w.commanded_lengths, w.commanded_rates, targets, done, chunk,
            markers, sample_stride, samples, contact, sample_cursor,
            settle_tol, hold_steps, char_len, info,
        )
        _check_status(status, info, structure, w, config.dt, base_step=done)
        taken = int(info[K.INFO_STEPS])
        sample_cursor = int(info[K.INFO_SAMPLES])
        done += taken
        w = replace(w, time=world.time + done * config.dt)
        if status == K.CONVERGED:
            converged = True
            break
        if n_steps == 0:
            break
    times = None
    if n_samples:
        samples = samples[:sample_cursor]
        contact = contact[:sample_cursor]
        times = world.time + np.arange(sample_cursor) * sample_stride * config.dt
    return RunResult(w, done, converged, samples if n_samples else None, times, contact if n_samples else None)


def marker_indices(structure: StructureDef, markers: Sequence[tuple[str, str]]) -> list[int]:
    """Global node indices for ``(body, node)`` references, as used by :func:`run`."""
    offsets, k = {}, 0
    for b in structure.bodies:
        offsets[b.name] = k
        k += len(b.nodes)
    out = []
    for bname, nid in markers:
        body = structure.body(bname)
        out.append(offsets[bname] + body.node_ids.index(nid) if body.has_node(nid) else _missing(bname, nid))
    return out


def _missing(bname: str, nid: str):
    raise KeyError(f"body {bname!r} has no node {nid!r}")


def rest_metric(structure: StructureDef, world: WorldState) -> float:
    """Max over free bodies of ``|v| + 0.1 |w| L`` with L the characteristic length."""
    lc = characteristic_length(structure)
    best = 0.0
    for i, b in enumerate(structure.bodies):
        if b.fixed:
            continue
        m = float(np.linalg.norm(world.velocities[i]) + 0.1 * np.linalg.norm(world.angular_velocities[i]) * lc)
        best = max(best, m)
    return best


def settle(
    structure: StructureDef,
    world: WorldState,
    config: SimConfig = SimConfig(),
    tol: float = 1e-4,
    max_time: float = 60.0,
    hold: float = DEFAULT_SETTLE_HOLD,
    packed: Optional[K.Packed] = None,
) -> tuple[WorldState, bool]:
    """Relax the structure with winch targets frozen at their commanded lengths.

    Converged means :func:`rest_metric` stayed below ``tol`` for ``hold``
    seconds. A structure that converges is reported stable.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    n_steps = int(round(max_time / config.dt))
    hold_steps = max(1, int(round(hold / config.dt)))
    targets = np.array(world.commanded_lengths, dtype=float)[None, :]
    res = run(structure, world, targets, n_steps, config, settle_tol=tol, hold_steps=hold_steps, packed=packed)
    return res.state, res.converged


def compiled_forces(structure: StructureDef, world: WorldState, config: SimConfig = SimConfig()):
    """Force, torque and per-cable tension from the compiled path (for cross-checks)."""
    p = K.pack(structure, config)
    nb = len(structure.bodies)
    force, torque = np.zeros((nb, 3)), np.zeros((nb, 3))
    tension = np.zeros(len(structure.cables))
    status, who, _ = K.forces_once(p, world.positions, world.orientations, world.velocities,
                                   world.angular_velocities, world.commanded_lengths,
                                   world.commanded_rates, force, torque, tension)
    if status == K.DEGENERATE:
        raise DegenerateSegmentError(structure.cables[who].id)
    return force, torque, tension

"""Domain types for tensegrity structures.

Everything here is immutable value data. Vectors are plain ``(x, y, z)``
tuples so structures compare and hash cleanly; the dynamics module converts
to numpy arrays once per simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

Vec3 = tuple[float, float, float]
Matrix3 = tuple[Vec3, Vec3, Vec3]

PASSIVE = "passive"
ACTIVE = "active"
CABLE_KINDS = (PASSIVE, ACTIVE)

# Axial moment of a thin rod, kept nonzero so the tensor stays invertible.
ROD_AXIAL_EPS = 1e-9
# Bodies without rod members are treated as uniform spheres of this radius.
DEFAULT_SPHERE_RADIUS = 0.01


@dataclass(frozen=True)
class BodyNode:
    id: str
    local_position: Vec3


@dataclass(frozen=True)
class RodMember:
    """A thin rod fused into a compression body, spanning two of its nodes."""

    a: str
    b: str
    mass: float


@dataclass(frozen=True)
class RigidBodySpec:
    name: str
    nodes: tuple[BodyNode, ...]
    mass: float
    com: Vec3
    inertia: Matrix3
    fixed: bool = False
    rods: tuple[RodMember, ...] = ()

    def node(self, node_id: str) -> BodyNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"body {self.name!r} has no node {node_id!r}")

    def has_node(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)


@dataclass(frozen=True)
class ActuatorSpec:
    target_velocity: float
    max_accel: float


@dataclass(frozen=True)
class CableSpec:
    id: str
    route: tuple[tuple[str, str], ...]
    stiffness_k: float
    damping_b: float
    rest_length: float
    min_length: float
    max_length: float
    kind: str = PASSIVE
    actuator: Optional[ActuatorSpec] = None

    @property
    def is_active(self) -> bool:
        return self.kind == ACTIVE


@dataclass(frozen=True)
class StructureDef:
    name: str
    bodies: tuple[RigidBodySpec, ...]
    cables: tuple[CableSpec, ...]
    gravity: Vec3 = (0.0, 0.0, -9.81)

    def body(self, name: str) -> RigidBodySpec:
        for b in self.bodies:
            if b.name == name:
                return b
        raise KeyError(f"no body named {name!r}")

    def body_index(self, name: str) -> int:
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(f"no body named {name!r}")

    def cable(self, cable_id: str) -> CableSpec:
        for c in self.cables:
            if c.id == cable_id:
                return c
        raise KeyError(f"no cable named {cable_id!r}")

    @property
    def active_cables(self) -> tuple[CableSpec, ...]:
        return tuple(c for c in self.cables if c.is_active)

    def active_index(self, cable_id: str) -> int:
        for i, c in enumerate(self.active_cables):
            if c.id == cable_id:
                return i
        raise KeyError(f"no active cable named {cable_id!r}")


@dataclass(frozen=True)
class Violation:
    element: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.element}: [{self.rule}] {self.message}"


# --------------------------------------------------------------------------
# inertia helpers


def thin_rod_inertia(mass: float, length: float, axis: Sequence[float]) -> np.ndarray:
    """Inertia tensor of a uniform thin rod about its own center.

    ``mass * length**2 / 12`` about every axis perpendicular to ``axis``,
    and ``ROD_AXIAL_EPS`` along it.
    """
    a = np.asarray(axis, dtype=float)
    if not (math.isfinite(mass) and math.isfinite(length) and np.all(np.isfinite(a))):
        raise ValueError("thin_rod_inertia needs finite inputs")
    if mass <= 0 or length <= 0:
        raise ValueError("rod mass and length must be positive")
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("rod axis must be nonzero")
    a = a / n
    outer = np.outer(a, a)
    perp = mass * length * length / 12.0
    return perp * (np.eye(3) - outer) + ROD_AXIAL_EPS * outer


def sphere_inertia(mass: float, radius: float = DEFAULT_SPHERE_RADIUS) -> np.ndarray:
    return np.eye(3) * (0.4 * mass * radius * radius)


def composite_rod_properties(
    positions: dict[str, Sequence[float]], rods: Iterable[RodMember], mass: float
) -> tuple[np.ndarray, np.ndarray]:
    """Center of mass and inertia (about it) of rods fused into one body.

    Rod masses are rescaled so they sum to ``mass`` exactly; each rod's
    thin-rod tensor is carried to the shared center with the parallel-axis
    theorem.
    """
    rods = list(rods)
    raw = np.array([r.mass for r in rods], dtype=float)
    scale = mass / raw.sum()
    masses = raw * scale
    mids = np.array(
        [0.5 * (np.asarray(positions[r.a], float) + np.asarray(positions[r.b], float)) for r in rods]
    )
    com = (masses[:, None] * mids).sum(axis=0) / mass
    inertia = np.zeros((3, 3))
    for r, m, mid in zip(rods, masses, mids):
        d = np.asarray(positions[r.b], float) - np.asarray(positions[r.a], float)
        inertia += thin_rod_inertia(m, float(np.linalg.norm(d)), d)
        off = mid - com
        inertia += m * (np.dot(off, off) * np.eye(3) - np.outer(off, off))
    return com, inertia


def _as_vec(v: Sequence[float]) -> Vec3:
    return (float(v[0]), float(v[1]), float(v[2]))


def _as_mat(m: np.ndarray) -> Matrix3:
    m = 0.5 * (np.asarray(m, float) + np.asarray(m, float).T)
    return (_as_vec(m[0]), _as_vec(m[1]), _as_vec(m[2]))


def make_body(
    name: str,
    nodes: Sequence[tuple[str, Sequence[float]]],
    mass: float,
    rods: Sequence[RodMember] = (),
    fixed: bool = False,
) -> RigidBodySpec:
    """Build a body, deriving center of mass and inertia.

    With rod members the body is the rigid union of those rods. Without
    them it is a small uniform sphere centered on the node centroid. A
    massless fixed body gets a zero tensor.
    """
    node_objs = tuple(BodyNode(nid, _as_vec(p)) for nid, p in nodes)
    positions = {n.id: n.local_position for n in node_objs}
    rods = tuple(rods)
    if rods and mass > 0 and all(r.a in positions and r.b in positions for r in rods) \
            and sum(r.mass for r in rods) > 0:
        com, inertia = composite_rod_properties(positions, rods, mass)
    else:
        pts = np.array([n.local_position for n in node_objs], float) if node_objs else np.zeros((1, 3))
        com = pts.mean(axis=0)
        inertia = sphere_inertia(mass) if mass > 0 else np.zeros((3, 3))
    return RigidBodySpec(
        name=name,
        nodes=node_objs,
        mass=float(mass),
        com=_as_vec(com),
        inertia=_as_mat(inertia),
        fixed=fixed,
        rods=rods,
    )


def principal_length(body: RigidBodySpec) -> float:
    """Largest distance between two nodes of a body (its overall extent)."""
    pts = np.array([n.local_position for n in body.nodes], float)
    if len(pts) < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def free_mass(structure: StructureDef) -> float:
    return sum(b.mass for b in structure.bodies if not b.fixed)


# --------------------------------------------------------------------------
# validation


def _finite(*vals: float) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals)


def validate_structure(s: StructureDef) -> list[Violation]:
    """Check every structural invariant; problems come back as data."""
    out: list[Violation] = []

    def bad(element: str, rule: str, message: str) -> None:
        out.append(Violation(element, rule, message))

    names = [b.name for b in s.bodies]
    seen: set[str] = set()
    for n in names:
        if n in seen:
            bad(f"body {n}", "unique-body-name", "body name used more than once")
        seen.add(n)

    for b in s.bodies:
        el = f"body {b.name}"
        if not b.nodes:
            bad(el, "has-nodes", "body needs at least one node")
        ids: set[str] = set()
        for nd in b.nodes:
            if nd.id in ids:
                bad(f"{el} node {nd.id}", "unique-node-id", "node id repeated within body")
            ids.add(nd.id)
            if not _finite(*nd.local_position):
                bad(f"{el} node {nd.id}", "finite", "node position is not finite")
        if not _finite(b.mass, *b.com):
            bad(el, "finite", "mass or center of mass is not finite")
            continue
        if not b.fixed:
            if b.mass <= 0:
                bad(el, "positive-mass", f"free body mass must be > 0, got {b.mass:g}")
            inertia = np.asarray(b.inertia, float)
            if not np.all(np.isfinite(inertia)):
                bad(el, "finite", "inertia is not finite")
            elif not np.allclose(inertia, inertia.T, rtol=1e-12, atol=1e-15):
                bad(el, "inertia-symmetric", "inertia tensor is not symmetric")
            elif np.linalg.eigvalsh(inertia).min() <= 0:
                bad(el, "inertia-positive", "inertia tensor is not positive definite")
        elif b.mass < 0:
            bad(el, "positive-mass", "mass must not be negative")
        for r in b.rods:
            rel = f"{el} rod {r.a}-{r.b}"
            if r.a not in ids or r.b not in ids:
                bad(rel, "rod-reference", "rod endpoint is not a node of this body")
            elif r.a == r.b:
                bad(rel, "rod-distinct", "rod endpoints must differ")
            if not _finite(r.mass) or r.mass <= 0:
                bad(rel, "positive-mass", "rod mass must be > 0")
        if b.rods and b.mass > 0:
            total = sum(r.mass for r in b.rods)
            if _finite(total) and abs(total - b.mass) > 1e-6 * b.mass:
                bad(el, "rod-mass-sum", f"rod masses sum to {total:g}, body mass is {b.mass:g}")

    bodies = {b.name: b for b in s.bodies}
    cids: set[str] = set()
    for c in s.cables:
        el = f"cable {c.id}"
        if c.id in cids:
            bad(el, "unique-cable-id", "cable id used more than once")
        cids.add(c.id)
        if len(c.route) < 2:
            bad(el, "route-length", "route needs at least two nodes")
        for body_name, node_id in c.route:
            body = bodies.get(body_name)
            if body is None or not body.has_node(node_id):
                bad(el, "route-reference", f"unresolved route node {body_name}.{node_id}")
        for p, q in zip(c.route, c.route[1:]):
            if p == q:
                bad(el, "route-distinct", f"consecutive route entries repeat {p[0]}.{p[1]}")
        if not _finite(c.stiffness_k, c.damping_b, c.rest_length, c.min_length, c.max_length):
            bad(el, "finite", "cable parameters must be finite")
            continue
        if c.stiffness_k <= 0:
            bad(el, "stiffness-positive", f"k must be > 0, got {c.stiffness_k:g}")
        if c.damping_b < 0:
            bad(el, "damping-nonnegative", f"b must be >= 0, got {c.damping_b:g}")
        if c.min_length <= 0:
            bad(el, "min-length-positive", f"min must be > 0, got {c.min_length:g}")
        if c.rest_length <= 0:
            bad(el, "rest-length-positive", f"rest must be > 0, got {c.rest_length:g}")
        if not (c.min_length <= c.rest_length <= c.max_length):
            bad(el, "length-order", "need min <= rest <= max")
        if c.kind not in CABLE_KINDS:
            bad(el, "kind", f"unknown cable kind {c.kind!r}")
        elif c.kind == ACTIVE and c.actuator is None:
            bad(el, "actuator-required", "active cable needs an actuator")
        elif c.kind == PASSIVE and c.actuator is not None:
            bad(el, "actuator-forbidden", "passive cable must not carry an actuator")
        if c.actuator is not None:
            a = c.actuator
            if not _finite(a.target_velocity, a.max_accel) or a.target_velocity <= 0 or a.max_accel <= 0:
                bad(el, "actuator-positive", "actuator vmax and amax must be > 0")

    if not _finite(*s.gravity):
        bad("structure", "finite", "gravity is not finite")
    elif not any(b.fixed for b in s.bodies) and any(g != 0 for g in s.gravity):
        bad("structure", "anchored", "needs a fixed body or zero gravity")
    return out

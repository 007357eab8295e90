"""Small structures used across the test-suite."""

from __future__ import annotations

import math

import numpy as np

from tensarm.model import ACTIVE, PASSIVE, ActuatorSpec, CableSpec, RodMember, StructureDef, make_body


def passive(cid, route, k=100.0, b=0.0, rest=1.0, lo=None, hi=None):
    return CableSpec(cid, tuple(route), k, b, rest, lo if lo is not None else rest * 0.5,
                     hi if hi is not None else rest * 2.0, PASSIVE, None)


def active(cid, route, k=100.0, b=0.0, rest=1.0, vmax=0.05, amax=0.5, lo=None, hi=None):
    return CableSpec(cid, tuple(route), k, b, rest, lo if lo is not None else rest * 0.5,
                     hi if hi is not None else rest * 2.0, ACTIVE, ActuatorSpec(vmax, amax))


def hanging_mass(k=100.0, b=0.5, rest=1.0, mass=1.0, gravity=9.81) -> StructureDef:
    """A point-like bob hanging from a fixed anchor by one vertical cable.

    The bob's single node is its center of mass, so the cable never
    applies torque and the motion is the textbook damped oscillator.
    """
    anchor = make_body("anchor", [("top", (0.0, 0.0, 0.0))], 0.0, fixed=True)
    z_eq = -(rest + mass * gravity / k)
    bob = make_body("bob", [("n", (0.0, 0.0, z_eq))], mass)
    return StructureDef("bob", (anchor, bob), (passive("c", [("anchor", "top"), ("bob", "n")], k, b, rest),),
                        (0.0, 0.0, -gravity))


def two_rods(gravity=(0.0, 0.0, 0.0), fixed_first=False) -> StructureDef:
    a = make_body("a", [("p", (0.0, 0.0, 0.0)), ("q", (0.0, 0.0, 1.0))], 1.0, [RodMember("p", "q", 1.0)],
                  fixed=fixed_first)
    b = make_body("b", [("p", (0.5, 0.0, 0.2)), ("q", (0.5, 0.0, 1.2))], 1.0, [RodMember("p", "q", 1.0)])
    cables = (
        passive("c1", [("a", "p"), ("b", "q")], 50.0, 0.2, 0.9),
        passive("c2", [("a", "q"), ("b", "p")], 50.0, 0.2, 0.9),
    )
    return StructureDef("pair", (a, b), cables, gravity)


def random_free_structure(rng: np.random.Generator, n_bodies: int = 3, n_cables: int = 4,
                          via: bool = True) -> StructureDef:
    """Free-floating rod frames joined by random cables (some routed through hoops).

    Parameters are kept in the range where the default time step is stable.
    """
    bodies = []
    for i in range(n_bodies):
        c = rng.uniform(-1, 1, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        half = rng.uniform(0.1, 0.5)
        side = np.cross(axis, rng.normal(size=3))
        side *= rng.uniform(0.1, 0.3) / np.linalg.norm(side)
        pts = [("p", tuple(c - half * axis)), ("q", tuple(c + half * axis)), ("m", tuple(c + side))]
        mass = float(rng.uniform(0.5, 2.0))
        bodies.append(make_body(f"b{i}", pts, mass,
                                [RodMember("p", "q", 0.6 * mass), RodMember("p", "m", 0.4 * mass)]))
    cables = []
    node_ids = ("p", "q", "m")
    for j in range(n_cables):
        hops = 3 if (via and rng.random() < 0.5) else 2
        route = []
        while len(route) < hops:
            ref = (f"b{rng.integers(n_bodies)}", node_ids[rng.integers(3)])
            if not route or route[-1][0] != ref[0]:
                route.append(ref)
        kind_active = rng.random() < 0.3
        k, bdamp, rest = float(rng.uniform(10, 100)), float(rng.uniform(0, 0.5)), float(rng.uniform(0.2, 1.5))
        cables.append((active if kind_active else passive)(f"c{j}", route, k, bdamp, rest))
    return StructureDef("rand", tuple(bodies), tuple(cables), (0.0, 0.0, 0.0))


def damped_oscillator(t, amplitude, k, b, m):
    """Displacement from equilibrium, released from rest at ``amplitude``."""
    w0 = math.sqrt(k / m)
    zeta = b / (2 * math.sqrt(k * m))
    wd = w0 * math.sqrt(1 - zeta * zeta)
    return amplitude * np.exp(-zeta * w0 * t) * (np.cos(wd * t) + zeta * w0 / wd * np.sin(wd * t))

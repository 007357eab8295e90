"""Built-in tensegrity structures: standalone elbow, tetrahedrons arm, saddle arm.

Coordinates are world coordinates of the construction pose in meters:
``z`` up (the arm hangs toward ``-z`` from a fixed motor platform), ``y``
anterior, ``x`` lateral. Component masses and principal lengths (largest
node-to-node distance of a body) follow the measured prototypes:

================  ===========  ===========  ==========  ==========
component         tetra g      tetra cm     saddle g    saddle cm
================  ===========  ===========  ==========  ==========
forearm           10.1         58.6         18.5        54
olecranon         6.0          24.0         11.6        24
humerus           36.6         76.2         23.2        53
shoulder element  24.8         36.1         36.1        54
================  ===========  ===========  ==========  ==========

Every joint is a pair of interlocked perpendicular crosses: the upper
body's lower cross sits below the lower body's upper cross, "vertical"
cables hold the lower body up and four "saddle" cables pull the crosses
apart. The olecranon is the spider of this cable Cardan joint between
humerus and forearm and carries the hoops the elbow actuation runs
through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import (
    ACTIVE,
    PASSIVE,
    ActuatorSpec,
    CableSpec,
    RodMember,
    StructureDef,
    make_body,
)

# cable defaults (non-measured engineering choices)
PASSIVE_K, PASSIVE_B = 150.0, 1.0
ACTIVE_K, ACTIVE_B = 5000.0, 5.0
WINCH = ActuatorSpec(target_velocity=0.05, max_accel=0.5)
PRESTRESS = 2.0  # N of tension every passive cable carries in the construction pose
ACTIVE_PRESTRESS = 10.0  # same, winch cables
MIN_FRACTION, MAX_FRACTION = 0.5, 1.5

GRAVITY = (0.0, 0.0, -9.81)

TETRA_TABLE = {
    "forearm": (0.0101, 0.586),
    "olecranon": (0.0060, 0.240),
    "humerus": (0.0366, 0.762),
    "shoulder": (0.0248, 0.361),
}
TETRA_FULL_ARM_MASS = 0.0775

SADDLE_TABLE = {
    "forearm": (0.0185, 0.54),
    "olecranon": (0.0116, 0.24),
    "humerus": (0.0232, 0.53),
    "saddle": (0.0361, 0.54),
}
SADDLE_FULL_ARM_MASS = 0.0894

# elbow geometry (shared by all three models)
ELBOW_CROSS = 0.06  # half-width of the olecranon and elbow crosses
ELBOW_OVERLAP = 0.05  # how far each lower cross reaches above the upper body's lower cross
ELBOW_ABOVE = 0.09  # humerus upper elbow cross above its lower cross


def _extent(nodes: dict) -> float:
    pts = np.array(list(nodes.values()), float)
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def _fit(make_nodes, target: float, lo: float = 0.0, hi: float = 3.0) -> dict:
    """Bisect the free drop parameter of ``make_nodes`` until the body's extent is ``target``."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _extent(make_nodes(mid)) < target:
            lo = mid
        else:
            hi = mid
    return make_nodes(0.5 * (lo + hi))


def r9(v: float) -> float:
    """Round to 9 significant digits so structures survive a file round trip exactly."""
    return float(f"{v:.9g}")


def v9(p: Sequence[float]) -> tuple[float, float, float]:
    return (r9(p[0]), r9(p[1]), r9(p[2]))


@dataclass
class ArmInfo:
    """What the experiment harness needs to know about a built-in model."""

    name: str
    end_effector: tuple[str, str]
    elbow_markers: tuple[tuple[str, str], tuple[str, str], tuple[str, str]]
    groups: dict[str, tuple[str, ...]]
    pairs: dict[str, tuple[str, str]] = field(default_factory=dict)
    # (pivot, proximal) markers of the shoulder; the distal marker is the end effector
    shoulder_markers: Optional[tuple[tuple[str, str], tuple[str, str]]] = None


class _Builder:
    def __init__(self, name: str):
        self.name = name
        self.bodies: list = []
        self.pos: dict[tuple[str, str], np.ndarray] = {}
        self.cables: list[CableSpec] = []

    def body(self, name: str, nodes: dict, mass: float, rods: Sequence[tuple[str, str]] = (),
             fixed: bool = False) -> None:
        nodes = {k: v9(v) for k, v in nodes.items()}
        for k, v in nodes.items():
            self.pos[(name, k)] = np.asarray(v, float)
        members = []
        if rods:
            lens = [math.dist(nodes[a], nodes[b]) for a, b in rods]
            total = sum(lens)
            masses = [r9(mass * L / total) for L in lens]
            masses[-1] = r9(mass - sum(masses[:-1]))
            members = [RodMember(a, b, m) for (a, b), m in zip(rods, masses)]
        self.bodies.append(make_body(name, list(nodes.items()), mass, members, fixed))

    def length(self, route: Sequence[tuple[str, str]]) -> float:
        pts = [self.pos[r] for r in route]
        return sum(float(np.linalg.norm(b - a)) for a, b in zip(pts, pts[1:]))

    def cable(self, cid: str, route: Sequence[str], kind: str = PASSIVE) -> None:
        rt = tuple(tuple(r.split(".")) for r in route)
        geo = self.length(rt)
        active = kind == ACTIVE
        k = ACTIVE_K if active else PASSIVE_K
        rest = r9(geo - (ACTIVE_PRESTRESS if active else PRESTRESS) / k)
        self.cables.append(CableSpec(
            id=cid, route=rt,
            stiffness_k=k,
            damping_b=ACTIVE_B if active else PASSIVE_B,
            rest_length=rest,
            min_length=r9(rest * MIN_FRACTION),
            max_length=r9(rest * MAX_FRACTION),
            kind=kind,
            actuator=WINCH if active else None,
        ))

    def interlock(self, prefix: str, upper: str, lower: str,
                  u_top: Sequence[str], u_low: Sequence[str],
                  l_top: Sequence[str], l_low: Sequence[str],
                  active: Sequence[str] = ()) -> None:
        """Eight-cable joint between two interlocked crosses.

        ``u_top``/``l_top`` are parallel crosses (upper body's upper cross,
        lower body's upper cross); ``u_low``/``l_low`` are parallel to each
        other and perpendicular to the first pair. Cable ids listed in
        ``active`` become winch-driven.
        """
        def add(cid, route):
            self.cable(cid, route, ACTIVE if cid in active else PASSIVE)

        for i, (a, b) in enumerate(zip(u_top, l_top)):
            add(f"{prefix}_va{i}", [f"{upper}.{a}", f"{lower}.{b}"])
        for i, (a, b) in enumerate(zip(u_low, l_low)):
            add(f"{prefix}_vb{i}", [f"{upper}.{a}", f"{lower}.{b}"])
        for i, a in enumerate(u_low):
            for j, b in enumerate(l_top):
                add(f"{prefix}_s{i}{j}", [f"{upper}.{a}", f"{lower}.{b}"])

    def build(self) -> StructureDef:
        return StructureDef(self.name, tuple(self.bodies), tuple(self.cables), GRAVITY)


# --------------------------------------------------------------------------
# shared elbow


def _elbow(bld: _Builder, humerus_bottom: float, olecranon: tuple[float, float],
           forearm: tuple[float, float], humerus_name: str = "humerus") -> None:
    """Olecranon + forearm hung below a humerus whose lower elbow cross is at ``humerus_bottom``.

    ``olecranon`` and ``forearm`` are (mass, principal length).
    """
    a = ELBOW_CROSS
    o_mass, o_len = olecranon
    f_mass, f_len = forearm
    o_top = humerus_bottom + ELBOW_OVERLAP

    def olecranon_nodes(span):
        return {
            "hub": (0, 0, o_top - span / 2),
            "ty0": (0, a, o_top), "ty1": (0, -a, o_top),
            "bx0": (a, 0, o_top - span), "bx1": (-a, 0, o_top - span),
        }

    onodes = _fit(olecranon_nodes, o_len)
    o_bot = onodes["bx0"][2]
    bld.body("olecranon", onodes, o_mass,
             rods=[("hub", "ty0"), ("hub", "ty1"), ("hub", "bx0"), ("hub", "bx1")])

    f_top = o_bot + ELBOW_OVERLAP
    f_cross = o_bot - ELBOW_OVERLAP

    def forearm_nodes(drop):
        return {
            "ty0": (0, a, f_top), "ty1": (0, -a, f_top),
            "head": (0, 0, f_top),
            "bx0": (a, 0, f_cross), "bx1": (-a, 0, f_cross),
            "ant": (0, a, f_cross - 0.1),
            "tip": (0, 0, f_top - drop),
        }

    bld.body("forearm", _fit(forearm_nodes, f_len), f_mass,
             rods=[("ty0", "ty1"), ("bx0", "bx1"), ("head", "tip")])

    h = humerus_name
    bld.interlock("he", h, "olecranon",
                  u_top=["ey0", "ey1"], u_low=["ex0", "ex1"],
                  l_top=["ty0", "ty1"], l_low=["bx0", "bx1"])
    bld.interlock("ef", "olecranon", "forearm",
                  u_top=["ty0", "ty1"], u_low=["bx0", "bx1"],
                  l_top=["ty0", "ty1"], l_low=["bx0", "bx1"])
    # actuation routed through the olecranon hub hoops
    bld.cable("biceps", [f"{h}.ant", "olecranon.ty0", "forearm.ant"], ACTIVE)
    bld.cable("yaw_left", [f"{h}.ex0", "olecranon.bx0", "forearm.bx0"], ACTIVE)
    bld.cable("yaw_right", [f"{h}.ex1", "olecranon.bx1", "forearm.bx1"], ACTIVE)


def _humerus_elbow_nodes(bottom: float) -> dict:
    a = ELBOW_CROSS
    return {
        "ex0": (a, 0, bottom), "ex1": (-a, 0, bottom),
        "elb": (0, 0, bottom),
        "ey0": (0, a, bottom + ELBOW_ABOVE), "ey1": (0, -a, bottom + ELBOW_ABOVE),
        "ant": (0, a, bottom + 0.25),
    }


ELBOW_ROD_PAIRS = [("ex0", "ex1"), ("ey0", "ey1")]


def build_elbow_joint() -> StructureDef:
    """Standalone two-DOF elbow: fixed humerus, olecranon hub, forearm.

    Active cables: ``biceps`` (pitch) and the ``yaw_left``/``yaw_right``
    antagonistic pair.
    """
    bld = _Builder("elbow")
    h_mass, h_len = TETRA_TABLE["humerus"]

    def humerus_nodes(rise):
        nodes = _humerus_elbow_nodes(0.0)
        nodes["top"] = (0, 0, rise)
        return nodes

    bld.body("humerus", _fit(humerus_nodes, h_len), h_mass,
             rods=ELBOW_ROD_PAIRS + [("elb", "top")], fixed=True)
    _elbow(bld, 0.0, TETRA_TABLE["olecranon"], TETRA_TABLE["forearm"])
    return bld.build()


ELBOW_INFO = ArmInfo(
    name="elbow",
    end_effector=("forearm", "tip"),
    elbow_markers=(("olecranon", "hub"), ("humerus", "top"), ("forearm", "tip")),
    groups={"elbow-pitch": ("biceps",), "elbow-yaw": ("yaw_left", "yaw_right")},
    pairs={"elbow-yaw": ("yaw_left", "yaw_right")},
)


# --------------------------------------------------------------------------
# tetrahedrons arm

TETRA_OVERLAP = 0.06  # platform lower cross below the tetrahedron's top edge
TETRA_HANG = 0.12  # platform upper cross above the tetrahedron's top edge
HUMERUS_CROSS = 0.1
HUMERUS_OVERLAP = 0.06
HUMERUS_DROP = 0.075  # humerus second cross below the tetrahedron's bottom edge


def build_tetrahedrons_arm() -> StructureDef:
    bld = _Builder("tetra-arm")
    t_mass, edge = TETRA_TABLE["shoulder"]
    half = edge / 2
    t_top, t_bot = 0.0, -edge / math.sqrt(2)

    bld.body("platform", {
        "ux0": (half, 0, t_top + TETRA_HANG), "ux1": (-half, 0, t_top + TETRA_HANG),
        "ly0": (0, half, t_top - TETRA_OVERLAP), "ly1": (0, -half, t_top - TETRA_OVERLAP),
        "anchor": (0, 0, t_top + TETRA_HANG),
    }, 0.0, fixed=True)
    bld.body("shoulder", {
        "tx0": (half, 0, t_top), "tx1": (-half, 0, t_top),
        "by0": (0, half, t_bot), "by1": (0, -half, t_bot),
    }, t_mass, rods=[("tx0", "tx1"), ("by0", "by1"), ("tx0", "by0"), ("tx0", "by1"),
                     ("tx1", "by0"), ("tx1", "by1")])
    bld.interlock("ps", "platform", "shoulder",
                  u_top=["ux0", "ux1"], u_low=["ly0", "ly1"],
                  l_top=["tx0", "tx1"], l_low=["by0", "by1"],
                  active=["ps_va0", "ps_va1", "ps_vb0", "ps_vb1"])

    h_mass, h_len = TETRA_TABLE["humerus"]
    c = HUMERUS_CROSS
    h_top = t_bot + HUMERUS_OVERLAP
    h_y = t_bot - HUMERUS_DROP

    def humerus_nodes(drop):
        nodes = {
            "top": (0, 0, h_top),
            "tx0": (c, 0, h_top), "tx1": (-c, 0, h_top),
            "ty0": (0, c, h_y), "ty1": (0, -c, h_y),
        }
        nodes.update(_humerus_elbow_nodes(h_top - drop))
        return nodes

    hnodes = _fit(humerus_nodes, h_len)
    h_bottom = hnodes["elb"][2]
    bld.body("humerus", hnodes, h_mass,
             rods=[("tx0", "tx1"), ("ty0", "ty1"), ("top", "elb")] + ELBOW_ROD_PAIRS)
    bld.interlock("sh", "shoulder", "humerus",
                  u_top=["tx0", "tx1"], u_low=["by0", "by1"],
                  l_top=["tx0", "tx1"], l_low=["ty0", "ty1"],
                  active=["sh_vb0", "sh_vb1"])
    _elbow(bld, h_bottom, TETRA_TABLE["olecranon"], TETRA_TABLE["forearm"])
    return bld.build()


TETRA_INFO = ArmInfo(
    name="tetra-arm",
    end_effector=("forearm", "tip"),
    elbow_markers=(("olecranon", "hub"), ("humerus", "top"), ("forearm", "tip")),
    groups={
        "shoulder-pitch": ("sh_vb0", "sh_vb1"),
        "shoulder-lift": ("ps_va0", "ps_va1", "ps_vb0", "ps_vb1"),
        "elbow-pitch": ("biceps",),
        "elbow-yaw": ("yaw_left", "yaw_right"),
    },
    pairs={"shoulder-pitch": ("sh_vb0", "sh_vb1"), "elbow-yaw": ("yaw_left", "yaw_right")},
    shoulder_markers=(("humerus", "top"), ("platform", "anchor")),
)


# --------------------------------------------------------------------------
# saddle arm

SADDLE_TIP = 0.12  # half-spread of the y-connector arms
SADDLE_TOP_CROSS = 0.12


def build_saddle_arm() -> StructureDef:
    bld = _Builder("saddle-arm")
    s_mass, s_len = SADDLE_TABLE["saddle"]
    w, t = SADDLE_TIP, SADDLE_TOP_CROSS
    top = 0.0
    bld.body("platform", {
        "uy0": (0, t, top + 0.1), "uy1": (0, -t, top + 0.1),
        "lx0": (t, 0, top - 0.06), "lx1": (-t, 0, top - 0.06),
        "anchor": (0, 0, top + 0.1),
    }, 0.0, fixed=True)

    # stem with a top cross (y) hanging from the platform; the y-connector
    # opens downward with its arms in x
    def saddle_nodes(drop):
        return {
            "ty0": (0, t, top), "ty1": (0, -t, top),
            "stem": (0, 0, top),
            "bx0": (t, 0, top - 0.14), "bx1": (-t, 0, top - 0.14),
            "fork": (0, 0, top - drop + 0.08),
            "yx0": (w, 0, top - drop), "yx1": (-w, 0, top - drop),
        }

    snodes = _fit(saddle_nodes, s_len, lo=0.2)
    s_tips = snodes["yx0"][2]
    bld.body("saddle", snodes, s_mass,
             rods=[("ty0", "ty1"), ("bx0", "bx1"), ("stem", "fork"), ("fork", "yx0"), ("fork", "yx1")])
    bld.interlock("ps", "platform", "saddle",
                  u_top=["uy0", "uy1"], u_low=["lx0", "lx1"],
                  l_top=["ty0", "ty1"], l_low=["bx0", "bx1"])

    h_mass, h_len = SADDLE_TABLE["humerus"]
    h_tips = s_tips + 0.06
    h_fork = h_tips - 0.08

    # proximal y-connector opens upward with its arms in y
    def humerus_nodes(drop):
        nodes = {
            "hy0": (0, w, h_tips), "hy1": (0, -w, h_tips),
            "top": (0, 0, h_fork),
            "lx0": (w, 0, h_fork - 0.08), "lx1": (-w, 0, h_fork - 0.08),
        }
        nodes.update(_humerus_elbow_nodes(h_tips - drop))
        return nodes

    hnodes = _fit(humerus_nodes, h_len, lo=0.3)
    h_bottom = hnodes["elb"][2]
    bld.body("humerus", hnodes, h_mass,
             rods=[("top", "hy0"), ("top", "hy1"), ("lx0", "lx1"), ("top", "elb")] + ELBOW_ROD_PAIRS)
    bld.interlock("sj", "saddle", "humerus",
                  u_top=["ty0", "ty1"], u_low=["yx0", "yx1"],
                  l_top=["hy0", "hy1"], l_low=["lx0", "lx1"],
                  active=["sj_va0", "sj_va1", "sj_s00", "sj_s01"])
    _elbow(bld, h_bottom, SADDLE_TABLE["olecranon"], SADDLE_TABLE["forearm"])
    return bld.build()


SADDLE_INFO = ArmInfo(
    name="saddle-arm",
    end_effector=("forearm", "tip"),
    elbow_markers=(("olecranon", "hub"), ("humerus", "top"), ("forearm", "tip")),
    groups={
        "shoulder-pitch": ("sj_va0", "sj_va1"),
        "shoulder-yaw": ("sj_s00", "sj_s01"),
        "elbow-pitch": ("biceps",),
        "elbow-yaw": ("yaw_left", "yaw_right"),
    },
    pairs={
        "shoulder-pitch": ("sj_va0", "sj_va1"),
        "shoulder-yaw": ("sj_s00", "sj_s01"),
        "elbow-yaw": ("yaw_left", "yaw_right"),
    },
    shoulder_markers=(("humerus", "top"), ("platform", "anchor")),
)

BUILTINS = {
    "elbow": (build_elbow_joint, ELBOW_INFO),
    "tetra-arm": (build_tetrahedrons_arm, TETRA_INFO),
    "saddle-arm": (build_saddle_arm, SADDLE_INFO),
}

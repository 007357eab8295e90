"""numba kernels for time stepping. The structure is flattened into arrays by
:func:`pack`; :func:`simulate` runs many steps without returning to Python."""

from __future__ import annotations

import math
from collections import namedtuple

import numpy as np
from numba import njit

from .control import _limit

OK, CONVERGED, DIVERGED, DEGENERATE = 0, 1, -1, -2
INFO_STEPS, INFO_STEP, INFO_WHO, INFO_SAMPLES, INFO_HOLD, INFO_SIZE = 0, 1, 2, 3, 4, 5

SEGMENT_EPS = 1e-12

HALFSPACE, SPHERE = 0, 1

Packed = namedtuple(
    "Packed",
    [
        "dt", "gravity", "mass", "inertia", "inv_inertia", "fixed",
        "node_body", "node_local",
        "cable_start", "route_nodes", "k", "b", "rest", "active_idx",
        "vmax", "amax", "lo", "hi",
        "obs_kind", "obs_vec", "obs_scalar", "obs_k", "obs_b",
    ],
)


def pack(structure, config) -> Packed:
    from .dynamics import Halfspace  # local import: dynamics imports this module

    bodies = structure.bodies
    nb = len(bodies)
    inertia = np.zeros((nb, 3, 3))
    inv_inertia = np.zeros((nb, 3, 3))
    for i, b in enumerate(bodies):
        inertia[i] = np.asarray(b.inertia, float)
        if not b.fixed:
            inv_inertia[i] = np.linalg.inv(inertia[i])
    node_body, node_local, offsets = [], [], {}
    for i, b in enumerate(bodies):
        offsets[b.name] = len(node_body)
        com = np.asarray(b.com, float)
        for n in b.nodes:
            node_body.append(i)
            node_local.append(np.asarray(n.local_position, float) - com)
    start, route = [0], []
    active_idx = []
    vmax, amax, lo, hi = [], [], [], []
    for c in structure.cables:
        for bname, nid in c.route:
            route.append(offsets[bname] + structure.body(bname).node_ids.index(nid))
        start.append(len(route))
        if c.is_active:
            active_idx.append(len(vmax))
            vmax.append(c.actuator.target_velocity)
            amax.append(c.actuator.max_accel)
            lo.append(c.min_length)
            hi.append(c.max_length)
        else:
            active_idx.append(-1)
    obs = config.obstacles
    obs_kind = np.array([HALFSPACE if isinstance(o.shape, Halfspace) else SPHERE for o in obs], dtype=np.int64)
    obs_vec = np.array(
        [o.shape.normal if isinstance(o.shape, Halfspace) else o.shape.center for o in obs], dtype=float
    ).reshape(len(obs), 3)
    obs_scalar = np.array(
        [o.shape.offset if isinstance(o.shape, Halfspace) else o.shape.radius for o in obs], dtype=float
    )
    return Packed(
        dt=float(config.dt),
        gravity=np.asarray(structure.gravity, float),
        mass=np.array([b.mass for b in bodies], float),
        inertia=inertia,
        inv_inertia=inv_inertia,
        fixed=np.array([b.fixed for b in bodies], dtype=np.bool_),
        node_body=np.array(node_body, dtype=np.int64),
        node_local=np.array(node_local, float).reshape(len(node_body), 3),
        cable_start=np.array(start, dtype=np.int64),
        route_nodes=np.array(route, dtype=np.int64),
        k=np.array([c.stiffness_k for c in structure.cables], float),
        b=np.array([c.damping_b for c in structure.cables], float),
        rest=np.array([c.rest_length for c in structure.cables], float),
        active_idx=np.array(active_idx, dtype=np.int64),
        vmax=np.array(vmax, float),
        amax=np.array(amax, float),
        lo=np.array(lo, float),
        hi=np.array(hi, float),
        obs_kind=obs_kind,
        obs_vec=obs_vec,
        obs_scalar=obs_scalar,
        obs_k=np.array([o.contact_stiffness for o in obs], float),
        obs_b=np.array([o.contact_damping for o in obs], float),
    )


@njit(cache=True)
def quat_matrix(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out[0, 0] = 1 - 2 * (y * y + z * z)
    out[0, 1] = 2 * (x * y - w * z)
    out[0, 2] = 2 * (x * z + w * y)
    out[1, 0] = 2 * (x * y + w * z)
    out[1, 1] = 1 - 2 * (x * x + z * z)
    out[1, 2] = 2 * (y * z - w * x)
    out[2, 0] = 2 * (x * z - w * y)
    out[2, 1] = 2 * (y * z + w * x)
    out[2, 2] = 1 - 2 * (x * x + y * y)


@njit(cache=True)
def node_kinematics(p, pos, quat, vel, omg, rot, node_r, node_p, node_v):
    nb = pos.shape[0]
    for i in range(nb):
        quat_matrix(quat[i], rot[i])
    for n in range(p.node_body.shape[0]):
        i = p.node_body[n]
        for a in range(3):
            node_r[n, a] = (rot[i, a, 0] * p.node_local[n, 0] + rot[i, a, 1] * p.node_local[n, 1]
                            + rot[i, a, 2] * p.node_local[n, 2])
        r0, r1, r2 = node_r[n, 0], node_r[n, 1], node_r[n, 2]
        w0, w1, w2 = omg[i, 0], omg[i, 1], omg[i, 2]
        node_p[n, 0] = pos[i, 0] + r0
        node_p[n, 1] = pos[i, 1] + r1
        node_p[n, 2] = pos[i, 2] + r2
        node_v[n, 0] = vel[i, 0] + w1 * r2 - w2 * r1
        node_v[n, 1] = vel[i, 1] + w2 * r0 - w0 * r2
        node_v[n, 2] = vel[i, 2] + w0 * r1 - w1 * r0


@njit(cache=True)
def apply_node_force(p, n, fx, fy, fz, node_r, force, torque):
    i = p.node_body[n]
    force[i, 0] += fx
    force[i, 1] += fy
    force[i, 2] += fz
    r0, r1, r2 = node_r[n, 0], node_r[n, 1], node_r[n, 2]
    torque[i, 0] += r1 * fz - r2 * fy
    torque[i, 1] += r2 * fx - r0 * fz
    torque[i, 2] += r0 * fy - r1 * fx


@njit(cache=True)
def compute_forces(p, cmd_len, cmd_rate, node_r, node_p, node_v, units, force, torque, tension):
    """Fill force/torque/tension. Returns (status, cable index, contact seen)."""
    nb = force.shape[0]
    for i in range(nb):
        for a in range(3):
            force[i, a] = p.mass[i] * p.gravity[a]
            torque[i, a] = 0.0
    nc = p.k.shape[0]
    for c in range(nc):
        s0 = p.cable_start[c]
        s1 = p.cable_start[c + 1]
        length = 0.0
        rate = 0.0
        for j in range(s0, s1 - 1):
            n0 = p.route_nodes[j]
            n1 = p.route_nodes[j + 1]
            dx = node_p[n1, 0] - node_p[n0, 0]
            dy = node_p[n1, 1] - node_p[n0, 1]
            dz = node_p[n1, 2] - node_p[n0, 2]
            seg = math.sqrt(dx * dx + dy * dy + dz * dz)
            if seg < SEGMENT_EPS:
                return DEGENERATE, c, False
            ux, uy, uz = dx / seg, dy / seg, dz / seg
            units[j, 0] = ux
            units[j, 1] = uy
            units[j, 2] = uz
            length += seg
            rate += (ux * (node_v[n1, 0] - node_v[n0, 0]) + uy * (node_v[n1, 1] - node_v[n0, 1])
                     + uz * (node_v[n1, 2] - node_v[n0, 2]))
        ai = p.active_idx[c]
        if ai >= 0:
            x = length - cmd_len[ai]
            v = rate - cmd_rate[ai]
        else:
            x = length - p.rest[c]
            v = rate
        t = 0.0
        if x > 0:
            t = p.k[c] * x + p.b[c] * v
            if t < 0:
                t = 0.0
        tension[c] = t
        if t > 0:
            for j in range(s0, s1 - 1):
                fx, fy, fz = t * units[j, 0], t * units[j, 1], t * units[j, 2]
                apply_node_force(p, p.route_nodes[j], fx, fy, fz, node_r, force, torque)
                apply_node_force(p, p.route_nodes[j + 1], -fx, -fy, -fz, node_r, force, torque)
    contact = False
    for o in range(p.obs_kind.shape[0]):
        for n in range(node_p.shape[0]):
            if p.obs_kind[o] == HALFSPACE:
                nx, ny, nz = p.obs_vec[o, 0], p.obs_vec[o, 1], p.obs_vec[o, 2]
                depth = p.obs_scalar[o] - (nx * node_p[n, 0] + ny * node_p[n, 1] + nz * node_p[n, 2])
            else:
                dx = node_p[n, 0] - p.obs_vec[o, 0]
                dy = node_p[n, 1] - p.obs_vec[o, 1]
                dz = node_p[n, 2] - p.obs_vec[o, 2]
                dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                if dist > 0:
                    nx, ny, nz = dx / dist, dy / dist, dz / dist
                else:
                    nx, ny, nz = 0.0, 0.0, 1.0
                depth = p.obs_scalar[o] - dist
            if depth <= 0:
                continue
            vn = nx * node_v[n, 0] + ny * node_v[n, 1] + nz * node_v[n, 2]
            mag = p.obs_k[o] * depth - p.obs_b[o] * vn
            if mag > 0:
                contact = True
                apply_node_force(p, n, mag * nx, mag * ny, mag * nz, node_r, force, torque)
    return OK, -1, contact


@njit(cache=True)
def integrate(p, pos, quat, vel, omg, rot, force, torque):
    """Semi-implicit Euler. Returns index of the first non-finite body, or -1."""
    dt = p.dt
    nb = pos.shape[0]
    iw = np.empty((3, 3))
    tmp = np.empty((3, 3))
    for i in range(nb):
        if p.fixed[i]:
            continue
        for a in range(3):
            vel[i, a] += force[i, a] / p.mass[i] * dt
            pos[i, a] += vel[i, a] * dt
        r = rot[i]
        # world-frame inertia R I R^T
        for a in range(3):
            for c in range(3):
                s = 0.0
                for d in range(3):
                    s += p.inertia[i, a, d] * r[c, d]
                tmp[a, c] = s
        for a in range(3):
            for c in range(3):
                s = 0.0
                for d in range(3):
                    s += r[a, d] * tmp[d, c]
                iw[a, c] = s
        w0, w1, w2 = omg[i, 0], omg[i, 1], omg[i, 2]
        l0 = iw[0, 0] * w0 + iw[0, 1] * w1 + iw[0, 2] * w2
        l1 = iw[1, 0] * w0 + iw[1, 1] * w1 + iw[1, 2] * w2
        l2 = iw[2, 0] * w0 + iw[2, 1] * w1 + iw[2, 2] * w2
        e0 = torque[i, 0] - (w1 * l2 - w2 * l1)
        e1 = torque[i, 1] - (w2 * l0 - w0 * l2)
        e2 = torque[i, 2] - (w0 * l1 - w1 * l0)
        # R I^-1 R^T applied to e
        b0 = r[0, 0] * e0 + r[1, 0] * e1 + r[2, 0] * e2
        b1 = r[0, 1] * e0 + r[1, 1] * e1 + r[2, 1] * e2
        b2 = r[0, 2] * e0 + r[1, 2] * e1 + r[2, 2] * e2
        inv = p.inv_inertia[i]
        c0 = inv[0, 0] * b0 + inv[0, 1] * b1 + inv[0, 2] * b2
        c1 = inv[1, 0] * b0 + inv[1, 1] * b1 + inv[1, 2] * b2
        c2 = inv[2, 0] * b0 + inv[2, 1] * b1 + inv[2, 2] * b2
        omg[i, 0] += (r[0, 0] * c0 + r[0, 1] * c1 + r[0, 2] * c2) * dt
        omg[i, 1] += (r[1, 0] * c0 + r[1, 1] * c1 + r[1, 2] * c2) * dt
        omg[i, 2] += (r[2, 0] * c0 + r[2, 1] * c1 + r[2, 2] * c2) * dt
        # q <- exp(w dt / 2) * q
        w0, w1, w2 = omg[i, 0], omg[i, 1], omg[i, 2]
        wn = math.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
        if wn > 0:
            half = 0.5 * wn * dt
            s = math.sin(half) / wn
            dw, dx, dy, dz = math.cos(half), w0 * s, w1 * s, w2 * s
            qw, qx, qy, qz = quat[i, 0], quat[i, 1], quat[i, 2], quat[i, 3]
            nw = dw * qw - dx * qx - dy * qy - dz * qz
            nx = dw * qx + dx * qw + dy * qz - dz * qy
            ny = dw * qy - dx * qz + dy * qw + dz * qx
            nz = dw * qz + dx * qy - dy * qx + dz * qw
            norm = math.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
            quat[i, 0] = nw / norm
            quat[i, 1] = nx / norm
            quat[i, 2] = ny / norm
            quat[i, 3] = nz / norm
        ok = True
        for a in range(3):
            if not (math.isfinite(pos[i, a]) and math.isfinite(vel[i, a]) and math.isfinite(omg[i, a])):
                ok = False
        for a in range(4):
            if not math.isfinite(quat[i, a]):
                ok = False
        if not ok:
            return i
    return -1


@njit(cache=True)
def rest_metric(p, vel, omg, char_len):
    best = 0.0
    for i in range(vel.shape[0]):
        if p.fixed[i]:
            continue
        v = math.sqrt(vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2)
        w = math.sqrt(omg[i, 0] ** 2 + omg[i, 1] ** 2 + omg[i, 2] ** 2)
        m = v + 0.1 * w * char_len
        if m > best:
            best = m
    return best


@njit(cache=True)
def simulate(p, pos, quat, vel, omg, cmd_len, cmd_rate, targets, step0, n_steps,
             markers, stride, samples, contact_log, cursor, tol, hold_steps, char_len, info):
    nb = pos.shape[0]
    nn = p.node_body.shape[0]
    na = cmd_len.shape[0]
    rot = np.empty((nb, 3, 3))
    node_r = np.empty((nn, 3))
    node_p = np.empty((nn, 3))
    node_v = np.empty((nn, 3))
    units = np.empty((max(p.route_nodes.shape[0], 1), 3))
    force = np.empty((nb, 3))
    torque = np.empty((nb, 3))
    tension = np.empty(p.k.shape[0])
    n_rows = targets.shape[0]
    sampling = stride > 0 and markers.shape[0] > 0
    held = info[INFO_HOLD]
    seen_contact = False
    info[INFO_STEPS] = 0

    if sampling and step0 == 0 and cursor == 0:
        node_kinematics(p, pos, quat, vel, omg, rot, node_r, node_p, node_v)
        for m in range(markers.shape[0]):
            for a in range(3):
                samples[0, m, a] = node_p[markers[m], a]
        contact_log[0] = False
        cursor = 1

    for k in range(n_steps):
        g = step0 + k
        row = g if g < n_rows else n_rows - 1
        for a in range(na):
            cmd_len[a], cmd_rate[a] = _limit(cmd_len[a], cmd_rate[a], targets[row, a], p.dt,
                                             p.vmax[a], p.amax[a], p.lo[a], p.hi[a])
        node_kinematics(p, pos, quat, vel, omg, rot, node_r, node_p, node_v)
        status, who, touched = compute_forces(p, cmd_len, cmd_rate, node_r, node_p, node_v,
                                              units, force, torque, tension)
        if status != OK:
            info[INFO_STEP] = k
            info[INFO_WHO] = who
            info[INFO_STEPS] = k
            info[INFO_SAMPLES] = cursor
            return status
        if touched:
            seen_contact = True
        bad = integrate(p, pos, quat, vel, omg, rot, force, torque)
        if bad >= 0:
            info[INFO_STEP] = k + 1
            info[INFO_WHO] = bad
            info[INFO_STEPS] = k + 1
            info[INFO_SAMPLES] = cursor
            return DIVERGED
        info[INFO_STEPS] = k + 1
        if sampling and (g + 1) % stride == 0 and cursor < samples.shape[0]:
            node_kinematics(p, pos, quat, vel, omg, rot, node_r, node_p, node_v)
            for m in range(markers.shape[0]):
                for a in range(3):
                    samples[cursor, m, a] = node_p[markers[m], a]
            contact_log[cursor] = seen_contact
            seen_contact = False
            cursor += 1
        if tol > 0:
            if rest_metric(p, vel, omg, char_len) < tol:
                held += 1
                if held >= hold_steps:
                    info[INFO_HOLD] = held
                    info[INFO_SAMPLES] = cursor
                    return CONVERGED
            else:
                held = 0
    info[INFO_HOLD] = held
    info[INFO_SAMPLES] = cursor
    return OK


@njit(cache=True)
def forces_once(p, pos, quat, vel, omg, cmd_len, cmd_rate, force, torque, tension):
    nb = pos.shape[0]
    nn = p.node_body.shape[0]
    rot = np.empty((nb, 3, 3))
    node_r = np.empty((nn, 3))
    node_p = np.empty((nn, 3))
    node_v = np.empty((nn, 3))
    units = np.empty((max(p.route_nodes.shape[0], 1), 3))
    node_kinematics(p, pos, quat, vel, omg, rot, node_r, node_p, node_v)
    status, who, touched = compute_forces(p, cmd_len, cmd_rate, node_r, node_p, node_v, units, force, torque, tension)
    return status, who, touched

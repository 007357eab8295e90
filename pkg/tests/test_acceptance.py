"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The verdict lines go straight to the terminal even while pytest captures
output, so ``pytest tests/test_acceptance.py`` shows the full scorecard.
"""

import math
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings

from helpers import damped_oscillator, hanging_mass, random_free_structure
from test_dynamics import momentum, random_state
from test_topology_io import CORRUPTIONS, assert_close, check_corruption, structures
from tensarm import gallery
from tensarm.cli import main as cli_main
from tensarm.control import AntagonisticPair, ControllerProgram, SineChannel, limit_actuation, target_table
from tensarm.dynamics import (
    Halfspace,
    Obstacle,
    SimConfig,
    cable_node_forces,
    initial_state,
    marker_indices,
    mechanical_energy,
    read_cable,
    run,
    step,
    world_node_position,
)
from tensarm.lab import compliance_experiment, motions_for, preset_program, repeatability, summarize, track
from tensarm.model import free_mass, principal_length
from tensarm.topology_io import parse_structure, serialize_structure

ARMS = ("tetra-arm", "saddle-arm")
CASES = 1000


@pytest.fixture
def verdict(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d} ({title}): {detail}")
        assert ok, detail

    return emit


# --------------------------------------------------------------------------
# 1. model fidelity


def test_c01_model_fidelity(verdict):
    t0 = time.perf_counter()
    tables = {
        "tetra-arm": ({"forearm": (10.1, 58.6), "olecranon": (6.0, 24.0), "humerus": (36.6, 76.2),
                       "shoulder": (24.8, 36.1)}, 77.5),
        "saddle-arm": ({"forearm": (18.5, 54.0), "olecranon": (11.6, 24.0), "humerus": (23.2, 53.0),
                        "saddle": (36.1, 54.0)}, 89.4),
    }
    mismatches = []
    for name, (rows, total) in tables.items():
        s = gallery.BUILTINS[name][0]()
        for body, (grams, cm) in rows.items():
            b = s.body(body)
            if f"{b.mass * 1000:.4g}" != f"{grams:.4g}" or f"{principal_length(b) * 100:.4g}" != f"{cm:.4g}":
                mismatches.append(f"{name}/{body}")
        if f"{free_mass(s) * 1000:.4g}" != f"{total:.4g}":
            mismatches.append(f"{name} total mass")
    elapsed = time.perf_counter() - t0
    verdict(1, "model fidelity", not mismatches and elapsed < 1.0,
            f"8 body rows and 2 totals checked to 4 significant figures, mismatches: {mismatches or 'none'}, "
            f"runtime {elapsed:.3f} s")


# --------------------------------------------------------------------------
# 2. integrator against the closed-form damped oscillator


def test_c02_integrator_oracle(verdict):
    t0 = time.perf_counter()
    k, b, m, amp = 100.0, 0.5, 1.0, 0.05
    errs = []
    for dt in (1e-4, 5e-5):
        s = hanging_mass(k, b, mass=m)
        w = initial_state(s)
        z_eq = w.positions[1, 2]
        w.positions[1, 2] += amp
        horizon = 2 * 2 * math.pi * math.sqrt(m / k)
        res = run(s, w, np.zeros((1, 0)), int(round(horizon / dt)), SimConfig(dt=dt),
                  markers=marker_indices(s, [("bob", "n")]), sample_stride=1)
        z = res.samples[:, 0, 2] - z_eq
        errs.append(float(np.abs(z - damped_oscillator(res.sample_times, amp, k, b, m)).max()))
    elapsed = time.perf_counter() - t0
    ratio = errs[0] / errs[1]
    verdict(2, "integrator oracle", errs[0] < 0.01 * amp and ratio >= 1.8 and elapsed < 10,
            f"max error {errs[0] / amp:.3%} of amplitude over two periods, halving dt shrinks it {ratio:.2f}x, "
            f"runtime {elapsed:.1f} s")


# --------------------------------------------------------------------------
# 3. physics invariants on random structures


def test_c03_physics_properties(verdict):
    t0 = time.perf_counter()
    bad = {"tension": 0, "balance": 0, "momentum": 0, "quaternion": 0}
    worst_drift = worst_quat = 0.0
    for seed in range(CASES):
        rng = np.random.default_rng(seed)
        s = random_free_structure(rng)
        w = random_state(s, rng, spread=0.3, speed=1.0)
        for c in s.cables:
            r = read_cable(c, s, w)
            if r.tension < 0 or (r.elongation_X <= 0 and (r.tension != 0 or np.any(cable_node_forces(c, s, w)))):
                bad["tension"] += 1
            f = cable_node_forces(c, s, w, tension=1.0 + rng.random())
            pts = [world_node_position(s.body(bn), w.body_state(s.body_index(bn)), nid) for bn, nid in c.route]
            scale = np.abs(f).sum() * (1 + max(np.linalg.norm(p) for p in pts))
            torque = sum(np.cross(p, fi) for p, fi in zip(pts, f))
            if np.linalg.norm(f.sum(axis=0)) > 1e-9 * scale or np.linalg.norm(torque) > 1e-9 * scale:
                bad["balance"] += 1
        w = random_state(s, rng, spread=0.02, speed=0.1)
        p0 = momentum(s, w)
        end = run(s, w, w.commanded_lengths[None, :], 10_000).state
        drift = float(np.linalg.norm(momentum(s, end) - p0))
        worst_drift = max(worst_drift, drift)
        bad["momentum"] += drift >= 1e-9
        w = random_state(s, rng, speed=3.0)
        for _ in range(3):
            w = step(s, w)
        for state in (w, end):
            dq = float(np.abs(np.linalg.norm(state.orientations, axis=1) - 1).max())
            worst_quat = max(worst_quat, dq)
            bad["quaternion"] += dq > 1e-9
    elapsed = time.perf_counter() - t0
    verdict(3, "physics properties", not any(bad.values()) and elapsed < 60,
            f"{CASES} random structures, failures {bad}, worst momentum drift {worst_drift:.1e} kg m/s "
            f"over 10^4 steps, worst quaternion norm error {worst_quat:.1e}, runtime {elapsed:.1f} s")


# --------------------------------------------------------------------------
# 4. every built-in settles


def test_c04_stability(verdict, settled_builtin):
    rows, ok_all = [], True
    for name in gallery.BUILTINS:
        t0 = time.perf_counter()
        s, _, w, ok = settled_builtin(name)
        elapsed = time.perf_counter() - t0
        tensions = [read_cable(c, s, w).tension for c in s.cables]
        taut = sum(t > 0 for t in tensions) / len(tensions)
        good = ok and w.time <= 60 and min(tensions) >= 0 and taut >= 0.8
        ok_all &= good
        rows.append(f"{name} settled={ok} at t={w.time:.2f} s with {taut:.0%} taut, min tension "
                    f"{min(tensions):.2f} N ({elapsed:.1f} s wall)")
    verdict(4, "stability", ok_all, "; ".join(rows))


# --------------------------------------------------------------------------
# 5. passive energy decay after a disturbance


def test_c05_passive_energy_decay(verdict, settled_builtin):
    rows, ok_all = [], True
    for name in gallery.BUILTINS:
        s, info, w, _ = settled_builtin(name)
        base = mechanical_energy(s, w)
        d = w.copy()
        d.positions[s.body_index(info.end_effector[0])] += (0.05, 0.0, 0.0)
        hold = w.commanded_lengths[None, :]
        energies = [mechanical_energy(s, d) - base]
        for _ in range(10):
            d = run(s, d, hold, 10_000).state
            energies.append(mechanical_energy(s, d) - base)
        rise = max(b - a for a, b in zip(energies, energies[1:]))
        good = rise <= 1e-6 * energies[0] and energies[-1] < energies[0]
        ok_all &= good
        rows.append(f"{name} E(0)={energies[0]:.4g} J, E(10 s)={energies[-1]:.2g} J, "
                    f"largest 1 s change {rise:+.2g} J")
    verdict(5, "passive energy decay", ok_all, "; ".join(rows))


# --------------------------------------------------------------------------
# 6. actuation limits and antagonistic pairs


def test_c06_actuation_limits(verdict):
    rng = np.random.default_rng(6)
    base = gallery.build_elbow_joint()
    ids = [c.id for c in base.active_cables]
    ia, ib = ids.index("yaw_left"), ids.index("yaw_right")
    violations = {"bounds": 0, "speed": 0, "acceleration": 0, "pair targets": 0, "slow pair sum": 0}
    dt = 0.01
    for _ in range(CASES):
        cables = []
        for c in base.cables:
            if c.is_active:
                act = replace(c.actuator, target_velocity=float(rng.uniform(0.005, 0.2)),
                              max_accel=float(rng.uniform(0.05, 2.0)))
                c = replace(c, actuator=act)
            cables.append(c)
        s = replace(base, cables=tuple(cables))
        bic, yl, yr = s.cable("biceps"), s.cable("yaw_left"), s.cable("yaw_right")
        amp = float(rng.uniform(0, 0.45)) * (bic.max_length - bic.min_length)
        center = float(rng.uniform(bic.min_length + amp, bic.max_length - amp))
        total = yl.rest_length + yr.rest_length
        pamp = float(rng.uniform(0, 0.3)) * yl.rest_length
        prog = ControllerProgram(
            (SineChannel("biceps", center, amp, float(rng.uniform(0.2, 8)), float(rng.uniform(0, 2 * math.pi))),),
            (AntagonisticPair("yaw_left", "yaw_right", total,
                              SineChannel("yaw_left", yl.rest_length, pamp, float(rng.uniform(0.2, 8)))),),
        )
        table = target_table(prog, s, dt * np.arange(1, 201), [c.rest_length for c in s.active_cables])
        violations["pair targets"] += int(np.any(table[:, ib] != total - table[:, ia]))
        lengths = np.array([c.rest_length for c in s.active_cables])
        rates = np.zeros(len(lengths))
        for row in table:
            for k, c in enumerate(s.active_cables):
                nl, nr = limit_actuation(lengths[k], rates[k], row[k], dt, c.actuator, (c.min_length, c.max_length))
                violations["bounds"] += int(not c.min_length <= nl <= c.max_length)
                violations["speed"] += int(abs(nr) > c.actuator.target_velocity * (1 + 1e-12))
                violations["acceleration"] += int(abs(nr - rates[k]) > c.actuator.max_accel * dt * (1 + 1e-9))
                lengths[k], rates[k] = nl, nr
    # a pair driven slowly enough to track: the actual lengths keep their sum
    worst_sum = 0.0
    for _ in range(20):
        amp = float(rng.uniform(0.005, 0.05))
        period = 20 * amp / gallery.WINCH.target_velocity * float(rng.uniform(1, 2))
        total, la, lb, ra, rb = 0.2, 0.1, 0.1, 0.0, 0.0
        src = SineChannel("a", 0.1, amp, period, float(rng.uniform(0, 2 * math.pi)))
        n = int(round(5 * period / dt))
        last = 0.0
        for k in range(1, n + 1):
            ta = float(src.value(k * dt))
            la, ra = limit_actuation(la, ra, ta, dt, gallery.WINCH, (0.02, 0.3))
            lb, rb = limit_actuation(lb, rb, total - ta, dt, gallery.WINCH, (0.02, 0.3))
            if k > n - int(period / dt):
                last = max(last, abs(la + lb - total))
        worst_sum = max(worst_sum, last)
        violations["slow pair sum"] += last > 1e-4
    verdict(6, "actuation limits", not any(violations.values()),
            f"{CASES} random programs x 200 steps, violations {violations}, "
            f"worst slow-pair length-sum error {worst_sum:.1e} m")


# --------------------------------------------------------------------------
# 7 and 8. degrees of freedom


def _preset_run(settled_builtin, name, preset, markers=None):
    s, info, w, _ = settled_builtin(name)
    prog = preset_program(s, info, preset, w.commanded_lengths)
    return track(s, w, prog, markers or [info.end_effector], 10.0, 0.01)


def test_c07_dof_demonstration(verdict, settled_builtin):
    rows, ok_all = [], True
    for name in ARMS:
        for preset in gallery.BUILTINS[name][1].groups:
            with warnings.catch_warnings():
                warnings.simplefilter("error", RuntimeWarning)
                traj = _preset_run(settled_builtin, name, preset)
            d = traj.positions[:, 0] - traj.positions[0, 0]
            disp = float(np.linalg.norm(d, axis=1).max())
            good = disp > 0.02
            text = f"{name}/{preset} {disp * 100:.1f} cm"
            if preset == "shoulder-lift":
                lift = float(np.abs(d[:, 2]).max())
                good &= lift > 0.005
                text += f" ({lift * 100:.2f} cm vertical)"
            ok_all &= good
            rows.append(text)
    verdict(7, "DOF demonstration", ok_all, ", ".join(rows))


def test_c08_elbow_pitch_articulation(verdict, settled_builtin):
    motion = motions_for(gallery.TETRA_INFO)["elbow-pitch"]
    rom = motion.measure(_preset_run(settled_builtin, "tetra-arm", "elbow-pitch", list(motion.markers)))
    verdict(8, "elbow pitch articulation", rom.sweep >= 15.0,
            f"tetra-arm elbow sweep {rom.sweep:.1f} deg ({rom.minimum:.1f} to {rom.maximum:.1f}), "
            f"hardware reference 36.33 deg")


# --------------------------------------------------------------------------
# 9. compliance against a wall


def test_c09_compliance(verdict, settled_builtin):
    s, info, w, _ = settled_builtin("tetra-arm")
    prog = preset_program(s, info, "elbow-pitch", w.commanded_lengths)
    markers = [info.end_effector]
    rep = compliance_experiment(s, w, prog, Obstacle(Halfspace((0.0, -1.0, 0.0), -0.3)), markers)
    far = compliance_experiment(s, w, prog, Obstacle(Halfspace((0.0, -1.0, 0.0), -50.0)), markers)
    ok = (rep.contact_interval is not None and rep.max_deviation > 0.01 and rep.recovered
          and far.max_deviation < 1e-6 and far.contact_interval is None)
    interval = "none" if rep.contact_interval is None else "{:.2f} to {:.2f} s".format(*rep.contact_interval)
    verdict(9, "compliance", ok,
            f"contact {interval}, max deviation {rep.max_deviation * 100:.1f} cm, recovery error "
            f"{rep.recovery_error:.1e} m ({rep.note}); out-of-reach obstacle deviation {far.max_deviation:.1e} m")


# --------------------------------------------------------------------------
# 10. repeatability harness


def test_c10_repeatability(verdict, settled_builtin):
    s, info, w, _ = settled_builtin("tetra-arm")
    motions = motions_for(info)
    zero_ok, noisy_ok, rows = True, True, []
    for preset in info.groups:
        group = [m for m in motions.values() if m.preset == preset]
        prog = preset_program(s, info, preset, w.commanded_lengths)
        for r in repeatability(s, prog, group, runs=2, magnitude=0.0):
            zero_ok &= r.std_dev == 0.0 and not r.flagged
        for r in repeatability(s, prog, group, seeds=range(5), magnitude=0.02):
            complete = not r.flagged and len(r.runs) == 5 and all(v is not None for v in r.runs)
            noisy_ok &= complete and math.isfinite(r.std_dev)
            rows.append(f"{r.motion} {r.mean:.3g}+-{r.std_dev:.2g} {r.unit}")
    mean, sigma, _ = summarize([10, 12, 14])
    hand_ok = mean == 12 and abs(sigma - 1.633) < 5e-4
    verdict(10, "repeatability harness", zero_ok and noisy_ok and hand_ok and len(rows) == len(motions),
            f"noise 0 gives zero spread: {zero_ok}; noise 2% over 5 seeds: {', '.join(rows)}; "
            f"summary of 10, 12, 14 is mean {mean:g}, sigma {sigma:.3f}")


# --------------------------------------------------------------------------
# 11. parser round trip and corruption diagnostics


def test_c11_parser(verdict):
    failures = []
    for name, (build, _) in gallery.BUILTINS.items():
        s = build()
        text = serialize_structure(s)
        back = parse_structure(text)
        try:
            assert_close(back, s)
            assert serialize_structure(back) == text
        except AssertionError:
            failures.append(name)
    drawn = []

    @settings(max_examples=CASES, derandomize=True, database=None)
    @given(structures())
    def round_trip(s):
        drawn.append(s)
        text = serialize_structure(s)
        back = parse_structure(text)
        assert_close(back, s)
        assert serialize_structure(back) == text

    try:
        round_trip()
    except AssertionError as exc:
        failures.append(f"random structure: {exc}")
    corruptions, misplaced = 0, []
    text = serialize_structure(gallery.build_elbow_joint())
    lines = text.rstrip("\n").split("\n")
    for replacement in CORRUPTIONS:
        for i, line in enumerate(lines):
            for j in range(len(line.split())):
                corruptions += 1
                try:
                    check_corruption(text, i, j, replacement)
                except AssertionError:
                    misplaced.append((i + 1, j, replacement))
    verdict(11, "parser", not failures and not misplaced,
            f"round trip of {len(gallery.BUILTINS)} built-ins and {len(drawn)} random structures, "
            f"failures: {failures or 'none'}; {corruptions} single-token corruptions of the elbow file, "
            f"{len(misplaced)} with an error outside the corrupted statement")


# --------------------------------------------------------------------------
# 12. CLI contract


def test_c12_cli_contract(verdict, tmp_path):
    elbow = tmp_path / "elbow.tsg"
    boom = tmp_path / "boom.tsg"
    boom.write_text("structure boom\nbody base mass=0 fixed\n  node a 0 0 0\nbody bob mass=0.0001\n"
                    "  node n 0 0 -0.5\ncable c kind=passive k=1e9 b=0 rest=0.1 min=0.05 max=1\n"
                    "  route base.a bob.n\n")
    invalid = tmp_path / "invalid.tsg"
    passive_id = next(c.id for c in gallery.build_elbow_joint().cables if not c.is_active)
    bad_ctl = tmp_path / "bad.ctl"
    bad_ctl.write_text(f"sine {passive_id} center=0.03 amp=0 period=1\n")
    out = tmp_path / "runs"
    out.mkdir()
    matrix = [
        (["builtin", "elbow", "-o", elbow], 0),
        (["validate", elbow], 0),
        (["validate", invalid], 1),
        (["builtin", "octopus", "-o", tmp_path / "o.tsg"], 2),
        (["validate", tmp_path / "missing.tsg"], 2),
        (["settle", elbow, "--out", out / "state.yaml"], 0),
        (["settle", elbow, "--max-time", "0.001", "--out", tmp_path / "short.yaml"], 3),
        (["settle", boom, "--dt", "0.001"], 4),
        (["simulate", elbow, "--out", out / "sim.csv"], 0),
        (["simulate", elbow, "--controller", bad_ctl, "--duration", "0.1", "--out", tmp_path / "x.csv"], 1),
        (["simulate", elbow, "--markers", "forearm.nope", "--out", tmp_path / "x.csv"], 2),
        (["simulate", elbow, "--obstacle", "cube:1,2,3", "--out", tmp_path / "x.csv"], 2),
        (["simulate", boom, "--dt", "0.001", "--markers", "bob.n", "--out", tmp_path / "x.csv"], 4),
        (["experiment", "workspace", elbow, "--preset", "elbow-pitch", "--duration", "2",
          "--out", out / "ws"], 0),
        (["frobnicate"], 2),
    ]
    wrong = []
    for argv, code in matrix:
        if argv[0] == "validate" and argv[1] == invalid:
            invalid.write_text(elbow.read_text().replace("k=150", "k=-150", 1))
        got = cli_main([str(a) for a in argv])
        if got != code:
            wrong.append((" ".join(str(a) for a in argv[:2]), got, code))
    raw = (out / "sim.csv").read_bytes()
    rows = raw.decode().split("\n")
    csv_ok = (b"\r" not in raw and rows[0] == "t,forearm.tip_x,forearm.tip_y,forearm.tip_z"
              and len([r for r in rows[1:] if r]) == 1001)
    emitted = {str(p) for p in out.iterdir() if not p.name.endswith(".manifest.yaml")}
    listed = set()
    for manifest in out.glob("*.manifest.yaml"):
        listed |= set(yaml.safe_load(manifest.read_text())["manifest"]["outputs"]) - {str(manifest)}
    manifests_ok = emitted == listed and all(Path(p).exists() for p in listed)
    verdict(12, "CLI contract", not wrong and csv_ok and manifests_ok,
            f"{len(matrix)} invocations, wrong exit codes: {wrong or 'none'}; "
            f"CSV header, LF endings and 1001 rows: {csv_ok}; manifests list every output: {manifests_ok}")

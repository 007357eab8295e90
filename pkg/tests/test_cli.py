import csv
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from tensarm import gallery
from tensarm.cli import CliError, main, parse_obstacle
from tensarm.dynamics import Halfspace, Sphere
from tensarm.topology_io import load_structure

DIVERGENT = """\
structure boom
gravity 0 0 -9.81
body base mass=0 fixed
  node a 0 0 0
body bob mass=0.0001
  node n 0 0 -0.5
cable c kind=passive k=1e9 b=0 rest=0.1 min=0.05 max=1
  route base.a bob.n
"""


def run_cli(*argv):
    return main([str(a) for a in argv])


def manifest_of(path):
    doc = yaml.safe_load(Path(path).read_text())
    return doc["manifest"]


def assert_manifest_complete(directory: Path, manifest_path: Path):
    m = manifest_of(manifest_path)
    written = {str(p) for p in directory.iterdir() if p != manifest_path}
    assert set(m["outputs"]) == written
    assert m["manifest_file"] == str(manifest_path)


@pytest.fixture(scope="module")
def elbow_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("elbow")
    path = d / "elbow.tsg"
    assert run_cli("builtin", "elbow", "-o", path) == 0
    return path


# --------------------------------------------------------------------------
# builtin and validate


def test_builtin_writes_file_and_manifest(tmp_path):
    out = tmp_path / "t.tsg"
    assert run_cli("builtin", "tetra-arm", "-o", out) == 0
    s = load_structure(out)
    assert sum(b.mass for b in s.bodies if not b.fixed) == pytest.approx(0.0775)
    assert_manifest_complete(tmp_path, tmp_path / "t.tsg.manifest.yaml")
    assert manifest_of(tmp_path / "t.tsg.manifest.yaml")["command"] == "builtin"


def test_builtin_unknown_name(capsys):
    assert run_cli("builtin", "octopus", "-o", "x.tsg") == 2
    assert "octopus" in capsys.readouterr().err


def test_builtin_unwritable_path(tmp_path):
    assert run_cli("builtin", "elbow", "-o", tmp_path / "missing" / "e.tsg") == 2


def test_validate_ok(elbow_file, capsys):
    assert run_cli("validate", elbow_file) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK elbow")
    assert yaml.safe_load(out.split("\n", 1)[1])["manifest"]["command"] == "validate"


def test_validate_invalid_file(tmp_path, elbow_file, capsys):
    bad = tmp_path / "bad.tsg"
    bad.write_text(elbow_file.read_text().replace("k=150", "k=-150", 1))
    assert run_cli("validate", bad) == 1
    err = capsys.readouterr().err
    assert "range error" in err and f"{bad}:" in err


def test_validate_missing_file(tmp_path):
    assert run_cli("validate", tmp_path / "nope.tsg") == 2


def test_usage_errors():
    assert run_cli() == 2
    assert run_cli("frobnicate") == 2
    assert run_cli("settle") == 2


# --------------------------------------------------------------------------
# settle


def test_settle_writes_state(elbow_file, tmp_path):
    out = tmp_path / "state.yaml"
    assert run_cli("settle", elbow_file, "--out", out) == 0
    doc = yaml.safe_load(out.read_text())
    assert doc["state"]["converged"] is True
    assert all(c["tension"] >= 0 for c in doc["cables"].values())
    assert set(doc["bodies"]) == {b.name for b in gallery.build_elbow_joint().bodies}
    assert_manifest_complete(tmp_path, tmp_path / "state.yaml.manifest.yaml")


def test_settle_timeout_exits_3(elbow_file, tmp_path):
    out = tmp_path / "state.yaml"
    assert run_cli("settle", elbow_file, "--max-time", "0.001", "--out", out) == 3
    assert yaml.safe_load(out.read_text())["state"]["converged"] is False


def test_divergence_exits_4(tmp_path, capsys):
    path = tmp_path / "boom.tsg"
    path.write_text(DIVERGENT)
    assert run_cli("settle", path, "--dt", "0.001") == 4
    assert "non-finite" in capsys.readouterr().err
    assert run_cli("simulate", path, "--dt", "0.001", "--markers", "bob.n", "--out", tmp_path / "t.csv") == 4


# --------------------------------------------------------------------------
# simulate


def read_csv(path):
    raw = Path(path).read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    return rows[0], rows[1:]


def test_simulate_rows_and_header(elbow_file, tmp_path):
    out = tmp_path / "traj.csv"
    assert run_cli("simulate", elbow_file, "--out", out, "--markers", "forearm.tip,olecranon.hub") == 0
    header, rows = read_csv(out)
    assert header == ["t", "forearm.tip_x", "forearm.tip_y", "forearm.tip_z",
                      "olecranon.hub_x", "olecranon.hub_y", "olecranon.hub_z"]
    assert len(rows) == 1001
    assert rows[0][0] == "0" and rows[-1][0] == "10"
    for value in rows[500][1:]:
        digits = value.lstrip("-").replace(".", "").split("e")[0].lstrip("0")
        assert len(digits) <= 9
    assert_manifest_complete(tmp_path, tmp_path / "traj.csv.manifest.yaml")
    assert (tmp_path / "traj.csv.report.yaml").exists()


def test_zero_amplitude_controller_holds_still(elbow_file, tmp_path):
    s = gallery.build_elbow_joint()
    ctl = tmp_path / "still.ctl"
    ctl.write_text("".join(f"sine {c.id} center={c.rest_length!r} amp=0 period=2\n" for c in s.active_cables))
    out = tmp_path / "still.csv"
    assert run_cli("simulate", elbow_file, "--controller", ctl, "--duration", "2", "--out", out) == 0
    _, rows = read_csv(out)
    first = [float(v) for v in rows[0][1:]]
    for row in rows:
        assert max(abs(float(v) - f) for v, f in zip(row[1:], first)) <= 1e-4
    assert str(ctl) in manifest_of(tmp_path / "still.csv.manifest.yaml")["inputs"]


def test_preset_moves_the_end_effector(elbow_file, tmp_path):
    out = tmp_path / "pitch.csv"
    assert run_cli("simulate", elbow_file, "--preset", "elbow-pitch", "--duration", "4", "--sample", "0.05",
                   "--out", out) == 0
    report = yaml.safe_load((tmp_path / "pitch.csv.report.yaml").read_text())
    assert report["simulate"]["sweep"]["forearm.tip"]["max_displacement_m"] > 0.02
    _, rows = read_csv(out)
    assert len(rows) == 81


@pytest.mark.parametrize("extra,code", [
    (["--markers", "forearm.nope"], 2),
    (["--markers", "forearm"], 2),
    (["--obstacle", "cube:1,2,3"], 2),
    (["--obstacle", "halfspace:0,0,2,1"], 2),
    (["--preset", "wave"], 2),
    (["--sample", "0.00015"], 2),
])
def test_simulate_bad_arguments(elbow_file, tmp_path, extra, code):
    assert run_cli("simulate", elbow_file, "--duration", "0.1", "--out", tmp_path / "x.csv", *extra) == code


def test_simulate_bad_controller(elbow_file, tmp_path):
    passive = next(c.id for c in gallery.build_elbow_joint().cables if not c.is_active)
    ctl = tmp_path / "bad.ctl"
    ctl.write_text(f"sine {passive} center=0.03 amp=0 period=1\n")
    assert run_cli("simulate", elbow_file, "--controller", ctl, "--duration", "0.1", "--out", tmp_path / "x.csv") == 1
    ctl.write_text("sine biceps center=0.03 amp=0 period=-1\n")
    assert run_cli("simulate", elbow_file, "--controller", ctl, "--duration", "0.1", "--out", tmp_path / "x.csv") == 1
    assert run_cli("simulate", elbow_file, "--controller", tmp_path / "gone.ctl", "--duration", "0.1",
                   "--out", tmp_path / "x.csv") == 2


def test_parse_obstacle():
    assert isinstance(parse_obstacle("sphere:0,0,1,0.5").shape, Sphere)
    h = parse_obstacle("halfspace:0,-1,0,-0.3").shape
    assert isinstance(h, Halfspace) and h.offset == -0.3
    with pytest.raises(CliError):
        parse_obstacle("sphere:1,2")


# --------------------------------------------------------------------------
# experiments


def test_workspace_experiment(elbow_file, tmp_path):
    prefix = tmp_path / "ws"
    assert run_cli("experiment", "workspace", elbow_file, "--preset", "elbow-pitch", "--duration", "8",
                   "--sample", "0.05", "--out", prefix) == 0
    report = yaml.safe_load((tmp_path / "ws.report.yaml").read_text())["workspace"]
    assert report["area_m2"] >= 0 and report["angular_extent_deg"] > 0
    assert report["range_of_motion"]["elbow-pitch"]["sweep"] > 0
    header, rows = read_csv(tmp_path / "ws.trajectory.csv")
    assert len(rows) == 161
    assert_manifest_complete(tmp_path, tmp_path / "ws.manifest.yaml")


def test_compliance_experiment_files(elbow_file, tmp_path):
    prefix = tmp_path / "cmp"
    assert run_cli("experiment", "compliance", elbow_file, "--preset", "elbow-pitch", "--duration", "2",
                   "--sample", "0.05", "--obstacle", "halfspace:0,0,1,-50", "--out", prefix) == 0
    report = yaml.safe_load((tmp_path / "cmp.report.yaml").read_text())["compliance"]
    assert report["max_deviation_m"] < 1e-6 and report["contact_interval_s"] is None
    assert_manifest_complete(tmp_path, tmp_path / "cmp.manifest.yaml")
    assert run_cli("experiment", "compliance", elbow_file, "--preset", "elbow-pitch", "--out", prefix) == 2


def test_repeatability_experiment(elbow_file, tmp_path):
    prefix = tmp_path / "rep"
    assert run_cli("experiment", "repeatability", elbow_file, "--preset", "elbow-yaw", "--runs", "2",
                   "--duration", "1", "--sample", "0.05", "--out", prefix) == 0
    report = yaml.safe_load((tmp_path / "rep.report.yaml").read_text())["repeatability"]
    assert set(report) == {"elbow-yaw-left", "elbow-yaw-right"}
    assert all(r["std_dev"] == 0 for r in report.values())
    assert manifest_of(tmp_path / "rep.manifest.yaml")["config"]["seeds"] == [0, 1]
    assert_manifest_complete(tmp_path, tmp_path / "rep.manifest.yaml")
    assert run_cli("experiment", "repeatability", elbow_file, "--preset", "elbow-yaw", "--runs", "1",
                   "--out", prefix) == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tensarm.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "experiment" in proc.stdout

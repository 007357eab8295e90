#!/usr/bin/env python3
"""Drive a built-in arm into a wall and report deviation and recovery."""

import argparse

from tensarm.cli import parse_obstacle
from tensarm.lab import compliance_experiment, preset_program, settled_builtin


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--arm", default="tetra-arm")
    ap.add_argument("--preset", default="elbow-pitch")
    ap.add_argument("--obstacle", default="halfspace:0,-1,0,-0.3", help="same syntax as the CLI option")
    ap.add_argument("--duration", type=float, default=10.0)
    args = ap.parse_args()
    s, info, w, _ = settled_builtin(args.arm)
    prog = preset_program(s, info, args.preset, w.commanded_lengths)
    rep = compliance_experiment(s, w, prog, parse_obstacle(args.obstacle), [info.end_effector], args.duration)
    print(f"contact interval  : {rep.contact_interval}")
    print(f"max deviation     : {rep.max_deviation:.4f} m")
    print(f"recovery error    : {rep.recovery_error:.3e} m")
    print(f"verdict           : {rep.note}")


if __name__ == "__main__":
    main()

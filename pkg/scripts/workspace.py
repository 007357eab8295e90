#!/usr/bin/env python3
"""End-effector workspace (hull area and angular extent) for each preset."""

import argparse

from tensarm.lab import preset_program, settled_builtin, track, workspace_summary


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--arm", default="tetra-arm")
    ap.add_argument("--plane", default="yz", choices=["xy", "yz", "xz"])
    ap.add_argument("--duration", type=float, default=10.0)
    args = ap.parse_args()
    s, info, w, _ = settled_builtin(args.arm)
    pivot = info.elbow_markers[0]
    print(f"{'preset':<16}{'area (cm^2)':>12}{'extent (deg)':>14}")
    for preset in info.groups:
        traj = track(s, w, preset_program(s, info, preset, w.commanded_lengths), [info.end_effector, pivot],
                     args.duration)
        rep = workspace_summary(traj, info.end_effector, args.plane, pivot)
        print(f"{preset:<16}{rep.area * 1e4:>12.3f}{rep.angular_extent:>14.2f}")


if __name__ == "__main__":
    main()

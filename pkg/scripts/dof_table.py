#!/usr/bin/env python3
"""Range of motion of every degree of freedom on the two built-in arms.

Each preset is run for 10 s from the settled pose and every motion it
drives is measured; the table printed is the simulated counterpart of a
hardware range-of-motion table.
"""

import argparse

from tensarm.lab import motions_for, preset_program, settled_builtin, track


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--arms", nargs="+", default=["tetra-arm", "saddle-arm"])
    args = ap.parse_args()
    print(f"{'arm':<12}{'motion':<18}{'min':>10}{'max':>10}{'sweep':>10}  unit")
    for name in args.arms:
        s, info, w, ok = settled_builtin(name)
        if not ok:
            print(f"{name}: did not settle, skipped")
            continue
        motions = motions_for(info)
        for preset in info.groups:
            group = [m for m in motions.values() if m.preset == preset]
            markers = tuple(dict.fromkeys(m for dof in group for m in dof.markers))
            traj = track(s, w, preset_program(s, info, preset, w.commanded_lengths), markers, args.duration)
            for dof in group:
                rom = dof.measure(traj)
                print(f"{name:<12}{dof.name:<18}{rom.minimum:>10.4g}{rom.maximum:>10.4g}{rom.sweep:>10.4g}  {rom.unit}")


if __name__ == "__main__":
    main()

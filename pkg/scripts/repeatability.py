#!/usr/bin/env python3
"""Repeat every motion of a built-in arm under random parameter noise."""

import argparse

from tensarm.lab import motions_for, preset_program, repeatability, settled_builtin


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--arm", default="tetra-arm")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--noise", type=float, default=0.02, help="relative parameter perturbation")
    ap.add_argument("--duration", type=float, default=10.0)
    args = ap.parse_args()
    s, info, w, _ = settled_builtin(args.arm)
    motions = motions_for(info)
    print(f"{'motion':<18}{'mean':>10}{'std dev':>10}  unit  runs")
    for preset in info.groups:
        group = [m for m in motions.values() if m.preset == preset]
        prog = preset_program(s, info, preset, w.commanded_lengths)
        for r in repeatability(s, prog, group, runs=args.runs, magnitude=args.noise, duration=args.duration):
            runs = ", ".join("failed" if v is None else f"{v:.4g}" for v in r.runs)
            print(f"{r.motion:<18}{r.mean:>10.4g}{r.std_dev:>10.3g}  {r.unit:<4}  {runs}")


if __name__ == "__main__":
    main()

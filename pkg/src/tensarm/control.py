"""Open-loop cable length programs and the winch limiter.

A :class:`ControllerProgram` maps time to target rest lengths for active
cables. :func:`limit_actuation` turns a target into what a real winch can
do in one step: bounded cable speed, bounded acceleration, hard length
stops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .model import ActuatorSpec, StructureDef
from .topology_io import (
    DUPLICATE,
    RANGE,
    REFERENCE,
    SYNTAX,
    ParseError,
    ParseFailure,
    fmt,
    key_values,
    require,
    tokenize,
)

DEADBAND = 1e-6


@dataclass(frozen=True)
class SineChannel:
    cable_id: str
    center: float
    amplitude: float
    period: float
    phase: float = 0.0

    def value(self, t):
        return self.center + self.amplitude * np.sin(2.0 * np.pi * np.asarray(t) / self.period + self.phase)


@dataclass(frozen=True)
class AntagonisticPair:
    """Two cables whose targets always sum to ``total_length``.

    ``source`` drives ``cable_a``; ``cable_b`` gets the complement.
    """

    cable_a: str
    cable_b: str
    total_length: float
    source: SineChannel


@dataclass(frozen=True)
class ControllerProgram:
    channels: tuple[SineChannel, ...] = ()
    pairs: tuple[AntagonisticPair, ...] = ()
    holds: Mapping[str, float] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.channels, self.pairs, tuple(sorted(self.holds.items()))))

    @property
    def mentioned(self) -> list[str]:
        ids = [c.cable_id for c in self.channels]
        for p in self.pairs:
            ids += [p.cable_a, p.cable_b]
        ids += list(self.holds)
        return ids


def targets_at(program: ControllerProgram, t: float) -> dict[str, float]:
    """Target lengths at time ``t`` for every cable the program mentions."""
    if t < 0:
        raise ValueError("time must be >= 0")
    out: dict[str, float] = {}
    for ch in program.channels:
        out[ch.cable_id] = float(ch.value(t))
    for p in program.pairs:
        a = float(p.source.value(t))
        out[p.cable_a] = a
        out[p.cable_b] = p.total_length - a
    for cid, length in program.holds.items():
        out[cid] = float(length)
    return out


def target_table(
    program: ControllerProgram,
    structure: StructureDef,
    times: np.ndarray,
    default_lengths: Sequence[float],
) -> np.ndarray:
    """Targets for all active cables (structure order) at each time.

    Cables the program does not mention keep ``default_lengths``.
    """
    actives = structure.active_cables
    times = np.asarray(times, dtype=float)
    table = np.empty((len(times), len(actives)))
    table[:] = np.asarray(default_lengths, dtype=float)[None, :]
    index = {c.id: i for i, c in enumerate(actives)}
    for ch in program.channels:
        table[:, index[ch.cable_id]] = ch.value(times)
    for p in program.pairs:
        a = p.source.value(times)
        table[:, index[p.cable_a]] = a
        table[:, index[p.cable_b]] = p.total_length - a
    for cid, length in program.holds.items():
        table[:, index[cid]] = length
    return table


def check_program(program: ControllerProgram, structure: StructureDef) -> None:
    """Raise ``ValueError`` if the program does not fit the structure."""
    problems = []
    seen: set[str] = set()
    for cid in program.mentioned:
        if cid in seen:
            problems.append(f"cable {cid} is driven more than once")
        seen.add(cid)
        try:
            c = structure.cable(cid)
        except KeyError:
            problems.append(f"unknown cable {cid}")
            continue
        if not c.is_active:
            problems.append(f"cable {cid} is passive and cannot be commanded")

    def in_bounds(cid: str, lo: float, hi: float) -> None:
        try:
            c = structure.cable(cid)
        except KeyError:
            return
        if lo < c.min_length - 1e-12 or hi > c.max_length + 1e-12:
            problems.append(
                f"cable {cid} range [{lo:.6g}, {hi:.6g}] leaves [{c.min_length:.6g}, {c.max_length:.6g}]"
            )

    sines = list(program.channels) + [p.source for p in program.pairs]
    for ch in sines:
        if not ch.period > 0:
            problems.append(f"cable {ch.cable_id}: period must be > 0")
        amp = abs(ch.amplitude)
        in_bounds(ch.cable_id, ch.center - amp, ch.center + amp)
    for p in program.pairs:
        if p.source.cable_id != p.cable_a:
            problems.append(f"pair {p.cable_a}/{p.cable_b}: source must drive {p.cable_a}")
        try:
            ca, cb = structure.cable(p.cable_a), structure.cable(p.cable_b)
        except KeyError:
            continue
        if not p.total_length > ca.min_length + cb.min_length:
            problems.append(f"pair {p.cable_a}/{p.cable_b}: total must exceed the summed minimum lengths")
        amp = abs(p.source.amplitude)
        in_bounds(p.cable_b, p.total_length - p.source.center - amp, p.total_length - p.source.center + amp)
    for cid, length in program.holds.items():
        in_bounds(cid, length, length)
    if problems:
        raise ValueError("; ".join(problems))


@njit(cache=True)
def _limit(length, rate, target, dt, vmax, amax, lo, hi):
    if target < lo:
        target = lo
    elif target > hi:
        target = hi
    err = target - length
    dv = amax * dt
    if abs(err) <= DEADBAND and abs(rate) <= dv:
        return length, 0.0
    # Fastest speed v = (n + f) dv from which shedding dv per step covers at
    # most |err|: the steps move (n + 1)(n / 2 + f) dv dt in total. The last
    # step is slower than dv, so the winch can always stop on the spot.
    d = abs(err) / (dv * dt)
    n = math.floor((-1.0 + math.sqrt(1.0 + 8.0 * d)) / 2.0)
    f = min(max(d / (n + 1.0) - n / 2.0, 0.0), 1.0)
    speed = min(vmax, (n + f) * dv)
    desired = speed if err > 0 else -speed
    change = desired - rate
    if change > dv:
        change = dv
    elif change < -dv:
        change = -dv
    new_rate = rate + change
    if new_rate > vmax:
        new_rate = vmax
    elif new_rate < -vmax:
        new_rate = -vmax
    new_len = length + new_rate * dt
    # at a hard stop the winch sheds speed, still no faster than amax allows
    if new_len >= hi:
        new_len = hi
        if new_rate > 0:
            new_rate = max(0.0, rate - dv)
    elif new_len <= lo:
        new_len = lo
        if new_rate < 0:
            new_rate = min(0.0, rate + dv)
    return new_len, new_rate


def limit_actuation(
    current_len: float,
    current_rate: float,
    target: float,
    dt: float,
    act: ActuatorSpec,
    bounds: tuple[float, float],
) -> tuple[float, float]:
    """Advance one winch by ``dt`` toward ``target`` under its limits.

    Trapezoidal profile: accelerate at most ``act.max_accel``, cruise at most
    ``act.target_velocity``, and brake early enough to stop on the target
    (within a 1e-6 m deadband). Targets outside ``bounds`` are clamped.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    lo, hi = bounds
    return _limit(float(current_len), float(current_rate), float(target), float(dt),
                  float(act.target_velocity), float(act.max_accel), float(lo), float(hi))


# --------------------------------------------------------------------------
# controller files


def parse_program(text: str) -> ControllerProgram:
    """Parse a controller file (``sine``, ``pair`` and ``hold`` lines).

    A ``pair a b`` line takes its excursion from the ``sine a`` line (or a
    ``hold a`` line, as a zero-amplitude sine) elsewhere in the file.
    """
    lines, errors = tokenize(text)
    sines: dict[str, tuple[SineChannel, object]] = {}
    holds: dict[str, float] = {}
    pairs: list[tuple[str, str, float, object]] = []
    for toks in lines:
        head, args = toks[0], toks[1:]
        if head.text not in ("sine", "pair", "hold"):
            errors.append(ParseError(head.span, f"unknown statement {head.text!r}", SYNTAX))
            continue
        if head.text == "pair":
            if len(args) != 3:
                errors.append(ParseError(head.span, "expected: pair <a> <b> total=<m>", SYNTAX))
                continue
            values, flags = key_values(args[2:], ("total",), errors)
            if flags or not require(values, ("total",), head, errors):
                continue
            if values["total"][0] <= 0:
                errors.append(ParseError(values["total"][1].span, "total must be > 0", RANGE))
                continue
            pairs.append((args[0].text, args[1].text, values["total"][0], head))
            continue
        if not args:
            errors.append(ParseError(head.span, f"{head.text} needs a cable id", SYNTAX))
            continue
        cid = args[0].text
        if cid in sines or cid in holds:
            errors.append(ParseError(args[0].span, f"cable {cid} commanded twice", DUPLICATE))
            continue
        if head.text == "hold":
            values, flags = key_values(args[1:], ("len",), errors)
            for f in flags:
                errors.append(ParseError(f.span, f"unexpected token {f.text!r}", SYNTAX))
            if require(values, ("len",), head, errors):
                if values["len"][0] <= 0:
                    errors.append(ParseError(values["len"][1].span, "len must be > 0", RANGE))
                holds[cid] = values["len"][0]
            continue
        values, flags = key_values(args[1:], ("center", "amp", "period", "phase"), errors)
        for f in flags:
            errors.append(ParseError(f.span, f"unexpected token {f.text!r}", SYNTAX))
        if not require(values, ("center", "amp", "period"), head, errors):
            continue
        if values["period"][0] <= 0:
            errors.append(ParseError(values["period"][1].span, "period must be > 0", RANGE))
            continue
        ch = SineChannel(cid, values["center"][0], values["amp"][0], values["period"][0],
                         values.get("phase", (0.0, None))[0])
        sines[cid] = (ch, head)

    pair_objs = []
    used = set()
    for a, b, total, head in pairs:
        if a in used or b in used:
            errors.append(ParseError(head.span, f"cable in pair {a}/{b} already paired", DUPLICATE))
            continue
        if b in sines or b in holds:
            errors.append(ParseError(head.span, f"pair member {b} is derived and must not be commanded", DUPLICATE))
            continue
        if a in sines:
            src = sines.pop(a)[0]
        elif a in holds:
            src = SineChannel(a, holds.pop(a), 0.0, 1.0)
        else:
            errors.append(ParseError(head.span, f"pair source {a} needs a sine or hold line", REFERENCE))
            continue
        used.update((a, b))
        pair_objs.append(AntagonisticPair(a, b, total, src))
    if errors:
        raise ParseFailure(errors)
    return ControllerProgram(tuple(ch for ch, _ in sines.values()), tuple(pair_objs), holds)


def serialize_program(program: ControllerProgram) -> str:
    out = []
    for ch in list(program.channels) + [p.source for p in program.pairs]:
        out.append(f"sine {ch.cable_id} center={fmt(ch.center)} amp={fmt(ch.amplitude)} "
                   f"period={fmt(ch.period)} phase={fmt(ch.phase)}")
    for p in program.pairs:
        out.append(f"pair {p.cable_a} {p.cable_b} total={fmt(p.total_length)}")
    for cid, length in program.holds.items():
        out.append(f"hold {cid} len={fmt(length)}")
    return "\n".join(out) + "\n"


def load_program(path) -> ControllerProgram:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_program(fh.read())

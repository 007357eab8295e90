"""Reader and writer for ``.tsg`` structure description files.

The format is line oriented. ``#`` starts a comment, tokens are separated
by whitespace and indentation carries no meaning::

    structure <name>
    gravity <gx> <gy> <gz>
    body <name> mass=<kg> [fixed]
      node <id> <x> <y> <z>
      rod <nodeA> <nodeB> mass=<kg>
    cable <id> kind=<active|passive> k=<N/m> b=<N*s/m> rest=<m> min=<m> max=<m>
      route <body>.<node> <body>.<node> [...]
      actuator vmax=<m/s> amax=<m/s2>

``node`` and ``rod`` lines attach to the most recent ``body``; ``route`` and
``actuator`` lines attach to the most recent ``cable``. Bodies may be
declared after the cables that reference them.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

from .model import (
    ACTIVE,
    CABLE_KINDS,
    ActuatorSpec,
    CableSpec,
    RodMember,
    StructureDef,
    make_body,
    validate_structure,
)

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)

LEX, SYNTAX, REFERENCE, RANGE, DUPLICATE = "lex", "syntax", "reference", "range", "duplicate"

_TOKEN_OK = re.compile(r"^[A-Za-z0-9_.=+\-]+$")
_NAME = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_\-]*$")


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    message: str
    kind: str

    def __str__(self) -> str:
        return f"{self.span.line}:{self.span.column}: {self.kind} error: {self.message}"


class ParseFailure(ValueError):
    """Raised when a file cannot be turned into a valid structure."""

    def __init__(self, errors: list[ParseError]):
        self.errors = sorted(errors, key=lambda e: (e.span.line, e.span.column))
        super().__init__("\n".join(str(e) for e in self.errors))


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    column: int

    @property
    def span(self) -> SourceSpan:
        return SourceSpan(self.line, self.column)


def tokenize(text: str) -> tuple[list[list[Token]], list[ParseError]]:
    """Split text into per-line token lists, dropping comments and blanks."""
    lines: list[list[Token]] = []
    errors: list[ParseError] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        raw = raw.rstrip("\r")
        cut = raw.find("#")
        if cut >= 0:
            raw = raw[:cut]
        toks = []
        for m in re.finditer(r"\S+", raw):
            tok = Token(m.group(), lineno, m.start() + 1)
            if not _TOKEN_OK.match(tok.text):
                errors.append(ParseError(tok.span, f"unexpected characters in {tok.text!r}", LEX))
                continue
            toks.append(tok)
        if toks:
            lines.append(toks)
    return lines, errors


def number(tok: Token, errors: list[ParseError], text: Optional[str] = None) -> Optional[float]:
    s = tok.text if text is None else text
    try:
        v = float(s)
    except ValueError:
        errors.append(ParseError(tok.span, f"expected a number, got {s!r}", LEX))
        return None
    if not math.isfinite(v):
        errors.append(ParseError(tok.span, f"number must be finite, got {s!r}", RANGE))
        return None
    return v


def key_values(
    toks: list[Token], allowed: tuple[str, ...], errors: list[ParseError]
) -> tuple[dict[str, tuple[float, Token]], list[Token]]:
    """Collect ``key=value`` numeric attributes; other tokens are returned as flags."""
    values: dict[str, tuple[float, Token]] = {}
    flags: list[Token] = []
    for tok in toks:
        if "=" not in tok.text:
            flags.append(tok)
            continue
        key, _, val = tok.text.partition("=")
        if key not in allowed:
            errors.append(ParseError(tok.span, f"unknown attribute {key!r}", SYNTAX))
            continue
        if key in values:
            errors.append(ParseError(tok.span, f"attribute {key!r} given twice", DUPLICATE))
            continue
        if key == "kind":
            values[key] = (val, tok)  # type: ignore[assignment]
            continue
        v = number(tok, errors, val)
        if v is not None:
            values[key] = (v, tok)
    return values, flags


def require(values: dict, keys: tuple[str, ...], head: Token, errors: list[ParseError]) -> bool:
    missing = [k for k in keys if k not in values]
    for k in missing:
        errors.append(ParseError(head.span, f"missing attribute {k}=", SYNTAX))
    return not missing


def check_name(tok: Token, what: str, errors: list[ParseError]) -> bool:
    if not _NAME.match(tok.text):
        errors.append(ParseError(tok.span, f"invalid {what} name {tok.text!r}", SYNTAX))
        return False
    return True


@dataclass
class _Body:
    head: Token
    name: str
    mass: Optional[float]
    fixed: bool
    nodes: list[tuple[str, tuple[float, float, float], Token]] = field(default_factory=list)
    rods: list[tuple[Token, Token, float]] = field(default_factory=list)


@dataclass
class _Cable:
    head: Token
    id: str
    kind: Optional[str]
    attrs: dict
    route: Optional[list[Token]] = None
    actuator: Optional[tuple[dict, Token]] = None


def parse_structure(text: str) -> StructureDef:
    """Parse ``.tsg`` text. Raises :class:`ParseFailure` listing every problem found."""
    lines, errors = tokenize(text)
    name: Optional[str] = None
    name_tok: Optional[Token] = None
    gravity = DEFAULT_GRAVITY
    gravity_tok: Optional[Token] = None
    bodies: list[_Body] = []
    cables: list[_Cable] = []
    body: Optional[_Body] = None
    cable: Optional[_Cable] = None

    for toks in lines:
        head, args = toks[0], toks[1:]
        kw = head.text
        if kw == "structure":
            if name_tok is not None:
                errors.append(ParseError(head.span, "structure declared twice", DUPLICATE))
            elif len(args) != 1:
                errors.append(ParseError(head.span, "expected: structure <name>", SYNTAX))
            elif check_name(args[0], "structure", errors):
                name, name_tok = args[0].text, head
        elif kw == "gravity":
            if gravity_tok is not None:
                errors.append(ParseError(head.span, "gravity declared twice", DUPLICATE))
            elif len(args) != 3:
                errors.append(ParseError(head.span, "expected: gravity <gx> <gy> <gz>", SYNTAX))
            else:
                vals = [number(t, errors) for t in args]
                gravity_tok = head
                if all(v is not None for v in vals):
                    gravity = tuple(vals)  # type: ignore[assignment]
        elif kw == "body":
            if not args:
                errors.append(ParseError(head.span, "expected: body <name> mass=<kg> [fixed]", SYNTAX))
                body = None
                continue
            values, flags = key_values(args[1:], ("mass",), errors)
            fixed = False
            for f in flags:
                if f.text == "fixed" and not fixed:
                    fixed = True
                else:
                    errors.append(ParseError(f.span, f"unexpected token {f.text!r}", SYNTAX))
            mass = None
            if require(values, ("mass",), head, errors):
                mass, mtok = values["mass"]
                if mass < 0 or (mass == 0 and not fixed):
                    errors.append(ParseError(mtok.span, "body mass must be > 0 (>= 0 if fixed)", RANGE))
            ok = check_name(args[0], "body", errors)
            if any(b.name == args[0].text for b in bodies):
                errors.append(ParseError(args[0].span, f"body {args[0].text!r} declared twice", DUPLICATE))
                ok = False
            body = _Body(head, args[0].text, mass, fixed)
            if ok:
                bodies.append(body)
        elif kw == "node":
            if body is None:
                errors.append(ParseError(head.span, "node outside of a body", SYNTAX))
                continue
            if len(args) != 4:
                errors.append(ParseError(head.span, "expected: node <id> <x> <y> <z>", SYNTAX))
                continue
            if not check_name(args[0], "node", errors):
                continue
            xyz = [number(t, errors) for t in args[1:]]
            if any(n[0] == args[0].text for n in body.nodes):
                errors.append(ParseError(args[0].span, f"node {args[0].text!r} repeated in body {body.name}", DUPLICATE))
                continue
            if all(v is not None for v in xyz):
                body.nodes.append((args[0].text, tuple(xyz), args[0]))  # type: ignore[arg-type]
        elif kw == "rod":
            if body is None:
                errors.append(ParseError(head.span, "rod outside of a body", SYNTAX))
                continue
            if len(args) != 3:
                errors.append(ParseError(head.span, "expected: rod <nodeA> <nodeB> mass=<kg>", SYNTAX))
                continue
            values, flags = key_values(args[2:], ("mass",), errors)
            if flags or not require(values, ("mass",), head, errors):
                for f in flags:
                    errors.append(ParseError(f.span, f"unexpected token {f.text!r}", SYNTAX))
                continue
            m, mtok = values["mass"]
            if m <= 0:
                errors.append(ParseError(mtok.span, "rod mass must be > 0", RANGE))
                continue
            body.rods.append((args[0], args[1], m))
        elif kw == "cable":
            if not args:
                errors.append(ParseError(head.span, "expected: cable <id> kind=... k=... b=... rest=... min=... max=...", SYNTAX))
                cable = None
                continue
            values, flags = key_values(args[1:], ("kind", "k", "b", "rest", "min", "max"), errors)
            for f in flags:
                errors.append(ParseError(f.span, f"unexpected token {f.text!r}", SYNTAX))
            kind = None
            if "kind" in values:
                kind, ktok = values.pop("kind")
                if kind not in CABLE_KINDS:
                    errors.append(ParseError(ktok.span, f"kind must be active or passive, got {kind!r}", SYNTAX))
                    kind = None
            else:
                errors.append(ParseError(head.span, "missing attribute kind=", SYNTAX))
            require(values, ("k", "b", "rest", "min", "max"), head, errors)
            ok = check_name(args[0], "cable", errors)
            if any(c.id == args[0].text for c in cables):
                errors.append(ParseError(args[0].span, f"cable {args[0].text!r} declared twice", DUPLICATE))
                ok = False
            cable = _Cable(head, args[0].text, kind, values)
            if ok:
                cables.append(cable)
        elif kw == "route":
            if cable is None:
                errors.append(ParseError(head.span, "route outside of a cable", SYNTAX))
                continue
            if cable.route is not None:
                errors.append(ParseError(head.span, f"cable {cable.id} has two routes", DUPLICATE))
                continue
            if len(args) < 2:
                errors.append(ParseError(head.span, "route needs at least two nodes", SYNTAX))
                cable.route = []
                continue
            good = []
            for t in args:
                parts = t.text.split(".")
                if len(parts) != 2 or not _NAME.match(parts[0]) or not _NAME.match(parts[1]):
                    errors.append(ParseError(t.span, f"expected <body>.<node>, got {t.text!r}", SYNTAX))
                else:
                    good.append(t)
            cable.route = good if len(good) == len(args) else []
        elif kw == "actuator":
            if cable is None:
                errors.append(ParseError(head.span, "actuator outside of a cable", SYNTAX))
                continue
            if cable.actuator is not None:
                errors.append(ParseError(head.span, f"cable {cable.id} has two actuators", DUPLICATE))
                continue
            values, flags = key_values(args, ("vmax", "amax"), errors)
            for f in flags:
                errors.append(ParseError(f.span, f"unexpected token {f.text!r}", SYNTAX))
            if require(values, ("vmax", "amax"), head, errors):
                for key in ("vmax", "amax"):
                    v, t = values[key]
                    if v <= 0:
                        errors.append(ParseError(t.span, f"{key} must be > 0", RANGE))
                cable.actuator = (values, head)
            else:
                cable.actuator = ({}, head)
        else:
            errors.append(ParseError(head.span, f"unknown statement {kw!r}", SYNTAX))

    if name_tok is None and not any(e.kind == DUPLICATE and "structure" in e.message for e in errors):
        errors.append(ParseError(SourceSpan(1, 1), "missing 'structure <name>' line", SYNTAX))

    built_bodies = []
    node_sets: dict[str, set[str]] = {}
    for b in bodies:
        node_sets[b.name] = {n[0] for n in b.nodes}
        if not b.nodes:
            errors.append(ParseError(b.head.span, f"body {b.name} has no nodes", SYNTAX))
        pos = {n[0]: n[1] for n in b.nodes}
        rods = []
        for ta, tb, m in b.rods:
            bad = False
            for t in (ta, tb):
                if t.text not in pos:
                    errors.append(ParseError(t.span, f"rod endpoint {t.text!r} is not a node of {b.name}", REFERENCE))
                    bad = True
            if bad:
                continue
            if ta.text == tb.text or math.dist(pos[ta.text], pos[tb.text]) == 0:
                errors.append(ParseError(ta.span, "rod endpoints must be distinct points", RANGE))
                continue
            rods.append(RodMember(ta.text, tb.text, m))
        if rods and b.mass is not None and b.mass > 0:
            total = sum(r.mass for r in rods)
            if abs(total - b.mass) > 1e-6 * b.mass:
                errors.append(ParseError(b.head.span, f"rod masses sum to {total:.9g}, body mass is {b.mass:.9g}", RANGE))
        if b.mass is not None and b.nodes:
            built_bodies.append(make_body(b.name, [(n[0], n[1]) for n in b.nodes], b.mass, rods, b.fixed))

    built_cables = []
    for c in cables:
        if c.route is None:
            errors.append(ParseError(c.head.span, f"cable {c.id} has no route", SYNTAX))
            continue
        route = []
        for t in c.route:
            bname, nid = t.text.split(".")
            if bname not in node_sets:
                errors.append(ParseError(t.span, f"unknown body {bname!r}", REFERENCE))
            elif nid not in node_sets[bname]:
                errors.append(ParseError(t.span, f"body {bname} has no node {nid!r}", REFERENCE))
            route.append((bname, nid))
        for t, p, q in zip(c.route[1:], route, route[1:]):
            if p == q:
                errors.append(ParseError(t.span, "consecutive route entries must differ", REFERENCE))
        attrs = {k: v for k, (v, _) in c.attrs.items()}
        toks = {k: t for k, (_, t) in c.attrs.items()}
        if "k" in attrs and attrs["k"] <= 0:
            errors.append(ParseError(toks["k"].span, "k must be > 0", RANGE))
        if "b" in attrs and attrs["b"] < 0:
            errors.append(ParseError(toks["b"].span, "b must be >= 0", RANGE))
        if "min" in attrs and attrs["min"] <= 0:
            errors.append(ParseError(toks["min"].span, "min must be > 0", RANGE))
        if all(k in attrs for k in ("min", "rest", "max")):
            if attrs["rest"] < attrs["min"]:
                errors.append(ParseError(toks["rest"].span, "rest must be >= min", RANGE))
            if attrs["rest"] > attrs["max"]:
                errors.append(ParseError(toks["rest"].span, "rest must be <= max", RANGE))
        actuator = None
        if c.kind == ACTIVE:
            if c.actuator is None:
                errors.append(ParseError(c.head.span, f"active cable {c.id} needs an actuator line", SYNTAX))
            elif c.actuator[0]:
                actuator = ActuatorSpec(c.actuator[0]["vmax"][0], c.actuator[0]["amax"][0])
        elif c.kind is not None and c.actuator is not None:
            errors.append(ParseError(c.actuator[1].span, f"passive cable {c.id} must not have an actuator", SYNTAX))
        if c.kind is None or len(attrs) != 5 or not route:
            continue
        built_cables.append(CableSpec(
            id=c.id, route=tuple(route), stiffness_k=attrs["k"], damping_b=attrs["b"],
            rest_length=attrs["rest"], min_length=attrs["min"], max_length=attrs["max"],
            kind=c.kind, actuator=actuator,
        ))

    if gravity_tok is not None or name_tok is not None:
        if not any(b.fixed for b in bodies) and any(g != 0 for g in gravity):
            where = gravity_tok or name_tok
            errors.append(ParseError(where.span, "structure needs a fixed body unless gravity is zero", RANGE))

    if errors:
        raise ParseFailure(errors)
    s = StructureDef(name=name, bodies=tuple(built_bodies), cables=tuple(built_cables), gravity=gravity)
    leftover = validate_structure(s)
    if leftover:
        heads = {f"body {b.name}": b.head.span for b in bodies}
        heads.update({f"cable {c.id}": c.head.span for c in cables})

        def where(v) -> SourceSpan:
            # violations name their element first ("body x node y", "cable z")
            words = v.element.split()
            return heads.get(" ".join(words[:2]), name_tok.span if name_tok else SourceSpan(1, 1))

        raise ParseFailure([ParseError(where(v), str(v), RANGE) for v in leftover])
    return s


def fmt(v: float) -> str:
    """Render a real with 9 significant digits."""
    return format(float(v), ".9g")


def serialize_structure(s: StructureDef) -> str:
    problems = validate_structure(s)
    if problems:
        raise ValueError("cannot serialize invalid structure:\n" + "\n".join(map(str, problems)))
    names = [s.name] + [b.name for b in s.bodies] + [c.id for c in s.cables]
    names += [n.id for b in s.bodies for n in b.nodes]
    for n in names:
        if not _NAME.match(n):
            raise ValueError(f"name {n!r} cannot be written to a structure file")

    out = [f"structure {s.name}", "gravity " + " ".join(fmt(g) for g in s.gravity)]
    for b in s.bodies:
        out.append(f"body {b.name} mass={fmt(b.mass)}" + (" fixed" if b.fixed else ""))
        for n in b.nodes:
            out.append(f"  node {n.id} " + " ".join(fmt(v) for v in n.local_position))
        for r in b.rods:
            out.append(f"  rod {r.a} {r.b} mass={fmt(r.mass)}")
    for c in s.cables:
        out.append(
            f"cable {c.id} kind={c.kind} k={fmt(c.stiffness_k)} b={fmt(c.damping_b)} "
            f"rest={fmt(c.rest_length)} min={fmt(c.min_length)} max={fmt(c.max_length)}"
        )
        out.append("  route " + " ".join(f"{bn}.{nid}" for bn, nid in c.route))
        if c.actuator is not None:
            out.append(f"  actuator vmax={fmt(c.actuator.target_velocity)} amax={fmt(c.actuator.max_accel)}")
    return "\n".join(out) + "\n"


def load_structure(path) -> StructureDef:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_structure(fh.read())


def save_structure(s: StructureDef, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_structure(s))

"""Symbolic terms: the value language shared by rules, facts and reports.

A term is one of five immutable variants (``Atom``, ``Num``, ``App``, ``Ann``,
``Bin``). Identity is structural and every term has exactly one canonical
text rendering, which doubles as the total order used everywhere for
deterministic iteration.

Variables are not a separate variant: inside rules, an atom whose name is a
single uppercase ASCII letter is a variable (``O`` and ``P`` excepted, they
are the necessity/permission heads). Outside rules it is an ordinary
constant.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Union

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
RESERVED_WORDS = frozenset({"AND", "OR"})
# Single-letter modality heads; never variables.
RESERVED_LETTERS = frozenset({"O", "P"})

Binding = Mapping[str, "Term"]
Position = tuple[int, ...]


class Op(enum.Enum):
    """Binary operators, with their surface spelling as value."""

    And = "AND"
    Or = "OR"
    Implies = "=>"
    Seq = ">>"
    Assoc = "<>"
    IsA = "Is-A"
    IsIn = "Is-In"
    IsPartOf = "Is-Part-Of"
    IsInstanceOf = "Is-Instance-Of"
    Eq = "="
    Lt = "<"
    Gt = ">"
    Le = "<="
    Ge = ">="
    Add = "+"
    Sub = "-"
    Mul = "*"
    Div = "/"

    @property
    def symbol(self) -> str:
        return self.value


LEFT_ASSOC = frozenset({Op.And, Op.Or, Op.Seq, Op.Add, Op.Sub, Op.Mul, Op.Div})
COMPARISONS = frozenset({Op.Eq, Op.Lt, Op.Gt, Op.Le, Op.Ge})
ARITHMETIC = frozenset({Op.Add, Op.Sub, Op.Mul, Op.Div})
RELATIONS = frozenset({Op.Assoc, Op.IsA, Op.IsIn, Op.IsPartOf, Op.IsInstanceOf}) | COMPARISONS


class cached_property:
    """Compute once, then store on the instance (shadowing this descriptor).

    Lighter than :class:`functools.cached_property`, which takes a lock on
    every first access before Python 3.12.
    """

    def __init__(self, fn):
        self.fn = fn
        self.name = fn.__name__
        self.__doc__ = fn.__doc__

    def __get__(self, obj, cls=None):
        if obj is None:
            return self
        value = obj.__dict__[self.name] = self.fn(obj)
        return value


class _TermBase:
    __slots__ = ()

    def __str__(self) -> str:
        return self.text  # type: ignore[attr-defined]

    def __lt__(self, other: "Term") -> bool:
        return self.text < other.text  # type: ignore[attr-defined]

    # Terms are immutable, so structural measures are computed once.
    @cached_property
    def _depth(self) -> int:
        return 1 + max((k._depth for k in children(self)), default=0)  # type: ignore[arg-type]

    @cached_property
    def _canonical(self) -> "Term":
        return _canonicalize(self)  # type: ignore[arg-type]


@dataclass(frozen=True, eq=True)
class Atom(_TermBase):
    name: str

    def __post_init__(self) -> None:
        if not IDENT_RE.match(self.name) or self.name in RESERVED_WORDS:
            raise ValueError(f"invalid atom name {self.name!r}")

    @cached_property
    def text(self) -> str:
        return self.name

    def __repr__(self) -> str:
        return f"Atom({self.name!r})"


@dataclass(frozen=True, eq=True)
class Num(_TermBase):
    value: Fraction

    def __post_init__(self) -> None:
        v = self.value
        if isinstance(v, float):
            raise TypeError("Num requires an exact value, not float")
        if not isinstance(v, Fraction):
            object.__setattr__(self, "value", Fraction(v))

    @cached_property
    def text(self) -> str:
        return format_number(self.value)

    def __repr__(self) -> str:
        return f"Num({self.text})"


@dataclass(frozen=True, eq=True)
class App(_TermBase):
    head: "Term"
    args: tuple["Term", ...]

    def __post_init__(self) -> None:
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))
        if not self.args:
            raise ValueError("App needs at least one argument")
        if not isinstance(self.head, (Atom, App)):
            raise ValueError("App head must be an atom or an application")

    @cached_property
    def text(self) -> str:
        return f"{self.head.text} ( {' , '.join(a.text for a in self.args)} )"

    def __repr__(self) -> str:
        return f"App({self.text})"


@dataclass(frozen=True, eq=True)
class Ann(_TermBase):
    annotation: "Term"
    body: "Term"

    @cached_property
    def text(self) -> str:
        body = self.body.text
        if isinstance(self.body, Bin) or (isinstance(self.body, Num) and self.body.value < 0):
            body = f"( {body} )"
        return f"( {self.annotation.text} ) {body}"

    def __repr__(self) -> str:
        return f"Ann({self.text})"


@dataclass(frozen=True, eq=True)
class Bin(_TermBase):
    op: Op
    left: "Term"
    right: "Term"

    @cached_property
    def text(self) -> str:
        left = self.left.text
        if isinstance(self.left, Bin) and not (self.left.op is self.op and self.op in LEFT_ASSOC):
            left = f"( {left} )"
        right = self.right.text
        if isinstance(self.right, Bin):
            right = f"( {right} )"
        return f"{left} {self.op.symbol} {right}"

    def __repr__(self) -> str:
        return f"Bin({self.text})"


Term = Union[Atom, Num, App, Ann, Bin]


def _text_hash(self) -> int:
    return hash(self.text)


# The rendering is cached and unique per term, so hashing it avoids the
# recursive field-tuple hash the dataclass would generate.
for _cls in (Atom, Num, App, Ann, Bin):
    _cls.__hash__ = _text_hash


def format_number(value: Fraction) -> str:
    """Render an exact rational: integers plainly, finite decimals in decimal
    notation, anything else as ``n/d`` (a single number token)."""
    if value.denominator == 1:
        return str(value.numerator)
    d = value.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{value.numerator}/{value.denominator}"
    places = max(twos, fives)
    scaled = abs(value.numerator) * (10**places) // value.denominator
    sign = "-" if value < 0 else ""
    digits = str(scaled).rjust(places + 1, "0")
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


def atom(name: str) -> Atom:
    return Atom(name)


def num(value: int | str | Fraction) -> Num:
    return Num(Fraction(value))


def app(head: str | Term, *args: Term) -> App:
    return App(Atom(head) if isinstance(head, str) else head, tuple(args))


def is_var(t: Term) -> bool:
    """True for rule variables: atoms named by one uppercase ASCII letter,
    other than the modality heads ``O`` and ``P``."""
    return (
        isinstance(t, Atom)
        and len(t.name) == 1
        and "A" <= t.name <= "Z"
        and t.name not in RESERVED_LETTERS
    )


def children(t: Term) -> tuple[Term, ...]:
    """Immediate subterms, indexed the way positions address them.

    Position component 0 of an ``App`` is the head and 1.. are the arguments,
    so ``.1`` is the first argument.
    """
    if isinstance(t, App):
        return (t.head, *t.args)
    if isinstance(t, Ann):
        return (t.annotation, t.body)
    if isinstance(t, Bin):
        return (t.left, t.right)
    return ()


def rebuild(t: Term, kids: tuple[Term, ...]) -> Term:
    if isinstance(t, App):
        return App(kids[0], tuple(kids[1:]))
    if isinstance(t, Ann):
        return Ann(kids[0], kids[1])
    if isinstance(t, Bin):
        return Bin(t.op, kids[0], kids[1])
    return t


def variables(t: Term) -> frozenset[str]:
    if is_var(t):
        return frozenset({t.name})  # type: ignore[union-attr]
    out: set[str] = set()
    for k in children(t):
        out |= variables(k)
    return frozenset(out)


def is_ground(t: Term) -> bool:
    return not variables(t)


def depth(t: Term) -> int:
    return t._depth


def node_count(t: Term) -> int:
    return 1 + sum(node_count(k) for k in children(t))


def _chain(t: Term, op: Op) -> list[Term]:
    if isinstance(t, Bin) and t.op is op:
        return _chain(t.left, op) + _chain(t.right, op)
    return [t]


def canonicalize(t: Term) -> Term:
    """Normal form: ``And``/``Or`` chains re-associated to the left.

    Numbers are already in lowest terms by construction (``Fraction``).
    Idempotent.
    """
    return t._canonical


def _canonicalize(t: Term) -> Term:
    if isinstance(t, Bin) and t.op in (Op.And, Op.Or):
        parts = [canonicalize(p) for p in _chain(t, t.op)]
        out = parts[0]
        for p in parts[1:]:
            out = Bin(t.op, out, p)
        return out
    kids = children(t)
    if not kids:
        return t
    new = tuple(canonicalize(k) for k in kids)
    return t if new == kids else rebuild(t, new)


def substitute(t: Term, binding: Binding) -> Term:
    """Replace bound variables by their images. Unbound variables are left in
    place; use :func:`is_ground` on the result to detect partial substitution."""
    if is_var(t):
        return binding.get(t.name, t)  # type: ignore[union-attr]
    kids = children(t)
    if not kids:
        return t
    new = tuple(substitute(k, binding) for k in kids)
    return t if new == kids else rebuild(t, new)


def fold_arithmetic(t: Term) -> Term:
    """Evaluate arithmetic nodes whose operands are numbers, bottom-up.

    Raises ZeroDivisionError on a literal division by zero.
    """
    kids = children(t)
    if not kids:
        return t
    new = tuple(fold_arithmetic(k) for k in kids)
    if isinstance(t, Bin) and t.op in ARITHMETIC:
        left, right = new
        if isinstance(left, Num) and isinstance(right, Num):
            return Num(apply_arithmetic(t.op, left.value, right.value))
    return t if new == kids else rebuild(t, new)


def apply_arithmetic(op: Op, a: Fraction, b: Fraction) -> Fraction:
    if op is Op.Add:
        return a + b
    if op is Op.Sub:
        return a - b
    if op is Op.Mul:
        return a * b
    if op is Op.Div:
        if b == 0:
            raise ZeroDivisionError("division by zero")
        return a / b
    raise ValueError(f"{op} is not arithmetic")


def iter_positions(t: Term, prefix: Position = ()) -> Iterator[tuple[Position, Term]]:
    """Pre-order walk yielding ``(position, subterm)``, root first."""
    yield prefix, t
    for i, k in enumerate(children(t)):
        yield from iter_positions(k, prefix + (i,))


def subterm_at(t: Term, pos: Position) -> Term:
    for i in pos:
        t = children(t)[i]
    return t


def replace_at(t: Term, pos: Position, new: Term) -> Term:
    if not pos:
        return new
    kids = list(children(t))
    kids[pos[0]] = replace_at(kids[pos[0]], pos[1:], new)
    return rebuild(t, tuple(kids))


def subterms(t: Term) -> tuple[Term, ...]:
    """``t`` and all of its proper subterms, deduplicated, in canonical order."""
    seen = {s for _, s in iter_positions(t)}
    return tuple(sorted(seen, key=sort_key))


def sort_key(t: Term) -> str:
    return t.text


def compare(a: Term, b: Term) -> int:
    """Total order on terms: lexicographic on the canonical rendering."""
    ka, kb = a.text, b.text
    return (ka > kb) - (ka < kb)


def format_position(pos: Position) -> str:
    return "." + ".".join(str(i) for i in pos) if pos else "."

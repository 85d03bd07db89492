"""Saturation engine.

Runs a program to fixpoint over a monotone working memory. Each round applies,
in order: standard rules (top level), rewrite rules (at every position),
built-in derivation-tree counting, and part-whole subsumption. Everything a
round derives is committed together at the end of the round, so every
justification cites facts from strictly earlier rounds.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .parser import Program, Rule
from .terms import (
    ARITHMETIC,
    COMPARISONS,
    Ann,
    App,
    Atom,
    Bin,
    Num,
    Op,
    Position,
    Term,
    canonicalize,
    children,
    depth,
    fold_arithmetic,
    format_position,
    is_ground,
    is_var,
    iter_positions,
    rebuild,
    replace_at,
    substitute,
)

log = logging.getLogger(__name__)

COUNT_RULE = "builtin.count"
SUS_RULE = "builtin.sus"
# Conclusion patterns of the built-ins, so their justifications replay like rules.
BUILTIN_CONCLUSIONS: dict[str, Term] = {
    COUNT_RULE: Ann(Atom("I"), Atom("A")),
    SUS_RULE: Bin(Op.IsA, Atom("A"), Atom("B")),
}
BEGINNING = Atom("Beginning")
PRECEDES = Atom("Precedes")


@dataclass(frozen=True)
class Limits:
    max_rounds: int = 100
    max_facts: int = 10000
    max_term_depth: int = 12
    max_multiplicity: int = 64

    def __post_init__(self) -> None:
        for name in ("max_rounds", "max_facts", "max_term_depth", "max_multiplicity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_pairs(cls, pairs: Iterable[str]) -> "Limits":
        """Build from ``key=value`` strings, e.g. ``max_rounds=20``."""
        values = {}
        for pair in pairs:
            key, sep, val = pair.partition("=")
            key = key.strip()
            if not sep or key not in cls.__dataclass_fields__:
                raise ValueError(f"bad limit {pair!r}")
            values[key] = int(val)
        return cls(**values)


@dataclass(frozen=True)
class Justification:
    rule_id: str
    binding: tuple[tuple[str, Term], ...]
    premise_terms: tuple[Term, ...]
    rewrite_position: Optional[Position] = None
    # is-a facts consulted to lift a constant; they count as premises
    support: tuple[Term, ...] = ()

    @property
    def binding_map(self) -> dict[str, Term]:
        return dict(self.binding)

    @property
    def sources(self) -> tuple[Term, ...]:
        """Every fact this derivation step consumed."""
        return self.premise_terms + self.support

    def sort_key(self) -> tuple:
        return (
            self.rule_id,
            tuple(t.text for t in self.premise_terms),
            tuple((k, v.text) for k, v in self.binding),
            self.rewrite_position or (),
            tuple(t.text for t in self.support),
        )

    def describe(self) -> str:
        bind = ", ".join(f"{k}={v.text}" for k, v in self.binding)
        prem = " ; ".join(t.text for t in self.sources)
        pos = f" at {format_position(self.rewrite_position)}" if self.rewrite_position is not None else ""
        return f"{self.rule_id} {{{bind}}} [{prem}]{pos}"


def freeze_binding(b: Mapping[str, Term]) -> tuple[tuple[str, Term], ...]:
    return tuple(sorted(b.items()))


@dataclass
class Fact:
    term: Term
    first_round: int
    justifications: dict[Justification, int] = field(default_factory=dict)  # -> round recorded

    @property
    def initial(self) -> bool:
        return self.first_round == 0

    def ordered_justifications(self) -> list[Justification]:
        return sorted(self.justifications, key=lambda j: (self.justifications[j], j.sort_key()))

    def earliest(self) -> Optional[Justification]:
        js = self.ordered_justifications()
        return js[0] if js else None


@dataclass(frozen=True)
class Diagnostic:
    round: int
    rule: str
    event: str
    detail: str

    def __str__(self) -> str:
        return f"ROUND {self.round} RULE {self.rule} EVENT {self.event} DETAIL {self.detail}"


class IsaIndex:
    """Reflexive-transitive closure over ``x Is-A y`` facts.

    ``path(sub, sup)`` returns the is-a facts of a shortest chain (``()`` when
    ``sub == sup``) or ``None`` when ``sub`` is not subsumed by ``sup``.
    """

    def __init__(self, isa_facts: Iterable[Term] = ()):
        edges: dict[Term, list[tuple[Term, Term]]] = defaultdict(list)
        facts = sorted({f for f in isa_facts if isinstance(f, Bin) and f.op is Op.IsA}, key=lambda t: t.text)
        for f in facts:
            edges[f.left].append((f.right, f))
        self.facts = tuple(facts)
        self._closure: dict[Term, dict[Term, tuple[Term, ...]]] = {}
        for start in sorted(edges, key=lambda t: t.text):
            reach: dict[Term, tuple[Term, ...]] = {}
            frontier = [(start, ())]
            while frontier:
                nxt = []
                for node, path in frontier:
                    for sup, f in edges.get(node, ()):
                        if sup != start and sup not in reach:
                            reach[sup] = path + (f,)
                            nxt.append((sup, path + (f,)))
                frontier = nxt
            self._closure[start] = reach
        # atoms some other atom is subsumed by; only these need lifting
        self.lifted = frozenset(sup for reach in self._closure.values() for sup in reach)
        # atoms that can take part in lifting, on either side
        self.universe = frozenset(a for a in (*self._closure, *self.lifted) if isinstance(a, Atom))

    @property
    def signature(self) -> frozenset:
        """What rule matching can observe: lifting only relates atoms, so
        is-a facts between compound terms do not change it."""
        return frozenset(
            (sub, sup, path)
            for sub, reach in self._closure.items() if isinstance(sub, Atom)
            for sup, path in reach.items() if isinstance(sup, Atom)
        )

    def path(self, sub: Term, sup: Term) -> Optional[tuple[Term, ...]]:
        if sub == sup:
            return ()
        return self._closure.get(sub, {}).get(sup)

    def subtypes(self, sup: Term) -> set[Term]:
        return {sub for sub, reach in self._closure.items() if sup in reach}

    def supertypes(self, sub: Term) -> set[Term]:
        return {sub, *self._closure.get(sub, {})}


class WorkingMemory:
    def __init__(self) -> None:
        self.facts: dict[Term, Fact] = {}
        self.round = 0
        self.isa_index = IsaIndex()

    def __contains__(self, t: Term) -> bool:
        return t in self.facts

    def __len__(self) -> int:
        return len(self.facts)

    def __getitem__(self, t: Term) -> Fact:
        return self.facts[t]

    def __iter__(self) -> Iterator[Fact]:
        return iter(self.sorted_facts())

    def sorted_facts(self) -> list[Fact]:
        return [self.facts[t] for t in sorted(self.facts, key=lambda t: t.text)]

    def terms(self) -> list[Term]:
        return sorted(self.facts, key=lambda t: t.text)

    def add_initial(self, t: Term) -> None:
        if t not in self.facts:
            self.facts[t] = Fact(t, 0)

    def refresh_isa(self) -> IsaIndex:
        self.isa_index = IsaIndex(t for t in self.facts if isinstance(t, Bin) and t.op is Op.IsA)
        return self.isa_index


@dataclass
class SaturationResult:
    memory: WorkingMemory
    status: str  # "Fixpoint" or "BoundHit(<limit>)"
    rounds_used: int
    diagnostics: list[Diagnostic]
    program: Program
    limits: Limits
    extra_facts: list[Term] = field(default_factory=list)

    @property
    def fixpoint(self) -> bool:
        return self.status == "Fixpoint"

    def fact_lines(self) -> list[str]:
        return [t.text for t in self.memory.terms()]


# ------------------------------------------------------------------- matching


def _match(pattern: Term, term: Term, binding: dict[str, Term], isa: Optional[IsaIndex], support: list[Term]) -> bool:
    """Extend ``binding``/``support`` in place; False on mismatch (caller
    discards the partial state)."""
    if is_var(pattern):
        name = pattern.name  # type: ignore[union-attr]
        bound = binding.get(name)
        if bound is None:
            binding[name] = term
            return True
        return bound == term
    if isinstance(pattern, Atom):
        if pattern == term:
            return True
        if isa is not None and isinstance(term, Atom):
            path = isa.path(term, pattern)
            if path is not None:
                support.extend(path)
                return True
        return False
    if isinstance(pattern, Num):
        return pattern == term
    if type(pattern) is not type(term):
        return False
    if isinstance(pattern, App):
        if len(pattern.args) != len(term.args):  # type: ignore[union-attr]
            return False
    elif isinstance(pattern, Bin):
        if pattern.op is not term.op:  # type: ignore[union-attr]
            return False
    return all(_match(p, t, binding, isa, support) for p, t in zip(children(pattern), children(term)))


def match_with_support(
    pattern: Term, term: Term, isa: Optional[IsaIndex] = None, binding: Optional[Mapping[str, Term]] = None
) -> Optional[tuple[dict[str, Term], tuple[Term, ...]]]:
    b = dict(binding or {})
    support: list[Term] = []
    if _match(pattern, term, b, isa, support):
        return b, tuple(dict.fromkeys(support))
    return None


def match_pattern(pattern: Term, fact_term: Term, isa: Optional[IsaIndex] = None) -> list[dict[str, Term]]:
    """All bindings under which ``pattern`` matches the ground ``fact_term``.

    Constant atoms in the pattern also match any atom they subsume through
    ``isa``. There is at most one binding, since variables match structurally.
    """
    found = match_with_support(pattern, fact_term, isa)
    return [found[0]] if found else []


# --------------------------------------------------------------------- guards


def _guard_outcome(guard: Term, binding: Mapping[str, Term]) -> tuple[bool, Optional[str]]:
    t = substitute(guard, binding)
    try:
        t = fold_arithmetic(t)
    except ZeroDivisionError:
        return False, "division-by-zero"
    if not (isinstance(t, Bin) and t.op in COMPARISONS):
        return False, "skipped-guard"
    if not (isinstance(t.left, Num) and isinstance(t.right, Num)):
        return False, "skipped-guard"
    a, b = t.left.value, t.right.value
    result = {
        Op.Eq: a == b,
        Op.Lt: a < b,
        Op.Gt: a > b,
        Op.Le: a <= b,
        Op.Ge: a >= b,
    }[t.op]
    return result, None


def eval_guard(guard: Term, binding: Mapping[str, Term], diagnostics: Optional[list[str]] = None) -> bool:
    """Exact rational evaluation of a comparison guard.

    A guard that is not numeric after substitution, or divides by zero, is
    false; the reason is appended to ``diagnostics`` when given.
    """
    ok, problem = _guard_outcome(guard, binding)
    if problem and diagnostics is not None:
        diagnostics.append(f"{problem} {substitute(guard, binding).text}")
    return ok


# ------------------------------------------------------------------ evaluator


def is_counting_definition(rule: Rule) -> bool:
    """Rules like ``A => (1)A`` and ``A AND (I)A => (I+1)A`` that define
    counting; the built-in aggregation replaces them."""
    c = rule.conclusion
    if rule.group != "counting" or not isinstance(c, Ann) or not is_var(c.body):
        return False
    ann = c.annotation
    return isinstance(ann, Num) or is_var(ann) or (isinstance(ann, Bin) and ann.op in ARITHMETIC)


def reflect_rule(rule: Rule) -> Term:
    """The implication fact standing for a ground rule."""
    lhs_items = (*rule.premises, *rule.guards)
    lhs = lhs_items[0]
    for t in lhs_items[1:]:
        lhs = Bin(Op.And, lhs, t)
    return canonicalize(Bin(Op.Implies, lhs, rule.conclusion))


def _seq_operands(t: Term) -> list[Term]:
    if isinstance(t, Bin) and t.op is Op.Seq:
        return _seq_operands(t.left) + _seq_operands(t.right)
    return [t]


def expand_initial(t: Term) -> list[Term]:
    """Round-0 structural expansion of one initial fact (the fact itself
    first): ``>>`` chains assert each step plus ``Precedes`` pairs, and
    ``t Is-In Beginning`` also asserts ``t``."""
    out = [t]
    if isinstance(t, Bin) and t.op is Op.Seq:
        steps = _seq_operands(t)
        out.extend(steps)
        out.extend(App(PRECEDES, (a, b)) for a, b in zip(steps, steps[1:]))
    elif isinstance(t, Bin) and t.op is Op.IsIn and t.right == BEGINNING:
        out.append(t.left)
    return out


class _BudgetExceeded(Exception):
    pass


@dataclass
class _Partial:
    binding: dict[str, Term]
    premises: list[Term]
    support: list[Term]


def _mentions(t: Term, atoms: frozenset) -> bool:
    if not atoms:
        return False
    if isinstance(t, Atom):
        return t in atoms
    return any(_mentions(c, atoms) for c in children(t))


_WILDCARD = Atom("_")


def _shape_key(t: Term) -> tuple:
    if isinstance(t, App):
        return ("app", len(t.args))
    if isinstance(t, Bin):
        return ("bin", t.op)
    return (type(t).__name__,)


class _Evaluator:
    """State for one round: the committed memory, the delta from the
    previous round, and the pending derivations of this round."""

    def __init__(self, wm: WorkingMemory, limits: Limits, round_no: int, delta: Optional[set[Term]]):
        self.wm = wm
        self.isa = wm.isa_index
        self.limits = limits
        self.round = round_no
        self.delta = delta  # None: every committed fact counts as new
        self.pending: dict[Term, dict[Justification, None]] = {}
        self.diagnostics: list[Diagnostic] = []
        self.depth_hit = False
        self.budget = limits.max_facts - len(wm)
        self._new_terms = 0
        self._facts = wm.terms()
        self._by_shape: dict[tuple, list[Term]] = defaultdict(list)
        for t in self._facts:
            self._by_shape[_shape_key(t)].append(t)
        self._app_subterms: Optional[list[tuple[Term, Term]]] = None
        # (shape, child index) -> child term -> facts, built on first use
        self._by_child: dict[tuple, dict[Term, list[Term]]] = {}

    # bookkeeping
    def is_new(self, t: Term) -> bool:
        return self.delta is None or t in self.delta

    def diag(self, rule: str, event: str, detail: str) -> None:
        self.diagnostics.append(Diagnostic(self.round, rule, event, detail))

    def emit(self, term: Term, just: Justification) -> None:
        if term not in self.wm.facts and term not in self.pending:
            self._new_terms += 1
            if self._new_terms > self.budget:
                raise _BudgetExceeded
        fact = self.wm.facts.get(term)
        if fact is not None and just in fact.justifications:
            return
        self.pending.setdefault(term, {})[just] = None

    def instantiate(self, rule_id: str, conclusion: Term, binding: Mapping[str, Term]) -> Optional[Term]:
        t = substitute(conclusion, binding)
        try:
            t = fold_arithmetic(t)
        except ZeroDivisionError:
            self.diag(rule_id, "division-by-zero", t.text)
            return None
        t = canonicalize(t)
        if depth(t) > self.limits.max_term_depth:
            self.depth_hit = True
            self.diag(rule_id, "depth-suppressed", f"depth {depth(t)} > {self.limits.max_term_depth}")
            return None
        return t

    # candidate enumeration
    def app_subterms(self) -> list[tuple[Term, Term]]:
        if self._app_subterms is None:
            pairs = []
            for host in self._facts:
                seen = set()
                for _, s in iter_positions(host):
                    if isinstance(s, App) and s not in seen:
                        seen.add(s)
                        pairs.append((host, s))
            self._app_subterms = pairs
        return self._app_subterms

    def candidates(self, pattern: Term) -> list[Term]:
        if is_var(pattern):
            return self._facts
        shape = _shape_key(pattern)
        best = self._by_shape.get(shape, [])
        for i, k in enumerate(children(pattern)):
            if not best:
                break
            if not is_ground(k):
                continue
            bucket = self._child_index(shape, i).get(self._erase(k), [])
            if len(bucket) < len(best):
                best = bucket
        return best

    def _erase(self, t: Term) -> Term:
        """``t`` with every atom that lifting could relate replaced by ``_``.
        Matching terms always erase to the same key."""
        universe = self.isa.universe
        if not universe or not _mentions(t, universe):
            return t
        if isinstance(t, Atom):
            return _WILDCARD
        return rebuild(t, tuple(self._erase(k) for k in children(t)))

    def _child_index(self, shape: tuple, i: int) -> dict[Term, list[Term]]:
        index = self._by_child.get((shape, i))
        if index is None:
            index = self._by_child[(shape, i)] = defaultdict(list)
            for t in self._by_shape.get(shape, []):
                index[self._erase(children(t)[i])].append(t)
        return index

    def premise_matches(self, pattern: Term, state: _Partial) -> Iterator[tuple[_Partial, bool]]:
        """Ways to satisfy one premise given a partial state, each flagged with
        whether it consumed a fact from the delta."""
        isa = self.isa
        if isinstance(pattern, Bin) and pattern.op is Op.Assoc:
            if isinstance(pattern.left, App):
                # `A(B) <> B`: the application occurs somewhere, and its head is
                # associated with the right operand.
                assoc_pattern = Bin(Op.Assoc, pattern.left.head, pattern.right)
                for host, sub in self.app_subterms():
                    found = match_with_support(pattern.left, sub, isa, state.binding)
                    if found is None:
                        continue
                    for ext, used, new in self._assoc_facts(assoc_pattern, found[0]):
                        yield _Partial(ext[0], state.premises + [host, used], state.support + list(found[1]) + list(ext[1])), (
                            new or self.is_new(host)
                        )
                return
            for ext, used, new in self._assoc_facts(pattern, state.binding):
                yield _Partial(ext[0], state.premises + [used], state.support + list(ext[1])), new
            return
        if isinstance(pattern, App) and is_var(pattern.head):
            for host, sub in self.app_subterms():
                found = match_with_support(pattern, sub, isa, state.binding)
                if found is not None:
                    yield _Partial(found[0], state.premises + [host], state.support + list(found[1])), self.is_new(host)
            return
        inst = pattern
        if state.binding:
            inst = substitute(pattern, state.binding)
            if is_ground(inst) and not _mentions(inst, isa.lifted):
                # fully bound and no is-a lifting possible: a lookup suffices
                if inst in self.wm.facts:
                    yield _Partial(state.binding, state.premises + [inst], state.support), self.is_new(inst)
                return
        for fact in self.candidates(inst):
            found = match_with_support(pattern, fact, isa, state.binding)
            if found is not None:
                yield _Partial(found[0], state.premises + [fact], state.support + list(found[1])), self.is_new(fact)

    def _assoc_facts(self, pattern: Bin, binding: Mapping[str, Term]):
        flipped = Bin(Op.Assoc, pattern.right, pattern.left)
        seen = set()
        for fact in self._by_shape.get(("bin", Op.Assoc), []):
            for pat in (pattern, flipped):
                found = match_with_support(pat, fact, self.isa, binding)
                if found is not None:
                    key = (fact, freeze_binding(found[0]))
                    if key not in seen:
                        seen.add(key)
                        yield found, fact, self.is_new(fact)

    # phases
    def fire_rule(self, rule: Rule) -> None:
        n = len(rule.premises)
        pivots = [None] if self.delta is None else range(n)
        for pivot in pivots:
            self._join(rule, 0, _Partial({}, [], []), pivot)

    def _join(self, rule: Rule, i: int, state: _Partial, pivot: Optional[int]) -> None:
        if i == len(rule.premises):
            self._conclude(rule, state)
            return
        for nxt, new in self.premise_matches(rule.premises[i], state):
            if pivot is not None:
                if i < pivot and new:
                    continue
                if i == pivot and not new:
                    continue
            self._join(rule, i + 1, nxt, pivot)

    def _conclude(self, rule: Rule, state: _Partial) -> None:
        for g in rule.guards:
            ok, problem = _guard_outcome(g, state.binding)
            if problem:
                self.diag(rule.id, problem, substitute(g, state.binding).text)
            if not ok:
                return
        term = self.instantiate(rule.id, rule.conclusion, state.binding)
        if term is None:
            return
        just = Justification(
            rule.id,
            freeze_binding(state.binding),
            tuple(state.premises),
            None,
            tuple(dict.fromkeys(t for t in state.support if t not in state.premises)),
        )
        self.emit(term, just)

    def rewrite_pass(self, rules: Sequence[Rule]) -> None:
        hosts = [t for t in self._facts if self.is_new(t)]
        for rule in rules:
            pattern = rule.premises[0]
            # cheap filters before full matching
            shape = None if is_var(pattern) else _shape_key(pattern)
            atoms = None
            replacements: dict = {}
            if shape is not None and isinstance(pattern, Atom):
                atoms = {pattern} | {a for a in self.isa.subtypes(pattern)}
            for host in hosts:
                for pos, sub in iter_positions(host):
                    if atoms is not None:
                        if sub not in atoms:
                            continue
                    elif shape is not None and _shape_key(sub) != shape:
                        continue
                    found = match_with_support(pattern, sub, self.isa)
                    if found is None:
                        continue
                    binding, support = found
                    frozen = freeze_binding(binding)
                    if frozen not in replacements:
                        replacements[frozen] = self.instantiate(rule.id, rule.conclusion, binding)
                    replacement = replacements[frozen]
                    if replacement is None:
                        continue
                    term = canonicalize(replace_at(host, pos, replacement))
                    if depth(term) > self.limits.max_term_depth:
                        self.depth_hit = True
                        self.diag(rule.id, "depth-suppressed", f"depth {depth(term)} > {self.limits.max_term_depth}")
                        continue
                    just = Justification(rule.id, frozen, (host,), pos, support)
                    self.emit(term, just)

    def count_aggregate(self) -> None:
        counts = derivation_counts(self.wm, self.limits.max_multiplicity)
        for t in self._facts:
            if is_count_fact(t):
                continue
            m = min(counts[t], self.limits.max_multiplicity)
            binding = {"A": t, "I": Num(m)}
            known = self.wm.facts.get(Ann(Num(m), t))
            if known is not None and Justification(COUNT_RULE, freeze_binding(binding), (t,)) in known.justifications:
                continue
            if m == self.limits.max_multiplicity:
                self.diag(COUNT_RULE, "multiplicity-cap", f"{t.text} capped at {m}")
            term = self.instantiate(COUNT_RULE, BUILTIN_CONCLUSIONS[COUNT_RULE], binding)
            if term is None:
                continue
            self.emit(term, Justification(COUNT_RULE, freeze_binding(binding), (t,)))

    def sus_subsume(self) -> None:
        parts: dict[Term, list[tuple[Term, Term]]] = defaultdict(list)
        for f in self._by_shape.get(("bin", Op.IsPartOf), []):
            parts[f.right].append((f.left, f))  # type: ignore[union-attr]
        wholes = sorted(parts, key=lambda t: t.text)
        for s1 in wholes:
            for s2 in wholes:
                if s1 == s2:
                    continue
                used: list[Term] = []
                support: list[Term] = []
                ok = True
                for p, pf in sorted(parts[s1], key=lambda x: x[0].text):
                    witness = None
                    for q, qf in sorted(parts[s2], key=lambda x: x[0].text):
                        path = self.isa.path(p, q)
                        if path is not None:
                            witness = (qf, path)
                            break
                    if witness is None:
                        ok = False
                        break
                    used.extend([pf, witness[0]])
                    support.extend(witness[1])
                if not ok:
                    continue
                binding = {"A": s1, "B": s2}
                term = self.instantiate(SUS_RULE, BUILTIN_CONCLUSIONS[SUS_RULE], binding)
                if term is None:
                    continue
                premises = tuple(dict.fromkeys(used))
                support_t = tuple(t for t in dict.fromkeys(support) if t not in premises)
                self.emit(term, Justification(SUS_RULE, freeze_binding(binding), premises, None, support_t))


def is_count_fact(t: Term) -> bool:
    return isinstance(t, Ann) and isinstance(t.annotation, Num)


def tree_sources(j: Justification) -> tuple[Term, ...]:
    """Facts a derivation tree descends into through ``j``. A counting step
    aggregates its subject's trees into one statement, so it is a leaf."""
    return () if j.rule_id == COUNT_RULE else j.sources


def derivation_counts(wm: WorkingMemory, cap: int) -> dict[Term, int]:
    """Number of distinct derivation trees of every fact, capped at ``cap``.

    A tree is rooted at the fact and picks, at every node, either the
    initial-fact axiom (round-0 facts only) or one recorded justification.
    Below a justification recorded in round r, the subtrees of its sources
    may only use justifications recorded before r. Indexing by round turns
    the possibly cyclic justification graph into a DAG, so counts are finite
    and each tree is one the evaluation could actually have built.
    """
    memo: dict[tuple[Term, int], int] = {}

    def count(t: Term, before: int) -> int:
        key = (t, before)
        if key in memo:
            return memo[key]
        fact = wm.facts[t]
        total = 1 if fact.initial else 0
        for j, rnd in fact.justifications.items():
            if rnd >= before:
                continue
            prod = 1
            for s in tree_sources(j):
                prod = min(cap, prod * count(s, rnd))
            total = min(cap, total + prod)
            if total >= cap:
                break
        memo[key] = total
        return total

    horizon = max((r for f in wm.facts.values() for r in f.justifications.values()), default=0) + 1
    return {t: count(t, horizon) for t in sorted(wm.facts, key=lambda x: x.text)}


# ------------------------------------------------------------------- public ops


def _single_round(wm: WorkingMemory, limits: Limits, round_no: int = 1, delta: Optional[set[Term]] = None) -> _Evaluator:
    wm.refresh_isa()
    return _Evaluator(wm, limits, round_no, delta)


def _collect(ev: _Evaluator) -> set[tuple[Term, Justification]]:
    return {(t, j) for t, js in ev.pending.items() for j in js}


def fire_rule(rule: Rule, wm: WorkingMemory, limits: Limits = Limits()) -> set[tuple[Term, Justification]]:
    """All (conclusion, justification) pairs one standard rule yields on ``wm``."""
    ev = _single_round(wm, limits)
    ev.fire_rule(rule)
    return _collect(ev)


def rewrite_pass(rules: Sequence[Rule], wm: WorkingMemory, limits: Limits = Limits()) -> set[tuple[Term, Justification]]:
    ev = _single_round(wm, limits)
    ev.rewrite_pass(rules)
    return _collect(ev)


def count_aggregate(wm: WorkingMemory, limits: Limits = Limits()) -> set[tuple[Term, Justification]]:
    ev = _single_round(wm, limits)
    ev.count_aggregate()
    return _collect(ev)


def sus_subsume(wm: WorkingMemory, limits: Limits = Limits()) -> set[tuple[Term, Justification]]:
    ev = _single_round(wm, limits)
    ev.sus_subsume()
    return _collect(ev)


def memory_from_facts(facts: Iterable[Term]) -> WorkingMemory:
    """A working memory holding ``facts`` as initial facts (no expansion)."""
    wm = WorkingMemory()
    for t in facts:
        wm.add_initial(canonicalize(t))
    wm.refresh_isa()
    return wm


def initial_memory(program: Program, extra_facts: Sequence[Term] = ()) -> tuple[WorkingMemory, list[Diagnostic]]:
    wm = WorkingMemory()
    diagnostics: list[Diagnostic] = []
    for t in [*program.initial_facts, *extra_facts]:
        for e in expand_initial(canonicalize(t)):
            wm.add_initial(e)
    for rule in program.rules:
        if program.counting and is_counting_definition(rule):
            diagnostics.append(Diagnostic(0, rule.id, "absorbed", "counting definition handled by builtin.count"))
        elif rule.is_ground:
            wm.add_initial(reflect_rule(rule))
    wm.refresh_isa()
    return wm, diagnostics


def saturate(program: Program, extra_facts: Sequence[Term] = (), limits: Limits = Limits()) -> SaturationResult:
    """Run ``program`` over its facts plus ``extra_facts`` until nothing new is
    derived or a limit trips. Deterministic."""
    wm, diagnostics = initial_memory(program, extra_facts)
    standard = [r for r in program.rules if r.kind == "standard" and not (program.counting and is_counting_definition(r))]
    rewrites = [r for r in program.rules if r.kind == "rewrite"]

    status = None
    depth_hit = False
    delta: Optional[set[Term]] = None
    last_isa = None
    round_no = 0
    while True:
        round_no += 1
        if round_no > limits.max_rounds:
            status = "BoundHit(max_rounds)"
            round_no -= 1
            break
        isa = wm.refresh_isa()
        # a changed is-a closure can make old fact combinations match
        if isa.signature != last_isa:
            delta = None
        last_isa = isa.signature
        ev = _Evaluator(wm, limits, round_no, delta)
        truncated = False
        try:
            for rule in standard:
                ev.fire_rule(rule)
            ev.rewrite_pass(rewrites)
            if program.counting:
                ev.count_aggregate()
            ev.sus_subsume()
        except _BudgetExceeded:
            truncated = True
        diagnostics.extend(ev.diagnostics)
        depth_hit = depth_hit or ev.depth_hit

        new_terms: set[Term] = set()
        new_justs = 0
        for term in sorted(ev.pending, key=lambda t: t.text):
            fact = wm.facts.get(term)
            if fact is None:
                if len(wm) >= limits.max_facts:
                    truncated = True
                    break
                fact = wm.facts[term] = Fact(term, round_no)
                new_terms.add(term)
            for j in sorted(ev.pending[term], key=Justification.sort_key):
                if j not in fact.justifications:
                    fact.justifications[j] = round_no
                    new_justs += 1
        wm.round = round_no
        log.debug("round %d: %d new facts, %d new justifications", round_no, len(new_terms), new_justs)
        if truncated:
            diagnostics.append(Diagnostic(round_no, "-", "bound", f"max_facts {limits.max_facts}"))
            status = "BoundHit(max_facts)"
            break
        if not new_terms and not new_justs:
            break
        delta = new_terms

    wm.refresh_isa()
    if status is None:
        status = "BoundHit(max_term_depth)" if depth_hit else "Fixpoint"
    if status == "BoundHit(max_rounds)":
        diagnostics.append(Diagnostic(round_no, "-", "bound", f"max_rounds {limits.max_rounds}"))
    return SaturationResult(wm, status, round_no, diagnostics, program, limits, list(extra_facts))


# ---------------------------------------------------------------------- replay


def _conclusion_for(program: Program, rule_id: str) -> Optional[tuple[Term, Optional[Rule]]]:
    if rule_id in BUILTIN_CONCLUSIONS:
        return BUILTIN_CONCLUSIONS[rule_id], None
    try:
        rule = program.rule(rule_id)
    except KeyError:
        return None
    return rule.conclusion, rule


def replay_justification(program: Program, j: Justification) -> Optional[Term]:
    """Rebuild the term a justification claims to derive, or None when the
    rule is unknown."""
    found = _conclusion_for(program, j.rule_id)
    if found is None:
        return None
    conclusion, _ = found
    t = canonicalize(fold_arithmetic(substitute(conclusion, j.binding_map)))
    if j.rewrite_position is not None:
        t = canonicalize(replace_at(j.premise_terms[0], j.rewrite_position, t))
    return t


def verify_replay(result: SaturationResult) -> list[str]:
    """Soundness check over every fact and justification; returns problems."""
    problems = []
    wm = result.memory
    for fact in wm.sorted_facts():
        if not fact.initial and not fact.justifications:
            problems.append(f"{fact.term.text}: derived fact without justification")
        for j, rnd in fact.justifications.items():
            rebuilt = replay_justification(result.program, j)
            if rebuilt is None:
                problems.append(f"{fact.term.text}: unknown rule {j.rule_id}")
            elif rebuilt != fact.term:
                problems.append(f"{fact.term.text}: {j.describe()} replays to {rebuilt.text}")
            found = _conclusion_for(result.program, j.rule_id)
            rule = found[1] if found else None
            if rule is not None:
                b = j.binding_map
                for g in rule.guards:
                    if not eval_guard(g, b):
                        problems.append(f"{fact.term.text}: guard {g.text} fails under {j.describe()}")
            for src in j.sources:
                pf = wm.facts.get(src)
                if pf is None:
                    problems.append(f"{fact.term.text}: premise {src.text} missing")
                elif not (pf.initial or pf.first_round < rnd):
                    problems.append(f"{fact.term.text}: premise {src.text} not older than round {rnd}")
    return problems

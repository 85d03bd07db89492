"""Reader and writer for rule files and fact files.

Rule-file format::

    # comment
    [protocol]                     group header
    PoliceRequest => P(HelicopterMission)
    [deontic rewrite]              rules in this group rewrite inside terms
    P(P(A)) => P(A)
    r15: P(P(A)) => P(A)           optional explicit rule id
    Forbidden((Very)BudgetConsuming)   a line without an arrow is a fact

Both ``=>`` and ``=====>`` are arrows. A banner line such as
``=====Input Rules =====`` opens a group just like ``[input_rules]``.
Operator precedence, loosest first: ``=>``, ``OR``, ``AND``, ``>>``,
relations (``Is-A <> = < ...``, non-associative), ``+ -``, ``* /``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .terms import (
    COMPARISONS,
    Ann,
    App,
    Atom,
    Bin,
    Num,
    Op,
    Term,
    canonicalize,
    variables,
)


class RuleSyntaxError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0, token: str = "", source: str = "<string>"):
        self.message = message
        self.line = line
        self.column = column
        self.token = token
        self.source = source
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.source}:{self.line}:{self.column}"
        tok = f" (at {self.token!r})" if self.token else ""
        return f"{where}: {self.message}{tok}"


@dataclass(frozen=True)
class Rule:
    id: str
    group: str
    kind: str  # "standard" | "rewrite"
    premises: tuple[Term, ...]
    guards: tuple[Term, ...]
    conclusion: Term

    @property
    def is_ground(self) -> bool:
        return not any(variables(t) for t in (*self.premises, *self.guards, self.conclusion))


@dataclass
class Program:
    rules: list[Rule] = field(default_factory=list)
    initial_facts: list[Term] = field(default_factory=list)
    counting: bool = False
    sources: list[str] = field(default_factory=list, compare=False)
    groups: list[str] = field(default_factory=list, compare=False)

    def rule(self, rule_id: str) -> Rule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)

    def rules_in(self, group: str) -> list[Rule]:
        return [r for r in self.rules if r.group == group]


# --------------------------------------------------------------------- lexing

_TOKEN_SPEC = [
    ("NUM", r"\d+/\d+(?![\d.])|\d+(?:\.\d+)?"),
    ("ARROW", r"=+>"),
    ("REL", r"(?i:is-in-association-with|is-instance-of|is-part-of|is-in|is-a)(?![A-Za-z0-9_])"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r">>|<>|<=|>=|[<>=+\-*/]"),
    ("PUNCT", r"[(),]"),
    ("WS", r"[ \t\r\f\v]+"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{n}>{p})" for n, p in _TOKEN_SPEC))

_REL_WORDS = {
    "is-a": Op.IsA,
    "is-in": Op.IsIn,
    "is-part-of": Op.IsPartOf,
    "is-instance-of": Op.IsInstanceOf,
    "is-in-association-with": Op.Assoc,
}
_OP_SYMBOLS = {
    ">>": Op.Seq,
    "<>": Op.Assoc,
    "<=": Op.Le,
    ">=": Op.Ge,
    "<": Op.Lt,
    ">": Op.Gt,
    "=": Op.Eq,
    "+": Op.Add,
    "-": Op.Sub,
    "*": Op.Mul,
    "/": Op.Div,
}


@dataclass(frozen=True)
class Token:
    kind: str  # NUM IDENT AND OR ARROW REL OP PUNCT END
    text: str
    column: int


def tokenize(text: str, line: int = 1, source: str = "<string>", column_offset: int = 0) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RuleSyntaxError("unexpected character", line, pos + 1 + column_offset, text[pos], source)
        kind = m.lastgroup
        lexeme = m.group()
        col = pos + 1 + column_offset
        pos = m.end()
        if kind == "WS":
            continue
        if kind == "IDENT" and lexeme in ("AND", "OR"):
            kind = lexeme
        tokens.append(Token(kind, lexeme, col))
    tokens.append(Token("END", "", len(text) + 1 + column_offset))
    return tokens


# -------------------------------------------------------------------- parsing

_PRIMARY_START = ("NUM", "IDENT")


class _TermParser:
    def __init__(self, tokens: list[Token], line: int, source: str):
        self.toks = tokens
        self.i = 0
        self.line = line
        self.source = source

    # helpers
    def peek(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: Token | None = None) -> RuleSyntaxError:
        tok = tok or self.peek()
        return RuleSyntaxError(message, self.line, tok.column, tok.text, self.source)

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind.lower()
            got = "end of line" if tok.kind == "END" else f"token {tok.text!r}"
            raise self.error(f"expected {want!r}, found {got}", tok)
        return self.next()

    def at_op(self, *symbols: str) -> bool:
        tok = self.peek()
        return tok.kind == "OP" and tok.text in symbols

    # grammar, loosest binding first
    def implies(self) -> Term:
        left = self.disjunction()
        if self.peek().kind == "ARROW":
            self.next()
            return Bin(Op.Implies, left, self.implies())
        return left

    def disjunction(self) -> Term:
        left = self.conjunction()
        while self.peek().kind == "OR":
            self.next()
            left = Bin(Op.Or, left, self.conjunction())
        return left

    def conjunction(self) -> Term:
        left = self.sequence()
        while self.peek().kind == "AND":
            self.next()
            left = Bin(Op.And, left, self.sequence())
        return left

    def sequence(self) -> Term:
        left = self.relation()
        while self.at_op(">>"):
            self.next()
            left = Bin(Op.Seq, left, self.relation())
        return left

    def _relation_op(self) -> Op | None:
        tok = self.peek()
        if tok.kind == "REL":
            return _REL_WORDS[tok.text.lower()]
        if tok.kind == "OP" and tok.text in ("<>", "<=", ">=", "<", ">", "="):
            return _OP_SYMBOLS[tok.text]
        return None

    def relation(self) -> Term:
        left = self.additive()
        op = self._relation_op()
        if op is None:
            return left
        self.next()
        right = self.additive()
        if self._relation_op() is not None:
            raise self.error("relations do not chain; add parentheses")
        return Bin(op, left, right)

    def additive(self) -> Term:
        left = self.multiplicative()
        while self.at_op("+", "-"):
            op = _OP_SYMBOLS[self.next().text]
            left = Bin(op, left, self.multiplicative())
        return left

    def multiplicative(self) -> Term:
        left = self.unary()
        while self.at_op("*", "/"):
            op = _OP_SYMBOLS[self.next().text]
            left = Bin(op, left, self.unary())
        return left

    def unary(self) -> Term:
        if self.at_op("-"):
            minus = self.next()
            tok = self.peek()
            if tok.kind != "NUM":
                raise self.error("unary minus applies to number literals only", minus)
            return Num(-self._number(self.next()))
        return self.postfix()

    def _number(self, tok: Token) -> Fraction:
        try:
            return Fraction(tok.text)
        except ZeroDivisionError:
            raise self.error("zero denominator in number literal", tok) from None

    def postfix(self) -> Term:
        tok = self.peek()
        if tok.kind == "NUM":
            self.next()
            return Num(self._number(tok))
        if tok.kind == "IDENT":
            self.next()
            term: Term = Atom(tok.text)
            while self.peek().kind == "PUNCT" and self.peek().text == "(":
                term = App(term, self.arguments())
            return term
        if tok.kind == "PUNCT" and tok.text == "(":
            self.next()
            inner = self.implies()
            self.expect("PUNCT", ")")
            nxt = self.peek()
            if nxt.kind in _PRIMARY_START or (nxt.kind == "PUNCT" and nxt.text == "("):
                # `( annotation ) body`
                return Ann(inner, self.postfix())
            return inner
        if tok.kind == "END":
            raise self.error("unexpected end of line", tok)
        raise self.error(f"unexpected token {tok.text!r}", tok)

    def arguments(self) -> tuple[Term, ...]:
        self.expect("PUNCT", "(")
        args = [self.implies()]
        while self.peek().kind == "PUNCT" and self.peek().text == ",":
            self.next()
            args.append(self.implies())
        self.expect("PUNCT", ")")
        return tuple(args)

    def finish(self) -> None:
        tok = self.peek()
        if tok.kind != "END":
            raise self.error(f"unexpected token {tok.text!r}", tok)


def parse_term(text: str, *, line: int = 1, source: str = "<string>") -> Term:
    """Parse one term; the result is canonical."""
    p = _TermParser(tokenize(text, line, source), line, source)
    t = p.implies()
    p.finish()
    return canonicalize(t)


# ------------------------------------------------------------------- programs

_HEADER_RE = re.compile(r"^\[\s*([A-Za-z_][\w\-]*)(?:\s+(rewrite))?\s*\]$")
_BANNER_RE = re.compile(r"^=+\s*([^=>]*?)\s*=+$")
_LABEL_RE = re.compile(r"^\s*([A-Za-z_][\w.\-]*)\s*:(?!:)")


def _banner_group(title: str) -> str:
    words = re.findall(r"[A-Za-z0-9]+", title)
    return "_".join(w.lower() for w in words) or "main"


def _split_top_arrow(tokens: list[Token]) -> int | None:
    depth = 0
    found = None
    for k, tok in enumerate(tokens):
        if tok.kind == "PUNCT" and tok.text == "(":
            depth += 1
        elif tok.kind == "PUNCT" and tok.text == ")":
            depth -= 1
        elif tok.kind == "ARROW" and depth == 0:
            if found is not None:
                return -k - 1
            found = k
    return found


def classify_premises(items: Sequence[Term]) -> tuple[tuple[Term, ...], tuple[Term, ...]]:
    """Split a rule's left-hand side into fact patterns and guards.

    A comparison is a guard when every variable in it is bound by the
    non-comparison premises; otherwise it is matched against facts like any
    other pattern (so ``Pr(A) <= D`` can pick ``D`` up from a fact).
    """
    plain = [t for t in items if not (isinstance(t, Bin) and t.op in COMPARISONS)]
    bound = frozenset().union(*(variables(t) for t in plain)) if plain else frozenset()
    premises, guards = [], []
    for t in items:
        if isinstance(t, Bin) and t.op in COMPARISONS and variables(t) <= bound:
            guards.append(t)
        else:
            premises.append(t)
    return tuple(premises), tuple(guards)


class _ProgramReader:
    def __init__(self, counters: dict[str, int] | None = None):
        self.counters: dict[str, int] = counters if counters is not None else {}

    def read(self, text: str, source: str, program: Program) -> None:
        group, kind = "main", "standard"
        seen_ids = {r.id for r in program.rules}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].rstrip()
            stripped = line.strip()
            if not stripped:
                continue
            m = _HEADER_RE.match(stripped)
            if m:
                group = m.group(1)
                kind = "rewrite" if m.group(2) else "standard"
                if group not in program.groups:
                    program.groups.append(group)
                if group == "counting":
                    program.counting = True
                continue
            m = _BANNER_RE.match(stripped)
            if m:
                group, kind = _banner_group(m.group(1)), "standard"
                if group not in program.groups:
                    program.groups.append(group)
                if group == "counting":
                    program.counting = True
                continue

            explicit_id = None
            offset = 0
            m = _LABEL_RE.match(line)
            if m:
                explicit_id = m.group(1)
                offset = m.end()
            tokens = tokenize(line[offset:], lineno, source, column_offset=offset)
            split = _split_top_arrow(tokens)
            if split is not None and split < 0:
                tok = tokens[-split - 1]
                raise RuleSyntaxError("more than one top-level arrow; parenthesize", lineno, tok.column, tok.text, source)

            if split is None:
                if explicit_id is not None:
                    raise RuleSyntaxError("facts cannot carry a rule id", lineno, 1, explicit_id, source)
                fact = self._fact(tokens, lineno, source)
                program.initial_facts.append(fact)
                continue

            rule = self._rule(tokens, split, lineno, source, group, kind, explicit_id)
            if rule.id in seen_ids:
                raise RuleSyntaxError(f"duplicate rule id {rule.id!r}", lineno, 1, rule.id, source)
            seen_ids.add(rule.id)
            program.rules.append(rule)
        program.sources.append(source)

    def _fact(self, tokens: list[Token], lineno: int, source: str) -> Term:
        p = _TermParser(tokens, lineno, source)
        t = p.implies()
        p.finish()
        bad = sorted(variables(t))
        if bad:
            raise RuleSyntaxError(
                f"non-ground fact line: single-letter atom {bad[0]!r} reads as a variable", lineno, tokens[0].column, bad[0], source
            )
        return canonicalize(t)

    def _rule(self, tokens, split, lineno, source, group, kind, explicit_id) -> Rule:
        lhs = tokens[:split] + [Token("END", "", tokens[split].column)]
        rhs = tokens[split + 1 :]
        if lhs[0].kind == "END":
            raise RuleSyntaxError("rule has no premises", lineno, tokens[split].column, tokens[split].text, source)
        p = _TermParser(lhs, lineno, source)
        items = [p.sequence()]
        while p.peek().kind == "AND":
            p.next()
            items.append(p.sequence())
        if p.peek().kind == "OR":
            raise p.error("OR between premises is ambiguous; parenthesize it")
        p.finish()
        q = _TermParser(rhs, lineno, source)
        conclusion = q.disjunction()
        q.finish()

        premises, guards = classify_premises([canonicalize(t) for t in items])
        conclusion = canonicalize(conclusion)
        bound = frozenset().union(*(variables(t) for t in premises))
        loose = sorted((variables(conclusion) | frozenset().union(*(variables(g) for g in guards))) - bound)
        if loose:
            raise RuleSyntaxError(
                f"variable {loose[0]!r} in conclusion is not bound by any premise", lineno, rhs[0].column, loose[0], source
            )
        if kind == "rewrite" and (len(premises) != 1 or guards):
            raise RuleSyntaxError("rewrite rules take exactly one premise and no guards", lineno, tokens[0].column, "", source)

        ordinal = self.counters.get(group, 0) + 1
        self.counters[group] = ordinal
        rule_id = explicit_id or f"{group}.{ordinal}"
        return Rule(rule_id, group, kind, premises, guards, conclusion)


def parse_program(text: str, source: str = "<string>") -> Program:
    program = Program()
    _ProgramReader().read(text, source, program)
    return program


def parse_programs(sources: Iterable[tuple[str, str]]) -> Program:
    """Concatenate several rule files into one program, in order.

    Default rule ids keep counting across files, so two files that both open
    ``[deontic]`` still get distinct ``deontic.N`` ids.
    """
    program = Program()
    reader = _ProgramReader()
    for text, name in sources:
        reader.read(text, name, program)
    return program


def load_program(*paths: str | Path) -> Program:
    return parse_programs((Path(p).read_text(encoding="utf-8"), str(p)) for p in paths)


def parse_facts(text: str, source: str = "<string>") -> list[Term]:
    """Fact file: one ground term per line, ``#`` comments. Single uppercase
    letters are plain constants here."""
    facts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        facts.append(parse_term(line, line=lineno, source=source))
    return facts


def load_facts(path: str | Path) -> list[Term]:
    return parse_facts(Path(path).read_text(encoding="utf-8"), str(path))


# ------------------------------------------------------------------ rendering


def _render_premise(t: Term) -> str:
    if isinstance(t, Bin) and t.op in (Op.And, Op.Or, Op.Implies):
        return f"( {t.text} )"
    return t.text


def _render_fact(t: Term) -> str:
    if isinstance(t, Bin) and t.op is Op.Implies:
        return f"( {t.text} )"
    return t.text


def render_rule(rule: Rule, *, with_id: bool = True) -> str:
    lhs = " AND ".join(_render_premise(t) for t in (*rule.premises, *rule.guards))
    rhs = rule.conclusion.text
    if isinstance(rule.conclusion, Bin) and rule.conclusion.op is Op.Implies:
        rhs = f"( {rhs} )"
    prefix = f"{rule.id}: " if with_id else ""
    return f"{prefix}{lhs} => {rhs}"


def render(program: Program) -> str:
    """Canonical text for a program: facts first, then rules under headers."""
    lines = [_render_fact(t) for t in program.initial_facts]
    counters: dict[str, int] = {}
    current: tuple[str, str] | None = None
    emitted_groups = []
    for rule in program.rules:
        if (rule.group, rule.kind) != current:
            current = (rule.group, rule.kind)
            lines.append(f"[{rule.group} rewrite]" if rule.kind == "rewrite" else f"[{rule.group}]")
            emitted_groups.append(rule.group)
        counters[rule.group] = counters.get(rule.group, 0) + 1
        default_id = f"{rule.group}.{counters[rule.group]}"
        lines.append(render_rule(rule, with_id=rule.id != default_id))
    extra = [g for g in program.groups if g not in emitted_groups]
    if program.counting and "counting" not in emitted_groups and "counting" not in extra:
        extra.append("counting")
    lines.extend(f"[{g}]" for g in extra)
    return "\n".join(lines) + ("\n" if lines else "")

"""Derivation lattice, exports, and compliance verdicts."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from .engine import SaturationResult, WorkingMemory
from .parser import render
from .terms import App, Atom, Term

SEVERITY = ("Failure", "Warning", "Resolved", "Clean")


def term_id(t: Term) -> str:
    return hashlib.sha256(t.text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Node:
    id: str
    term: Term
    round: int
    initial: bool


@dataclass(frozen=True, order=True)
class Edge:
    source: str
    target: str
    rule: str
    ord: int

    def to_dict(self) -> dict:
        return {"from": self.source, "to": self.target, "rule": self.rule, "ord": self.ord}


@dataclass
class DerivationLattice:
    nodes: list[Node]
    edges: list[Edge]
    roots: list[str]
    _by_id: dict[str, Node] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._by_id = {n.id: n for n in self.nodes}

    def node(self, ident: str) -> Node:
        return self._by_id[ident]

    def node_for(self, t: Term) -> Optional[Node]:
        return self._by_id.get(term_id(t))

    def successors(self, ident: str) -> list[Edge]:
        return [e for e in self.edges if e.source == ident]

    def reachable(self, start: Term, goal: Term, via_rule: Optional[str] = None) -> bool:
        """Is there a forward path from ``start`` to ``goal``? With ``via_rule``
        the last edge into ``goal`` must carry that rule id."""
        out: dict[str, list[Edge]] = {}
        for e in self.edges:
            out.setdefault(e.source, []).append(e)
        s, g = term_id(start), term_id(goal)
        seen = {s}
        stack = [s]
        while stack:
            u = stack.pop()
            for e in out.get(u, ()):
                if e.target == g and (via_rule is None or e.rule == via_rule):
                    return True
                if e.target not in seen:
                    seen.add(e.target)
                    stack.append(e.target)
        return False


def build_lattice(result: SaturationResult) -> DerivationLattice:
    wm = result.memory
    nodes = [Node(term_id(f.term), f.term, f.first_round, f.initial) for f in wm.sorted_facts()]
    edges: set[Edge] = set()
    for fact in wm.sorted_facts():
        tid = term_id(fact.term)
        for k, j in enumerate(fact.ordered_justifications()):
            for src in j.sources:
                edges.add(Edge(term_id(src), tid, j.rule_id, k))
    roots = [n.id for n in nodes if n.initial]
    return DerivationLattice(nodes, sorted(edges), roots)


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(lattice: DerivationLattice) -> str:
    lines = ["digraph lattice {", '  node [shape=box, fontname="Helvetica"];']
    for n in lattice.nodes:
        extra = ", peripheries=2" if n.initial else ""
        lines.append(f'  "{n.id}" [label="{_dot_escape(n.term.text)}"{extra}];')
    for e in lattice.edges:
        lines.append(f'  "{e.source}" -> "{e.target}" [label="{_dot_escape(e.rule)}", tooltip="{_dot_escape(e.rule)}#{e.ord}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_json(lattice: DerivationLattice) -> str:
    doc = {
        "nodes": [{"id": n.id, "term": n.term.text, "round": n.round, "initial": n.initial} for n in lattice.nodes],
        "edges": [e.to_dict() for e in lattice.edges],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# ------------------------------------------------------------------- verdicts


@dataclass(frozen=True)
class Verdict:
    kind: str
    subject: Optional[Term]
    evidence: tuple[Edge, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "subject": self.subject.text if self.subject is not None else None,
            "evidence": [e.to_dict() for e in self.evidence],
        }


def _unary(t: Term, head: str) -> Optional[Term]:
    if isinstance(t, App) and t.head == Atom(head) and len(t.args) == 1:
        return t.args[0]
    return None


def evidence_for(wm: WorkingMemory, t: Term) -> tuple[Edge, ...]:
    """Edges of the earliest-justification proof tree of ``t``, leaves first,
    ending with the edges into ``t``. Empty for initial facts."""
    out: list[Edge] = []
    seen_edges: set[Edge] = set()
    done: set[Term] = set()

    def visit(u: Term) -> None:
        if u in done:
            return
        done.add(u)
        fact = wm.facts[u]
        j = fact.earliest()
        if fact.initial or j is None:
            return
        for src in j.sources:
            visit(src)
        for src in j.sources:
            e = Edge(term_id(src), term_id(u), j.rule_id, 0)
            if e not in seen_edges:
                seen_edges.add(e)
                out.append(e)

    visit(t)
    return tuple(out)


def extract_verdicts(wm: WorkingMemory) -> list[Verdict]:
    """Failure(t) -> Failure; Warning(t) -> Warning unless Resolved(Warning(t))
    is present; Resolved(Warning(t)) -> Resolved; nothing -> one Clean."""
    failures, warnings, resolved = [], [], []
    for fact in wm.sorted_facts():
        t = fact.term
        if (s := _unary(t, "Failure")) is not None:
            failures.append(Verdict("Failure", s, evidence_for(wm, t)))
        elif (s := _unary(t, "Warning")) is not None:
            if App(Atom("Resolved"), (t,)) not in wm:
                warnings.append(Verdict("Warning", s, evidence_for(wm, t)))
        elif (s := _unary(t, "Resolved")) is not None:
            if _unary(s, "Warning") is not None and s in wm:
                resolved.append(Verdict("Resolved", s, evidence_for(wm, t)))
    verdicts = failures + warnings + resolved
    return verdicts or [Verdict("Clean", None)]


def overall_kind(verdicts: list[Verdict]) -> str:
    kinds = {v.kind for v in verdicts}
    for k in SEVERITY:
        if k in kinds:
            return k
    return "Clean"


def _digest(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class ComplianceReport:
    overall: str
    verdicts: list[Verdict]
    stats: dict
    digests: dict

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "stats": self.stats,
            "digests": self.digests,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def compliance_report(verdicts: list[Verdict], lattice: DerivationLattice, result: SaturationResult) -> ComplianceReport:
    known = set(lattice.edges)
    # evidence uses ordinal 0 edges; keep only those the lattice has
    checked = [Verdict(v.kind, v.subject, tuple(e for e in v.evidence if e in known)) for v in verdicts]
    facts_text = "".join(t.text + "\n" for t in result.extra_facts)
    return ComplianceReport(
        overall=overall_kind(checked),
        verdicts=checked,
        stats={"rounds": result.rounds_used, "facts": len(result.memory), "status": result.status},
        digests={"program": _digest(render(result.program)), "facts": _digest(facts_text)},
    )


def check(result: SaturationResult) -> tuple[DerivationLattice, ComplianceReport]:
    lattice = build_lattice(result)
    return lattice, compliance_report(extract_verdicts(result.memory), lattice, result)

"""Stateless rule-based verification: saturate symbolic facts under rule
libraries, keep the derivation lattice, and read compliance verdicts off it."""
from pathlib import Path

from .terms import Ann, App, Atom, Bin, Num, Op, Term, canonicalize, compare, substitute, subterms
from .parser import Program, Rule, RuleSyntaxError, load_facts, load_program, parse_facts, parse_program, parse_term, render
from .engine import Limits, SaturationResult, saturate, verify_replay

# rule and fact files shipped with the package
CORPORA = Path(__file__).resolve().parent / "corpora"

__all__ = [
    "Ann", "App", "Atom", "Bin", "Num", "Op", "Term",
    "canonicalize", "compare", "substitute", "subterms",
    "Program", "Rule", "RuleSyntaxError",
    "load_facts", "load_program", "parse_facts", "parse_program", "parse_term", "render",
    "Limits", "SaturationResult", "saturate", "verify_replay", "CORPORA",
]

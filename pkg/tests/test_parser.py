import pytest
from hypothesis import HealthCheck, given, settings

from sarv import CORPORA
from sarv.parser import (
    RuleSyntaxError, classify_premises, load_program, parse_facts, parse_program, parse_programs, parse_term, render,
)
from sarv.terms import Ann, App, Atom, Bin, Op
from conftest import RESCUE_FILES
from strategies import programs

RESCUE_LISTING = CORPORA / "rescue" / "rescue.sarv"
SHAMS_LISTING = CORPORA / "shams" / "shams.sarv"


def test_parse_term_paper_examples():
    assert parse_term("Forbidden((Very)BudgetConsuming)") == App(
        Atom("Forbidden"), (Ann(Atom("Very"), Atom("BudgetConsuming")),)
    )
    assert parse_term("See <> Unseen") == Bin(Op.Assoc, Atom("See"), Atom("Unseen"))
    assert parse_term("X") == Atom("X")


def test_arrow_spellings_and_relation_aliases():
    assert parse_term("Ka => Kb") == parse_term("Ka =====> Kb")
    assert parse_term("How Is-A Question") == parse_term("How is-a Question") == parse_term("How IS-A Question")
    assert parse_term("Ka is-in-association-with Kb") == parse_term("Ka <> Kb")


def test_whitespace_insensitive():
    assert parse_term("P((Very)P(A0))") == parse_term("  P ( ( Very )  P ( A0 ) ) ")


def test_rational_literal_versus_division():
    assert parse_term("1/3").text == "1/3"
    assert parse_term("1 / 3") == Bin(Op.Div, parse_term("1"), parse_term("3"))


def test_relations_do_not_chain():
    with pytest.raises(RuleSyntaxError):
        parse_term("Ka Is-A Kb Is-A Kc")


# ------------------------------------------------------------ paper corpora

RESCUE_RULES = [
    # (id, premises, guards, conclusion)
    ("protocol.1", ["PoliceRequest"], [], "P ( HelicopterMission )"),
    ("protocol.2", ["FireRequest"], [], "P ( HelicopterMission )"),
    ("protocol.3", ["AmbulanceRequest"], [], "P ( HelicopterMission )"),
    ("protocol.4", ["HelicopterMission"], [], "BudgetConsuming"),
    ("obligation.1", ["Forbidden ( A )", "P ( A )"], [], "Warning ( P ( A ) )"),
    ("obligation.2", ["Forbidden ( A )", "A"], [], "Failure ( A )"),
    ("obligation.3", ["Warning ( P ( A ) )", "DoubleCheck ( P ( A ) )"], [], "Resolved ( Warning ( P ( A ) ) )"),
    ("counting.1", ["A", "( I ) A"], [], "( I + 1 ) A"),
    ("counting.2", ["A"], [], "( 1 ) A"),
    ("counting.3", ["( I ) A"], ["I > 2"], "P ( ( Very ) A )"),
    ("deontic.1", ["A => B", "P ( A )"], [], "P ( B )"),
    ("deontic.2", ["( Very ) P ( A )"], [], "P ( ( Very ) A )"),
    ("deontic.3", ["P ( P ( A ) )"], [], "P ( A )"),
]


def _shape(program):
    return [(r.id, [p.text for p in r.premises], [g.text for g in r.guards], r.conclusion.text) for r in program.rules]


def test_rescue_listing_parses_to_thirteen_rules():
    p = load_program(RESCUE_LISTING)
    assert _shape(p) == RESCUE_RULES
    assert p.counting
    assert [t.text for t in p.initial_facts] == [
        "AmbulanceRequest >> FireRequest >> PoliceRequest",
        "Forbidden ( ( Very ) BudgetConsuming )",
    ]
    assert [r.kind for r in p.rules].count("rewrite") == 2


def test_split_rescue_files_match_listing_rules():
    split = load_program(*RESCUE_FILES)
    assert _shape(split) == RESCUE_RULES
    assert [t.text for t in split.initial_facts] == ["Forbidden ( ( Very ) BudgetConsuming )"]


def test_shams_listing():
    p = load_program(SHAMS_LISTING)
    assert len(p.rules) == 9
    assert [t.text for t in p.initial_facts] == [
        "How ( Excitement ( Ability ( See ( Unseen ) ) ) ) Is-In Beginning",
        "Ability Is-A Positive_Sense",
        "See <> Unseen",
        "How Is-A Question",
        "How ( Excitement ( Ability ( See ( Unseen ) ) ) )",
        "How Is-A Positive_Sense",
    ]
    assert p.groups == ["input_rules"]
    r9 = p.rules[5]
    assert r9.premises == (parse_term("Question(A) Is-In Beginning"),)
    assert r9.conclusion == parse_term("Engagement(A)")
    # conjunctive conclusion stays one term
    assert p.rules[-1].conclusion.text == "P ( Not ( Promotion ) ) AND P ( Not ( Excitement ) )"


def test_stdlib_parses():
    p = load_program(CORPORA / "stdlib" / "modalities.sarv")
    assert len(p.rules) == 7
    prob = p.rules[4]
    # Pr(A) <= D binds D from a fact, so it is a pattern, not a guard
    assert [t.text for t in prob.premises] == ["O ( Pr ( A * B ) > C )", "Pr ( A ) <= D", "Indep ( A , B )"]
    assert prob.guards == ()


def test_empty_program():
    p = parse_program("")
    assert p.rules == [] and p.initial_facts == [] and not p.counting
    assert render(p) == ""


def test_guard_classification():
    prem, guards = classify_premises([parse_term("(I)A"), parse_term("I > 2")])
    assert [t.text for t in prem] == ["( I ) A"]
    assert [t.text for t in guards] == ["I > 2"]


def test_ids_count_across_files():
    p = parse_programs([("[g]\nKa => Kb\n", "one"), ("[g]\nKb => Kc\n", "two")])
    assert [r.id for r in p.rules] == ["g.1", "g.2"]


def test_explicit_ids_and_crlf():
    p = parse_program("[g]\r\nfirst: Ka => Kb\r\nKb => Kc\r\n")
    assert [r.id for r in p.rules] == ["first", "g.2"]


# ------------------------------------------------------------------- errors


@pytest.mark.parametrize("text, message", [
    ("[g]\nKa => Kb\nmine: Kb => Kc\nmine: Kc => Kd\n", "duplicate rule id"),
    ("Warning(A)\n", "non-ground fact line"),
    ("F0(A) => G0(B)\n", "not bound"),
    ("Ka => Kb => Kc\n", "more than one top-level arrow"),
    ("[g rewrite]\nKa AND Kb => Kc\n", "exactly one premise"),
    ("Ka OR Kb => Kc\n", "OR between premises"),
    ("F0(Ka\n", ""),
])
def test_program_errors(text, message):
    with pytest.raises(RuleSyntaxError) as exc:
        parse_program(text, "rules.sarv")
    assert message in str(exc.value)
    assert str(exc.value).startswith("rules.sarv:")


def test_error_reports_line_and_column():
    with pytest.raises(RuleSyntaxError) as exc:
        parse_program("# comment\nKa => Kb\nKa AND => Kb\n", "f.sarv")
    e = exc.value
    assert (e.line, e.column) == (3, 8)
    assert str(e).startswith("f.sarv:3:8:")


@pytest.mark.parametrize("base", [
    "Ka AND Kb => Kc",
    "Ka >> Kb >> Kc",
    "I > 2 AND Kb Is-A Kc",
    "Ka + 1 * Kb",
])
def test_lone_paren_column_is_exact(base):
    tokens = base.split(" ")
    for k in range(1, len(tokens) + 1):
        text = " ".join(tokens[:k] + [")"] + tokens[k:])
        column = len(" ".join(tokens[:k])) + 2
        with pytest.raises(RuleSyntaxError) as exc:
            parse_term(text)
        assert exc.value.column == column, text
        assert exc.value.token == ")"


def test_fact_file_treats_single_letters_as_constants():
    assert [t.text for t in parse_facts("A\n# note\nP(B)\n")] == ["A", "P ( B )"]


# ---------------------------------------------------------------- round trips


@pytest.mark.parametrize("path", [RESCUE_LISTING, SHAMS_LISTING, CORPORA / "stdlib" / "modalities.sarv",
                                  CORPORA / "karb" / "quality.sarv"])
def test_corpus_round_trip(path):
    p = load_program(path)
    q = parse_program(render(p))
    assert q == p
    assert render(q) == render(p)


@settings(max_examples=1000, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
@given(programs())
def test_generated_programs_round_trip(p):
    text = render(p)
    q = parse_program(text)
    assert q == p
    assert render(q) == text

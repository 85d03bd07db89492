"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line directly to the terminal, so the
summary is visible without ``-s``.
"""
import json
import time
from contextlib import contextmanager

from hypothesis import HealthCheck, given, settings

from sarv import CORPORA, load_facts, load_program, saturate
from sarv.cli import main
from sarv.engine import Limits, replay_justification, sus_subsume, memory_from_facts, verify_replay
from sarv.lattice import build_lattice, export_dot, export_json
from sarv.parser import parse_facts, parse_program, parse_term, render
from conftest import RESCUE, RESCUE_FILES, SHAMS
from oracles import check_counts, read_hand_trace, sus_expected
from strategies import programs, small_programs

T = parse_term
RULES = [str(p) for p in RESCUE_FILES]
WARNING = "Warning ( P ( ( Very ) BudgetConsuming ) )"
RESOLVED = "Resolved ( Warning ( P ( ( Very ) BudgetConsuming ) ) )"
SHAMS_TARGET = "Engagement ( Excitement ( Ability ( See ( Unseen ) ) ) )"
KARB_RULES = str(CORPORA / "karb" / "quality.sarv")
PLANTED = str(CORPORA / "karb" / "planted.json")

# fixed example streams so acceptance runs are reproducible
DERANDOMIZED = dict(derandomize=True, database=None, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])


@contextmanager
def criterion(capsys, number, title):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"\nFAIL criterion {number}: {title}")
        raise
    with capsys.disabled():
        print(f"\nPASS criterion {number}: {title} ({time.perf_counter() - start:.2f}s)")


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, _ = capsys.readouterr()
    return code, out


def lines(result):
    return set(result.fact_lines())


def rescue_run(facts):
    return saturate(load_program(*RESCUE_FILES), load_facts(RESCUE / f"{facts}.facts"))


def test_criterion_1_rescue_warning(capsys, tmp_path):
    with criterion(capsys, 1, "rescue scenario warns"):
        start = time.perf_counter()
        code, out = cli(capsys, "check", "--rules", *RULES, "--facts", RESCUE / "requests3.facts",
                        "--out", tmp_path / "r.json")
        elapsed = time.perf_counter() - start
        assert code == 1 and elapsed < 1.0
        assert out.splitlines()[0] == "overall: Warning"
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["stats"]["status"] == "Fixpoint" and report["stats"]["rounds"] < 20

        r = rescue_run("requests3")
        got = lines(r)
        assert "( 3 ) P ( HelicopterMission )" in got and WARNING in got
        assert not any(s.startswith("Failure") for s in got)
        # committed hand trace: every step exists at its round and replays
        for rnd, rule, fact_text, premises in read_hand_trace((RESCUE / "hand_trace.txt").read_text()):
            fact = r.memory[T(fact_text)]
            assert fact.first_round == rnd, fact_text
            js = [j for j, at in fact.justifications.items()
                  if j.rule_id == rule and at == rnd and list(j.sources) == [T(p) for p in premises]]
            assert js and replay_justification(r.program, js[0]) == fact.term, fact_text


def test_criterion_2_resolution(capsys):
    with criterion(capsys, 2, "DoubleCheck resolves the warning"):
        code, out = cli(capsys, "check", "--rules", *RULES, "--facts", RESCUE / "doublecheck.facts")
        assert code == 0 and out.splitlines()[0] == "overall: Resolved"
        assert RESOLVED in lines(rescue_run("doublecheck"))


def test_criterion_3_counting_guard(capsys):
    with criterion(capsys, 3, "two requests stay below the counting guard"):
        r = rescue_run("requests2")
        assert r.status == "Fixpoint"
        got = lines(r)
        # the Forbidden fact is the only place (Very) may appear
        assert not any("( Very )" in s for s in got if "Forbidden" not in s)
        assert not any(s.startswith("Warning") for s in got)
        code, out = cli(capsys, "check", "--rules", *RULES, "--facts", RESCUE / "requests2.facts")
        assert code == 0 and out.splitlines()[0] == "overall: Clean"


def test_criterion_4_shams_lattice(capsys, tmp_path):
    with criterion(capsys, 4, "SHAMS lattice reaches Engagement"):
        rules, facts = SHAMS / "shams.sarv", SHAMS / "input.facts"
        dumps = []
        for k in range(2):
            dot, js = tmp_path / f"{k}.dot", tmp_path / f"{k}.json"
            code, out = cli(capsys, "run", "--rules", rules, "--facts", facts, "--dump-facts",
                            "--dot", dot, "--json", js)
            assert code == 0 and SHAMS_TARGET in out.splitlines()
            assert out.splitlines()[-1].startswith("status: Fixpoint")
            dumps.append((out, dot.read_bytes(), js.read_bytes()))
        assert dumps[0] == dumps[1]

        r = saturate(load_program(rules), load_facts(facts))
        lat = build_lattice(r)
        source = T("How(Excitement(Ability(See(Unseen)))) Is-In Beginning")
        target = T(SHAMS_TARGET)
        assert lat.node_for(source).initial
        assert lat.reachable(source, target, via_rule="input_rules.6")
        j = r.memory[target].earliest()
        assert j.rule_id == "input_rules.6" and T("How Is-A Question") in j.support
        assert export_dot(lat) == dumps[0][1].decode() and export_json(lat) == dumps[0][2].decode()


def test_criterion_5_replay(capsys):
    with criterion(capsys, 5, "every justification replays"):
        runs = [rescue_run(name) for name in ("requests3", "doublecheck", "requests2")]
        runs.append(saturate(load_program(SHAMS / "shams.sarv"), load_facts(SHAMS / "input.facts")))
        for r in runs:
            assert verify_replay(r) == []
            assert sum(len(f.justifications) for f in r.memory) > 0


def test_criterion_6_termination(capsys):
    with criterion(capsys, 6, "depth bomb bounded, generated programs terminate"):
        start = time.perf_counter()
        r = saturate(parse_program("A => P(A)\n"), parse_facts("A0"))
        assert time.perf_counter() - start < 1.0
        assert r.status == "BoundHit(max_term_depth)"

        @settings(max_examples=1000, **DERANDOMIZED)
        @given(small_programs(max_rules=10, max_facts=5))
        def terminates(case):
            text, fs = case
            t0 = time.perf_counter()
            res = saturate(parse_program(text), parse_facts("\n".join(fs)))
            assert res.status == "Fixpoint" or res.status.startswith("BoundHit(")
            assert time.perf_counter() - t0 < 10.0

        terminates()


def test_criterion_7_counting_oracle(capsys):
    with criterion(capsys, 7, "counting equals tree enumeration"):
        @settings(max_examples=200, **DERANDOMIZED)
        @given(small_programs(max_rules=6, max_facts=4))
        def counts_agree(case):
            text, fs = case
            res = saturate(parse_program("[counting]\n" + text), parse_facts("\n".join(fs)),
                           Limits(max_term_depth=6))
            check_counts(res)

        counts_agree()
        check_counts(rescue_run("requests3"))


SUS_TABLE = [
    ("Pa Is-Part-Of S1\nPb Is-Part-Of S1\nQa Is-Part-Of S2\nPa Is-A Qa\nPb Is-A Qa", {("S1", "S2")}),
    ("Pa Is-Part-Of S1\nPb Is-Part-Of S1\nQa Is-Part-Of S2\nPa Is-A Qa", set()),
    ("Pp Is-Part-Of S1\nPp Is-Part-Of S2", {("S1", "S2"), ("S2", "S1")}),
]


def test_criterion_8_sus(capsys):
    with criterion(capsys, 8, "SUS subsumption table"):
        for facts, expected in SUS_TABLE:
            terms = parse_facts(facts)
            got = {(t.left.text, t.right.text) for t, _ in sus_subsume(memory_from_facts(terms))}
            direct = {(a.text, b.text) for a, b in sus_expected(terms)}
            assert got == direct == expected


def _karb_pipeline(capsys, d):
    d.mkdir()
    for seed, n, name in ((7, 500, "train.csv"), (8, 200, "test.csv")):
        code, _ = cli(capsys, "karb", "synth", "--rules", KARB_RULES, "--qualifier", PLANTED,
                      "--seed", seed, "--n", n, "--out", d / name)
        assert code == 0
    code, fit_out = cli(capsys, "karb", "fit", "--dataset", d / "train.csv", "--rules", KARB_RULES,
                        "--qualifier", d / "q.json", "--seed", 7, "--iters", 500, "--restarts", 2)
    assert code == 0
    code, eval_out = cli(capsys, "karb", "eval", "--dataset", d / "test.csv", "--rules", KARB_RULES,
                         "--qualifier", d / "q.json")
    assert code == 0
    return fit_out, eval_out, (d / "q.json").read_bytes()


def test_criterion_9_karb_recovery(capsys, tmp_path):
    with criterion(capsys, 9, "DD-KARB recovers the planted qualifier"):
        start = time.perf_counter()
        first = _karb_pipeline(capsys, tmp_path / "a")
        assert time.perf_counter() - start < 60.0
        fit_out, eval_out, _ = first
        m = json.loads(eval_out)
        assert m["accuracy"] >= 0.90 and m["accuracy"] > m["baseline_accuracy"]
        final = float(fit_out.splitlines()[-1].split()[1])
        for row in fit_out.splitlines()[:-1]:
            initial = float(row.split("initial=")[1].split()[0])
            assert final <= initial
        assert _karb_pipeline(capsys, tmp_path / "b") == first


def test_criterion_10_round_trip(capsys):
    with criterion(capsys, 10, "parser round trip"):
        for path in (RESCUE / "rescue.sarv", SHAMS / "shams.sarv"):
            p = load_program(path)
            again = parse_program(render(p))
            assert again == p and parse_program(render(again)) == again

        @settings(max_examples=1000, **DERANDOMIZED)
        @given(programs())
        def round_trips(p):
            text = render(p)
            q = parse_program(text)
            assert q == p and render(q) == text

        round_trips()

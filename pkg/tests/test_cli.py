import json
import subprocess
import sys

import pytest

from sarv import CORPORA
from sarv.cli import main
from conftest import RESCUE, RESCUE_FILES, SHAMS

RULES = [str(p) for p in RESCUE_FILES]
KARB_RULES = str(CORPORA / "karb" / "quality.sarv")
PLANTED = str(CORPORA / "karb" / "planted.json")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def check(capsys, facts, *extra):
    return run(capsys, "check", "--rules", *RULES, "--facts", RESCUE / f"{facts}.facts", *extra)


def test_check_three_requests_warns(capsys, tmp_path):
    report = tmp_path / "report.json"
    code, out, _ = check(capsys, "requests3", "--out", report)
    assert code == 1
    lines = out.splitlines()
    assert lines[0] == "overall: Warning"
    assert "Warning: P ( ( Very ) BudgetConsuming )" in lines
    assert lines[-1].startswith("status: Fixpoint rounds=")
    doc = json.loads(report.read_text())
    assert doc["overall"] == "Warning"


def test_check_double_check_resolves(capsys):
    code, out, _ = check(capsys, "doublecheck")
    assert code == 0
    assert out.splitlines()[0] == "overall: Resolved"


def test_check_single_listing_file(capsys):
    code, out, _ = run(capsys, "check", "--rules", RESCUE / "rescue.sarv")
    # the listing carries its own request sequence fact
    assert code == 1 and out.startswith("overall: Warning")


def test_check_two_requests_clean(capsys):
    code, out, _ = check(capsys, "requests2")
    assert code == 0
    assert out.splitlines()[0] == "overall: Clean"


def test_run_shams_dump(capsys):
    code, out, _ = run(capsys, "run", "--rules", SHAMS / "shams.sarv", "--facts", SHAMS / "input.facts",
                       "--dump-facts")
    assert code == 0
    assert "Engagement ( Excitement ( Ability ( See ( Unseen ) ) ) )" in out.splitlines()


def test_run_empty_program_dumps_fact(capsys, tmp_path):
    rules, facts = tmp_path / "empty.sarv", tmp_path / "one.facts"
    rules.write_text("")
    facts.write_text("Ka\n")
    code, out, _ = run(capsys, "run", "--rules", rules, "--facts", facts, "--dump-facts")
    assert code == 0
    assert out.splitlines()[0] == "Ka"


def test_depth_bomb_exits_three(capsys, tmp_path):
    rules, facts = tmp_path / "bomb.sarv", tmp_path / "bomb.facts"
    rules.write_text("A => P(A)\n")
    facts.write_text("A0\n")
    code, out, _ = run(capsys, "run", "--rules", rules, "--facts", facts)
    assert code == 3
    assert "BoundHit(max_term_depth)" in out
    code, out, _ = run(capsys, "check", "--rules", rules, "--facts", facts)
    assert code == 3


@pytest.mark.parametrize("argv, code", [
    (["check", "--rules", "/nonexistent.sarv"], 66),
    (["check"], 64),
    (["run", "--rules", str(RESCUE_FILES[0]), "--limits", "max_rounds=zero"], 64),
    (["frobnicate"], 64),
])
def test_error_exit_codes(capsys, argv, code):
    try:
        got = main(argv)
    except SystemExit as e:
        got = e.code
    assert got == code


def test_parse_error_reports_location(capsys, tmp_path):
    bad = tmp_path / "bad.sarv"
    bad.write_text("Ka => Kb\nKa AND => Kb\n")
    code, _, err = run(capsys, "check", "--rules", bad)
    assert code == 65
    assert f"{bad}:2:" in err


def test_unwritable_output(capsys, tmp_path):
    code, _, _ = check(capsys, "requests3", "--out", tmp_path / "missing" / "r.json")
    assert code == 73


def test_repeated_runs_are_byte_identical(capsys, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        _, out, _ = check(capsys, "requests3", "--out", d / "r.json", "--dot", d / "l.dot")
        outs.append((out, (d / "r.json").read_bytes(), (d / "l.dot").read_bytes()))
    assert outs[0] == outs[1]


def test_figure_written_with_csv(capsys, tmp_path):
    fig = tmp_path / "growth.png"
    code, _, _ = check(capsys, "requests3", "--figure", fig)
    assert code == 1
    assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    rows = (tmp_path / "growth.csv").read_text().splitlines()
    assert rows[0] == "round,new_facts,total_facts"


# ----------------------------------------------------------------------- karb


def synth(capsys, path, seed, n, noise=None):
    extra = ["--noise", noise] if noise is not None else []
    code, out, _ = run(capsys, "karb", "synth", "--rules", KARB_RULES, "--qualifier", PLANTED,
                       "--seed", seed, "--n", n, "--out", path, *extra)
    assert code == 0
    return out


def test_karb_synth_fit_eval(capsys, tmp_path):
    train, test, q = tmp_path / "train.csv", tmp_path / "test.csv", tmp_path / "q.json"
    synth(capsys, train, 7, 500)
    synth(capsys, test, 8, 200)
    code, out, _ = run(capsys, "karb", "fit", "--dataset", train, "--rules", KARB_RULES, "--qualifier", q,
                       "--seed", 7, "--iters", 500, "--restarts", 2)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("restart 1: initial=") and lines[-1].startswith("fitness: ")
    code, out, _ = run(capsys, "karb", "eval", "--dataset", test, "--rules", KARB_RULES, "--qualifier", q)
    assert code == 0
    m = json.loads(out)
    assert m["accuracy"] >= 0.9 and m["accuracy"] > m["baseline_accuracy"]


def test_karb_zero_qualifier_matches_baseline(capsys, tmp_path):
    data, q = tmp_path / "d.csv", tmp_path / "zero.json"
    synth(capsys, data, 3, 150)
    doc = json.loads((CORPORA / "karb" / "planted.json").read_text())
    doc["weights"] = {k: 0.0 for k in doc["weights"]}
    doc["threshold"] = 1.0
    q.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "karb", "eval", "--dataset", data, "--rules", KARB_RULES, "--qualifier", q)
    assert code == 0
    m = json.loads(out)
    assert m["accuracy"] == m["baseline_accuracy"]


def test_karb_commands_byte_identical(capsys, tmp_path):
    results = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        synth(capsys, d / "d.csv", 5, 120)
        _, fit_out, _ = run(capsys, "karb", "fit", "--dataset", d / "d.csv", "--rules", KARB_RULES,
                            "--qualifier", d / "q.json", "--seed", 1, "--iters", 100, "--figure", d / "fit.png")
        _, eval_out, _ = run(capsys, "karb", "eval", "--dataset", d / "d.csv", "--rules", KARB_RULES,
                             "--qualifier", d / "q.json")
        results.append(((d / "d.csv").read_bytes(), (d / "q.json").read_bytes(), fit_out, eval_out,
                        (d / "fit.png").read_bytes(), (d / "fit.csv").read_bytes()))
    assert results[0] == results[1]


def test_karb_dataset_error_names_row(capsys, tmp_path):
    data = tmp_path / "bad.csv"
    data.write_text("speed,label\n4,5\n3\n")
    code, _, err = run(capsys, "karb", "eval", "--dataset", data, "--rules", KARB_RULES, "--qualifier", PLANTED)
    assert code == 65
    assert "row 3" in err


def test_karb_digest_mismatch(capsys, tmp_path):
    data = tmp_path / "d.csv"
    synth(capsys, data, 1, 10)
    code, _, err = run(capsys, "karb", "eval", "--dataset", data, "--rules", RESCUE_FILES[0], "--qualifier", PLANTED)
    assert code == 65


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sarv", "check", "--rules", *RULES,
                           "--facts", str(RESCUE / "requests3.facts")], capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stdout.startswith("overall: Warning")

import json
import subprocess
import sys

import pytest

from pdq.cli import EXIT_CAP, EXIT_EXPECT, EXIT_OK, EXIT_USAGE, main, render_rational
from fractions import Fraction

THREE = "R\ta\t1/2\nS\ta,a\t1/2\nS\ta,b\t1/2\n"


@pytest.fixture
def data(tmp_path):
    p = tmp_path / "s.tsv"
    p.write_text(THREE)
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_render_rational():
    assert render_rational(Fraction(3, 8)) == {"rational": "3/8", "decimal": "0.375"}
    assert render_rational(Fraction(1, 3))["decimal"] == "0.333333333333"


def test_classify_non_hierarchical(capsys):
    code, out, _ = run(capsys, "classify", "R(x),S(x,y),T(y)")
    assert code == EXIT_OK
    assert "SharpPHard" in out and "(x,y)" in out


def test_classify_json_explain(capsys):
    code, out, _ = run(capsys, "classify", "-q", "R(x),S(x,y),S(x2,y2),T(x2)", "--format", "json", "--explain")
    d = json.loads(out)
    assert d["class"] == "PTIME(inversion-free)"
    assert d["explain"]["covers"] == [[0, 1]]
    assert {"signature": [0, 1], "N": -1} in d["explain"]["n_values"]


def test_eval_auto_prints_three_eighths(capsys, data):
    code, out, _ = run(capsys, "eval", "-q", "R(x),S(x,y)", "-d", data, "--method", "auto")
    assert code == EXIT_OK
    assert out.startswith("3/8")


def test_eval_json_is_deterministic(capsys, data):
    outs = [run(capsys, "eval", "-q", "R(x),S(x,y)", "-d", data, "--format", "json")[1] for _ in range(2)]
    assert outs[0] == outs[1]
    d = json.loads(outs[0])
    assert d["value"]["rational"] == "3/8" and d["formula"]["size"] > 0


def test_eval_oracle_and_ptime_agree(capsys, data):
    a = json.loads(run(capsys, "eval", "-q", "R(x),S(x,y)", "-d", data, "--method", "oracle", "--format", "json")[1])
    b = json.loads(run(capsys, "eval", "-q", "R(x),S(x,y)", "-d", data, "--method", "safeplan", "--format", "json")[1])
    assert a["value"] == b["value"]


def test_emit_formula(capsys, data, tmp_path):
    path = tmp_path / "f.json"
    code, _, _ = run(capsys, "eval", "-q", "R(x),S(x,y)", "-d", data, "--emit-formula", str(path))
    dag = json.loads(path.read_text())
    assert code == EXIT_OK and dag["size"] == len(dag["nodes"])


def test_auto_on_hard_query_falls_back_to_mc(capsys, data):
    code, out, err = run(capsys, "eval", "-q", "R(x),S(x,y),T(y)", "-d", data, "--samples", "1000")
    assert code == EXIT_OK and "warning" in err and "estimate" in out


def test_mc_seeded(capsys, data):
    a = run(capsys, "mc", "-q", "R(x),S(x,y)", "-d", data, "--seed", "4", "--samples", "5000", "--format", "json")[1]
    b = run(capsys, "mc", "-q", "R(x),S(x,y)", "-d", data, "--seed", "4", "--samples", "5000", "--format", "json")[1]
    assert a == b


def test_query_file(capsys, data, tmp_path):
    qf = tmp_path / "q.cq"
    qf.write_text("# hierarchical\nR(x),\nS(x,y)\n")
    code, out, _ = run(capsys, "oracle", "--query-file", str(qf), "-d", data)
    assert code == EXIT_OK and out.startswith("3/8")


def test_exit_codes(capsys, data):
    assert run(capsys, "classify", "-q", "R(x")[0] == EXIT_USAGE
    assert run(capsys, "eval", "-q", "R(x,y),R(y,x)", "-d", data, "--method", "safeplan")[0] == EXIT_USAGE
    assert run(capsys, "eval", "-q", "R(x)", "-d", "/nonexistent.tsv")[0] == EXIT_USAGE
    assert run(capsys, "oracle", "-q", "R(x),S(x,y)", "-d", data, "--oracle-cap", "1")[0] == EXIT_CAP
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == EXIT_USAGE


def test_corpus_command(capsys):
    code, out, _ = run(capsys, "corpus")
    assert code == EXIT_OK
    assert "fail=0" in out and "xpass=0" in out


def test_corpus_failure_exit(capsys, tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"entries": [{"name": "wrong", "query": "R(x),S(x,y)", "expect": "SharpPHard",
                                            "structure": THREE}]}))
    code, out, _ = run(capsys, "corpus", "--corpus-file", str(bad))
    assert code == EXIT_EXPECT and "FAIL" in out


def test_bench_runs(capsys):
    code, out, _ = run(capsys, "bench", "--sizes", "2,3", "--kernel-worlds", "2000", "--format", "json")
    d = json.loads(out)
    assert code == EXIT_OK
    assert {r["N"] for r in d["rows"]} == {2, 3}
    assert all(r["agrees"] for r in d["kernel"])


def test_console_script_installed():
    out = subprocess.run([sys.executable, "-m", "pdq.cli", "classify", "R(x),S(x,y)"], capture_output=True, text=True)
    assert out.returncode == 0 and "PTIME" in out.stdout

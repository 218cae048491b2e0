import json
import math

import pytest

from dirbilevel import cli
from dirbilevel.oracles import EX51_TEXT

SQ3 = math.sqrt(3.0)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


def test_value_ex51(capsys):
    code, rep = run(capsys, "value", "EX51", "--x", "0")
    assert code == 0 and rep["schema"] == 1
    res = rep["result"]
    assert res["V"] == pytest.approx(-2.0, abs=1e-6)
    assert sorted(s["y"][0] for s in res["solutions"]) == pytest.approx([-SQ3, SQ3], abs=1e-6)
    assert res["oracle_V"] == -2.0


def test_value_ex31_left(capsys):
    code, rep = run(capsys, "value", "EX31", "--x=-0.5")
    assert code == 0
    assert rep["result"]["V"] == pytest.approx(-1.0, abs=1e-6)
    assert [s["y"][0] for s in rep["result"]["solutions"]] == pytest.approx([1.5], abs=1e-6)


def test_infeasible_box_is_an_input_error(capsys):
    code, rep = run(capsys, "value", "EX51", "--x", "0", "--box", "5,6")
    assert code == cli.EXIT_INPUT
    assert rep["error"]["type"] == "InfeasibleBox"
    assert rep["exit_code"] == 2


def test_dderiv_ex51(capsys):
    code, rep = run(capsys, "dderiv", "EX51", "--dir", "1")
    assert code == 0
    assert rep["result"]["lp"]["value"] == pytest.approx(-(2 * SQ3 + 2), abs=1e-12)
    assert rep["result"]["fd"]["value"] == pytest.approx(-(2 * SQ3 + 2), abs=1e-3)


@pytest.mark.parametrize("u", ["-1", "0"])
def test_dderiv_ex31_is_zero(capsys, u):
    code, rep = run(capsys, "dderiv", "EX31", f"--dir={u}")
    assert code == 0
    assert rep["result"]["lp"]["value"] == pytest.approx(0.0, abs=1e-12)
    assert rep["result"]["fd"]["value"] == pytest.approx(0.0, abs=1e-3)


def test_subdiff_two_components_at_zero_direction(capsys):
    code, rep = run(capsys, "subdiff", "EX51", "--dir", "0")
    assert code == 0
    assert len(rep["result"]["components"]) == 2


def test_cones_membership(capsys):
    code, rep = run(capsys, "cones", "EX31", "--w", "1,-1", "--w", "1,0")
    assert code == 0
    crit = [m["critical"] for m in rep["result"]["members"]]
    assert crit == [True, False]


def test_check_cq_ex51_direction(capsys):
    code, rep = run(capsys, "check-cq", "EX51", "--dir=sqrt(3)", "--vdir=-1")
    assert code == 0
    verdicts = {k: v["verdict"] for k, v in rep["result"]["results"].items()}
    assert verdicts["quasi-normality"] == "HOLDS"
    assert verdicts["FOSCMS"] == "FAILS" and verdicts["NNAMCQ"] == "FAILS"
    assert verdicts["RS"] == "HOLDS" and verdicts["RCR"] == "EVIDENCE"


def test_calmness_ex31(capsys):
    code, rep = run(capsys, "calmness", "EX31", "--dir=-1", "--vdir=1")
    assert code == 0
    assert rep["result"]["calmness"]["verdict"] == "VIOLATED"


def test_kkt_with_supplied_multipliers(capsys):
    code, rep = run(capsys, "kkt", "EX51", "--dir=sqrt(3)", "--vdir=-1",
                    "--lambda-v", "0.5", "--lam", "1,0", "--lambda-g", "1,0")
    assert code == 0
    assert rep["result"]["status"] == "FOUND"
    assert rep["result"]["supplied"]["passed"]
    assert max(rep["result"]["supplied"]["residuals"].values()) <= 1e-12


def test_kkt_with_bad_multipliers_fails(capsys):
    code, rep = run(capsys, "kkt", "EX51", "--dir=sqrt(3)", "--vdir=-1",
                    "--lambda-v", "0.5", "--lam", "1,0", "--lambda-g=-1,0")
    assert code == cli.EXIT_FAIL
    assert "lambda_g_sign" in rep["result"]["supplied"]["failed_rows"]


def test_negative_point_via_equals_form(capsys):
    code, rep = run(capsys, "cones", "EX51", "--x=0", "--y=-sqrt(3)", "--w", "sqrt(3),-1")
    assert code == 0
    assert rep["result"]["members"][0]["critical"]


@pytest.mark.parametrize("ident", ["EX51", "EX31"])
def test_reproduce(capsys, ident):
    code, rep = run(capsys, "reproduce", ident)
    assert code == 0
    assert rep["result"]["all_pass"]
    assert all(r["status"] == "PASS" for r in rep["result"]["rows"])


def test_unknown_instance_is_a_usage_error(capsys):
    code, rep = run(capsys, "reproduce", "EX99")
    assert code == cli.EXIT_INPUT
    assert "error" in rep


def test_missing_file_and_bad_vector(capsys, tmp_path):
    code, _ = run(capsys, "validate", str(tmp_path / "nope.bil"))
    assert code == cli.EXIT_INPUT
    code, _ = run(capsys, "value", "EX51", "--x", "1,2")
    assert code == cli.EXIT_INPUT


def test_problem_file_and_validate(capsys, tmp_path):
    path = tmp_path / "ex51.bil"
    path.write_text(EX51_TEXT)
    code, rep = run(capsys, "validate", str(path))
    assert code == 0
    assert rep["result"]["dims"] == {"n": 1, "m": 1, "p": 2, "q": 0}
    assert not rep["result"]["lower_constraints_affine"]
    code, rep = run(capsys, "value", str(path), "--x", "0.5")
    assert code == 0
    assert rep["result"]["V"] == pytest.approx(1 - (0.5 + math.sqrt(4 - 0.25)) ** 2, abs=1e-6)
    assert "oracle_V" not in rep["result"]


def test_syntax_error_exit_code(capsys, tmp_path):
    path = tmp_path / "bad.bil"
    path.write_text("dims: n=1 m=1\nF = x1 +* y1\n")
    code, rep = run(capsys, "validate", str(path))
    assert code == cli.EXIT_INPUT


def test_json_output_is_byte_identical(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        assert cli.main(["check-cq", "EX51", "--dir=sqrt(3)", "--vdir=-1", "--json", str(p)]) == 0
    capsys.readouterr()
    a, b = (p.read_bytes() for p in paths)
    assert a == b
    assert b"elapsed" not in a


def test_floats_use_seventeen_digits(tmp_path, capsys):
    p = tmp_path / "d.json"
    cli.main(["dderiv", "EX51", "--dir", "1", "--json", str(p)])
    capsys.readouterr()
    text = p.read_text()
    assert f"{-(2 * SQ3 + 2):.17g}" in text

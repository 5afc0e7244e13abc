import json
from pathlib import Path

import pytest

from conerisk.cli import main

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def fx(name):
    return str(FIXTURES / f"{name}.json")


@pytest.mark.parametrize("name", ["model_a", "model_b", "model_c"])
def test_validate_ok(capsys, name):
    code, out, err = run(capsys, "validate", "--model", fx(name))
    assert code == 0 and json.loads(out)["passed"] and "PASS validate" in err


def test_validate_broken_probabilities(capsys):
    code, out, _ = run(capsys, "validate", "--model", fx("broken_probabilities"))
    assert code == 1
    assert json.loads(out)["tree"]["violation"] == "probabilities sum to 1.2"


def test_validate_arbitrage(capsys):
    code, out, _ = run(capsys, "validate", "--model", fx("arbitrage"))
    assert code == 1
    assert json.loads(out)["robust_na"]["violation"] == "robust no-arbitrage fails"


def test_input_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "validate", "--model", str(tmp_path / "missing.json"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "price", "--model", str(bad))[0] == 2
    assert run(capsys, "price", "--model", fx("model_b"), "--claim", "nope")[0] == 2
    assert run(capsys, "price", "--model", fx("model_b"), "--t", "7")[0] == 2
    assert run(capsys, "audit", "--model", fx("model_c"), "--t", "1", "--s", "1")[0] == 2
    assert run(capsys, "price", "--model", fx("model_b"), "--spec", "avar-composed")[0] == 0
    with pytest.raises(SystemExit) as exc:
        main(["price"])
    assert exc.value.code == 2


def test_price_model_b(capsys):
    code, out, _ = run(capsys, "price", "--model", fx("model_b"), "--claim", "cash_on_u")
    rep = json.loads(out)
    assert code == 0
    assert rep["rho_primal"]["0"]["value"] == pytest.approx(0.5)
    assert rep["rho_dual_exact"]["0"]["value"] == pytest.approx(0.5)
    assert rep["residual"] < 1e-6


def test_price_claim_file_and_zero(capsys, tmp_path):
    path = tmp_path / "zero.json"
    path.write_text(json.dumps({"X": {"u": [0, 0], "d": [0, 0]}}))
    code, out, _ = run(capsys, "price", "--model", fx("model_b"), "--claim", str(path))
    assert code == 0 and json.loads(out)["rho_primal"]["0"]["value"] == pytest.approx(0.0)


def test_price_with_samples_reports_gap(capsys):
    code, out, _ = run(capsys, "price", "--model", fx("model_b"), "--claim", "cash_on_u",
                       "--samples", "16")
    gap = json.loads(out)["sampled"]["gap"]["0"]
    assert code == 0 and gap == pytest.approx(0.0, abs=1e-9)


def test_price_avar(capsys):
    code, out, _ = run(capsys, "price", "--model", fx("model_c"), "--spec", "avar-composed",
                       "--levels", "0.5")
    rep = json.loads(out)
    assert code == 0 and rep["avar_composed"]["0"]["flag"] == "finite"


def test_pi_and_sample_prices(capsys):
    code, out, _ = run(capsys, "pi", "--model", fx("model_a"), "--claim", "call", "--samples", "3",
                       "--workers", "1")
    rep = json.loads(out)
    assert code == 0 and len(rep["systems"]) == 1
    # the call pays -1 + 2 = 1 unit of cash at u, worth q_u = 1/3
    assert rep["systems"][0]["pi"]["0"]["value"] == pytest.approx(-1 / 3)
    code, out, _ = run(capsys, "sample-prices", "--model", fx("model_a"), "--samples", "5")
    assert json.loads(out)["count"] == 1


def test_pi_worker_pool_matches_serial(capsys, monkeypatch):
    args = ["pi", "--model", fx("model_c"), "--samples", "6", "--seed", "2"]
    _, serial, _ = run(capsys, *args, "--workers", "1")
    monkeypatch.setenv("CONERISK_THREADS", "2")
    _, pooled, _ = run(capsys, *args)
    assert serial == pooled


def test_audit_model_a(capsys, tmp_path):
    code, _, err = run(capsys, "audit", "--model", fx("model_a"), "--samples", "2", "--claims", "2",
                       "--trials", "50", "--out", str(tmp_path))
    rep = json.loads((tmp_path / "report.json").read_text())
    assert code == 0 and rep["passed"]
    assert rep["falsifier"]["detail"]["result"] == "none found"
    assert "PASS pi_recursion" in err and "INFO rho_tc_falsify none found" in err


def test_audit_model_c_witness(capsys, tmp_path):
    code, _, err = run(capsys, "audit", "--model", fx("model_c"), "--samples", "3", "--claims", "2",
                       "--trials", "50", "--out", str(tmp_path))
    rep = json.loads((tmp_path / "report.json").read_text())
    assert code == 0
    assert all(c["passed"] for c in rep["checks"].values())
    assert rep["falsifier"]["detail"]["result"] == "witness"
    assert (tmp_path / "witness-rho_tc_falsify.json").exists()


@pytest.mark.parametrize("name, failing", [("corrupted_pi", "pi_recursion"),
                                           ("corrupted_value", "supermartingale")])
def test_audit_corrupted_fixtures(capsys, tmp_path, name, failing):
    code, out, err = run(capsys, "audit", "--model", fx(name), "--samples", "2", "--claims", "2",
                         "--trials", "0")
    rep = json.loads(out)
    assert code == 1 and not rep["checks"][failing]["passed"]
    assert f"FAIL {failing}" in err


def test_falsify_command(capsys):
    code, out, _ = run(capsys, "falsify", "--model", fx("model_c"), "--trials", "10")
    rep = json.loads(out)
    assert code == 0 and rep["detail"]["result"] == "witness"
    assert set(rep["witness"]["X"]) == {"uu", "ud", "du", "dd"}


def test_deterministic_output(capsys):
    args = ["audit", "--model", fx("model_c"), "--samples", "3", "--claims", "1", "--trials", "20",
            "--seed", "4"]
    a = run(capsys, *args)[1]
    b = run(capsys, *args)[1]
    assert a == b


def test_csv_output(capsys):
    code, out, _ = run(capsys, "price", "--model", fx("model_b"), "--claim", "cash_on_u", "--csv")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "key,value"
    assert any(line.startswith("rho_primal.0.value,") for line in lines)

import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from bdfstab.cli import ExperimentConfig, main, parse_number, parse_terms, show
from fractions import Fraction

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_show_prints_fractions_with_decimals():
    assert show(Fraction(95, 96)) == "95/96 (0.9895833333333334)"
    assert show(Fraction(4)) == "4"


def test_parse_helpers():
    assert parse_number("11/6") == Fraction(11, 6)
    assert parse_number("3") == 3 and parse_number("0.5") == 0.5
    assert parse_terms("4:0.25, 2:-0.5") == {(4,): 0.25, (2,): -0.5}
    assert parse_terms("2 0:1, 0 2:3") == {(2, 0): 1.0, (0, 2): 3.0}


def test_config_roundtrip_of_shipped_files():
    for path in CONFIGS.glob("*.ini"):
        cfg = ExperimentConfig.from_file(path)
        assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


names = st.sampled_from(["double_well", "quadratic", "allen_cahn_1d"])
text = st.text(alphabet="0123456789.,/ -", min_size=1, max_size=12).map(str.strip).filter(bool)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([1, 2, 3]), st.floats(1e-6, 10), st.integers(0, 10**5),
       st.one_of(st.none(), st.floats(1e-15, 1)), names, st.dictionaries(st.sampled_from(["N", "h", "A"]), text))
def test_config_roundtrip_property(seed, k, solver_tol, steps, stop_tol, energy, params):
    cfg = ExperimentConfig(seed=seed, k=k, dt="0.25", solver_tol=solver_tol, steps=steps, stop_tol=stop_tol,
                           energy=energy, energy_params=params)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_certify_beta3(capsys, tmp_path):
    assert main(["certify-beta3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "95/96 (0.9895833333333334)" in out
    data = json.loads((tmp_path / "certify_beta3.json").read_text())
    assert data["gap"] <= 1e-9 and data["closed_form_residual_exact"] == "0"


def test_decompose_exit_codes(capsys):
    assert main(["decompose", "--beta", "5/6"]) == 0
    assert main(["decompose", "--beta", "0"]) == 0
    assert main(["decompose", "--beta", "0.99"]) == 4
    assert main(["decompose", "--beta", "-1"]) == 2
    assert "infeasible" in capsys.readouterr().err


def test_counterexample(capsys):
    assert main(["counterexample", "--k", "3", "--steps", "100"]) == 0
    out = capsys.readouterr().out
    assert "lambda_k: 20/3 (6.666666666666667)" in out
    assert "regime: barrier" in out
    assert main(["counterexample", "--k", "1", "--steps", "20"]) == 0
    out = capsys.readouterr().out
    assert "lambda_k: 2" in out and "two_beta_k: 2" in out


def test_run_allen_cahn_short(tmp_path, capsys):
    text = (CONFIGS / "allen_cahn.ini").read_text().replace("steps = 2000", "steps = 100")
    path = write(tmp_path, text)
    assert main(["run", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert "regime: unique" in capsys.readouterr().out
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["audit"]["margins_ok"] and summary["steps"] == 100
    assert ExperimentConfig.from_ini(summary["config"]) == ExperimentConfig.from_ini(text)
    assert (tmp_path / "a" / "audit.csv").exists() and (tmp_path / "a" / "config.ini").exists()


def test_run_is_byte_identical(tmp_path):
    text = (CONFIGS / "allen_cahn.ini").read_text().replace("steps = 2000", "steps = 50")
    path = write(tmp_path, text)
    for d in ("x", "y"):
        assert main(["run", "--config", path, "--out", str(tmp_path / d), "--format", "json"]) == 0
    for f in ("trajectory.json", "audit.json", "summary.json", "config.ini"):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()


def test_run_barrier_prints_regime(capsys):
    assert main(["run", "--config", str(CONFIGS / "barrier.ini")]) == 0
    assert "regime: barrier" in capsys.readouterr().out


def test_zero_step_run(tmp_path):
    path = write(tmp_path, "[scheme]\nk = 3\ndt = 0.1\nsteps = 0\n[energy]\nname = double_well\n[init]\nvalue = 0.5\n")
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()
    assert len(rows) == 1 + 3


def test_config_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["run", "--config", write(tmp_path, "[scheme]\nk = three\n")]) == 2
    assert main(["run", "--config", write(tmp_path, "[bogus]\nx = 1\n")]) == 2
    assert main(["run", "--config", write(tmp_path, "[scheme]\nk = 3\n[energy]\nname = double_well\n")]) == 2
    assert main(["run", "--config", write(tmp_path, "[scheme]\ndt=1\n[energy]\nname = nope\n")]) == 2
    bad = "[scheme]\nk = 3\ndt = 0.1\nbootstrap = exact-list\n[energy]\nname = double_well\n[init]\nstates = 1; 2\n"
    assert main(["run", "--config", write(tmp_path, bad)]) == 2


def test_run_step_failure_exit_code(tmp_path, capsys, monkeypatch):
    import bdfstab.integrator as integ
    from bdfstab.errors import ExistenceError

    def boom(*a, **k):
        raise ExistenceError("no root")

    monkeypatch.setattr(integ, "solve_step_unique", boom)
    path = write(tmp_path, "[scheme]\nk = 1\ndt = 0.1\nsteps = 3\n[energy]\nname = double_well\n")
    assert main(["run", "--config", path]) == 3
    assert "step 1" in capsys.readouterr().err


def test_order_study(tmp_path, capsys):
    assert main(["order-study", "--config", str(CONFIGS / "order_study.ini"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "order_study_summary.json").read_text())
    for k in (1, 2, 3):
        assert abs(summary["slopes"][f"BDF{k}"] - k) <= 0.3
    single = (CONFIGS / "order_study.ini").read_text().replace("dts = 0.1, 0.05, 0.025, 0.0125", "dts = 0.1")
    assert main(["order-study", "--config", write(tmp_path, single)]) == 0
    assert "slope = undefined" in capsys.readouterr().out


def test_multivalued_demo(tmp_path, capsys):
    assert main(["multivalued-demo", "--config", str(CONFIGS / "multivalued.ini"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "multivalued.json").read_text())
    assert rep["branch_count"] >= 2
    assert all(b["margins_ok"] for b in rep["branches"].values())


def test_multivalued_demo_unique_regime(tmp_path, capsys):
    text = (CONFIGS / "multivalued.ini").read_text().replace("dt = 1.9", "dt = 1.2")
    assert main(["multivalued-demo", "--config", write(tmp_path, text)]) == 0
    out = capsys.readouterr().out
    assert "branches at the first step: 1" in out and "single solution" in out


def test_seed_override(tmp_path):
    text = (CONFIGS / "multivalued.ini").read_text()
    assert main(["multivalued-demo", "--config", write(tmp_path, text), "--seed", "7", "--out", str(tmp_path / "o")]) == 0
    assert "seed = 7" in (tmp_path / "o" / "config.ini").read_text()


@pytest.mark.parametrize("argv", [[], ["nope"], ["decompose"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 2

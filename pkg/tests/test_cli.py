import json
import os
from pathlib import Path

import numpy as np
import pytest

from mmlab import instances
from mmlab.bounds import BoundReport
from mmlab.cli import fmt, main
from mmlab.exponent import ExponentCurve
from mmlab.maximality import MaximalityCertificate
from mmlab.sim import SimulationReport

DATA = Path(__file__).resolve().parent.parent / "data"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


class TestExamples:
    def test_capacity(self, capsys):
        code, out, _ = run(capsys, "capacity", "--channel", DATA / "w.json")
        assert code == 0
        assert out.strip() == "0.7133"

    def test_check_maximal_at_uniform(self, capsys):
        code, out, _ = run(capsys, "check-maximal", "--set", "mmax", "--coupling", DATA / "table1.json", "--px", "uniform")
        assert code == 0
        assert out.startswith("member slack=")

    def test_single_coupling_bound(self, capsys):
        code, out, _ = run(capsys, "bound", "--mode", "corollary1", "--coupling", DATA / "table1.json")
        assert code == 0
        assert out.strip() == "0.4999"


class TestCheckMaximal:
    def test_prior_violation_named(self, capsys):
        code, out, _ = run(capsys, "check-maximal", "--set", "mmax-prior", "--coupling", DATA / "table1.json")
        assert code == 0
        assert out.strip() == "non-member violation=(j=2,k1=3,k2=2):0.1133"

    def test_universal(self, capsys):
        code, out, _ = run(capsys, "check-maximal", "--set", "mmax", "--grid-step", "0.1")
        assert code == 0
        assert out.startswith("member slack=") and "worst_px=" in out

    def test_vmax_default_channel(self, capsys):
        code, out, _ = run(capsys, "check-maximal", "--set", "vmax", "--px", DATA / "uniform2.json", "--v", DATA / "pyhat.json")
        assert code == 0
        assert out.startswith("member")

    def test_theta_star_and_td(self, capsys):
        assert run(capsys, "check-maximal", "--set", "theta-star", "--px", "uniform")[0] == 0
        code, out, _ = run(capsys, "check-maximal", "--set", "mmax-td", "--td", "mmi", "--px", "uniform")
        assert code == 0 and out.split()[0] in ("member", "non-member")

    def test_gamma_rho(self, capsys, tmp_path):
        code, out, _ = run(capsys, "check-maximal", "--set", "gamma-rho", "--rho", DATA / "q.json")
        assert code == 0 and out.strip() in ("member", "non-member")
        code, _, err = run(capsys, "check-maximal", "--set", "gamma-rho")
        assert code == 1 and "--rho" in err

    def test_json_round_trip(self, capsys):
        code, out, _ = run(capsys, "check-maximal", "--set", "mmax", "--px", "uniform", "--json")
        d = json.loads(out)
        assert d["member"] is True
        cert = MaximalityCertificate.from_dict(d["certificate"])
        assert cert.slack == d["slack"]


class TestBound:
    def test_prior_json_round_trip(self, capsys):
        code, out, _ = run(capsys, "bound", "--mode", "prior", "--grid-step", "0.25", "--json")
        assert code == 0
        rep = BoundReport.from_dict(json.loads(out))
        assert rep.mode == "prior"
        assert json.loads(json.dumps(rep.to_dict())) == json.loads(out)

    def test_metric_log_of(self, capsys):
        code, out, _ = run(capsys, "bound", "--mode", "corollary1", "--metric-log-of", DATA / "q_exp.json", "--coupling", DATA / "table1.json")
        assert code == 0
        assert out.strip() == "0.4999"

    def test_not_certified_is_reported(self, capsys, tmp_path):
        c = instances.perturbed_example_coupling(0.1).per_input.tolist()
        path = write(tmp_path, "pert.json", {"per_input": c})
        code, out, _ = run(capsys, "bound", "--mode", "corollary1", "--coupling", path, "--grid-step", "0.1", "--tol-marginal", "0.2")
        assert code == 0
        assert "not certified" in out


class TestExponent:
    def test_csv(self, capsys):
        code, out, _ = run(capsys, "exponent", "--r-min", "0.7", "--r-max", "0.8", "--steps", "2")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "rate_bits,exponent_bits,certified"
        assert lines[1:] == ["0.7000,0.0000,true", "0.8000,0.0000,true"]

    def test_json_and_shift(self, capsys):
        code, out, _ = run(capsys, "exponent", "--r-min", "0.7", "--r-max", "0.8", "--steps", "2", "--n", "100", "--json")
        assert code == 0
        curve = ExponentCurve.from_dict(json.loads(out))
        assert curve.n_display["n"] == 100
        assert curve.rates[0] == pytest.approx(0.7 - curve.n_display["zeta_n"], abs=1e-12)

    def test_bad_grid(self, capsys):
        code, _, err = run(capsys, "exponent", "--r-min", "0.5", "--r-max", "0.1")
        assert code == 1 and "r_min" in err


class TestSimulate:
    def test_pe_max(self, capsys):
        code, out, _ = run(capsys, "simulate", "--n", "8", "--M", "4", "--trials", "200", "--seed", "3")
        assert code == 0
        assert out.startswith("pe_max=") and "mode=codebook/error" in out

    def test_seed_from_environment(self, capsys, monkeypatch):
        args = ("simulate", "--n", "8", "--M", "4", "--trials", "300", "--json")
        monkeypatch.setenv("MMLAB_SEED", "17")
        a = json.loads(run(capsys, *args)[1])
        b = json.loads(run(capsys, *args, "--seed", "17")[1])
        monkeypatch.setenv("MMLAB_SEED", "18")
        c = json.loads(run(capsys, *args)[1])
        assert a == b
        assert a["seed"] == 17 and c["seed"] == 18
        monkeypatch.setenv("MMLAB_SEED", "x")
        code, _, err = run(capsys, *args)
        assert code == 1 and "MMLAB_SEED" in err

    def test_report_round_trip(self, capsys):
        code, out, _ = run(capsys, "simulate", "--mode", "exact", "--n", "4", "--M", "3", "--json")
        assert code == 0
        rep = SimulationReport.from_dict(json.loads(out))
        assert rep.mode == "exact/error"

    def test_ensemble_and_conflict(self, capsys):
        code, out, _ = run(capsys, "simulate", "--mode", "ensemble", "--n", "20", "--rate", "0.6", "--trials", "100")
        assert code == 0 and "mode=ensemble" in out
        code, out, _ = run(capsys, "simulate", "--mode", "type-conflict", "--n", "6", "--M", "5", "--trials", "100", "--v", DATA / "pyhat.json")
        assert code == 0 and "mode=fixed-type" in out

    def test_composition_errors(self, capsys):
        code, _, err = run(capsys, "simulate", "--n", "4", "--M", "2", "--composition", "3,3")
        assert code == 1 and "--composition" in err
        code, _, err = run(capsys, "simulate", "--n", "4")
        assert code == 1 and "--M or --rate" in err


class TestErrors:
    def test_usage_error(self, capsys):
        assert run(capsys, "bound")[0] == 2
        assert run(capsys, "frobnicate")[0] == 2

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "capacity", "--channel", tmp_path / "nope.json")
        assert code == 1 and "nope.json" in err

    def test_bad_json(self, capsys, tmp_path):
        p = write(tmp_path, "w.json", "{\"rows\": [[0.5, 0.5],")
        code, _, err = run(capsys, "capacity", "--channel", p)
        assert code == 1 and "invalid JSON" in err

    def test_row_not_stochastic(self, capsys, tmp_path):
        p = write(tmp_path, "w.json", {"rows": [[0.5, 0.5], [0.4, 0.5]]})
        code, _, err = run(capsys, "capacity", "--channel", p)
        assert code == 1
        assert "w.json" in err and "row 2" in err and "sum" in err

    def test_ragged_rows(self, capsys, tmp_path):
        p = write(tmp_path, "w.json", {"rows": [[0.5, 0.5], [1.0]]})
        code, _, err = run(capsys, "capacity", "--channel", p)
        assert code == 1 and "row 2" in err

    def test_non_numeric_entry(self, capsys, tmp_path):
        p = write(tmp_path, "q.json", {"values": [[0, "a", 0], [0, 0, 0]]})
        code, _, err = run(capsys, "bound", "--mode", "corollary1", "--metric", p)
        assert code == 1 and "q.json" in err and "entry 2" in err

    def test_shape_mismatch(self, capsys, tmp_path):
        p = write(tmp_path, "q.json", {"values": [[0, 0], [0, 0]]})
        code, _, err = run(capsys, "bound", "--mode", "corollary1", "--metric", p)
        assert code == 1 and "q.json" in err

    def test_coupling_not_square(self, capsys, tmp_path):
        p = write(tmp_path, "c.json", {"per_input": [[[1, 0]], [[0, 1]]]})
        code, _, err = run(capsys, "check-maximal", "--set", "mmax", "--coupling", p, "--px", "uniform")
        assert code == 1 and "c.json" in err and "input 1" in err

    def test_negative_log_table(self, capsys, tmp_path):
        p = write(tmp_path, "e.json", {"values": [[1, 1, 1], [1, -0.5, 1]]})
        code, _, err = run(capsys, "bound", "--mode", "corollary1", "--metric-log-of", p)
        assert code == 1 and "row 2" in err

    def test_bad_threads(self, capsys, monkeypatch):
        monkeypatch.setenv("MMLAB_THREADS", "many")
        assert run(capsys, "capacity")[0] == 2


def test_out_file_is_replaced_atomically(capsys, tmp_path):
    target = tmp_path / "cap.txt"
    target.write_text("old contents\n")
    code, out, _ = run(capsys, "capacity", "--out", target)
    assert code == 0 and out == ""
    assert target.read_text() == "0.7133\n"
    assert [p.name for p in tmp_path.iterdir()] == ["cap.txt"]


def test_capacity_json(capsys):
    code, out, _ = run(capsys, "capacity", "--json")
    d = json.loads(out)
    assert d["capacity_bits"] == pytest.approx(instances.CAPACITY_W, abs=1e-3)
    assert sum(d["px"]) == pytest.approx(1.0)


def test_self_check_suites(capsys):
    for which in ("minimax", "decomposition"):
        code, out, _ = run(capsys, "lemma-test", "--which", which)
        assert code == 0
        assert all(line.startswith("PASS") for line in out.strip().splitlines())


def test_fmt_half_even():
    assert fmt(0.7133) == "0.7133"
    assert fmt(0.00005) == "0.0001"  # the double sits just above the tie
    assert fmt(0.125, 2) == "0.12"
    assert fmt(0.375, 2) == "0.38"
    assert fmt(-1e-12) == "0.0000"
    assert fmt(float("inf")) == "inf"
    assert fmt(np.bool_(True)) == "true"


def test_data_files_load():
    from mmlab.cli import load_channel, load_coupling, load_distribution, load_metric

    assert np.allclose(load_channel(str(DATA / "w.json")).rows, instances.W_EXAMPLE.rows)
    assert np.allclose(load_metric(str(DATA / "q.json")).values, instances.Q_EXAMPLE.values)
    assert np.allclose(load_coupling(str(DATA / "table1.json")).per_input, instances.example_coupling().per_input, atol=1e-12)
    assert load_distribution(str(DATA / "uniform2.json")).probs.tolist() == [0.5, 0.5]
    assert os.path.exists(DATA / "bsc01.json")

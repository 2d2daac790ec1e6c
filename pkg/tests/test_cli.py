import csv
import json

import numpy as np
import pytest

from fnboost.cli import ConfigError, main, parse_grid, parse_model


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def fos(tmp_path):
    cfg = write(tmp_path / "sim.json", {"seed": 2, "simulate": {"scenario": "fos", "N": 24, "G": 12}})
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "data")]) == 0
    run = {
        "data": "data/manifest.json",
        "seed": 1,
        "model": {
            "control": {"mstop": 30},
            "timeformula": {"type": "bbs", "z": "t", "df": 3},
            "formula": [{"type": "bolsc", "z": "power", "df": 1}, {"type": "brandom", "z": "subject", "df": 1}],
        },
        "cv": {"type": "kfold", "B": 3},
        "bootstrap": {"B_outer": 2, "B_inner": 2},
        "coef": {"n1": 5, "n2": 7},
    }
    return tmp_path, write(tmp_path / "run.json", run)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestSimulate:
    def test_byte_identical(self, tmp_path):
        cfg = write(tmp_path / "s.json", {"simulate": {"scenario": "sof", "N": 200, "R": 101, "sigma": 0.1}})
        for d in ("a", "b"):
            assert main(["simulate", "--config", cfg, "--seed", "1", "--out-dir", str(tmp_path / d)]) == 0
        for f in ("response.csv", "functional_x.csv", "truth.csv", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_truth_is_sine(self, tmp_path):
        cfg = write(tmp_path / "s.json", {"simulate": {"scenario": "sof", "N": 10, "R": 11}})
        main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)])
        rows = read_csv(tmp_path / "truth.csv")
        assert rows[0] == ["learner", "s", "t", "value"]
        s = np.array([float(r[1]) for r in rows[1:]])
        v = np.array([float(r[3]) for r in rows[1:]])
        np.testing.assert_allclose(v, np.sin(np.pi * s), atol=1e-15)

    def test_unknown_scenario(self, tmp_path, capsys):
        cfg = write(tmp_path / "s.json", {"simulate": {"scenario": "nope"}})
        assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 2
        diag = json.loads(capsys.readouterr().err)
        assert diag["location"] == "simulate.scenario"


class TestWorkflow:
    def test_fit_predict_consistency(self, fos):
        tmp, cfg = fos
        out = str(tmp / "out")
        assert main(["fit", "--config", cfg, "--out-dir", out]) == 0
        assert main(["predict", "--config", cfg, "--model-in", f"{out}/model.json", "--out-dir", out]) == 0
        assert (tmp / "out" / "fitted.csv").read_bytes() == (tmp / "out" / "predictions.csv").read_bytes()
        summary = json.loads((tmp / "out" / "summary.json").read_text())
        assert summary["mstop"] == 30
        assert sum(summary["selection_counts"].values()) == 30

    def test_fit_idempotent(self, fos):
        tmp, cfg = fos
        for d in ("o1", "o2"):
            main(["fit", "--config", cfg, "--out-dir", str(tmp / d), "--model-out", str(tmp / d / "model.json")])
        assert (tmp / "o1" / "model.json").read_bytes() == (tmp / "o2" / "model.json").read_bytes()

    def test_cv_outputs(self, fos):
        tmp, cfg = fos
        assert main(["cv", "--config", cfg, "--grid", "1:40", "--out-dir", str(tmp / "cv")]) == 0
        rows = read_csv(tmp / "cv" / "risk.csv")
        assert len(rows) == 4 and len(rows[0]) == 40
        summary = json.loads((tmp / "cv" / "cv_summary.json").read_text())
        assert 1 <= summary["mstop_opt"] <= 40

    def test_coef_long_csv(self, fos):
        tmp, cfg = fos
        out = str(tmp / "out")
        main(["fit", "--config", cfg, "--out-dir", out])
        assert main(["coef", "--config", cfg, "--model-in", f"{out}/model.json", "--out-dir", out]) == 0
        rows = read_csv(tmp / "out" / "coef.csv")
        assert rows[0] == ["learner", "s", "t", "value"]
        labels = {r[0] for r in rows[1:]}
        assert "offset" in labels
        assert any(lab.startswith("brandom(subject) %O% bbs(t)[") for lab in labels)
        # offset on n2 = 7 time points
        assert sum(r[0] == "offset" for r in rows) == 7

    def test_bootstrap_bands(self, fos):
        tmp, cfg = fos
        assert main(["bootstrap", "--config", cfg, "--grid", "1:10", "--out-dir", str(tmp / "bs")]) == 0
        rows = read_csv(tmp / "bs" / "bands.csv")
        assert rows[0] == ["learner", "s", "t", "quantile", "value"]
        assert {r[3] for r in rows[1:]} == {"0.05", "0.5", "0.95"}

    def test_gamlss_fit(self, tmp_path):
        sim = write(tmp_path / "s.json", {"simulate": {"scenario": "sof", "N": 40, "R": 20}})
        main(["simulate", "--config", sim, "--out-dir", str(tmp_path)])
        cfg = write(tmp_path / "r.json", {
            "data": "manifest.json",
            "model": {"family": "gaussian_lss", "control": {"mstop": 20},
                      "formula": {"mu": [{"type": "bsignal", "x": "x", "df": 3}], "sigma": [{"type": "intercept"}]}},
        })
        assert main(["fit", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 0
        assert read_csv(tmp_path / "o" / "fitted.csv")[0] == ["mu", "sigma"]


class TestDiagnostics:
    def test_located_clause_error(self, fos, capsys):
        tmp, cfg = fos
        bad = json.loads(open(cfg).read())
        bad["model"]["formula"][1]["df"] = 1
        bad["model"]["formula"][1]["lambda"] = 2
        path = write(tmp / "bad.json", bad)
        assert main(["fit", "--config", path]) == 2
        diag = json.loads(capsys.readouterr().err)
        assert diag["error"] == "config"
        assert diag["location"].startswith("model.formula[1]")

    def test_nested_clause_location(self):
        with pytest.raises(ConfigError) as e:
            parse_model({"formula": [{"type": "compose", "op": "kronecker", "left": {"type": "bols", "q": 1},
                                      "right": {"type": "bbs"}}]})
        assert e.value.location == "model.formula[0].left.q"

    def test_unknown_type_location(self):
        with pytest.raises(ConfigError) as e:
            parse_model({"formula": [{"type": "bols", "z": "a"}, {"type": "bspline"}]})
        assert e.value.location == "model.formula[1].type"

    def test_bad_family(self):
        with pytest.raises(ConfigError) as e:
            parse_model({"family": "gamma", "formula": [{"type": "bols", "z": "a"}]})
        assert e.value.location == "model.family"

    def test_invalid_json(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text("{nope")
        assert main(["fit", "--config", str(tmp_path / "c.json")]) == 2
        assert json.loads(capsys.readouterr().err)["location"] == "--config"

    def test_missing_data_file(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.json", {"data": "missing.json", "model": {"formula": [{"type": "bols", "z": "a"}]}})
        assert main(["fit", "--config", cfg]) == 3
        assert json.loads(capsys.readouterr().err)["error"] == "data"

    def test_unknown_variable(self, fos, capsys):
        tmp, cfg = fos
        bad = json.loads(open(cfg).read())
        bad["model"]["formula"] = [{"type": "bolsc", "z": "nope", "df": 1}]
        assert main(["fit", "--config", write(tmp / "b.json", bad), "--out-dir", str(tmp)]) == 3
        diag = json.loads(capsys.readouterr().err)
        assert diag["location"] == "nope"

    def test_predict_needs_model(self, fos, capsys):
        _, cfg = fos
        assert main(["predict", "--config", cfg]) == 2


class TestGrid:
    @pytest.mark.parametrize("text,expected", [("1:5", [1, 2, 3, 4, 5]), ("2:10:4", [2, 6, 10]), ("5,1,5", [1, 5]),
                                               ([3, 1], [1, 3]), (3, [1, 2, 3])])
    def test_forms(self, text, expected):
        np.testing.assert_array_equal(parse_grid(text), expected)

    @pytest.mark.parametrize("text", ["a:b", "-1:5", "1:2:3:4", ""])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_grid(text)

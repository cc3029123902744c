import csv
import json
import math

import numpy as np
import pytest

from nlimportance import cli
from nlimportance.cli import ExperimentConfig, cell_seed, main, run_comparison
from nlimportance.data_io import SyntheticSpec, generate_synthetic, load_csv
from nlimportance.optimizer import TrainingError
from nlimportance.scores import leverage_scores


@pytest.fixture
def dataset(tmp_path):
    assert main(["synth", "--family", "single_index", "--n", "300", "--d", "4", "--coherence", "0.2",
                 "--seed", "3", "--out", str(tmp_path / "synth")]) == 0
    return tmp_path / "synth" / "data.csv"


def read_scores(path):
    with open(path) as fh:
        return np.array([float(r["score"]) for r in csv.DictReader(fh)])


class TestScores:
    def test_identity_is_linear_leverage(self, dataset, tmp_path):
        out = tmp_path / "s"
        assert main(["scores", "--data", str(dataset), "--activation", "identity", "--out", str(out)]) == 0
        data = load_csv(dataset, target="y")
        expected = leverage_scores(np.column_stack([data.X, -data.y])).probs
        np.testing.assert_allclose(read_scores(out / "scores.csv"), expected, atol=1e-12)

    def test_missing_theta_file(self, dataset, tmp_path, capsys):
        code = main(["scores", "--data", str(dataset), "--theta-source", "file", "--theta",
                     str(tmp_path / "none.json"), "--out", str(tmp_path / "s")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_pilot_on_noiseless_linear(self, tmp_path):
        assert main(["synth", "--family", "linear", "--n", "200", "--d", "5", "--noise", "0", "--seed", "1",
                     "--out", str(tmp_path / "lin")]) == 0
        data_path = tmp_path / "lin" / "data.csv"
        assert main(["scores", "--data", str(data_path), "--model", "linear", "--out", str(tmp_path / "s")]) == 0
        data = load_csv(data_path, target="y")
        A = np.column_stack([data.X, -data.y])
        H = A @ np.linalg.pinv(A)
        np.testing.assert_allclose(read_scores(tmp_path / "s" / "scores.csv"), np.diag(H) / np.trace(H),
                                   atol=1e-8)

    def test_theta_file(self, dataset, tmp_path):
        theta = tmp_path / "theta.txt"
        theta.write_text("0.1\n0.2\n-0.3\n0.4\n")
        assert main(["scores", "--data", str(dataset), "--theta-source", "file", "--theta", str(theta),
                     "--kind", "nonlinear_norm", "--out", str(tmp_path / "s")]) == 0
        theta.write_text("0.1\n0.2\n")
        assert main(["scores", "--data", str(dataset), "--theta-source", "file", "--theta", str(theta),
                     "--out", str(tmp_path / "s")]) == 2

    def test_bad_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("x0,y\n1,oops\n")
        assert main(["scores", "--data", str(bad), "--out", str(tmp_path / "s")]) == 2


class TestPipeline:
    def test_sample_train_diagnose(self, dataset, tmp_path):
        s, sa, tr, dg = (str(tmp_path / k) for k in ("s", "sa", "tr", "dg"))
        assert main(["scores", "--data", str(dataset), "--out", s]) == 0
        assert main(["sample", "--scores", s + "/scores.csv", "--fraction", "0.1", "--seed", "4", "--out", sa]) == 0
        sample = json.loads(open(sa + "/sample.json").read())
        assert len(sample["indices"]) == 30 and sample["seed"] == 4
        assert main(["sample", "--scores", s + "/scores.json", "--s", "10", "--stratified", "--out", sa]) == 0
        assert main(["train", "--data", str(dataset), "--sample", sa + "/sample.json", "--out", tr]) == 0
        result = json.loads(open(tr + "/train.json").read())
        assert result["converged"] and len(result["theta"]) == 4
        assert main(["diagnose", "--data", str(dataset), "--theta", tr + "/train.json", "--k", "300",
                     "--out", dg]) == 0
        with open(dg + "/ranking.csv") as fh:
            assert sorted(int(r["index"]) for r in csv.DictReader(fh)) == list(range(300))

    def test_sample_needs_size(self, dataset, tmp_path):
        main(["scores", "--data", str(dataset), "--out", str(tmp_path / "s")])
        assert main(["sample", "--scores", str(tmp_path / "s" / "scores.csv"), "--out", str(tmp_path)]) == 2

    def test_planted_outlier_flagged(self, tmp_path):
        out = tmp_path / "o"
        main(["synth", "--family", "linear", "--n", "400", "--d", "3", "--plant-outlier", "17", "--out", str(out)])
        for rule in (["--top-fraction", "0.01"], ["--mad", "5"]):
            assert main(["diagnose", "--data", str(out / "data.csv"), "--model", "linear", "--kind",
                         "nonlinear_norm", "--out", str(out / "d"), *rule]) == 0
            report = json.loads((out / "d" / "diagnose.json").read_text())
            assert 17 in report["outliers"]["flagged"]
            assert report["ranking"]["top_k"][0] == 17

    def test_numerical_failure_exit_code(self, dataset, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise TrainingError("diverged")

        monkeypatch.setattr(cli, "train_full", boom)
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "t")]) == 3

    def test_config_defaults_and_override(self, dataset, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"kind": "nonlinear_norm", "activation": "logistic"}))
        out = tmp_path / "s"
        assert main(["scores", "--data", str(dataset), "--config", str(cfg), "--out", str(out)]) == 0
        assert json.loads((out / "scores.json").read_text())["kind"] == "nonlinear_norm"
        assert json.loads((out / "scores.json").read_text())["model"]["activation"]["name"] == "logistic"
        assert main(["scores", "--data", str(dataset), "--config", str(cfg), "--kind", "uniform",
                     "--out", str(out)]) == 0
        assert json.loads((out / "scores.json").read_text())["kind"] == "uniform"

    def test_missing_config(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


class TestCompare:
    @pytest.fixture
    def small(self):
        data, _ = generate_synthetic(SyntheticSpec("single_index", 300, 4, 0.1, 0.2), 2)
        return data

    def test_full_uniform_baseline(self, small):
        cfg = ExperimentConfig(kinds=["uniform"], fractions=[1.0], repeats=2)
        res = run_comparison(cfg, small)
        assert res.summary[0]["median_log_rel_err"] <= math.log(1e-6)

    def test_first_repeat_stable(self, small):
        one = run_comparison(ExperimentConfig(fractions=[0.1], repeats=1, seed=5), small)
        five = run_comparison(ExperimentConfig(fractions=[0.1], repeats=5, seed=5), small)
        first = [c for c in five.cells if c["repeat"] == 0]
        assert first == one.cells

    def test_failed_cells_recorded(self, small, monkeypatch):
        real = cli.train_subsampled

        def flaky(family, S, *args, **kwargs):
            if S.source_kind == "nonlinear_norm":
                raise TrainingError("diverged")
            return real(family, S, *args, **kwargs)

        monkeypatch.setattr(cli, "train_subsampled", flaky)
        res = run_comparison(ExperimentConfig(fractions=[0.1], repeats=2), small)
        statuses = {c["kind"]: c["status"] for c in res.cells}
        assert statuses["nonlinear_norm"] == "failed" and statuses["uniform"] == "ok"
        row = next(r for r in res.summary if r["kind"] == "nonlinear_norm")
        assert row["median_log_rel_err"] == "nan"

    def test_cell_seeds(self):
        seeds = {cell_seed(0, k, f, r) for k in ("uniform", "nonlinear_norm") for f in (0.1, 0.2) for r in range(3)}
        assert len(seeds) == 12
        assert cell_seed(7, "uniform", 0.1, 2) == cell_seed(7, "uniform", 0.1, 2)

    @pytest.mark.parametrize("kwargs", [dict(kinds=[]), dict(fractions=[0.0]), dict(repeats=0),
                                        dict(kinds=["random"])])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig(**kwargs)

    def test_cli_output_format(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"experiment": {"fractions": [0.1, 0.2], "repeats": 2},
                                   "synthetic": {"n": 300, "d": 4, "coherence": 0.2}}))
        assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
        lines = (tmp_path / "c" / "compare.csv").read_text().splitlines()
        assert lines[0] == "kind,fraction,median_log_rel_err,iqr"
        assert len(lines) == 1 + 3 * 2


def test_every_command_is_deterministic(tmp_path):
    def run(tag):
        out = tmp_path / tag
        data = str(out / "data.csv")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"experiment": {"fractions": [0.1], "repeats": 2},
                                   "synthetic": {"n": 200, "d": 3, "coherence": 0.2}}))
        assert main(["synth", "--n", "200", "--d", "3", "--coherence", "0.2", "--seed", "8", "--out", str(out)]) == 0
        assert main(["scores", "--data", data, "--seed", "8", "--out", str(out)]) == 0
        assert main(["sample", "--scores", str(out / "scores.csv"), "--s", "25", "--seed", "8", "--out", str(out)]) == 0
        assert main(["train", "--data", data, "--sample", str(out / "sample.json"), "--seed", "8",
                     "--out", str(out)]) == 0
        assert main(["diagnose", "--data", data, "--theta", str(out / "train.json"), "--out", str(out)]) == 0
        assert main(["compare", "--config", str(cfg), "--seed", "8", "--out", str(out)]) == 0
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    first, second = run("a"), run("b")
    assert first.keys() == second.keys() and len(first) >= 10
    assert first == second

import csv
import json
import math

import numpy as np
import pytest
from scipy import stats as sps

from bb84time import cli
from bb84time.cli import ExperimentConfig, main, read_samples
from bb84time.config import baseline
from bb84time.errors import ConfigError, FitFailureError, NumericalInstabilityError
from bb84time.stats import (auto_grid, dkw_band, dkw_halfwidth, ecdf, ecdf_ccdf_ci, ks_critical, ks_two_sample,
                            qq_pairs)

GRID = "200,2500,3500,5000,10000"


def rows(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestStats:
    def test_ecdf(self):
        x = [3.0, 1.0, 2.0, 2.0]
        np.testing.assert_array_equal(ecdf(x, [0.5, 1.0, 2.0, 2.5, 3.0]), [0, 0.25, 0.75, 0.75, 1.0])

    def test_identical_batches(self):
        x = np.random.default_rng(0).exponential(size=1000)
        r = ks_two_sample(x, x)
        assert r.statistic == 0.0 and r.passed
        pc, a, b = qq_pairs(x, x)
        assert pc[0] == 0.5 and pc[-1] == 99.5 and pc.size == 199
        np.testing.assert_array_equal(a, b)

    def test_ks_critical_level(self):
        # the asymptotic critical value rejects at about the nominal level
        assert ks_critical(10 ** 5, 10 ** 5, 0.01) == pytest.approx(1.6276 * math.sqrt(2e-5), rel=1e-3)
        rng = np.random.default_rng(1)
        rej = sum(not ks_two_sample(rng.random(2000), rng.random(2000), 0.05).passed for _ in range(400))
        assert 5 <= rej <= 40

    def test_dkw(self):
        assert dkw_halfwidth(10 ** 5, 0.01) == pytest.approx(math.sqrt(math.log(200) / 2e5))
        x = np.random.default_rng(2).exponential(size=5000)
        f, lo, hi = dkw_band(x, [0.1, 1.0, 3.0])
        assert np.all(lo <= f) and np.all(f <= hi) and lo.min() >= 0 and hi.max() <= 1
        grid = np.linspace(0, 6, 50)
        assert np.all(np.abs(ecdf(x, grid) - sps.expon.cdf(grid)) <= dkw_halfwidth(5000))

    def test_wilson(self):
        x = np.random.default_rng(3).exponential(size=4000)
        lo, hi = ecdf_ccdf_ci(x, [0.5, 2.0])
        true = np.exp(-np.array([0.5, 2.0]))
        assert np.all(lo <= true) and np.all(true <= hi)

    def test_auto_grid(self):
        g = auto_grid(10.0, np.linspace(10, 1000, 500), points=20)
        assert g.size == 20 and g[0] == 10.0 and np.all(np.diff(g) > 0)


class TestConfig:
    def test_defaults_and_round_trip(self):
        exp = ExperimentConfig.from_dict({"hardware": baseline(0.01).to_dict(), "samples": 5, "s_grid": [1.0, 2.0]})
        assert exp.hardware.config_hash() == baseline(0.01).config_hash()
        assert ExperimentConfig.from_dict({}).hardware.config_hash() == baseline().config_hash()

    @pytest.mark.parametrize("doc", [{"samples": 0}, {"s_grid": [2.0, 1.0]}, {"method": "gaver"},
                                     {"bogus": 1}, {"seed": -1}])
    def test_rejects(self, doc):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(doc)

    def test_shipped_configs(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        files = sorted(root.glob("*.json"))
        assert len(files) == 3
        for f in files:
            exp = ExperimentConfig.from_dict(json.loads(f.read_text()))
            assert exp.hardware.p_swap == 0.5


class TestCli:
    def test_bad_config_exit_codes(self, tmp_path):
        assert main(["analyze", "--n", "0", "--out", str(tmp_path)]) == 2
        assert main(["analyze", "--s-grid", "5,1", "--out", str(tmp_path)]) == 2
        assert main(["analyze", "--s-grid", "a,b", "--out", str(tmp_path)]) == 2
        assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
        with pytest.raises(SystemExit):
            main(["nonsense"])

    def test_numeric_exit_code(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise NumericalInstabilityError("forced")
        monkeypatch.setattr(cli, "invert_laplace_cdf", boom)
        assert main(["analyze", "--s-grid", "3000,4000", "--out", str(tmp_path)]) == 3
        r = rows(tmp_path / "analyze.csv")
        assert all(x["flag"] == "instability" and x["cdf"] == "nan" for x in r)

    def test_fit_exit_code(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise FitFailureError("forced")
        monkeypatch.setattr(cli.SynthModel, "build", boom)
        assert main(["fit", "--out", str(tmp_path)]) == 4

    def test_analyze(self, tmp_path):
        assert main(["analyze", "--p-gen", "0.1", "--s-grid", GRID, "--out", str(tmp_path)]) == 0
        r = rows(tmp_path / "analyze.csv")
        h = baseline(0.1).config_hash()
        assert [x["s"] for x in r] == ["200.0", "2500.0", "3500.0", "5000.0", "10000.0"]
        assert all(x["config_hash"] == h and x["seed"] == "12345" for x in r)
        cdf = np.array([float(x["cdf"]) for x in r])
        chern = np.array([float(x["chernoff_ccdf"]) for x in r])
        # 200 is above the support floor 126, the transform must still give ~0 there
        assert abs(cdf[0]) < 1e-6
        assert cdf[1:] == pytest.approx([0.02546, 0.7009, 0.8515, 0.99285], abs=2e-4)
        assert np.all(chern >= 1 - cdf - 1e-12) and np.all(chern <= 1)
        meta = json.loads((tmp_path / "analyze.meta.json").read_text())
        assert meta["config_hash"] == h and "timestamp" in meta

    def test_below_floor(self, tmp_path):
        assert main(["analyze", "--s-grid", "50,100", "--out", str(tmp_path)]) == 0
        r = rows(tmp_path / "analyze.csv")
        assert [float(x["cdf"]) for x in r] == [0.0, 0.0]

    def test_simulate_reproducible(self, tmp_path):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(["simulate", "--samples", "40", "--seed", "7", "--out", str(a)]) == 0
        assert main(["simulate", "--samples", "40", "--seed", "7", "--workers", "2", "--out", str(b)]) == 0
        assert main(["simulate", "--samples", "40", "--seed", "8", "--out", str(c)]) == 0
        ta = (a / "samples_full.csv").read_bytes()
        assert ta == (b / "samples_full.csv").read_bytes()
        assert ta != (c / "samples_full.csv").read_bytes()
        x = read_samples(str(a / "samples_full.csv"))
        assert x.size == 40 and x.min() >= baseline().floor
        assert rows(a / "samples_full.csv")[0]["seed"] == "7"
        with pytest.raises(ConfigError):
            read_samples(str(a / "simulate.meta.json"))

    def test_synth_and_compare(self, tmp_path, model_1):
        model = tmp_path / "model.json"
        model.write_text(model_1.to_json())
        common = ["--p-gen", "0.1", "--samples", "300", "--out", str(tmp_path), "--model", str(model)]
        assert main(["synth", *common]) == 0
        assert main(["simulate", *common]) == 0
        assert main(["compare", *common, "--s-grid", GRID, "--full", str(tmp_path / "samples_full.csv"),
                     "--synth", str(tmp_path / "samples_synth.csv")]) == 0
        tail = rows(tmp_path / "tail_report.csv")
        assert len(tail) == 5 and set(tail[0]) >= {"ecdf_full", "ecdf_synth", "band_lo", "band_hi", "config_hash"}
        assert len(rows(tmp_path / "qq.csv")) == 199
        ks = json.loads((tmp_path / "ks.json").read_text())
        assert ks["n_full"] == 300 and ks["band"] == "DKW"
        assert ks["config_hash"] == baseline(0.1).config_hash()
        # a model fitted for another configuration is refused
        assert main(["synth", "--p-gen", "0.01", "--samples", "5", "--out", str(tmp_path),
                     "--model", str(model)]) == 2

    def test_elementary(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["elementary", "--out", str(a), "--points", "30"]) == 0
        assert main(["elementary", "--out", str(b), "--points", "30"]) == 0
        for name in ("ex1.csv", "diffco_bound.csv", "diffco_mgf.csv", "elementary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        ex1 = rows(a / "ex1.csv")
        bound = np.array([float(x["bound"]) for x in ex1])
        assert np.all((bound > 0) & (bound <= 1)) and np.all(np.diff(bound) <= 0)
        doc = json.loads((a / "elementary.json").read_text())
        assert doc["sharper"] is True
        s = np.array([float(x["s"]) for x in ex1])
        ref = np.array([float(x["prior_reference"]) for x in ex1])
        beyond = s > doc["crossover_s"]
        assert beyond.any() and np.all(bound[beyond] < ref[beyond])
        t = np.array([float(x["t_star"]) for x in ex1])
        assert abs(t[-1] - doc["b_prime"]) < 0.02
        dc = np.array([float(x["chernoff_ccdf"]) for x in rows(a / "diffco_bound.csv")])
        assert np.all((dc > 0) & (dc <= 1))
        mgf = rows(a / "diffco_mgf.csv")
        assert float(mgf[0]["mgf"]) == pytest.approx(1.0, abs=1e-9)
        assert main(["elementary", "--out", str(a), "--p", "1.5"]) == 2

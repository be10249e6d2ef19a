import json
import shutil
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from rhpivot.cli import main
from rhpivot.io import read_trips
from rhpivot.newmode import VotTable

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def write_csv(path, rows, header):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def survey(tmp_path):
    resp = write_csv(tmp_path / "resp.csv",
                     [(f"r{i}", "m" if i < 45 else "f", "y" if i % 3 else "o") for i in range(100)],
                     ["respondent_id", "gender", "age"])
    margins = write_csv(tmp_path / "margins.csv",
                        [("gender", "m", 0.4892), ("gender", "f", 0.5108),
                         ("age", "y", 0.55), ("age", "o", 0.45)],
                        ["variable", "category", "target_share"])
    return resp, margins


@pytest.fixture(scope="module")
def observations(tmp_path_factory):
    d = tmp_path_factory.mktemp("obs")
    res = run("synth-observations", "--seed", 4, "--respondents", 200,
              "--spec", CONFIGS / "mnl_spec.json", "--truth", CONFIGS / "truth.json",
              "--out", d / "obs.csv")
    assert res.exit_code == 0, res.output
    return d / "obs.csv"


def sweep_config(tmp_path, **changes):
    cfg = json.loads((CONFIGS / "run.json").read_text())
    shutil.copy(CONFIGS / "model.json", tmp_path / "model.json")
    cfg["synthetic_trips"]["count"] = 1500
    cfg["paths"]["output_dir"] = "out"
    cfg.update(changes)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


class TestWeight:
    def test_happy(self, tmp_path, survey):
        res = run("weight", "--respondents", survey[0], "--margins", survey[1],
                  "--out", tmp_path / "w")
        assert res.exit_code == 0
        w = pd.read_csv(tmp_path / "w" / "weights.csv")
        assert len(w) == 100 and w["weight"].sum() == pytest.approx(100)
        report = json.loads((tmp_path / "w" / "ipf_report.json").read_text())
        assert report["converged"]

    def test_empty_cell(self, tmp_path, survey):
        m = write_csv(tmp_path / "m2.csv", [("gender", "m", 0.4), ("gender", "f", 0.4),
                                            ("gender", "x", 0.2)],
                      ["variable", "category", "target_share"])
        res = run("weight", "--respondents", survey[0], "--margins", m, "--out", tmp_path / "w")
        assert res.exit_code == 1 and "'x'" in res.output
        assert not (tmp_path / "w").exists()

    def test_not_converged(self, tmp_path, survey):
        res = run("weight", "--respondents", survey[0], "--margins", survey[1],
                  "--out", tmp_path / "w", "--max-iter", 1)
        assert res.exit_code == 2
        assert (tmp_path / "w" / "weights.csv").exists()
        assert not json.loads((tmp_path / "w" / "ipf_report.json").read_text())["converged"]

    def test_schema_comment_and_bad_number(self, tmp_path, survey):
        text = "# schema_version: 1\n" + survey[1].read_text()
        (tmp_path / "m.csv").write_text(text)
        assert run("weight", "--respondents", survey[0], "--margins", tmp_path / "m.csv",
                   "--out", tmp_path / "w").exit_code == 0
        (tmp_path / "bad.csv").write_text(text.replace("0.4892", "abc"))
        res = run("weight", "--respondents", survey[0], "--margins", tmp_path / "bad.csv",
                  "--out", tmp_path / "w2")
        assert res.exit_code == 1 and "bad.csv:3" in res.output


class TestEstimate:
    def test_happy(self, tmp_path, observations):
        res = run("estimate", "--observations", observations, "--spec",
                  CONFIGS / "mnl_spec.json", "--purpose", "HBW", "--out", tmp_path)
        assert res.exit_code == 0, res.output
        rep = json.loads((tmp_path / "estimate_HBW.json").read_text())
        for key in ("coefficients", "std_errors", "log_likelihood", "rho_squared"):
            assert key in rep
        assert rep["converged"] and not (tmp_path / "estimate_HBO.json").exists()

    def test_weighted_and_unweighted(self, tmp_path, observations):
        obs = pd.read_csv(observations)
        ids = obs["respondent_id"].unique()
        write_csv(tmp_path / "w.csv", [(r, 0.5 + (i % 3) / 2) for i, r in enumerate(ids)],
                  ["respondent_id", "weight"])
        res = run("estimate", "--observations", observations, "--spec",
                  CONFIGS / "mnl_spec.json", "--weights", tmp_path / "w.csv",
                  "--out", tmp_path / "o")
        assert res.exit_code == 0, res.output
        names = sorted(p.name for p in (tmp_path / "o").iterdir())
        assert names == ["coefficients.csv", "estimate_HBO.json", "estimate_HBO_weighted.json",
                         "estimate_HBW.json", "estimate_HBW_weighted.json"]
        a = json.loads((tmp_path / "o" / "estimate_HBW.json").read_text())
        b = json.loads((tmp_path / "o" / "estimate_HBW_weighted.json").read_text())
        assert b["weighted"] and a["coefficients"] != b["coefficients"]

    def test_missing_column(self, tmp_path, observations):
        obs = pd.read_csv(observations).drop(columns=["cost_auto"])
        obs.to_csv(tmp_path / "obs.csv", index=False)
        res = run("estimate", "--observations", tmp_path / "obs.csv", "--spec",
                  CONFIGS / "mnl_spec.json", "--out", tmp_path / "o")
        assert res.exit_code == 1 and "cost_auto" in res.output
        assert not (tmp_path / "o").exists()

    def test_nonidentifiable(self, tmp_path, observations):
        spec = json.loads((CONFIGS / "mnl_spec.json").read_text())
        spec["terms"].append({"name": "b_autos_all", "kind": "interaction",
                              "alternatives": ["rideHailing", "auto", "transit"],
                              "column": "autos"})
        (tmp_path / "spec.json").write_text(json.dumps(spec))
        res = run("estimate", "--observations", observations, "--spec", tmp_path / "spec.json",
                  "--out", tmp_path / "o")
        assert res.exit_code == 1 and "b_autos_all" in res.output


def report(path, purpose, coefs):
    path.write_text(json.dumps({"purpose": purpose, "coefficients": coefs}))
    return path


class TestVot:
    def test_cell_and_shape(self, tmp_path):
        a = report(tmp_path / "a.json", "HBW", {"b_time": -0.2, "b_cost_low": -0.8,
                                                 "b_cost_high": -0.4})
        b = report(tmp_path / "b.json", "HBO", {"b_time": -0.1, "b_cost_low": -0.8,
                                                 "b_cost_high": -0.5})
        res = run("vot", "--report", a, "--report", b, "--group", "<1500=b_cost_low",
                  "--group", ">=1500=b_cost_high", "--out", tmp_path / "vot.csv")
        assert res.exit_code == 0, res.output
        table = pd.read_csv(tmp_path / "vot.csv").set_index("income_group")
        assert table.shape == (2, 2)
        assert table.loc["<1500", "HBW"] == 15.0
        assert table.loc[">=1500", "HBO"] == pytest.approx(12.0)

    def test_zero_cost(self, tmp_path):
        a = report(tmp_path / "a.json", "HBW", {"b_time": -0.2, "b_cost_low": -0.8,
                                                 "b_cost_high": 0.0})
        res = run("vot", "--report", a, "--group", "<1500=b_cost_low",
                  "--group", ">=1500=b_cost_high", "--out", tmp_path / "vot.csv")
        assert res.exit_code == 1 and ">=1500" in res.output
        assert not (tmp_path / "vot.csv").exists()


class TestSweep:
    def test_preset_rows(self, tmp_path):
        res = run("sweep", "--config", sweep_config(tmp_path), "--preset", "paper-grid")
        assert res.exit_code == 0, res.output
        summary = pd.read_csv(tmp_path / "out" / "summary.csv")
        assert (summary.groupby("purpose").size() == 17).all()
        assert "mass_deviation" not in summary
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["seed"] == 20240501 and len(manifest["config_sha256"]) == 64

    def test_deterministic(self, tmp_path):
        cfg = sweep_config(tmp_path)
        run("sweep", "--config", cfg, "--out", tmp_path / "a")
        run("sweep", "--config", cfg, "--out", tmp_path / "b", "--workers", 4)
        for name in ("results.csv", "summary.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_as_printed(self, tmp_path):
        res = run("sweep", "--config", sweep_config(tmp_path), "--variant", "as-printed")
        assert res.exit_code == 0
        summary = pd.read_csv(tmp_path / "out" / "summary.csv")
        rh = summary["rh_share"].to_numpy()
        assert summary["mass_deviation"].to_numpy() == pytest.approx(rh, abs=1e-12)

    def test_seed_required(self, tmp_path):
        res = run("sweep", "--config", sweep_config(tmp_path, seed=None))
        assert res.exit_code == 1 and "seed" in res.output
        assert not (tmp_path / "out").exists()

    def test_bad_variant(self, tmp_path):
        res = run("sweep", "--config", sweep_config(tmp_path, variant="other"))
        assert res.exit_code == 1 and not (tmp_path / "out").exists()

    def test_missing_vot(self, tmp_path):
        cfg = json.loads(sweep_config(tmp_path).read_text())
        cfg["vot"]["rh"]["group_map"] = {}
        (tmp_path / "run.json").write_text(json.dumps(cfg))
        res = run("sweep", "--config", tmp_path / "run.json")
        assert res.exit_code == 1 and "value of time" in res.output
        assert not (tmp_path / "out").exists()

    def test_trips_file(self, tmp_path):
        res = run("synth-trips", "--seed", 9, "--count", 400, "--model",
                  CONFIGS / "model.json", "--out", tmp_path / "trips.csv")
        assert res.exit_code == 0
        cfg = json.loads(sweep_config(tmp_path).read_text())
        del cfg["synthetic_trips"]
        cfg["paths"]["trips"] = "trips.csv"
        (tmp_path / "run.json").write_text(json.dumps(cfg))
        res = run("sweep", "--config", tmp_path / "run.json")
        assert res.exit_code == 0, res.output
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["n_trips"] == 400 and "trips" in manifest["input_sha256"]

    def test_trips_metro_costs(self, tmp_path):
        rows = [("t1", "HBW", 20, 8, "<1500", 1, 30, 3.3, -1, -0.5, 0.2, -0.6, -0.4, 0.1, ""),
                ("t2", "HBO", 10, 3, ">5600", "false", 15, 3.3, -1, "", 0.2, -0.6, -0.4, 0.1, -1)]
        header = ["trip_id", "purpose", "auto_time_min", "distance_km", "income_group",
                  "in_service_area", "metro_time_min", "metro_cost_eur", "u_walk",
                  "u_bicycle", "u_autoDriver", "u_autoPassenger", "u_bus", "u_metro",
                  "u_train"]
        write_csv(tmp_path / "trips.csv", rows, header)
        vt = VotTable({("<1500", "HBW"): 8.94, (">5600", "HBO"): 13.29})
        modes = ["walk", "bicycle", "autoDriver", "autoPassenger", "bus", "metro", "train"]
        t1, t2 = read_trips(tmp_path / "trips.csv", modes, vt)
        assert t1.gc_metro_min == pytest.approx(30 + 3.3 / (8.94 / 60))
        assert t1.utilities["train"] is None and t2.utilities["bicycle"] is None
        assert t1.in_service_area and not t2.in_service_area

    def test_bad_trip_row(self, tmp_path):
        write_csv(tmp_path / "trips.csv",
                  [("t1", "XYZ", 20, 8, "<1500", 1, 30, -1, 0.1)],
                  ["trip_id", "purpose", "auto_time_min", "distance_km", "income_group",
                   "in_service_area", "gc_metro_min", "u_walk", "u_metro"])
        cfg = json.loads(sweep_config(tmp_path).read_text())
        del cfg["synthetic_trips"]
        cfg["paths"]["trips"] = "trips.csv"
        (tmp_path / "run.json").write_text(json.dumps(cfg))
        res = run("sweep", "--config", tmp_path / "run.json")
        assert res.exit_code == 1 and "trips.csv:2" in res.output

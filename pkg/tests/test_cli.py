"""Command-line pipeline: subcommands, exit codes, determinism, golden outputs."""

import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from arealtrend.cli import main

GOLDEN_DIR = Path(__file__).parent / "golden"


def _simulate(tmp_path, extra=()):
    out = tmp_path / "sim"
    rc = main(
        ["simulate", "--grid", "3x3", "--periods", "6", "--seed", "5", "--gamma", "0.3,-0.2",
         "-o", str(out), *extra]
    )
    assert rc == 0
    return out


def _fit_args(sim, out, model="car", extra=()):
    return [
        "fit", "--crimes", str(sim / "crimes.csv"), "--covariates", str(sim / "covariates.csv"),
        "--edges", str(sim / "edges.csv"), "--model", model,
        "--iters", "220", "--burnin", "20", "--thin", "2", "--seed", "7",
        "-o", str(out), *extra,
    ]


class TestSimulate:
    def test_outputs_reingestable(self, tmp_path):
        from arealtrend.data import load_covariates_csv, load_crimes_csv
        from arealtrend.graph import load_edges_csv

        sim = _simulate(tmp_path)
        panel = load_crimes_csv(sim / "crimes.csv")
        assert panel.n == 9 and panel.n_periods == 6
        unit_ids, names, values = load_covariates_csv(sim / "covariates.csv")
        assert names == ["x1", "x2"] and len(unit_ids) == 9
        g = load_edges_csv(sim / "edges.csv", unit_ids=panel.unit_ids)
        assert g.n_edges == 12
        truth = json.loads((sim / "truth.json").read_text())
        assert len(truth["alpha"]) == 9

    def test_barrier_flag(self, tmp_path):
        out = tmp_path / "sim"
        rc = main(
            ["simulate", "--cycle", "5", "--periods", "4", "--seed", "1",
             "--barrier-alpha", "u000:u004", "-o", str(out)]
        )
        assert rc == 0
        truth = json.loads((out / "truth.json").read_text())
        assert sum(truth["w_alpha"]) == 4.0


class TestFit:
    def test_global_model_fast_at_benchmark_size(self, tmp_path):
        # n = 100, T = 10, default 2050-iteration settings: must finish
        # well inside the 60 s budget
        out = tmp_path / "sim"
        assert main(["simulate", "--grid", "10x10", "--periods", "10", "--seed", "3", "-o", str(out)]) == 0
        started = time.perf_counter()
        rc = main(
            ["fit", "--crimes", str(out / "crimes.csv"), "--edges", str(out / "edges.csv"),
             "--model", "global", "--seed", "1", "-o", str(tmp_path / "fit")]
        )
        elapsed = time.perf_counter() - started
        assert rc == 0
        assert elapsed < 60.0
        assert (tmp_path / "fit" / "summary.csv").exists()
        assert (tmp_path / "fit" / "manifest.json").exists()

    def test_jobs_flag_deterministic_across_parallel_chains(self, tmp_path):
        sim = _simulate(tmp_path)
        args = lambda out, jobs: [
            "fit", "--crimes", str(sim / "crimes.csv"), "--covariates", str(sim / "covariates.csv"),
            "--edges", str(sim / "edges.csv"), "--model", "car",
            "--iters", "240", "--burnin", "20", "--thin", "2", "--chains", "2",
            "--seed", "7", "--jobs", str(jobs), "--save-draws", "-o", str(out),
        ]
        assert main(args(tmp_path / "seq", 1)) == 0
        assert main(args(tmp_path / "par", 2)) == 0
        a = (tmp_path / "seq" / "draws.csv").read_bytes()
        b = (tmp_path / "par" / "draws.csv").read_bytes()
        assert a == b

    def test_missing_adjacency_exit_3(self, tmp_path, capsys):
        sim = _simulate(tmp_path)
        rc = main(
            ["fit", "--crimes", str(sim / "crimes.csv"), "--model", "car",
             "-o", str(tmp_path / "fit")]
        )
        assert rc == 3
        err = capsys.readouterr().err
        assert "--edges" in err and "--polygons" in err

    def test_identical_seeds_byte_identical_draws(self, tmp_path):
        sim = _simulate(tmp_path)
        rc1 = main(_fit_args(sim, tmp_path / "fit1", extra=("--save-draws",)))
        rc2 = main(_fit_args(sim, tmp_path / "fit2", extra=("--save-draws",)))
        assert rc1 == 0 and rc2 == 0
        a = (tmp_path / "fit1" / "draws.csv").read_bytes()
        b = (tmp_path / "fit2" / "draws.csv").read_bytes()
        assert a == b

    def test_inputs_not_mutated(self, tmp_path):
        sim = _simulate(tmp_path)
        before = {p.name: p.read_bytes() for p in sim.iterdir() if p.suffix == ".csv"}
        main(_fit_args(sim, tmp_path / "fit"))
        after = {p.name: p.read_bytes() for p in sim.iterdir() if p.suffix == ".csv"}
        assert before == after

    def test_manifest_records_digests_and_config(self, tmp_path):
        sim = _simulate(tmp_path)
        main(_fit_args(sim, tmp_path / "fit"))
        doc = json.loads((tmp_path / "fit" / "manifest.json").read_text())
        assert doc["command"] == "fit"
        assert doc["config"]["family"] == "spatial_car"
        assert doc["config"]["chain"]["n_iter"] == 220
        assert any(k.endswith("crimes.csv") for k in doc["inputs"])

    def test_config_file_with_flag_override(self, tmp_path):
        sim = _simulate(tmp_path)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"family": "global_shrinkage", "chain": {"n_iter": 150, "burn_in": 30, "thin": 1, "n_chains": 1, "seed": 1}}))
        rc = main(
            ["fit", "--crimes", str(sim / "crimes.csv"), "--covariates", str(sim / "covariates.csv"),
             "--config", str(cfg_path), "--seed", "99", "-o", str(tmp_path / "fit")]
        )
        assert rc == 0
        doc = json.loads((tmp_path / "fit" / "manifest.json").read_text())
        assert doc["config"]["family"] == "global_shrinkage"  # from file
        assert doc["config"]["chain"]["seed"] == 99  # flag wins
        assert doc["config"]["chain"]["n_iter"] == 150

    def test_noninformative_prior_flag(self, tmp_path):
        sim = _simulate(tmp_path)
        rc = main(_fit_args(sim, tmp_path / "fit", extra=("--prior", "noninf")))
        assert rc == 0
        meta = json.loads((tmp_path / "fit" / "chain_meta.json").read_text())
        assert meta["config"]["prior_mode"] == "noninformative"

    def test_bad_crimes_file_exit_2(self, tmp_path):
        bad = tmp_path / "crimes.csv"
        bad.write_text("wrong,header\n1,2\n")
        rc = main(["fit", "--crimes", str(bad), "--model", "global", "-o", str(tmp_path / "f")])
        assert rc == 2

    def test_unknown_model_exit_2(self, tmp_path):
        sim = _simulate(tmp_path)
        rc = main(["fit", "--crimes", str(sim / "crimes.csv"), "--model", "bogus", "-o", str(tmp_path / "f")])
        assert rc == 2


class TestEvaluate:
    def test_cv_folds_recorded(self, tmp_path):
        sim = _simulate(tmp_path)
        rc = main(
            ["evaluate", "--crimes", str(sim / "crimes.csv"),
             "--covariates", str(sim / "covariates.csv"),
             "--models", "global,noshrink", "--cv", "-o", str(tmp_path / "eval")]
        )
        assert rc == 0
        doc = json.loads((tmp_path / "eval" / "evaluation.json").read_text())
        assert len(doc["cv_folds"]["no_shrinkage"]) == 6  # one fold per period
        with open(tmp_path / "eval" / "comparison.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["model"] for r in rows] == ["global_trend", "no_shrinkage"]
        assert rows[1]["pct_change"] == ""

    def test_single_family_one_row(self, tmp_path):
        sim = _simulate(tmp_path)
        rc = main(
            ["evaluate", "--crimes", str(sim / "crimes.csv"), "--models", "noshrink",
             "-o", str(tmp_path / "eval")]
        )
        assert rc == 0
        lines = (tmp_path / "eval" / "comparison.csv").read_text().splitlines()
        assert len(lines) == 2


class TestSummarize:
    def test_summarize_after_fit(self, tmp_path):
        sim = _simulate(tmp_path)
        main(_fit_args(sim, tmp_path / "fit", model="varborders"))
        rc = main(["summarize", "--fit-dir", str(tmp_path / "fit"), "--figures"])
        assert rc == 0
        assert (tmp_path / "fit" / "summary.csv").exists()
        assert (tmp_path / "fit" / "barriers.csv").exists()
        assert (tmp_path / "fit" / "barriers.png").exists()

    def test_fixed_w_with_barriers_exit_5(self, tmp_path, capsys):
        sim = _simulate(tmp_path)
        main(_fit_args(sim, tmp_path / "fit", model="car"))
        rc = main(["summarize", "--fit-dir", str(tmp_path / "fit"), "--barriers"])
        assert rc == 5
        assert "fixed borders" in capsys.readouterr().err

    def test_incomplete_directory_exit_5(self, tmp_path):
        empty = tmp_path / "nothing"
        empty.mkdir()
        rc = main(["summarize", "--fit-dir", str(empty)])
        assert rc == 5

    def test_threshold_override(self, tmp_path):
        sim = _simulate(tmp_path)
        main(_fit_args(sim, tmp_path / "fit", model="varborders"))
        rc = main(
            ["summarize", "--fit-dir", str(tmp_path / "fit"),
             "--alpha-threshold", "0.0", "-o", str(tmp_path / "sum")]
        )
        assert rc == 0
        with open(tmp_path / "sum" / "barriers.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        # a zero threshold flags every edge with positive barrier mass
        for row in rows:
            expected = "1" if float(row["p_barrier_alpha"]) > 0.0 else "0"
            assert row["flag_alpha"] == expected

    def test_geojson_written_with_polygons(self, tmp_path):
        from arealtrend.synthgen import grid_polygons

        sim = _simulate(tmp_path)
        polys = grid_polygons(3, 3)
        doc = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "properties": {"unit_id": u},
                    "geometry": {"type": "Polygon", "coordinates": [[list(pt) for pt in poly[0][0]]]},
                }
                for u, poly in polys.items()
            ],
        }
        gj = tmp_path / "polygons.geojson"
        gj.write_text(json.dumps(doc))
        main(_fit_args(sim, tmp_path / "fit", model="varborders"))
        rc = main(
            ["summarize", "--fit-dir", str(tmp_path / "fit"), "--polygons", str(gj)]
        )
        assert rc == 0
        out = json.loads((tmp_path / "fit" / "results.geojson").read_text())
        assert out["type"] == "FeatureCollection"


class TestContiguityAndCovariates:
    def test_contiguity_deterministic_sorted(self, tmp_path):
        from arealtrend.synthgen import grid_polygons

        polys = grid_polygons(2, 2)
        doc = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "properties": {"unit_id": u},
                    "geometry": {"type": "Polygon", "coordinates": [[list(pt) for pt in poly[0][0]]]},
                }
                for u, poly in polys.items()
            ],
        }
        gj = tmp_path / "p.geojson"
        gj.write_text(json.dumps(doc))
        out = tmp_path / "edges.csv"
        rc = main(["contiguity", "--polygons", str(gj), "-o", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 7  # header + 6 queen edges
        assert lines[1:] == sorted(lines[1:])

    def test_build_covariates(self, tmp_path):
        from arealtrend.data import RAW_COVARIATE_COLUMNS

        header = "unit_id," + ",".join(RAW_COVARIATE_COLUMNS)
        rows = [
            "a,1000,600,200,100,50,50,0.10,0.1,0.1,0.1,0.2,0.2,0.20,40000,10,2,1,7",
            "b,1200,100,700,150,60,190,0.15,0.1,0.1,0.1,0.2,0.2,0.15,30000,10,3,2,5",
            "c,900,300,300,200,50,50,0.05,0.1,0.1,0.1,0.2,0.2,0.25,50000,10,1,1,8",
            "d,1100,50,150,700,100,100,0.20,0.1,0.1,0.1,0.2,0.2,0.10,,10,2,2,6",  # missing income
        ]
        raw = tmp_path / "raw.csv"
        raw.write_text(header + "\n" + "\n".join(rows) + "\n")
        out = tmp_path / "covariates.csv"
        rc = main(["build-covariates", "--raw", str(raw), "-o", str(out)])
        assert rc == 0
        with open(out, newline="") as fh:
            table = list(csv.DictReader(fh))
        assert [r["unit_id"] for r in table] == ["a", "b", "c"]  # d excluded
        assert "log_income" in table[0]


class TestGoldenFixture:
    """End-to-end snapshot of the frozen synthetic fixture."""

    def _run(self, tmp_path):
        sim = _simulate(tmp_path)
        fit_dir = tmp_path / "fit"
        rc = main(_fit_args(sim, fit_dir, model="varborders"))
        assert rc == 0
        rc = main(["summarize", "--fit-dir", str(fit_dir)])
        assert rc == 0
        return fit_dir

    @staticmethod
    def _read_rows(path):
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))

    def test_matches_golden_outputs(self, tmp_path):
        fit_dir = self._run(tmp_path)
        for name in ("summary.csv", "barriers.csv"):
            got = self._read_rows(fit_dir / name)
            want = self._read_rows(GOLDEN_DIR / name)
            assert len(got) == len(want)
            assert got[0].keys() == want[0].keys()
            for g, w in zip(got, want):
                for key, wv in w.items():
                    try:
                        assert float(g[key]) == pytest.approx(float(wv), rel=1e-9, abs=1e-12)
                    except ValueError:
                        assert g[key] == wv

import copy
import json
import os

import pandas as pd
import pytest
import yaml

from pyfwdrates import FWR_PIPELINE, run_pipeline

from . import CONFIG_DIR

SURFACE_CHECKS = {"occupation_sum", "pair_occupation_sum", "pair_marginal", "pair_diagonal",
                  "residual_p1", "residual_p2", "solved_in_range", "boundary_identities"}

SMALL = {
    "name": "small",
    "states": {"labels": ["alive", "dead"]},
    "initial": {"alive": 1.0},
    "intensities": [{"from": "alive", "to": "dead", "family": "constant", "params": {"rate": 0.1}}],
    "grid": {"t_max": 2.0, "step": 0.05, "pivot": 1.0},
    "discount": {"rate": 0.03},
    "cashflows": {
        "term_insurance": {"transitions": [{"from": "alive", "to": "dead", "amount": 1.0}]},
        "annuity": {"sojourn": [{"state": "alive", "kind": "density", "rate": 1.0}]},
    },
    "conditioning": {"scheme": "as_if_markov", "min_paths": 50},
    "ensemble": {"n_paths": 2000, "base_seed": 1},
    "thresholds": {"squaring_paths": 200},
}

SMALL_FREE_POLICY = {
    "name": "small_free_policy",
    "states": {"labels": ["active", "dead", "active_free", "dead_free"],
               "s0": ["active", "dead"], "s1": ["active_free", "dead_free"]},
    "initial": {"active": 1.0},
    "intensities": [
        {"from": "active", "to": "dead", "family": "constant", "params": {"rate": 0.05}},
        {"from": "active", "to": "active_free", "family": "constant", "params": {"rate": 0.2}},
        {"from": "active_free", "to": "dead_free", "family": "duration_decay",
         "params": {"level": 0.05, "decay": 1.0, "floor": 0.02}},
    ],
    "grid": {"t_max": 2.0, "step": 0.1, "pivot": 1.0},
    "discount": {"rate": 0.02},
    "cashflows": {"contract": {
        "sojourn": [{"state": "active", "kind": "periodic", "amount": -0.2, "start": 0.0, "end": 1.5, "every": 0.5},
                    {"state": "active", "kind": "atom", "time": 2.0, "amount": 1.0},
                    {"state": "active_free", "kind": "atom", "time": 2.0, "amount": 1.0}],
        "transitions": [{"from": "active", "to": "dead", "amount": 1.0},
                        {"from": "active_free", "to": "dead_free", "amount": 1.0}],
    }},
    "free_policy": {"scheme": "contract",
                    "rho": [{"from": "active", "to": "active_free", "family": "linear",
                             "params": {"intercept": 0.4, "slope": 0.1}}]},
    "conditioning": {"min_paths": 50},
    "ensemble": {"n_paths": 1500, "base_seed": 3},
    "thresholds": {"squaring_paths": 100},
}


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    pipe = FWR_PIPELINE(config=SMALL, out_dir=str(out))
    pipe.run()
    return pipe, out


class Test_run_pipeline:
    def test_all_checks_pass(self, finished):
        pipe, out = finished
        assert (pipe.ok)
        assert (pipe.result == {"code": 0, "message": "ok"})
        assert (all(c["passed"] for c in pipe.checks))
        names = {c["name"] for c in pipe.checks}
        assert ({"residual_p1", "residual_p2", "boundary_identities", "counting_identities",
                 "squaring_identity[annuity]", "dual_path_s_plus[term_insurance]"} <= names)

    def test_artifacts(self, finished):
        pipe, out = finished
        for name in ("paths.npz", "surfaces_alive.npz", "solved_alive.npz", "report.csv", "report.txt", "checks.json"):
            assert (os.path.exists(os.path.join(out, name)))
        report = pd.read_csv(os.path.join(out, "report.csv"))
        assert (list(report["cashflow"]) == ["term_insurance", "annuity"] * 2)
        assert (list(report["label"]) == ["alive", "alive", "dead", "dead"])
        assert ({"v_plus", "v_minus", "s_plus", "variance", "oracle_v_plus", "oracle_v_plus_se", "z_v_plus"}
                <= set(report.columns))
        assert ((report["v_plus"] - report["oracle_v_plus"]).abs().max() < 1e-9)
        with open(os.path.join(out, "checks.json"), "rt") as f:
            assert (len(json.load(f)) == len(pipe.checks))

    def test_stage_by_stage(self, finished, tmp_path):
        pipe, out = finished
        for stage in ("simulate", "estimate", "solve", "value"):
            assert (FWR_PIPELINE(config=SMALL, out_dir=str(tmp_path)).run(stage))
        check = FWR_PIPELINE(config=SMALL, out_dir=str(tmp_path))
        check.run("check")
        assert (check.ok)
        with open(os.path.join(tmp_path, "report.csv"), "rb") as a, open(os.path.join(out, "report.csv"), "rb") as b:
            assert (a.read() == b.read())

    def test_fresh_ensemble(self, finished, tmp_path):
        pipe, out = finished
        assert (not any(c["name"].startswith("fresh_oracle_") for c in pipe.checks))
        doc = copy.deepcopy(SMALL)
        doc["thresholds"]["fresh_paths"] = 2000
        fresh = FWR_PIPELINE(config=doc, out_dir=str(tmp_path))
        fresh.run()
        assert (fresh.ok)
        checks = [c for c in fresh.checks if c["name"].startswith("fresh_oracle_")]
        names = {(c["name"], c["label"]) for c in checks}
        assert ({("fresh_oracle_v_plus[term_insurance]", "alive"), ("fresh_oracle_s_plus[annuity]", "alive")} <= names)
        assert (all(c["passed"] for c in checks))
        shared = {(c["name"], c["label"]): c for c in fresh.checks if c["name"].startswith("oracle_")}
        for c in checks:
            if c["label"] == "alive" and "v_minus" not in c["name"]:
                assert (c["tolerance"] > shared[(c["name"][len("fresh_"):], c["label"])]["tolerance"])

    def test_missing_artifacts(self, tmp_path):
        pipe = FWR_PIPELINE(config=SMALL, out_dir=str(tmp_path))
        assert (not pipe.run("value"))
        assert (pipe.status_code == -1)
        assert ("run the estimate stage first" in pipe.reason)

    def test_strict_determinism(self, tmp_path):
        for name in ("a", "b"):
            assert (run_pipeline(SMALL, out_dir=str(tmp_path / name), strict=True) == 0)
        for name in ("report.csv", "report.txt", "checks.json"):
            with open(tmp_path / "a" / name, "rb") as a, open(tmp_path / "b" / name, "rb") as b:
                assert (a.read() == b.read())

    def test_empty_cell(self, tmp_path):
        doc = copy.deepcopy(SMALL)
        doc["grid"]["pivot"] = 0.0
        doc["conditioning"]["labels"] = ["dead"]
        pipe = FWR_PIPELINE(config=doc, out_dir=str(tmp_path))
        pipe.run()
        assert (pipe.status_code == -2)
        assert (run_pipeline(doc, out_dir=str(tmp_path)) == 2)

    def test_min_paths(self, tmp_path):
        doc = copy.deepcopy(SMALL)
        doc["conditioning"]["min_paths"] = 10 ** 6
        assert (run_pipeline(doc, out_dir=str(tmp_path)) == 2)

    def test_off_grid_pivot(self, tmp_path):
        doc = copy.deepcopy(SMALL)
        doc["grid"]["pivot"] = 1.01
        pipe = FWR_PIPELINE(config=doc, out_dir=str(tmp_path))
        assert (pipe.error and pipe.status_code == -1)
        assert ("grid.pivot" in pipe.reason)
        assert (not pipe.run())
        assert (not os.listdir(tmp_path))

    def test_config_file(self, tmp_path):
        filename = tmp_path / "small.yml"
        filename.write_text(yaml.dump(SMALL))
        assert (run_pipeline(filename, out_dir=str(tmp_path / "out")) == 0)

    def test_dumps(self, tmp_path):
        pipe = FWR_PIPELINE(config=SMALL, out_dir=str(tmp_path), dump_surfaces=True, dump_paths=3)
        pipe.run("simulate")
        pipe.run("estimate")
        pipe.run("solve")
        assert (pipe.ok)
        assert (sorted(os.listdir(tmp_path / "paths")) == ["path_0.csv", "path_1.csv", "path_2.csv"])
        path = pd.read_csv(tmp_path / "paths" / "path_0.csv")
        assert (list(path.columns[:2]) == ["time", "state"] and "dN_alive_dead" in path.columns)
        folder = tmp_path / "surfaces" / "alive"
        for name in ("P_alive.csv", "Q_alive_dead.csv", "P_alive_dead.csv", "Q_alive_dead_alive_dead.csv",
                     "Lambda_alive_dead.csv", os.path.join("solved", "P_alive.csv")):
            assert (os.path.exists(folder / name))
        surface = pd.read_csv(folder / "P_alive_dead.csv", index_col="time")
        assert (surface.shape == (41, 41))

    def test_free_policy(self, tmp_path):
        pipe = FWR_PIPELINE(config=SMALL_FREE_POLICY, out_dir=str(tmp_path))
        pipe.run()
        assert (pipe.ok)
        names = {c["name"] for c in pipe.checks}
        assert ({"no_lump_sum_at_exercise", "free_policy_decomposition", "oracle_v_plus[contract:free_policy]"} <= names)
        cashflows = {r.cashflow for r in pipe.reports}
        assert (cashflows == {"contract", "contract:free_policy"})

    @pytest.mark.parametrize("name", ["two_state_analytic", "disability_semi_markov", "free_policy"])
    def test_shipped_config_surfaces(self, name, tmp_path):
        with open(os.path.join(CONFIG_DIR, f"{name}.yml"), "rt") as f:
            doc = yaml.load(f, yaml.Loader)
        doc["ensemble"]["n_paths"] = 3000
        doc.setdefault("conditioning", {})["min_paths"] = 50
        doc.setdefault("thresholds", {})["squaring_paths"] = 50
        pipe = FWR_PIPELINE(config=doc, out_dir=str(tmp_path))
        pipe.run()
        assert (pipe.status_code in (0, 1))
        surface = [c for c in pipe.checks if c["name"] in SURFACE_CHECKS]
        assert ({"residual_p1", "residual_p2", "solved_in_range", "boundary_identities"} <= {c["name"] for c in surface})
        failed = [(c["name"], c["label"], c["value"]) for c in surface if not c["passed"]]
        assert (failed == [])

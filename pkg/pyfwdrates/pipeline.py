"""Stage orchestration of a complete run: simulate, estimate, solve, value and check."""
from __future__ import annotations

import glob
import inspect
import json
import logging
import os
import re
import time
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .cashflow import (build_free_policy_cashflow, check_no_lump_sum, evaluate_free_policy,
                       evaluate_states_1d, eval_cashflow_2d, square_cashflow)
from .config import RunConfig, load_config
from .errors import (EmptyCellError, FwrError, InconsistentEnsembleError, LumpSumAtExerciseError,
                     StageArtifactError, ValidationError)
from .estimate import MomentSurfaces, RateSystem, estimate_moment_surfaces, transition_rates_1d, transition_rates_2d
from .kolmogorov import SolvedProbabilities, boundary_identities, residual_and_consistency, solve
from .oracle import (OracleEstimate, compare, compare_independent, label_frequencies, mc_conditional_mean,
                     rounding_allowance)
from .reserve import (ValuationReport, expected_2d, expected_future_1d, value_contract, variance_tolerance)
from .simulate import PathEnsemble, diagonal_identities, ensemble_payouts, indicator_reconstruction, simulate_ensemble

logger = logging.getLogger(__name__)

STAGES = ("simulate", "estimate", "solve", "value", "check")
FLOAT_FORMAT = "%.12e"
IDENTITY_TOL = 1e-12
SQUARING_TOL = 1e-10
DUAL_PATH_TOL = 1e-9
PROVENANCE_TOL = 1e-6


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _write_csv(frame: pd.DataFrame, filename: str, **kwargs):
    os.makedirs(os.path.dirname(filename), exist_ok=True)
    frame.to_csv(filename, float_format=FLOAT_FORMAT, **kwargs)


def _check(name: str, label: str, passed: bool, value: float, tolerance: float) -> dict:
    return {"name": name, "label": label, "passed": bool(passed), "value": float(value), "tolerance": float(tolerance)}


class FWR_PIPELINE():
    """Runs the forward-rate valuation pipeline for one configuration and writes its artifacts.

        Example
        -------
        .. code-block:: python

            from pyfwdrates import FWR_PIPELINE

            pipe = FWR_PIPELINE(path_to_config="two_state_analytic.yml", out_dir="./out")
            pipe.run()
            if pipe.ok:
                print(pipe.reports[0].v_plus)
            else:
                print(pipe.status_code, pipe.reason)

    """
    def __init__(self, config: Optional[dict] = None, path_to_config: str = "", url_to_config: str = "",
                 out_dir: str = "", threads: int = 0, strict: bool = False,
                 dump_surfaces: bool = False, dump_paths: int = -1):
        """object generation method

        Parameters
        ----------
        config: dict, optional
            In-memory configuration document, used when no file or URL is given and no ``./.fwr.yml`` exists
        path_to_config: str, optional, default = ""
            Path to a YAML or JSON configuration document
        url_to_config: str, optional, default = ""
            URL from where a configuration document can be downloaded
        out_dir: str, optional, default = ""
            Output directory, overrides ``output.dir`` and ``FWR_OUT``
        threads: int, optional, default = 0
            joblib workers; 0 keeps the configured value
        strict: bool, optional, default = False
            Force serial reductions for byte-identical reports
        dump_surfaces: bool, optional, default = False
            Also write every estimated, rate and solved surface as CSV
        dump_paths: int, optional, default = -1
            Number of paths to write as CSV; -1 keeps the configured value

        """
        self._error = False
        self._result = {"code": 0, "message": "ok"}
        self._paths: Optional[PathEnsemble] = None
        self._surfaces: Dict[str, MomentSurfaces] = {}
        self._rates: Dict[str, RateSystem] = {}
        self._solved: Dict[str, SolvedProbabilities] = {}
        self._reports: List[ValuationReport] = []
        self._specs: Dict[str, object] = {}
        self._checks: List[dict] = []
        self._config: Optional[RunConfig] = None
        try:
            self._config = load_config(path_to_config, url_to_config, config)
        except FwrError as e:
            self._fail(e)
            return
        if len(out_dir) > 0:
            self._config.out_dir = out_dir
        if threads > 0:
            self._config.threads = threads
        self._config.strict = self._config.strict or strict
        self._config.dump_surfaces = self._config.dump_surfaces or dump_surfaces
        if dump_paths >= 0:
            self._config.dump_paths = dump_paths
        logging.info(f"pipeline {self._config.name!r} writing to {self._config.out_dir} with {self._config.n_jobs} worker(s)")

    @property
    def config(self) -> Optional[RunConfig]:
        """The validated run configuration, None if loading failed."""
        return self._config

    @property
    def paths(self) -> Optional[PathEnsemble]:
        return self._paths

    @property
    def surfaces(self) -> Dict[str, MomentSurfaces]:
        """Estimated surfaces per conditioning label."""
        return self._surfaces

    @property
    def rates(self) -> Dict[str, RateSystem]:
        return self._rates

    @property
    def solved(self) -> Dict[str, SolvedProbabilities]:
        return self._solved

    @property
    def reports(self) -> List[ValuationReport]:
        """One report per label and cash flow, available after :meth:`value`."""
        return self._reports

    @property
    def checks(self) -> List[dict]:
        return self._checks

    @property
    def error(self) -> bool:
        """Return True if a stage failed or a check did not pass, False otherwise.
        """
        return self._error

    @property
    def ok(self) -> bool:
        """Return False if a stage failed or a check did not pass, True otherwise.
        """
        return not self._error

    @property
    def result(self) -> dict:
        """A dictionary with the outcome of the last stage. Key ``code`` is 0 for success, -1 for
           configuration or validation errors, -2 for an empty conditioning cell, -3 for an
           inconsistent ensemble or numerical failure and 1 for failed checks; ``message`` describes it.
        """
        return self._result

    @property
    def status_code(self) -> int:
        """Code part of the last result."""
        return self._result["code"]

    @property
    def reason(self) -> str:
        """Message part of the last result, "ok" if no error."""
        return self._result["message"]

    def _fail(self, e: Exception):
        s = inspect.stack()[1]
        if isinstance(e, EmptyCellError):
            code = -2
        elif isinstance(e, (InconsistentEnsembleError, FloatingPointError, np.linalg.LinAlgError)):
            code = -3
        else:
            code = -1
        self._result = {"code": code, "message": str(e)}
        self._error = True
        logging.error(f"{s.function}: {e}")

    def _out(self, *parts) -> str:
        return os.path.join(self._config.out_dir, *parts)

    def _require_paths(self) -> PathEnsemble:
        if self._paths is None:
            filename = self._out("paths.npz")
            if not os.path.exists(filename):
                raise StageArtifactError(f"{filename} not found, run the simulate stage first")
            self._paths = PathEnsemble.load(filename)
            if self._paths.n_points != self._config.grid.n_points:
                raise ValidationError(f"{filename} does not match the configured grid", field="grid")
        return self._paths

    def _require_surfaces(self) -> Dict[str, MomentSurfaces]:
        if not self._surfaces:
            files = sorted(glob.glob(self._out("surfaces_*.npz")))
            if not files:
                raise StageArtifactError(f"no surfaces in {self._config.out_dir}, run the estimate stage first")
            for filename in files:
                surfaces = MomentSurfaces.load(filename)
                self._surfaces[surfaces.label] = surfaces
        return self._surfaces

    def _require_rates(self) -> Dict[str, RateSystem]:
        for label, surfaces in self._require_surfaces().items():
            if label not in self._rates:
                if surfaces.p2 is not None:
                    self._rates[label] = transition_rates_2d(surfaces)
                else:
                    self._rates[label] = transition_rates_1d(surfaces)
        return self._rates

    def _require_solved(self) -> Dict[str, SolvedProbabilities]:
        if not self._solved:
            files = sorted(glob.glob(self._out("solved_*.npz")))
            if not files:
                raise StageArtifactError(f"no solved probabilities in {self._config.out_dir}, run the solve stage first")
            for filename in files:
                solved = SolvedProbabilities.load(filename)
                self._solved[solved.label] = solved
        return self._solved

    def _labels(self, paths: PathEnsemble) -> List[str]:
        cfg = self._config
        if cfg.labels:
            return list(cfg.labels)
        shares = label_frequencies(paths, cfg.scheme)
        labels = [label for label, share in shares.items() if round(share * len(paths)) >= cfg.min_paths]
        if not labels:
            raise EmptyCellError(f"any label with at least {cfg.min_paths} paths")
        return labels

    def simulate(self) -> Optional[PathEnsemble]:
        """Simulate the ensemble and write ``paths.npz``.

        Returns
        -------
        PathEnsemble
            The simulated paths, None on failure (see :attr:`result`).
        """
        s = inspect.stack()[0]
        cfg = self._config
        try:
            start = time.time()
            paths = simulate_ensemble(cfg.model, cfg.grid, cfg.n_paths, cfg.base_seed, cfg.n_jobs)
            os.makedirs(cfg.out_dir, exist_ok=True)
            paths.save(self._out("paths.npz"), grid=cfg.grid)
            if cfg.dump_paths > 0:
                self._dump_paths(paths)
            self._paths = paths
            logging.info(f"{s.function}: {len(paths)} paths in {time.time() - start:.1f}s")
        except FwrError as e:
            self._fail(e)
            return None
        self._result = {"code": 0, "message": "ok"}
        return paths

    def estimate(self) -> Optional[Dict[str, MomentSurfaces]]:
        """Estimate the conditional surfaces of every label and write ``surfaces_<label>.npz``."""
        s = inspect.stack()[0]
        cfg = self._config
        try:
            start = time.time()
            paths = self._require_paths()
            labels = self._labels(paths)
            if cfg.n_jobs > 1 and len(labels) > 1:
                estimated = Parallel(n_jobs=cfg.n_jobs)(
                    delayed(estimate_moment_surfaces)(paths, cfg.scheme, label, cfg.two_dimensional, 1)
                    for label in labels)
            else:
                estimated = [estimate_moment_surfaces(paths, cfg.scheme, label, cfg.two_dimensional, cfg.n_jobs)
                             for label in labels]
            self._surfaces = {surfaces.label: surfaces for surfaces in estimated}
            self._rates, self._solved = {}, {}
            for label, surfaces in self._surfaces.items():
                logging.info(f"{s.function}: cell {label!r} holds {surfaces.n_paths} paths")
                surfaces.save(self._out(f"surfaces_{_slug(label)}.npz"))
                if cfg.dump_surfaces:
                    self._dump_surfaces(surfaces)
            logging.info(f"{s.function}: {len(labels)} label(s) in {time.time() - start:.1f}s")
        except FwrError as e:
            self._fail(e)
            return None
        self._result = {"code": 0, "message": "ok"}
        return self._surfaces

    def solve(self) -> Optional[Dict[str, SolvedProbabilities]]:
        """Derive the rates, re-solve the forward equations and write ``solved_<label>.npz``."""
        s = inspect.stack()[0]
        cfg = self._config
        try:
            start = time.time()
            rates = self._require_rates()
            self._solved = {}
            for label, surfaces in self._surfaces.items():
                solved = solve(rates[label], surfaces.initial, label, cfg.two_dimensional)
                solved.save(self._out(f"solved_{_slug(label)}.npz"))
                self._solved[label] = solved
                if cfg.dump_surfaces:
                    self._dump_solved(solved, rates[label])
            logging.info(f"{s.function}: {len(self._solved)} label(s) in {time.time() - start:.1f}s")
        except (FwrError, FloatingPointError) as e:
            self._fail(e)
            return None
        self._result = {"code": 0, "message": "ok"}
        return self._solved

    @staticmethod
    def _oracle_targets(report: ValuationReport):
        targets = [("v_plus", "future", report.v_plus, False), ("v_minus", "past", report.v_minus, False)]
        if report.s_plus is not None:
            targets.append(("s_plus", "future", report.s_plus, True))
        return targets

    def _payout_functional(self, spec, side: str, squared: bool):
        cfg = self._config
        pivot = cfg.grid.conventions

        def functional(ens):
            y = ensemble_payouts(ens, spec, cfg.kappa, pivot, side)
            return y * y if squared else y
        return functional

    def _oracle_columns(self, report: ValuationReport, spec, cell: PathEnsemble) -> Dict[str, float]:
        cfg = self._config
        label = report.label
        columns = {}
        for key, side, value, squared in self._oracle_targets(report):
            functional = self._payout_functional(spec, side, squared)
            estimate = mc_conditional_mean(cell, cfg.scheme, label, functional, vectorized=True)
            outcome = compare(value, estimate, cfg.thresholds.k_sigma, cfg.thresholds.c_h, cfg.grid.step)
            columns[f"oracle_{key}"] = estimate.mean
            columns[f"oracle_{key}_se"] = estimate.standard_error
            columns[f"z_{key}"] = outcome.z
        return columns

    def value(self) -> Optional[List[ValuationReport]]:
        """Value every cash flow in every label, attach the oracle columns and write ``report.csv``/``report.txt``."""
        s = inspect.stack()[0]
        cfg = self._config
        try:
            start = time.time()
            rates = self._require_rates()
            paths = self._require_paths()
            specs = list(cfg.cashflows.values())
            if cfg.free_policy is not None:
                specs.append(cfg.free_policy)
            reports = []
            for label, surfaces in self._surfaces.items():
                cell = paths.select(cfg.scheme.mask(paths, label))
                for spec in specs:
                    report = value_contract(spec, surfaces, rates[label], cfg.kappa, cfg.grid.t_max, cfg.grid.step,
                                            surfaces.n_paths, label, second_moment=cfg.two_dimensional)
                    report.oracle.update(self._oracle_columns(report, spec, cell))
                    self._specs[report.cashflow] = spec
                    reports.append(report)
            self._reports = reports
            self._write_reports()
            logging.info(f"{s.function}: {len(reports)} valuation(s) in {time.time() - start:.1f}s")
        except (FwrError, FloatingPointError) as e:
            self._fail(e)
            return None
        self._result = {"code": 0, "message": "ok"}
        return self._reports

    def _write_reports(self):
        frame = pd.DataFrame([report.to_row() for report in self._reports])
        _write_csv(frame, self._out("report.csv"), index=False)
        with open(self._out("report.txt"), "wt") as f:
            f.write("\n\n".join(report.to_text() for report in self._reports) + "\n")

    def _surface_checks(self) -> List[dict]:
        tol = self._config.thresholds.residual_tol
        checks = []
        solved = self._require_solved()
        for label, surfaces in self._surfaces.items():
            p1, p2 = surfaces.p1, surfaces.p2
            checks.append(_check("occupation_sum", label, *self._within(np.abs(p1.sum(axis=0) - 1).max(), IDENTITY_TOL)))
            if p2 is not None:
                idx = np.arange(p2.shape[2])
                n = np.arange(p2.shape[0])
                checks.append(_check("pair_occupation_sum", label,
                                     *self._within(np.abs(p2.sum(axis=(0, 1)) - 1).max(), IDENTITY_TOL)))
                checks.append(_check("pair_marginal", label,
                                     *self._within(np.abs(p2.sum(axis=1) - p1[:, :, None]).max(), IDENTITY_TOL)))
                checks.append(_check("pair_diagonal", label,
                                     *self._within(np.abs(p2[n, n][:, idx, idx] - p1).max(), IDENTITY_TOL)))
            if label in solved:
                residual = residual_and_consistency(solved[label], surfaces)
                checks.append(_check("residual_p1", label, *self._within(residual.p1_residual, tol)))
                if residual.p2_residual is not None:
                    checks.append(_check("residual_p2", label, *self._within(residual.p2_residual, tol)))
                checks.append(_check("solved_in_range", label, *self._within(residual.out_of_range, 1e-9)))
                checks.append(_check("boundary_identities", label, boundary_identities(solved[label]), 0.0, 0.0))
        return checks

    @staticmethod
    def _within(value: float, tolerance: float):
        return value <= tolerance, value, tolerance

    def _valuation_checks(self) -> List[dict]:
        cfg = self._config
        th = cfg.thresholds
        pivot = cfg.grid.conventions
        checks = []
        rates = self._require_rates()
        solved = self._require_solved()
        for report in self._reports:
            label, name = report.label, report.cashflow
            for key in ("v_plus", "v_minus", "s_plus"):
                if f"oracle_{key}" not in report.oracle:
                    continue
                difference = abs(getattr(report, key) - report.oracle[f"oracle_{key}"])
                allowance = (th.k_sigma * report.oracle[f"oracle_{key}_se"] + th.c_h * cfg.grid.step
                             + rounding_allowance(report.oracle[f"oracle_{key}"]))
                checks.append(_check(f"oracle_{key}[{name}]", label, difference <= allowance, difference, allowance))
            if report.variance is not None:
                tol = th.eps_var_rel * max(1.0, abs(report.s_plus))
                checks.append(_check(f"variance_nonnegative[{name}]", label, report.variance >= -tol, report.variance, -tol))
            spec = cfg.cashflows.get(name)
            if spec is None:
                continue
            surfaces, system = self._surfaces[label], rates[label]
            if label in solved:
                v_solved = expected_future_1d(spec, solved[label], system, cfg.kappa)
                difference = abs(v_solved - report.v_plus)
                tol = PROVENANCE_TOL * max(1.0, abs(report.v_plus))
                checks.append(_check(f"solved_vs_estimated[{name}]", label, difference <= tol, difference, tol))
            if report.s_plus is not None:
                squared = square_cashflow(spec, cfg.kappa, pivot.pivot_index).restricted(pivot.future, pivot.future)
                other = expected_2d(squared, surfaces, surfaces, system)
                difference = abs(other - report.s_plus)
                tol = DUAL_PATH_TOL * max(1.0, abs(report.s_plus))
                checks.append(_check(f"dual_path_s_plus[{name}]", label, difference <= tol, difference, tol))
                if report.variance < 0:
                    logger.warning(f"negative variance {report.variance:.3e} for {name} in {label!r} "
                                   f"(tolerance {variance_tolerance(report.s_plus):.1e})")
        return checks + self._fresh_checks()

    def _fresh_checks(self) -> List[dict]:
        """Pipeline values against oracles on an independent ensemble, with the combined standard error."""
        cfg = self._config
        th = cfg.thresholds
        if th.fresh_paths <= 0:
            return []
        # seeds continue after the shared ensemble
        fresh = simulate_ensemble(cfg.model, cfg.grid, th.fresh_paths, cfg.base_seed + cfg.n_paths, cfg.n_jobs)
        checks = []
        for report in self._reports:
            label, name = report.label, report.cashflow
            size = int(cfg.scheme.mask(fresh, label).sum())
            if size < 2:
                logger.warning(f"fresh ensemble holds {size} path(s) in {label!r}, skipping {name}")
                continue
            for key, side, value, squared in self._oracle_targets(report):
                se = report.oracle.get(f"oracle_{key}_se")
                if se is None:
                    continue
                functional = self._payout_functional(self._specs[name], side, squared)
                estimate = mc_conditional_mean(fresh, cfg.scheme, label, functional, vectorized=True)
                outcome = compare_independent(OracleEstimate(value, se, report.n_paths, label), estimate,
                                              th.k_sigma, th.c_h, cfg.grid.step)
                checks.append(_check(f"fresh_oracle_{key}[{name}]", label, outcome.passed,
                                     abs(outcome.difference), outcome.allowance))
        return checks

    def _path_checks(self) -> List[dict]:
        cfg = self._config
        pivot = cfg.grid.conventions
        paths = self._require_paths()
        sample = paths.select(slice(0, cfg.thresholds.squaring_paths))
        w = cfg.kappa.weights(pivot.pivot_index)
        checks = []
        structural = all(diagonal_identities(path, pivot)
                         and np.array_equal(indicator_reconstruction(path, pivot), path.indicators)
                         for path in sample)
        checks.append(_check("counting_identities", "", structural, len(sample), 0.0))
        for name, spec in cfg.cashflows.items():
            squared = square_cashflow(spec, cfg.kappa, pivot.pivot_index)
            direct = evaluate_states_1d(spec, sample.states, w) ** 2
            two_d = np.array([eval_cashflow_2d(squared, path) for path in sample])
            worst = float(np.max(np.abs(two_d - direct) / np.maximum(1.0, np.abs(direct)), initial=0.0))
            checks.append(_check(f"squaring_identity[{name}]", "", worst <= SQUARING_TOL, worst, SQUARING_TOL))
        fp = cfg.free_policy
        if fp is not None:
            try:
                check_no_lump_sum(fp, paths.states)
                checks.append(_check("no_lump_sum_at_exercise", "", True, 0.0, 0.0))
            except LumpSumAtExerciseError as e:
                logger.error(str(e))
                checks.append(_check("no_lump_sum_at_exercise", "", False, e.path_index, 0.0))
            decomposed = build_free_policy_cashflow(fp)
            direct = evaluate_free_policy(fp, sample.states, w)
            split = ensemble_payouts(sample, decomposed, cfg.kappa, pivot, "future") + \
                ensemble_payouts(sample, decomposed, cfg.kappa, pivot, "past")
            worst = float(np.max(np.abs(split - direct) / np.maximum(1.0, np.abs(direct)), initial=0.0))
            checks.append(_check("free_policy_decomposition", "", worst <= SQUARING_TOL, worst, SQUARING_TOL))
        return checks

    def check(self) -> Optional[List[dict]]:
        """Run every identity, residual and oracle check and write ``checks.json``.

        A failed check sets :attr:`status_code` to 1.
        """
        s = inspect.stack()[0]
        try:
            start = time.time()
            if not self._reports:
                if self.value() is None:
                    return None
            checks = self._surface_checks() + self._valuation_checks() + self._path_checks()
            self._checks = checks
            with open(self._out("checks.json"), "wt") as f:
                json.dump(checks, f, indent=2)
            failed = [c for c in checks if not c["passed"]]
            for c in failed:
                logging.warning(f"{s.function}: {c['name']} failed for {c['label']!r}: {c['value']:.3e} vs {c['tolerance']:.3e}")
            logging.info(f"{s.function}: {len(checks) - len(failed)}/{len(checks)} checks passed in {time.time() - start:.1f}s")
        except (FwrError, FloatingPointError) as e:
            self._fail(e)
            return None
        if failed:
            self._result = {"code": 1, "message": f"{len(failed)} of {len(checks)} checks failed"}
            self._error = True
        else:
            self._result = {"code": 0, "message": "ok"}
        return checks

    def run(self, stage: str = "all") -> bool:
        """Run one stage, reading earlier stages from disk, or all of them in order."""
        if self._config is None:
            return False
        if stage != "all" and stage not in STAGES:
            self._fail(ValidationError(f"unknown stage {stage!r}", field="stage"))
            return False
        for name in (STAGES if stage == "all" else (stage,)):
            if getattr(self, name)() is None or self._error:
                break
        return self.ok

    def _dump_paths(self, paths: PathEnsemble):
        cfg = self._config
        pivot = cfg.grid.conventions
        labels = cfg.state_space.labels
        n = cfg.state_space.size
        for k in range(min(cfg.dump_paths, len(paths))):
            path = paths[k]
            dn = path.increments(pivot)
            frame = pd.DataFrame({"time": cfg.grid.points, "state": np.asarray(labels)[path.states]})
            for i in range(n):
                for j in range(n):
                    frame[f"dN_{labels[i]}_{labels[j]}"] = dn[i, j]
            _write_csv(frame, self._out("paths", f"path_{k}.csv"), index=False)

    def _dump_1d(self, folder: str, prefix: str, values: np.ndarray, keys):
        points = self._config.grid.points
        for key, row in zip(keys, values):
            frame = pd.DataFrame({"time": points, "value": row})
            _write_csv(frame, os.path.join(folder, f"{prefix}_{key}.csv"), index=False)

    def _dump_2d(self, folder: str, prefix: str, surfaces: np.ndarray, keys):
        points = self._config.grid.points
        for key, surface in zip(keys, surfaces):
            frame = pd.DataFrame(surface, index=points, columns=points)
            _write_csv(frame, os.path.join(folder, f"{prefix}_{key}.csv"), index_label="time")

    def _dump_surfaces(self, surfaces: MomentSurfaces):
        labels = self._config.state_space.labels
        n = len(labels)
        folder = self._out("surfaces", _slug(surfaces.label))
        self._dump_1d(folder, "P", surfaces.p1, labels)
        q1 = surfaces.q1_cumulative()
        self._dump_1d(folder, "Q", [q1[i, j] for i in range(n) for j in range(n)],
                      [f"{labels[i]}_{labels[j]}" for i in range(n) for j in range(n)])
        if surfaces.p2 is not None:
            self._dump_2d(folder, "P", [surfaces.p2[i, k] for i in range(n) for k in range(n)],
                          [f"{labels[i]}_{labels[k]}" for i in range(n) for k in range(n)])
            q2 = surfaces.q2_cumulative()
            keys = self._pair_keys(surfaces.pairs)
            self._dump_2d(folder, "Q", [q2[a, b] for a in range(len(keys)) for b in range(len(keys))],
                          [f"{x}_{y}" for x in keys for y in keys])

    def _pair_keys(self, pairs):
        labels = self._config.state_space.labels
        return [f"{labels[i]}_{labels[j]}" for i, j in pairs]

    def _dump_solved(self, solved: SolvedProbabilities, rates: RateSystem):
        labels = self._config.state_space.labels
        n = len(labels)
        folder = self._out("surfaces", _slug(solved.label))
        lam = rates.cumulative_1d()
        self._dump_1d(folder, "Lambda", [lam[i, j] for i in range(n) for j in range(n)],
                      [f"{labels[i]}_{labels[j]}" for i in range(n) for j in range(n)])
        if rates.has_2d:
            lam2 = rates.cumulative_2d()
            keys = self._pair_keys(rates.pairs)
            self._dump_2d(folder, "Lambda", [lam2[a, b] for a in range(len(keys)) for b in range(len(keys))],
                          [f"{x}_{y}" for x in keys for y in keys])
        solved_folder = os.path.join(folder, "solved")
        self._dump_1d(solved_folder, "P", solved.p1, labels)
        if solved.p2 is not None:
            self._dump_2d(solved_folder, "P", [solved.p2[i, k] for i in range(n) for k in range(n)],
                          [f"{labels[i]}_{labels[k]}" for i in range(n) for k in range(n)])


def run_pipeline(config, **kwargs) -> int:
    """Run every stage for a configuration document (dict) or file path and return the exit status."""
    if isinstance(config, dict):
        pipe = FWR_PIPELINE(config=config, **kwargs)
    else:
        pipe = FWR_PIPELINE(path_to_config=str(config), **kwargs)
    pipe.run()
    return abs(pipe.status_code)

"""Run configuration: loading, schema validation and construction of the model objects."""
from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
import requests
import yaml
from jsonschema import Draft202012Validator

from .cashflow import CashflowSpec1D, FreePolicySpec
from .core import Measure1D, StateSpace, TimeGrid
from .errors import ConfigError, GridRangeError, ValidationError
from .estimate import AsIfMarkov, ConditioningScheme, StateDuration
from .simulate import DiscountCurve, IntensityModel, make_intensity

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = "./.fwr.yml"
URL_TIMEOUT = 10
# grid bias per unit step of the two-state reference contracts (mu 0.1, r 0.03, s 2, T 10):
# unit annuity 0.092, pure endowment 0.021, term insurance 0.009
DEFAULT_C_H = 0.12

_number = {"type": "number"}
_name = {"type": "string", "minLength": 1}
_table = {
    "type": "object",
    "properties": {"times": {"type": "array", "items": _number, "minItems": 1},
                   "values": {"type": "array", "items": _number, "minItems": 1}},
    "required": ["times", "values"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["states", "initial", "intensities", "grid", "cashflows"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "states": {
            "type": "object",
            "required": ["labels"],
            "additionalProperties": False,
            "properties": {
                "labels": {"type": "array", "items": _name, "minItems": 2},
                "s0": {"type": "array", "items": _name},
                "s1": {"type": "array", "items": _name},
            },
        },
        "initial": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}, "minProperties": 1},
        "intensities": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "family"],
                "additionalProperties": False,
                "properties": {
                    "from": _name, "to": _name,
                    "family": {"enum": ["constant", "gompertz_makeham", "duration_decay"]},
                    "params": {"type": "object", "additionalProperties": _number},
                },
            },
        },
        "grid": {
            "type": "object",
            "required": ["t_max", "step"],
            "additionalProperties": False,
            "properties": {"t_max": {"type": "number", "exclusiveMinimum": 0},
                           "step": {"type": "number", "exclusiveMinimum": 0},
                           "pivot": {"type": "number", "minimum": 0}},
        },
        "discount": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rate": _number, "table": _table, "file": {"type": "string"}},
        },
        "cashflows": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "sojourn": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["state", "kind"],
                            "properties": {
                                "state": _name,
                                "kind": {"enum": ["atom", "density", "periodic", "table"]},
                                "time": _number, "amount": _number, "rate": _number,
                                "start": _number, "end": _number, "every": {"type": "number", "exclusiveMinimum": 0},
                                "table": _table, "file": {"type": "string"},
                            },
                            "additionalProperties": False,
                        },
                    },
                    "transitions": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["from", "to"],
                            "properties": {"from": _name, "to": _name, "amount": _number,
                                           "start": _number, "end": _number,
                                           "table": _table, "file": {"type": "string"}},
                            "additionalProperties": False,
                        },
                    },
                },
            },
        },
        "free_policy": {
            "type": "object",
            "required": ["scheme", "rho"],
            "additionalProperties": False,
            "properties": {
                "scheme": _name,
                "rho": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["from", "to", "family"],
                        "additionalProperties": False,
                        "properties": {"from": _name, "to": _name, "family": {"enum": ["constant", "linear"]},
                                       "params": {"type": "object", "additionalProperties": _number}},
                    },
                },
            },
        },
        "conditioning": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": ["as_if_markov", "state_duration"]},
                "buckets": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "labels": {"type": "array", "items": _name},
                "min_paths": {"type": "integer", "minimum": 2},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_paths": {"type": "integer", "minimum": 2},
                           "base_seed": {"type": "integer", "minimum": 0},
                           "two_dimensional": {"type": "boolean"}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "dump_surfaces": {"type": "boolean"},
                           "dump_paths": {"type": "integer", "minimum": 0}},
        },
        "thresholds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"k_sigma": {"type": "number", "exclusiveMinimum": 0},
                           "c_h": {"type": "number", "minimum": 0},
                           "residual_tol": {"type": "number", "exclusiveMinimum": 0},
                           "squaring_paths": {"type": "integer", "minimum": 0},
                           "fresh_paths": {"type": "integer", "minimum": 0},
                           "eps_var_rel": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}


@dataclass(frozen=True)
class Thresholds:
    k_sigma: float = 3.0
    c_h: float = DEFAULT_C_H
    residual_tol: float = 1e-9
    squaring_paths: int = 1000
    eps_var_rel: float = 1e-6
    fresh_paths: int = 0


@dataclass
class RunConfig:
    """Everything one pipeline run needs, built from a validated configuration document."""
    name: str
    state_space: StateSpace
    grid: TimeGrid
    model: IntensityModel
    kappa: DiscountCurve
    cashflows: Dict[str, CashflowSpec1D]
    scheme: ConditioningScheme
    free_policy: Optional[FreePolicySpec] = None
    labels: Tuple[str, ...] = ()
    min_paths: int = 100
    n_paths: int = 50000
    base_seed: int = 0
    two_dimensional: bool = True
    out_dir: str = "./fwr_out"
    dump_surfaces: bool = False
    dump_paths: int = 0
    threads: int = 1
    strict: bool = False
    thresholds: Thresholds = field(default_factory=Thresholds)
    source: str = ""

    @property
    def n_jobs(self) -> int:
        return 1 if self.strict else self.threads


def validate_document(document) -> None:
    """Raise :class:`ConfigError` listing every schema violation with its dotted path."""
    problems = []
    for error in sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(document), key=lambda e: list(e.path)):
        problems.append((".".join(str(part) for part in error.path), error.message))
    if problems:
        raise ConfigError(problems)


def load_document(path_to_config: str = "", url_to_config: str = "", config: Optional[dict] = None):
    """Read the configuration document.

    Sources in order of precedence: ``path_to_config``, ``url_to_config``, ``./.fwr.yml`` and the
    in-memory ``config``. JSON documents are read by the YAML loader as well.

    Returns
    -------
    tuple(dict, str, str)
        The document, a description of its source and the directory relative CSV side files are
        resolved against.
    """
    if len(path_to_config) > 0:
        try:
            with open(path_to_config, "rt") as f:
                document = yaml.load(f, yaml.Loader)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError([("", f"cannot read {path_to_config}: {e}")]) from e
        source, base_dir = path_to_config, os.path.dirname(os.path.abspath(path_to_config))
    elif len(url_to_config) > 0:
        try:
            r = requests.get(url_to_config, timeout=URL_TIMEOUT)
            r.raise_for_status()
            document = yaml.load(io.StringIO(r.text), yaml.Loader)
        except (requests.RequestException, yaml.YAMLError) as e:
            raise ConfigError([("", f"cannot fetch {url_to_config}: {e}")]) from e
        source, base_dir = url_to_config, os.getcwd()
    elif os.path.exists(DEFAULT_CONFIG_FILE):
        with open(DEFAULT_CONFIG_FILE, "rt") as f:
            document = yaml.load(f, yaml.Loader)
        source, base_dir = DEFAULT_CONFIG_FILE, os.getcwd()
    elif config is not None:
        document, source, base_dir = config, "dict", os.getcwd()
    else:
        raise ConfigError([("", "no configuration given")])
    if not isinstance(document, dict):
        raise ConfigError([("", "configuration must be a mapping")])
    logger.info(f"using configuration from {source}")
    return document, source, base_dir


def _grid_index(grid: TimeGrid, t: float, where: str) -> int:
    try:
        return grid.index_of(t)
    except GridRangeError:
        raise ValidationError(f"{t} is not a grid point", field=where) from None


def _read_table(item: dict, base_dir: str, where: str) -> Tuple[np.ndarray, np.ndarray]:
    if "table" in item:
        times, values = item["table"]["times"], item["table"]["values"]
    elif "file" in item:
        path = item["file"] if os.path.isabs(item["file"]) else os.path.join(base_dir, item["file"])
        try:
            frame = pd.read_csv(path)
        except OSError as e:
            raise ValidationError(str(e), field=where) from None
        times, values = frame.iloc[:, 0].to_numpy(), frame.iloc[:, 1].to_numpy()
    else:
        raise ValidationError("needs a table or a file", field=where)
    times, values = np.asarray(times, dtype=float), np.asarray(values, dtype=float)
    if times.shape != values.shape or np.any(np.diff(times) <= 0):
        raise ValidationError("table times must increase and match the values", field=where)
    return times, values


def _sojourn_measure(item: dict, grid: TimeGrid, base_dir: str, where: str) -> Measure1D:
    kind = item["kind"]
    atoms = np.zeros(grid.n_points)
    points = grid.points
    if kind == "atom":
        atoms[_grid_index(grid, item.get("time", 0.0), f"{where}.time")] = item.get("amount", 1.0)
    elif kind == "density":
        start, end = item.get("start", 0.0), item.get("end", grid.t_max)
        inside = (points > start + 1e-12) & (points <= end + 1e-12)
        atoms[inside] = item.get("rate", 1.0) * grid.step
    elif kind == "periodic":
        start, end, every = item.get("start", 0.0), item.get("end", grid.t_max), item.get("every", 1.0)
        for t in np.arange(start, end + every * 1e-9, every):
            atoms[_grid_index(grid, float(t), f"{where}.start")] += item.get("amount", 1.0)
    else:
        times, values = _read_table(item, base_dir, where)
        for t, v in zip(times, values):
            atoms[_grid_index(grid, float(t), f"{where}.table")] += v
    return Measure1D(atoms)


def _transition_payoff(item: dict, grid: TimeGrid, base_dir: str, where: str) -> np.ndarray:
    points = grid.points
    if "table" in item or "file" in item:
        times, values = _read_table(item, base_dir, where)
        k = np.searchsorted(times, points + 1e-12, side="right") - 1
        return np.where(k >= 0, values[np.maximum(k, 0)], 0.0)
    start, end = item.get("start", -np.inf), item.get("end", np.inf)
    inside = (points > start + 1e-12) & (points <= end + 1e-12)
    return np.where(inside, item.get("amount", 1.0), 0.0)


def _rho(item: dict, grid: TimeGrid, where: str) -> np.ndarray:
    params = item.get("params", {})
    try:
        if item["family"] == "constant":
            return np.full(grid.n_points, float(params["value"]))
        return params["intercept"] + params["slope"] * grid.points
    except KeyError as e:
        raise ValidationError(f"missing parameter {e}", field=f"{where}.params") from None


def _env_overrides(document: dict, environ) -> dict:
    output = dict(document.get("output", {}))
    ensemble = dict(document.get("ensemble", {}))
    if "FWR_OUT" in environ.keys():
        output["dir"] = environ["FWR_OUT"]
    if "FWR_N_PATHS" in environ.keys():
        ensemble["n_paths"] = int(environ["FWR_N_PATHS"])
    return {**document, "output": output, "ensemble": ensemble}


def build_run_config(document: dict, base_dir: str = ".", environ=None, source: str = "dict") -> RunConfig:
    """Validate ``document`` and construct the model objects.

    Raises
    ------
    ConfigError
        Schema violations or unresolved state names, all reported together.
    ValidationError
        Grid, discount or cash-flow values that cannot be realized; ``field`` names the key.
    GridTooCoarseError
        A step could carry exit probability above one.
    """
    environ = os.environ if environ is None else environ
    validate_document(document)
    document = _env_overrides(document, environ)

    states = document["states"]
    space = StateSpace(states["labels"], states.get("s0", ()), states.get("s1", ()))
    problems = []

    def resolve(label, where):
        if label not in space.labels:
            problems.append((where, f"unknown state {label!r}"))
            return None
        return space.index(label)

    initial = np.zeros(space.size)
    for label, prob in document["initial"].items():
        k = resolve(label, f"initial.{label}")
        if k is not None:
            initial[k] = prob
    if abs(initial.sum() - 1.0) > 1e-12:
        problems.append(("initial", f"probabilities sum to {initial.sum()}, not 1"))

    grid_doc = document["grid"]
    grid = TimeGrid(float(grid_doc["t_max"]), float(grid_doc["step"]), float(grid_doc.get("pivot", 0.0)))

    transitions = {}
    for n, item in enumerate(document["intensities"]):
        where = f"intensities.{n}"
        i, j = resolve(item["from"], f"{where}.from"), resolve(item["to"], f"{where}.to")
        if i is None or j is None:
            continue
        if i == j:
            problems.append((where, "self transition"))
        elif (i, j) in transitions:
            problems.append((where, f"duplicate intensity {item['from']} -> {item['to']}"))
        else:
            transitions[(i, j)] = make_intensity(item["family"], item.get("params", {}))

    cashflows = {}
    for name, flow in document["cashflows"].items():
        sojourn, payoff = {}, {}
        for n, item in enumerate(flow.get("sojourn", [])):
            where = f"cashflows.{name}.sojourn.{n}"
            i = resolve(item["state"], f"{where}.state")
            if i is not None:
                mu = _sojourn_measure(item, grid, base_dir, where)
                sojourn[i] = sojourn[i] + mu if i in sojourn else mu
        for n, item in enumerate(flow.get("transitions", [])):
            where = f"cashflows.{name}.transitions.{n}"
            i, j = resolve(item["from"], f"{where}.from"), resolve(item["to"], f"{where}.to")
            if i is None or j is None:
                continue
            if i == j:
                problems.append((where, "transition payments need two different states"))
                continue
            payoff[(i, j)] = payoff.get((i, j), 0.0) + _transition_payoff(item, grid, base_dir, where)
        cashflows[name] = CashflowSpec1D.build(space.size, grid.n_points, sojourn, payoff, name=name)

    free_policy = None
    fp_doc = document.get("free_policy")
    if fp_doc is not None:
        if not space.is_partitioned:
            problems.append(("states.s0", "free_policy needs an s0/s1 partition"))
        elif fp_doc["scheme"] not in cashflows:
            problems.append(("free_policy.scheme", f"unknown cash flow {fp_doc['scheme']!r}"))
        else:
            s0 = space.s0_mask()
            if any(not s0[i] and s0[j] for (i, j) in transitions):
                problems.append(("intensities", "no transition may lead from s1 back to s0"))
            if np.any(initial[~s0] > 0):
                problems.append(("initial", "free-policy runs must start in s0"))
            for n, item in enumerate(document["cashflows"][fp_doc["scheme"]].get("sojourn", [])):
                if item["kind"] == "density" and item["state"] in space.s0:
                    problems.append((f"cashflows.{fp_doc['scheme']}.sojourn.{n}",
                                     "premium-state payments of a free-policy scheme must be point payments"))
            rho = np.zeros((space.size, space.size, grid.n_points))
            listed = set()
            for n, item in enumerate(fp_doc["rho"]):
                where = f"free_policy.rho.{n}"
                k, l = resolve(item["from"], f"{where}.from"), resolve(item["to"], f"{where}.to")
                if k is None or l is None:
                    continue
                if not s0[k] or s0[l]:
                    problems.append((where, "rho is defined for s0 -> s1 pairs only"))
                    continue
                rho[k, l] = _rho(item, grid, where)
                listed.add((k, l))
            for (k, l) in transitions:
                if s0[k] and not s0[l] and (k, l) not in listed:
                    problems.append(("free_policy.rho", f"no rho for {space.labels[k]} -> {space.labels[l]}"))
            if not problems:
                free_policy = FreePolicySpec(space, cashflows[fp_doc["scheme"]], rho)

    conditioning = document.get("conditioning", {})
    if conditioning.get("scheme", "as_if_markov") == "state_duration":
        scheme = StateDuration(space, grid, conditioning.get("buckets", [1.0]))
    else:
        scheme = AsIfMarkov(space, grid)
    for label in conditioning.get("labels", []):
        if label not in scheme.labels:
            problems.append(("conditioning.labels", f"unknown label {label!r}"))

    if problems:
        raise ConfigError(problems)

    model = IntensityModel(space, transitions, initial)
    if free_policy is not None:
        model = model.with_blackout(free_policy.exercise_pairs(), free_policy.blocked_indices())
    model.validate_grid(grid)

    discount = document.get("discount", {})
    if "table" in discount or "file" in discount:
        times, values = _read_table(discount, base_dir, "discount")
        kappa = DiscountCurve.from_table(times, values, grid)
    else:
        kappa = DiscountCurve.flat(float(discount.get("rate", 0.0)), grid)

    ensemble = document["ensemble"]
    output = document["output"]
    strict = str(environ.get("FWR_STRICT", "0")) == "1"
    threads = int(environ["FWR_THREADS"]) if "FWR_THREADS" in environ.keys() else 1
    return RunConfig(
        name=document.get("name", "run"),
        state_space=space, grid=grid, model=model, kappa=kappa, cashflows=cashflows, scheme=scheme,
        free_policy=free_policy,
        labels=tuple(conditioning.get("labels", ())),
        min_paths=int(conditioning.get("min_paths", 100)),
        n_paths=int(ensemble.get("n_paths", 50000)),
        base_seed=int(ensemble.get("base_seed", 0)),
        two_dimensional=bool(ensemble.get("two_dimensional", True)),
        out_dir=output.get("dir", "./fwr_out"),
        dump_surfaces=bool(output.get("dump_surfaces", False)),
        dump_paths=int(output.get("dump_paths", 0)),
        threads=threads, strict=strict,
        thresholds=Thresholds(**document.get("thresholds", {})),
        source=source,
    )


def load_config(path_to_config: str = "", url_to_config: str = "", config: Optional[dict] = None,
                environ=None) -> RunConfig:
    """:func:`load_document` followed by :func:`build_run_config`."""
    document, source, base_dir = load_document(path_to_config, url_to_config, config)
    return build_run_config(document, base_dir, environ, source)

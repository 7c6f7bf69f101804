"""Sample-average approximation around an embedded distributional network.

Standard-normal shocks are drawn outside the model; inside it each scenario
value is tied to the network's outputs by ``y = mu + z * sigma`` so that the
scenarios keep their dependence on the decisions feeding the network.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .milp import MilpModel, ModelError


@dataclass
class ScenarioSet:
    z: np.ndarray  # (count, shocks)
    pi: np.ndarray
    exogenous: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (count, T)
    seed: int = 0

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        self.pi = np.asarray(self.pi, dtype=float)
        n = self.z.shape[0]
        if n == 0:
            raise ValueError("scenario set is empty")
        if self.pi.shape != (n,):
            raise ValueError(f"pi has shape {self.pi.shape}, expected ({n},)")
        if abs(self.pi.sum() - 1.0) > 1e-9 or np.any(self.pi < 0):
            raise ValueError("scenario probabilities must be non-negative and sum to 1")
        for name, arr in list(self.exogenous.items()):
            arr = np.atleast_2d(np.asarray(arr, dtype=float))
            if arr.shape[0] != n:
                raise ValueError(f"field {name!r} has {arr.shape[0]} rows for {n} scenarios")
            self.exogenous[name] = arr

    @property
    def count(self) -> int:
        return self.z.shape[0]

    @property
    def n_shocks(self) -> int:
        return self.z.shape[1]

    def mean(self, name: str) -> np.ndarray:
        return self.pi @ self.exogenous[name]

    def with_fields(self, **fields) -> "ScenarioSet":
        ex = dict(self.exogenous)
        ex.update(fields)
        return ScenarioSet(self.z.copy(), self.pi.copy(), ex, self.seed)

    def subset(self, idx) -> "ScenarioSet":
        idx = np.asarray(idx)
        pi = np.full(idx.size, 1.0 / idx.size)
        return ScenarioSet(self.z[idx], pi, {k: v[idx] for k, v in self.exogenous.items()},
                           self.seed)


def sample_scenarios(count: int, shocks_per_scenario: int = 1, seed: int = 0) -> ScenarioSet:
    """Equal-weight standard-normal shocks, reproducible from ``seed``."""
    if count < 1:
        raise ValueError(f"scenario count must be >= 1, got {count}")
    if shocks_per_scenario < 1:
        raise ValueError("need at least one shock per scenario")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, shocks_per_scenario))
    return ScenarioSet(z, np.full(count, 1.0 / count), {}, seed)


def add_distandarization(model: MilpModel, scenarios: ScenarioSet, mu_var: int, sigma_var: int,
                         shock_index: int = 0, prefix: str = "y",
                         lower: float | None = None, upper: float | None = None) -> list[int]:
    """Add ``y_w - mu - z_w * sigma = 0`` for every scenario; returns the y ids."""
    if not 0 <= shock_index < scenarios.n_shocks:
        raise IndexError(f"shock_index {shock_index} out of range for "
                         f"{scenarios.n_shocks} shock column(s)")
    for vid in (mu_var, sigma_var):
        if not 0 <= vid < model.n_vars:
            raise ModelError(f"unknown variable id {vid}")
    ys = []
    for w in range(scenarios.count):
        z = float(scenarios.z[w, shock_index])
        y = model.add_var(f"{prefix}.w{w}", lower=lower, upper=upper)
        terms = {y: 1.0, mu_var: -1.0}
        if z != 0.0:
            terms[sigma_var] = -z
        model.add_constraint(terms, "=", 0.0)
        ys.append(y)
    return ys


class ScenarioView:
    """Read-only access to one scenario, restricted to the declared fields."""

    def __init__(self, scenarios: ScenarioSet, omega: int, allowed: tuple[str, ...]):
        self.omega = omega
        self.z = scenarios.z[omega]
        self.pi = float(scenarios.pi[omega])
        self._src = scenarios
        self._allowed = allowed

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self._allowed:
            raise ModelError(f"template reads undeclared scenario field {name!r}")
        return self._src.exogenous[name][self.omega]


@dataclass
class SaaTemplate:
    """Two-stage problem description.

    ``first_stage(model)`` adds shared columns and returns any handle object.
    ``second_stage(model, handle, view)`` adds one scenario block and returns
    ``(cost_terms, cost_constant)`` for that scenario. ``link(model, handle)``
    runs after all blocks exist and may add constraints across scenarios, using
    whatever ids the second stage recorded in the handle.
    """
    first_stage: Callable
    second_stage: Callable
    fields: tuple[str, ...] = ()
    sense: str = "min"
    link: Callable | None = None
    name: str = "saa"


def assemble_saa(template: SaaTemplate, scenarios: ScenarioSet) -> MilpModel:
    missing = [f for f in template.fields if f not in scenarios.exogenous]
    if missing:
        raise ModelError(f"template references undeclared scenario field(s) {missing}; "
                         f"available: {sorted(scenarios.exogenous)}")
    model = MilpModel(template.name)
    handle = template.first_stage(model)
    objective: dict[int, float] = {}
    constant = 0.0
    for w in range(scenarios.count):
        view = ScenarioView(scenarios, w, tuple(template.fields))
        terms, const = template.second_stage(model, handle, view)
        for vid, coef in dict(terms).items():
            objective[vid] = objective.get(vid, 0.0) + view.pi * coef
        constant += view.pi * const
    if template.link is not None:
        template.link(model, handle)
    model.set_objective(objective, template.sense, constant)
    return model


def write_scenarios_csv(scenarios: ScenarioSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "t", "field", "value"])
        for name in sorted(scenarios.exogenous):
            arr = scenarios.exogenous[name]
            for o in range(arr.shape[0]):
                for t in range(arr.shape[1]):
                    w.writerow([o, t, name, repr(float(arr[o, t]))])


def write_shocks_csv(scenarios: ScenarioSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "shock_index", "z"])
        for o in range(scenarios.count):
            for k in range(scenarios.n_shocks):
                w.writerow([o, k, repr(float(scenarios.z[o, k]))])


def read_scenarios_csv(scenario_path, shocks_path, seed: int = 0) -> ScenarioSet:
    """Rebuild a scenario set; probabilities are taken as uniform."""
    shocks: dict[tuple[int, int], float] = {}
    with open(shocks_path, newline="") as fh:
        for row in csv.DictReader(fh):
            shocks[int(row["omega"]), int(row["shock_index"])] = float(row["z"])
    if not shocks:
        raise ValueError(f"{shocks_path}: no shocks")
    n = max(o for o, _ in shocks) + 1
    k = max(s for _, s in shocks) + 1
    if len(shocks) != n * k:
        raise ValueError(f"{shocks_path}: incomplete shock table")
    z = np.array([[shocks[o, s] for s in range(k)] for o in range(n)])
    cells: dict[str, dict[tuple[int, int], float]] = {}
    with open(scenario_path, newline="") as fh:
        for row in csv.DictReader(fh):
            cells.setdefault(row["field"], {})[int(row["omega"]), int(row["t"])] = \
                float(row["value"])
    fields = {}
    for name, cell in cells.items():
        T = max(t for _, t in cell) + 1
        if len(cell) != n * T:
            raise ValueError(f"{scenario_path}: field {name!r} is incomplete")
        fields[name] = np.array([[cell[o, t] for t in range(T)] for o in range(n)])
    return ScenarioSet(z, np.full(n, 1.0 / n), fields, seed)

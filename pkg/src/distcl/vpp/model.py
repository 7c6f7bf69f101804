"""Two-stage virtual power plant model with an embedded demand network.

First stage: consumer prices ``P_t`` and day-ahead purchases ``Q_t`` (negative
means selling). Second stage, per scenario: demand drawn through the embedded
network, balance-market purchases and battery operation.

Revenue ``P_t * D_{t,w}`` multiplies two decisions. Its expectation only needs
``P_t * Dbar_t`` with ``Dbar_t = mu_t + zbar * sigma_t``, and the price is
picked from a grid of ``K`` points, so the product is written exactly as
``sum_k p_k * w_k`` with ``w_k = u_k * Dbar_t`` (disaggregated, one binary per
grid point). Fixed-price modes skip the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..embed import EmbeddedBlock, embed
from ..milp import MilpModel, ModelError, evaluate
from ..nn import Network
from ..solver import OPTIMAL, SolveOptions, SolveResult, solve_milp
from ..stoch import ScenarioSet, add_distandarization

MODES = ("dcl", "heuristic_a", "heuristic_b", "deterministic_cl")


@dataclass
class VppParams:
    hours: list[int]
    lambda_bal: float
    r_ds: float
    r_ch: float
    eta_ds: float
    eta_ch: float
    b_max: float
    b_init: float
    sigma_dev: float
    grid_points: int = 9
    heuristic_a_price: float = 10.0
    shock_mode: str = "shared"
    eliminate_stable: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def T(self) -> int:
        return len(self.hours)

    def validate(self) -> None:
        if self.T < 1:
            raise ValueError("need at least one period")
        if not 0.0 <= self.b_init <= self.b_max:
            raise ValueError(f"initial charge {self.b_init} outside [0, {self.b_max}]")
        for name in ("eta_ds", "eta_ch"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.sigma_dev < 0:
            raise ValueError("sigma_dev must be >= 0")
        if self.r_ds < 0 or self.r_ch < 0 or self.lambda_bal < 0:
            raise ValueError("ramps and balance price must be non-negative")
        if self.grid_points < 1:
            raise ValueError("price grid needs at least one point")
        if self.shock_mode not in ("shared", "per_period"):
            raise ValueError(f"unknown shock_mode {self.shock_mode!r}")
        if self.heuristic_a_price <= 0:
            raise ValueError("heuristic_a_price must be positive")


@dataclass
class VppInstance:
    params: VppParams
    net: Network
    context: np.ndarray  # (T, d) feature rows, price column ignored
    scenarios: ScenarioSet
    feature_names: list[str]
    price_column: str = "price"
    context_box: np.ndarray | None = None  # (d, 2) big-M box for context features

    def __post_init__(self):
        self.context = np.asarray(self.context, dtype=float)
        if self.context_box is not None:
            self.context_box = np.asarray(self.context_box, dtype=float)
            if self.context_box.shape != (len(self.feature_names), 2):
                raise ValueError("context_box must have one (low, high) row per feature")
        T = self.params.T
        if self.context.shape != (T, len(self.feature_names)):
            raise ValueError(f"context has shape {self.context.shape}, expected "
                             f"({T}, {len(self.feature_names)})")
        check_layout(self.net, self.feature_names)
        for name in ("da_price", "solar"):
            if name not in self.scenarios.exogenous:
                raise ValueError(f"scenarios lack the {name!r} field")
            if self.scenarios.exogenous[name].shape[1] != T:
                raise ValueError(f"scenario field {name!r} has "
                                 f"{self.scenarios.exogenous[name].shape[1]} periods, expected {T}")
        need = T if self.params.shock_mode == "per_period" else 1
        if self.scenarios.n_shocks < need:
            raise ValueError(f"shock_mode {self.params.shock_mode!r} needs {need} shock columns")

    @property
    def expected_da_price(self) -> np.ndarray:
        return self.scenarios.mean("da_price")

    def shock_index(self, t: int) -> int:
        return t if self.params.shock_mode == "per_period" else 0


def check_layout(net: Network, feature_names) -> None:
    """Reject a network whose input columns differ from the context columns."""
    names = list(feature_names)
    got = list(net.input_names or [])
    if not got:
        if net.input_dim != len(names):
            raise ValueError(f"network takes {net.input_dim} inputs, context has {len(names)}")
        return
    if got == names:
        return
    missing = [n for n in names if n not in got]
    extra = [n for n in got if n not in names]
    lines = ["network feature layout does not match the context"]
    if missing:
        lines.append(f"  missing from network: {missing}")
    if extra:
        lines.append(f"  unexpected in network: {extra}")
    if not missing and not extra:
        lines.append(f"  order differs: network {got} vs context {names}")
    raise ValueError("\n".join(lines))


@dataclass
class VppModel:
    model: MilpModel
    mode: str
    instance: VppInstance
    price: list[int]
    da: list[int]
    dbar: list[int]
    demand: list[list[int]]  # [t][w]
    q_bal: list[list[int]]
    charge: list[list[int]]
    discharge: list[list[int]]
    battery: list[list[int]]  # [s][w], s = 0..T
    blocks: list[EmbeddedBlock]
    grid: np.ndarray | None = None  # (T, K) candidate prices
    select: list[list[int]] | None = None  # [t][k] binaries

    @property
    def hidden_relu_binaries(self) -> int:
        return sum(len(b.relu_binaries) for b in self.blocks)

    @property
    def sigma_binaries(self) -> int:
        return sum(b.sigma_binary is not None for b in self.blocks)

    @property
    def grid_binaries(self) -> int:
        return sum(len(r) for r in self.select) if self.select else 0

    def first_stage_ids(self) -> list[int]:
        ids = list(self.price) + list(self.da)
        if self.select:
            ids += [v for row in self.select for v in row]
        return ids


def feature_box(features, margin: float = 0.1) -> np.ndarray:
    """Per-column data range widened by ``margin`` times its width on both sides."""
    X = np.asarray(features, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    pad = margin * (hi - lo)
    return np.column_stack([lo - pad, hi + pad])


def price_grid(lam_bar, sigma_dev: float, points: int) -> np.ndarray:
    lam_bar = np.asarray(lam_bar, dtype=float)
    if points == 1:
        return lam_bar[:, None].copy()
    frac = np.linspace(-sigma_dev, sigma_dev, points)
    return lam_bar[:, None] * (1.0 + frac[None, :])


def build_vpp_model(inst: VppInstance, mode: str = "dcl", fixed_prices=None, fixed_da=None,
                    relax_price: bool = False) -> VppModel:
    """Assemble the stochastic model for ``mode``.

    ``mode`` is ``dcl`` (price grid), ``heuristic_a`` (constant price),
    ``heuristic_b`` (expected day-ahead price) or ``fixed`` (``fixed_prices``
    given, optionally with ``fixed_da``). ``relax_price`` replaces the grid by
    a continuous price under a McCormick envelope, giving an upper bound on
    the continuous-price optimum.
    """
    p = inst.params
    T, sc = p.T, inst.scenarios
    lam_bar = inst.expected_da_price
    if mode == "dcl":
        prices = None
    elif mode == "heuristic_a":
        prices = np.full(T, p.heuristic_a_price)
    elif mode == "heuristic_b":
        prices = lam_bar.copy()
    elif mode == "fixed":
        if fixed_prices is None:
            raise ValueError("mode 'fixed' needs fixed_prices")
        prices = np.asarray(fixed_prices, dtype=float)
        if prices.shape != (T,):
            raise ValueError(f"{prices.size} fixed prices for {T} periods")
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of dcl, heuristic_a, "
                         f"heuristic_b, fixed")
    if prices is not None and np.any(prices <= 0):
        raise ValueError("fixed prices must be positive")

    m = MilpModel(f"vpp_{mode}")
    lo_box, hi_box = lam_bar * (1.0 - p.sigma_dev), lam_bar * (1.0 + p.sigma_dev)
    price_ids = []
    for t in range(T):
        if prices is None:
            price_ids.append(m.add_var(f"P.t{t}", lower=lo_box[t], upper=hi_box[t]))
        else:
            price_ids.append(m.add_var(f"P.t{t}", lower=prices[t], upper=prices[t]))

    # embedded demand network per period
    names = inst.feature_names
    pc = names.index(inst.price_column)
    blocks = []
    for t in range(T):
        inputs, box = [], []
        for k, name in enumerate(names):
            if k == pc:
                inputs.append(price_ids[t])
                box.append((m.variables[price_ids[t]].lower, m.variables[price_ids[t]].upper))
            else:
                v = float(inst.context[t, k])
                inputs.append(m.add_var(f"ctx.t{t}.{name}", lower=v, upper=v))
                if inst.context_box is None:
                    box.append((v, v))
                else:
                    box.append((min(v, inst.context_box[k, 0]), max(v, inst.context_box[k, 1])))
        blocks.append(embed(inst.net, m, inputs, box, prefix=f"nn{t}",
                            eliminate_stable=p.eliminate_stable))

    zbar = [float(sc.pi @ sc.z[:, inst.shock_index(t)]) for t in range(T)]
    zmax = float(np.max(np.abs(sc.z)))
    dbar_ids, dbar_bounds, demand_hi = [], [], []
    for t, blk in enumerate(blocks):
        (mlo, mhi), (slo, shi) = blk.bounds.mu, blk.bounds.sigma
        cands = [zbar[t] * slo, zbar[t] * shi]
        lo, hi = mlo - 1e-6 + min(cands), mhi + 1e-6 + max(cands)
        d = m.add_var(f"dbar.t{t}", lower=lo, upper=hi)
        m.add_constraint({d: 1.0, blk.mu_var: -1.0, blk.sigma_var: -zbar[t]}, "=", 0.0)
        dbar_ids.append(d)
        dbar_bounds.append((lo, hi))
        demand_hi.append(mhi + zmax * shi)

    objective: dict[int, float] = {}
    grid = select = None
    if prices is None and not relax_price:
        grid = price_grid(lam_bar, p.sigma_dev, p.grid_points)
        select = []
        for t in range(T):
            lo, hi = dbar_bounds[t]
            us, ws = [], []
            for k in range(grid.shape[1]):
                u = m.add_var(f"u.t{t}.k{k}", "binary")
                w = m.add_var(f"w.t{t}.k{k}", lower=min(lo, 0.0), upper=max(hi, 0.0))
                m.add_constraint({w: 1.0, u: -hi}, "<=", 0.0)
                m.add_constraint({w: 1.0, u: -lo}, ">=", 0.0)
                objective[w] = float(grid[t, k])
                us.append(u)
                ws.append(w)
            m.add_constraint({u: 1.0 for u in us}, "=", 1.0)
            terms = {price_ids[t]: 1.0}
            for u, pk in zip(us, grid[t]):
                terms[u] = -float(pk)
            m.add_constraint(terms, "=", 0.0)
            terms = {w: 1.0 for w in ws}
            terms[dbar_ids[t]] = -1.0
            m.add_constraint(terms, "=", 0.0)
            select.append(us)
    elif prices is None:
        for t in range(T):
            lo, hi = dbar_bounds[t]
            plo, phi = lo_box[t], hi_box[t]
            r = m.add_var(f"rev.t{t}")
            m.add_constraint({r: 1.0, dbar_ids[t]: -phi, price_ids[t]: -lo}, "<=", -phi * lo)
            m.add_constraint({r: 1.0, dbar_ids[t]: -plo, price_ids[t]: -hi}, "<=", -plo * hi)
            objective[r] = 1.0
    else:
        for t in range(T):
            objective[dbar_ids[t]] = float(prices[t])
    if prices is None:
        m.add_constraint({v: 1.0 for v in price_ids}, "<=", float(lam_bar.sum()))

    qcap = 4.0 * (max(demand_hi) + p.r_ch + p.r_ds) + 1.0
    da_ids = []
    for t in range(T):
        if fixed_da is not None:
            q = float(fixed_da[t])
            da_ids.append(m.add_var(f"Q.t{t}", lower=q, upper=q))
        else:
            da_ids.append(m.add_var(f"Q.t{t}", lower=-qcap, upper=qcap))
        objective[da_ids[t]] = objective.get(da_ids[t], 0.0) - float(lam_bar[t])

    # second stage
    n_w = sc.count
    solar = sc.exogenous["solar"]
    demand, qbal, dch, dds = [], [], [], []
    battery = [[m.add_var(f"B.s0.w{w}", lower=p.b_init, upper=p.b_init) for w in range(n_w)]]
    for t in range(T):
        blk = blocks[t]
        demand.append(add_distandarization(m, sc, blk.mu_var, blk.sigma_var,
                                           inst.shock_index(t), prefix=f"D.t{t}"))
        qb, ch, ds, nxt = [], [], [], []
        for w in range(n_w):
            b = m.add_var(f"Qbal.t{t}.w{w}", lower=0.0)
            c = m.add_var(f"ch.t{t}.w{w}", lower=0.0, upper=p.r_ch)
            d = m.add_var(f"ds.t{t}.w{w}", lower=0.0, upper=p.r_ds)
            s = m.add_var(f"B.s{t + 1}.w{w}", lower=0.0, upper=p.b_max)
            m.add_constraint({demand[t][w]: 1.0, da_ids[t]: -1.0, b: -1.0, d: -p.eta_ds,
                              c: 1.0}, "<=", float(solar[w, t]))
            m.add_constraint({s: 1.0, battery[t][w]: -1.0, d: 1.0, c: -p.eta_ch}, "=", 0.0)
            objective[b] = -p.lambda_bal * float(sc.pi[w])
            qb.append(b)
            ch.append(c)
            ds.append(d)
            nxt.append(s)
        qbal.append(qb)
        dch.append(ch)
        dds.append(ds)
        battery.append(nxt)
    m.add_constraint({battery[T][w]: float(sc.pi[w]) for w in range(n_w)}, ">=", p.b_init)
    m.set_objective(objective, "max")
    return VppModel(m, mode, inst, price_ids, da_ids, dbar_ids, demand, qbal, dch, dds,
                    battery, blocks, grid, select)


# -- solutions ------------------------------------------------------------------

@dataclass
class VppSolution:
    mode: str
    status: str
    objective: float
    prices: np.ndarray
    da_quantity: np.ndarray
    demand: np.ndarray  # (W, T)
    q_bal: np.ndarray
    battery: np.ndarray  # (W, T + 1)
    charge: np.ndarray
    discharge: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    profit_by_scenario: np.ndarray
    pi: np.ndarray
    violations: list = field(default_factory=list)
    result: SolveResult | None = None
    counts: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def expected_profit(self) -> float:
        return float(self.pi @ self.profit_by_scenario)


def model_counts(vm: VppModel) -> dict:
    kinds = vm.model.count_by_kind()
    return {"continuous": kinds.get("continuous", 0), "binary": kinds.get("binary", 0),
            "hidden_relu_binaries": vm.hidden_relu_binaries,
            "sigma_binaries": vm.sigma_binaries, "grid_binaries": vm.grid_binaries,
            "constraints": vm.model.n_constraints}


def scenario_profits(inst: VppInstance, prices, da, demand, q_bal) -> np.ndarray:
    """Profit per scenario from realised values; demand and q_bal are (W, T)."""
    lam = inst.scenarios.exogenous["da_price"]
    return (demand @ prices - lam @ da - inst.params.lambda_bal * q_bal.sum(axis=1))


def extract_solution(vm: VppModel, result: SolveResult, tol: float = 1e-6) -> VppSolution:
    inst = vm.instance
    T, W = inst.params.T, inst.scenarios.count
    pi = inst.scenarios.pi
    counts = model_counts(vm)
    if result.x is None:
        nan = np.full(T, math.nan)
        return VppSolution(vm.mode, result.status, math.nan, nan, nan, np.empty((W, T)),
                           np.empty((W, T)), np.empty((W, T + 1)), np.empty((W, T)),
                           np.empty((W, T)), nan, nan, np.full(W, math.nan), pi,
                           result=result, counts=counts)
    x = result.x
    take = lambda ids: x[np.asarray(ids)]  # noqa: E731
    prices = take(vm.price)
    da = take(vm.da)
    demand = take(vm.demand).T
    q_bal = take(vm.q_bal).T
    battery = take(vm.battery).T
    charge = take(vm.charge).T
    discharge = take(vm.discharge).T
    mu = np.array([x[b.mu_var] for b in vm.blocks])
    sigma = np.array([x[b.sigma_var] for b in vm.blocks])
    _, violations = evaluate(vm.model, x, tol)
    profits = scenario_profits(inst, prices, da, demand, q_bal)
    return VppSolution(vm.mode, result.status, result.objective, prices, da, demand, q_bal,
                       battery, charge, discharge, mu, sigma, profits, pi, violations,
                       result, counts)


def solve_vpp(vm: VppModel, options: SolveOptions | None = None) -> VppSolution:
    return extract_solution(vm, solve_milp(vm.model, options or SolveOptions()))


def run_mode(inst: VppInstance, mode: str, options: SolveOptions | None = None) -> VppSolution:
    if mode == "deterministic_cl":
        return run_deterministic_pipeline(inst, options).stochastic
    sol = solve_vpp(build_vpp_model(inst, mode), options)
    sol.mode = mode
    return sol


@dataclass
class DeterministicResult:
    single: VppSolution  # step one, one scenario at the exogenous means, demand at mu
    stochastic: VppSolution  # step two, first stage fixed, all scenarios


def mean_scenario(inst: VppInstance) -> VppInstance:
    sc = inst.scenarios
    fields = {k: (sc.pi @ v)[None, :] for k, v in sc.exogenous.items()}
    single = ScenarioSet(np.zeros((1, sc.n_shocks)), np.ones(1), fields, sc.seed)
    return VppInstance(inst.params, inst.net, inst.context, single, inst.feature_names,
                       inst.price_column, inst.context_box)


def run_deterministic_pipeline(inst: VppInstance,
                               options: SolveOptions | None = None) -> DeterministicResult:
    """Plan on the mean scenario, then evaluate that plan against every scenario."""
    single_inst = mean_scenario(inst)
    step1 = solve_vpp(build_vpp_model(single_inst, "dcl"), options)
    step1.mode = "deterministic_single"
    if not step1.ok:
        raise ModelError(f"single-scenario problem ended with status {step1.status}")
    vm2 = build_vpp_model(inst, "fixed", fixed_prices=step1.prices, fixed_da=step1.da_quantity)
    step2 = solve_vpp(vm2, options)
    step2.mode = "deterministic_cl"
    return DeterministicResult(step1, step2)

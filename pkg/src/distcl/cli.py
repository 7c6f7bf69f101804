"""Command-line front end.

    distcl gen       --config desk --out runs/gen
    distcl train     --config desk --out runs/train
    distcl solve     --config desk --out runs/solve --dump-lp model.lp
    distcl compare   --config desk --out runs/compare
    distcl gradcheck --config desk

Exit codes: 0 success, 1 solver did not reach optimality, 2 bad config or input.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .embed import write_bounds_csv
from .milp import export_lp
from .nn import (NetworkFormatError, gradient_check, init_network, load_dataset,
                 save_dataset, save_network, train)
from .solver import SolveOptions
from .stoch import write_scenarios_csv, write_shocks_csv
from .vpp import instance as vi
from .vpp.data import FEATURES, decision_context, generate_training_data
from .vpp.metrics import profit_metrics
from .vpp.model import (MODES, VppSolution, build_vpp_model,
                        run_deterministic_pipeline, solve_vpp)

log = logging.getLogger("distcl")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def solver_options(cfg: ExperimentConfig) -> SolveOptions:
    s = cfg.section("solver")
    try:
        return SolveOptions(seed=cfg.seed, **s)
    except TypeError as exc:
        raise ConfigError(f"solver: {exc}") from None


# -- gen ------------------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args)
    gen = vi.generator_config(cfg)
    data = generate_training_data(gen)
    save_dataset(data, out / "dataset.csv")
    params = vi.vpp_params(cfg)
    ctx = decision_context(gen, params.hours)
    with open(out / "context.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(FEATURES))
        for t, row in enumerate(ctx):
            w.writerow([t] + [repr(float(v)) for v in row])
    sc = vi.scenarios(cfg, params)
    write_scenarios_csv(sc, out / "scenarios.csv")
    write_shocks_csv(sc, out / "shocks.csv")
    print(f"dataset rows={len(data)} feature_columns={len(data.column_names)} "
          f"target={data.target_name}")
    print("schema: " + ",".join(data.column_names))
    print(f"scenarios count={sc.count} periods={params.T} fields=da_price,solar "
          f"shocks={sc.n_shocks}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args)
    net, report = train(vi.training_data(cfg), vi.train_config(cfg))
    save_network(net, out / "weights.txt")
    with open(out / "train_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, (tr, va) in enumerate(zip(report.train_loss, report.val_loss), start=1):
            w.writerow([e, repr(float(tr)), repr(float(va))])
    print(f"trained {report.name}: fit_seconds={report.fit_seconds:.2f} "
          f"best_val_loss={report.best_val_loss:.6f} best_epoch={report.best_epoch} "
          f"n_train={report.n_train} n_val={report.n_val}")
    return EXIT_OK


# -- solve / compare ------------------------------------------------------------

def write_solution_csv(sol: VppSolution, model, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "value"])
        if sol.result is not None and sol.result.x is not None:
            for var, v in zip(model.variables, sol.result.x):
                w.writerow([var.name, repr(float(v))])


def write_profits_csv(columns: dict[str, np.ndarray], path) -> None:
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega"] + [f"profit_{m}" if len(names) > 1 else "profit" for m in names])
        for o in range(n):
            w.writerow([o] + [repr(float(columns[m][o])) for m in names])


def metrics_row(mode: str, sol: VppSolution, alpha: float) -> list:
    pm = profit_metrics(sol.profit_by_scenario, sol.pi, alpha)
    nodes = sol.result.stats.nodes if sol.result is not None else 0
    return [mode] + [repr(float(v)) for v in (pm.mean, pm.std, pm.var, pm.cvar)] + [nodes]


def metrics_header(alpha: float) -> list[str]:
    return ["mode", "mean", "std", f"var_{alpha:g}", f"cvar_{alpha:g}", "bb_nodes"]


def _solve_mode(inst, mode, options, args=None, out=None):
    """Returns (solution, model or None)."""
    if mode == "deterministic_cl":
        res = run_deterministic_pipeline(inst, options)
        return res.stochastic, None
    vm = build_vpp_model(inst, mode)
    if args is not None and args.dump_lp:
        Path(args.dump_lp).write_text(export_lp(vm.model))
    if args is not None and args.dump_bounds:
        write_bounds_csv(vm.blocks, args.dump_bounds)
    sol = solve_vpp(vm, options)
    sol.mode = mode
    return sol, vm


def _stats_line(sol: VppSolution, seconds: float) -> str:
    c = sol.counts
    nodes = sol.result.stats.nodes if sol.result is not None else 0
    return (f"mode={sol.mode} status={sol.status} objective={sol.objective:.6f} "
            f"solve_seconds={seconds:.3f} continuous={c.get('continuous')} "
            f"binary={c.get('binary')} hidden_relu_binaries={c.get('hidden_relu_binaries')} "
            f"sigma_binaries={c.get('sigma_binaries')} grid_binaries={c.get('grid_binaries')} "
            f"constraints={c.get('constraints')} nodes={nodes} violations={len(sol.violations)}")


def cmd_solve(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args)
    mode = args.mode or cfg.section("solve")["mode"]
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    inst = vi.build_instance(cfg)
    alpha = cfg.section("compare")["alpha"]
    t0 = time.perf_counter()
    sol, vm = _solve_mode(inst, mode, solver_options(cfg), args, out)
    seconds = time.perf_counter() - t0
    if vm is None and (args.dump_lp or args.dump_bounds):
        vm = build_vpp_model(inst, "fixed", fixed_prices=sol.prices, fixed_da=sol.da_quantity)
        if args.dump_lp:
            Path(args.dump_lp).write_text(export_lp(vm.model))
        if args.dump_bounds:
            write_bounds_csv(vm.blocks, args.dump_bounds)
    model = vm.model if vm is not None else build_vpp_model(
        inst, "fixed", fixed_prices=sol.prices, fixed_da=sol.da_quantity).model
    write_solution_csv(sol, model, out / "solution.csv")
    write_profits_csv({mode: sol.profit_by_scenario}, out / "profits.csv")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(metrics_header(alpha))
        if sol.ok:
            w.writerow(metrics_row(mode, sol, alpha))
    print(_stats_line(sol, seconds))
    if not sol.ok:
        print(f"solver status {sol.status}", file=sys.stderr)
        return EXIT_SOLVER
    if sol.violations:
        print(f"{len(sol.violations)} constraint violations in the returned solution",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def run_compare(cfg: ExperimentConfig, out: Path, modes=None) -> dict[str, VppSolution]:
    modes = list(modes or cfg.section("compare")["modes"])
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"unknown modes {bad}; expected a subset of {', '.join(MODES)}")
    alpha = cfg.section("compare")["alpha"]
    inst = vi.build_instance(cfg)
    write_scenarios_csv(inst.scenarios, out / "scenarios.csv")
    write_shocks_csv(inst.scenarios, out / "shocks.csv")
    options = solver_options(cfg)
    sols, rows, timings = {}, [], []
    for mode in modes:
        t0 = time.perf_counter()
        sol, vm = _solve_mode(inst, mode, options)
        timings.append((mode, time.perf_counter() - t0))
        sols[mode] = sol
        print(_stats_line(sol, timings[-1][1]))
        if vm is not None:
            write_solution_csv(sol, vm.model, out / f"solution_{mode}.csv")
        rows.append(metrics_row(mode, sol, alpha) if sol.ok else [mode] + ["nan"] * 4 + [0])
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(metrics_header(alpha))
        w.writerows(rows)
    write_profits_csv({m: s.profit_by_scenario for m, s in sols.items()}, out / "profits.csv")
    # wall times vary run to run, so they stay out of the CSV outputs
    with open(out / "timings.txt", "w") as fh:
        for mode, sec in timings:
            fh.write(f"{mode} {sec:.3f}\n")
    return sols


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args)
    sols = run_compare(cfg, out)
    with open(out / "metrics.csv") as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK if all(s.ok and not s.violations for s in sols.values()) else EXIT_SOLVER


# -- gradcheck ------------------------------------------------------------------

def cmd_gradcheck(cfg: ExperimentConfig, args) -> int:
    tc = vi.train_config(cfg)
    path = cfg.resolve_path(cfg.section("paths").get("dataset"))
    data = load_dataset(path) if path is not None else generate_training_data(
        vi.generator_config(cfg))
    rng = np.random.default_rng(cfg.seed)
    rows = rng.choice(len(data), size=min(64, len(data)), replace=False)
    X = data.features[rows]
    y = data.targets[rows]
    net = init_network(X.shape[1], tc.hidden_layers, tc.neurons, rng)
    net.shift, net.scale = X.mean(axis=0), np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    y = (y - y.mean()) / y.std()
    report = gradient_check(net, X, y)
    ok = report.passed(1e-4)
    print(f"gradcheck {net.name}: max_rel_error={report.max_rel_error:.3e} "
          f"params={net.n_params()} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "solve": cmd_solve, "compare": cmd_compare,
            "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distcl", description=__doc__.splitlines()[0] if __doc__
                                else None)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True,
                   help="JSON config file, or the name of a bundled config (desk, full)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--dump-lp", default=None, help="write the model in LP format (solve)")
    p.add_argument("--dump-bounds", default=None,
                   help="write propagated pre-activation bounds as CSV (solve)")
    p.add_argument("--mode", default=None, choices=MODES, help="solve mode override")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, NetworkFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

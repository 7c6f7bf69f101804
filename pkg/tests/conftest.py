import itertools
import json
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from distcl.config import from_dict
from distcl.embed import embed
from distcl.milp import MilpModel
from distcl.nn import DenseLayer, Network
from distcl.solver import solve_milp


def random_network(rng, input_dim, widths, epsilon=1e-3, names=None, sigma_bias=1.0):
    """Network with random weights, scaler and heads.

    With the default ``sigma_bias`` the sigma head rarely hits its floor; pass
    a value near 0 to make the sigma ReLU straddle zero.
    """
    layers, w_in = [], input_dim
    for w in widths:
        layers.append(DenseLayer(rng.normal(0, 1 / np.sqrt(w_in), (w, w_in)), rng.normal(0, 0.3, w)))
        w_in = w
    mu = DenseLayer(rng.normal(0, 1, (1, w_in)), rng.normal(0, 1, 1))
    sig = DenseLayer(rng.normal(0, 0.3, (1, w_in)), sigma_bias + rng.normal(0, 0.1, 1))
    return Network(layers, mu, sig, rng.normal(0, 1, input_dim),
                   rng.uniform(0.5, 2.0, input_dim), epsilon, names)


def reference_forward(net, x):
    """Plain-loop forward pass, written independently of distcl.nn."""
    h = [(float(x[i]) - float(net.shift[i])) / float(net.scale[i]) for i in range(len(x))]
    for layer in net.layers:
        out = []
        for r in range(layer.weights.shape[0]):
            s = float(layer.biases[r])
            for c in range(layer.weights.shape[1]):
                s += float(layer.weights[r, c]) * h[c]
            out.append(s if s > 0 else 0.0)
        h = out
    mu = float(net.mu_head.biases[0]) + sum(float(w) * v for w, v in zip(net.mu_head.weights[0], h))
    raw = float(net.sigma_head.biases[0]) + sum(float(w) * v for w, v in zip(net.sigma_head.weights[0], h))
    return mu, max(raw, 0.0) + net.epsilon


def random_lp(rng, n, m, n_binary=0):
    """Random bounded model, feasible at a known point; the first ``n_binary`` vars are binary."""
    model = MilpModel("rand")
    x0 = []
    for j in range(n):
        if j < n_binary:
            model.add_var(f"b{j}", "binary")
            x0.append(float(rng.integers(0, 2)))
        else:
            lo = float(rng.uniform(-3, 0))
            hi = lo + float(rng.uniform(0.5, 5))
            model.add_var(f"x{j}", lower=lo, upper=hi)
            x0.append(float(rng.uniform(lo, hi)))
    x0 = np.array(x0)
    for _ in range(m):
        a = rng.normal(0, 1, n) * (rng.random(n) < 0.7)
        if not np.any(a):
            a[rng.integers(n)] = 1.0
        rel = rng.choice(["<=", ">=", "="], p=[0.45, 0.45, 0.1])
        act = float(a @ x0)
        rhs = act if rel == "=" else act + (1 if rel == "<=" else -1) * float(rng.uniform(0, 2))
        model.add_constraint({j: a[j] for j in range(n) if a[j]}, rel, rhs)
    model.set_objective({j: float(c) for j, c in enumerate(rng.normal(0, 1, n))},
                        rng.choice(["min", "max"]))
    return model


def vertex_oracle(model):
    """Best objective over all basic feasible points of a bounded LP.

    Every vertex is the unique solution of n active constraints drawn from the
    rows and the variable bounds; enumerate all choices.
    """
    A, rel, b, c, lo, hi, _ = model.to_arrays()
    n = model.n_vars
    rows = [(A[r], b[r]) for r in range(A.shape[0])]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append((e, lo[j]))
        rows.append((e, hi[j]))
    eq = [r for r in range(A.shape[0]) if rel[r] == "="]
    others = [k for k in range(len(rows)) if k not in eq]
    sign = 1.0 if model.sense == "min" else -1.0
    best = np.inf
    for extra in itertools.combinations(others, n - len(eq)):
        idx = list(eq) + list(extra)
        M = np.array([rows[k][0] for k in idx])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, np.array([rows[k][1] for k in idx]))
        if np.any(x < lo - 1e-8) or np.any(x > hi + 1e-8):
            continue
        act = A @ x
        ok = all((rel[r] == "<=" and act[r] <= b[r] + 1e-8) or
                 (rel[r] == ">=" and act[r] >= b[r] - 1e-8) or
                 (rel[r] == "=" and abs(act[r] - b[r]) <= 1e-8) for r in range(len(b)))
        if ok:
            best = min(best, sign * float(c @ x))
    return sign * best if np.isfinite(best) else None


def enumeration_oracle(model):
    """Exact MILP optimum by fixing every binary pattern and solving the rest with HiGHS."""
    A, rel, b, c, lo, hi, binary = model.to_arrays()
    bins = np.flatnonzero(binary)
    cont = np.flatnonzero(~binary)
    sign = 1.0 if model.sense == "min" else -1.0
    A_ub = np.vstack([A[rel == "<="], -A[rel == ">="]])
    b_ub = np.concatenate([b[rel == "<="], -b[rel == ">="]])
    A_eq, b_eq = A[rel == "="], b[rel == "="]
    best = np.inf
    for bits in itertools.product((0.0, 1.0), repeat=bins.size):
        xb = np.array(bits)
        if cont.size == 0:
            x = xb
            if np.all(A_ub @ x <= b_ub + 1e-9) and np.all(np.abs(A_eq @ x - b_eq) <= 1e-9):
                best = min(best, sign * float(c @ x))
            continue
        res = linprog(sign * c[cont],
                      A_ub=A_ub[:, cont] if len(b_ub) else None,
                      b_ub=b_ub - A_ub[:, bins] @ xb if len(b_ub) else None,
                      A_eq=A_eq[:, cont] if len(b_eq) else None,
                      b_eq=b_eq - A_eq[:, bins] @ xb if len(b_eq) else None,
                      bounds=list(zip(lo[cont], hi[cont])), method="highs")
        if res.status == 0:
            best = min(best, res.fun + sign * float(c[bins] @ xb))
    return sign * best if np.isfinite(best) else None


def embedded_forward(net, box, eliminate=True):
    """Embed ``net`` over ``box`` with equality-fixed inputs.

    Returns ``solve(x) -> (mu, sigma, result, block)``; each call moves the
    right-hand sides of the fixing rows to ``x`` and solves the MILP.
    """
    box = np.asarray(box, dtype=float)
    model = MilpModel("fidelity")
    xs = [model.add_var(f"x{i}", lower=lo, upper=hi) for i, (lo, hi) in enumerate(box)]
    block = embed(net, model, xs, box, prefix="nn", eliminate_stable=eliminate)
    rows = [model.add_constraint({v: 1.0}, "=", 0.5 * (lo + hi)) for v, (lo, hi) in zip(xs, box)]
    model.set_objective({}, "min")

    def solve(x):
        for r, val in zip(rows, x):
            model.constraints[r].rhs = float(val)
        res = solve_milp(model)
        if not res.ok:
            return math.nan, math.nan, res, block
        return res.x[block.mu_var], res.x[block.sigma_var], res, block

    return solve


TINY_CONFIG = {
    "name": "tiny",
    "seed": 3,
    "generator": {"days": 10, "level": 100.0},
    "network": {"hidden_layers": 1, "neurons": 4, "epochs": 20},
    "scenarios": {"count": 4},
    "vpp": {"hours": [8, 19], "grid_points": 5, "context_box": "data"},
    "solver": {"backend": "native"},
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config_path(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


@pytest.fixture(scope="session")
def tiny_instance():
    from distcl.vpp.instance import build_instance
    return build_instance(from_dict(TINY_CONFIG))


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])

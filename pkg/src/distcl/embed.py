"""Compile a trained :class:`~distcl.nn.Network` into MILP constraints.

Each hidden ReLU ``v = max(0, vt)`` becomes the big-M triple

    v >= vt,   v <= vt - M_low * (1 - j),   v <= M_up * j,   j binary,

with ``M_low < 0 < M_up`` taken from interval propagation over the input box.
Neurons whose interval does not straddle zero are emitted without a binary
(``v = vt`` or ``v = 0``) unless elimination is switched off.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .milp import MilpModel, ModelError
from .nn import Network

WIDEN = 1e-6


@dataclass
class BoundsTable:
    scaled: list[tuple[float, float]]
    hidden: list[list[tuple[float, float]]]  # pre-activation intervals per layer
    mu: tuple[float, float]
    sigma_raw: tuple[float, float]
    sigma: tuple[float, float]


def _affine_interval(W, b, lo, hi):
    Wp, Wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
    return Wp @ lo + Wn @ hi + b, Wp @ hi + Wn @ lo + b


def propagate_bounds(net: Network, input_bounds) -> BoundsTable:
    """Interval arithmetic through the scaler, hidden layers and both heads."""
    box = np.asarray(input_bounds, dtype=float)
    if box.shape != (net.input_dim, 2):
        raise ValueError(f"input_bounds must have shape ({net.input_dim}, 2), got {box.shape}")
    if not np.all(np.isfinite(box)):
        bad = [i for i in range(net.input_dim) if not np.all(np.isfinite(box[i]))]
        raise ValueError(f"unbounded inputs {bad}: embedding needs a finite box")
    if np.any(box[:, 0] > box[:, 1]):
        raise ValueError("input box has lower > upper")
    lo = (box[:, 0] - net.shift) / net.scale
    hi = (box[:, 1] - net.shift) / net.scale
    scaled = list(zip(lo.tolist(), hi.tolist()))
    hidden = []
    for layer in net.layers:
        plo, phi = _affine_interval(layer.weights, layer.biases, lo, hi)
        hidden.append(list(zip(plo.tolist(), phi.tolist())))
        lo, hi = np.maximum(plo, 0.0), np.maximum(phi, 0.0)
    mlo, mhi = _affine_interval(net.mu_head.weights, net.mu_head.biases, lo, hi)
    slo, shi = _affine_interval(net.sigma_head.weights, net.sigma_head.biases, lo, hi)
    sig = (max(slo[0], 0.0) + net.epsilon, max(shi[0], 0.0) + net.epsilon)
    return BoundsTable(scaled, hidden, (mlo[0], mhi[0]), (slo[0], shi[0]), sig)


@dataclass
class EmbeddedBlock:
    prefix: str
    input_vars: list[int]
    scaled_vars: list[int]
    mu_var: int
    sigma_var: int
    relu_binaries: list[int]
    sigma_binary: int | None
    pre_vars: list[list[int]]
    post_vars: list[list[int]]
    sigma_pre_var: int
    bounds: BoundsTable
    big_m: list[list[tuple[float, float]]] = field(default_factory=list)
    stable: int = 0

    @property
    def n_binaries(self) -> int:
        return len(self.relu_binaries) + (self.sigma_binary is not None)


def _widen(lo, hi, force_straddle):
    lo, hi = lo - WIDEN, hi + WIDEN
    if force_straddle:
        lo, hi = min(lo, -WIDEN), max(hi, WIDEN)
    return lo, hi


def _relu_block(model, name, vt, lo, hi, eliminate, stable_counter):
    """Add post-activation var for pre-activation ``vt``; returns (v, j or None, (M_low, M_up))."""
    if eliminate and lo >= 0.0:
        v = model.add_var(f"{name}.v", lower=lo - WIDEN, upper=hi + WIDEN)
        model.add_constraint({v: 1.0, vt: -1.0}, "=", 0.0)
        stable_counter[0] += 1
        return v, None, (lo, hi)
    if eliminate and hi <= 0.0:
        v = model.add_var(f"{name}.v", lower=0.0, upper=0.0)
        stable_counter[0] += 1
        return v, None, (lo, hi)
    m_low, m_up = _widen(lo, hi, force_straddle=True)
    v = model.add_var(f"{name}.v", lower=0.0, upper=m_up)
    j = model.add_var(f"{name}.j", "binary")
    model.add_constraint({v: 1.0, vt: -1.0}, ">=", 0.0)
    model.add_constraint({v: 1.0, vt: -1.0, j: -m_low}, "<=", -m_low)
    model.add_constraint({v: 1.0, j: -m_up}, "<=", 0.0)
    return v, j, (m_low, m_up)


def embed(net: Network, model: MilpModel, input_vars, input_bounds=None,
          prefix: str = "nn", eliminate_stable: bool = True) -> EmbeddedBlock:
    """Add the network's constraint block to ``model``.

    ``input_bounds`` defaults to the current bounds of ``input_vars``; either
    way it must be finite and contain every input variable's bounds.
    """
    input_vars = [int(v) for v in input_vars]
    if len(input_vars) != net.input_dim:
        raise ValueError(f"{len(input_vars)} input variables for a {net.input_dim}-input network")
    if input_bounds is None:
        input_bounds = [(model.variables[v].lower, model.variables[v].upper) for v in input_vars]
    box = np.asarray(input_bounds, dtype=float)
    for k, vid in enumerate(input_vars):
        var = model.variables[vid]
        if var.lower < box[k, 0] - 1e-12 or var.upper > box[k, 1] + 1e-12:
            raise ValueError(f"bounds of {var.name!r} [{var.lower}, {var.upper}] exceed "
                             f"the embedding box [{box[k, 0]}, {box[k, 1]}]")
    pre = f"{prefix}."
    clash = [n for n in model.name_index if n.startswith(pre)]
    if clash:
        raise ModelError(f"prefix {prefix!r} collides with existing variable {clash[0]!r}")
    tb = propagate_bounds(net, box)
    stable = [0]

    scaled = []
    for k, (vid, (lo, hi)) in enumerate(zip(input_vars, tb.scaled)):
        s = model.add_var(f"{prefix}.in{k}.s", lower=lo - WIDEN, upper=hi + WIDEN)
        model.add_constraint({s: 1.0, vid: -1.0 / net.scale[k]}, "=",
                             -net.shift[k] / net.scale[k])
        scaled.append(s)

    prev = scaled
    pre_vars, post_vars, binaries, big_m = [], [], [], []
    for l, layer in enumerate(net.layers):
        vts, vs, ms = [], [], []
        for i in range(layer.out_width):
            lo, hi = tb.hidden[l][i]
            name = f"{prefix}.l{l}.n{i}"
            vt = model.add_var(f"{name}.vt", lower=lo - WIDEN, upper=hi + WIDEN)
            terms = {vt: 1.0}
            for src, w in zip(prev, layer.weights[i]):
                if w != 0.0:
                    terms[src] = terms.get(src, 0.0) - w
            model.add_constraint(terms, "=", layer.biases[i])
            v, j, mm = _relu_block(model, name, vt, lo, hi, eliminate_stable, stable)
            if j is not None:
                binaries.append(j)
            vts.append(vt)
            vs.append(v)
            ms.append(mm)
        pre_vars.append(vts)
        post_vars.append(vs)
        big_m.append(ms)
        prev = vs

    mu = model.add_var(f"{prefix}.mu", lower=tb.mu[0] - WIDEN, upper=tb.mu[1] + WIDEN)
    terms = {mu: 1.0}
    for src, w in zip(prev, net.mu_head.weights[0]):
        if w != 0.0:
            terms[src] = -w
    model.add_constraint(terms, "=", net.mu_head.biases[0])

    slo, shi = tb.sigma_raw
    st = model.add_var(f"{prefix}.sig.vt", lower=slo - WIDEN, upper=shi + WIDEN)
    terms = {st: 1.0}
    for src, w in zip(prev, net.sigma_head.weights[0]):
        if w != 0.0:
            terms[src] = -w
    model.add_constraint(terms, "=", net.sigma_head.biases[0])
    sv, sj, _ = _relu_block(model, f"{prefix}.sig", st, slo, shi, eliminate_stable, stable)
    sigma = model.add_var(f"{prefix}.sigma", lower=tb.sigma[0] - WIDEN,
                          upper=tb.sigma[1] + WIDEN)
    model.add_constraint({sigma: 1.0, sv: -1.0}, "=", net.epsilon)

    return EmbeddedBlock(prefix, input_vars, scaled, mu, sigma, binaries, sj, pre_vars,
                         post_vars, st, tb, big_m, stable[0])


def check_preactivations(block: EmbeddedBlock, x, tol: float = 1e-6) -> list[str]:
    """Names of pre-activation variables whose value leaves its interval."""
    bad = []
    for l, vts in enumerate(block.pre_vars):
        for i, vt in enumerate(vts):
            lo, hi = block.bounds.hidden[l][i]
            if not lo - tol <= x[vt] <= hi + tol:
                bad.append(f"{block.prefix}.l{l}.n{i}.vt")
    return bad


def write_bounds_csv(tables, path, prefix: str = "nn") -> None:
    """Write propagated intervals; ``tables`` is one table or a list of embedded blocks."""
    if isinstance(tables, BoundsTable):
        tables = [(prefix, tables)]
    else:
        tables = [(b.prefix, b.bounds) for b in tables]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "layer", "node", "lower", "upper"])
        for name, table in tables:
            for l, row in enumerate(table.hidden):
                for i, (lo, hi) in enumerate(row):
                    w.writerow([name, l, i, repr(float(lo)), repr(float(hi))])
            w.writerow([name, "mu", 0, repr(float(table.mu[0])), repr(float(table.mu[1]))])
            w.writerow([name, "sigma_raw", 0, repr(float(table.sigma_raw[0])),
                        repr(float(table.sigma_raw[1]))])

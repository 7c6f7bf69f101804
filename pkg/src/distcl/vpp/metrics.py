"""Summary statistics of a discrete profit distribution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ProfitMetrics:
    mean: float
    std: float
    var: float
    cvar: float
    alpha: float


def value_at_risk(profit, pi, alpha: float) -> float:
    """Largest profit value p with P(profit <= p) <= alpha; the minimum if none qualifies."""
    profit = np.asarray(profit, dtype=float)
    pi = np.asarray(pi, dtype=float)
    order = np.argsort(profit, kind="stable")
    vals, w = profit[order], pi[order]
    # collapse ties so the cumulative probability is taken at distinct values
    uniq, start = np.unique(vals, return_index=True)
    cum = np.cumsum(np.add.reduceat(w, start))
    ok = np.flatnonzero(cum <= alpha + 1e-12)
    return float(uniq[ok[-1]] if ok.size else uniq[0])


def profit_metrics(profit, pi=None, alpha: float = 0.1) -> ProfitMetrics:
    profit = np.asarray(profit, dtype=float).ravel()
    if profit.size == 0:
        raise ValueError("empty profit vector")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    pi = np.full(profit.size, 1.0 / profit.size) if pi is None else np.asarray(pi, dtype=float)
    if pi.shape != profit.shape or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("pi must match profits and sum to 1")
    mean = float(pi @ profit)
    std = float(np.sqrt(max(pi @ (profit - mean) ** 2, 0.0)))
    var = value_at_risk(profit, pi, alpha)
    tail = profit <= var
    cvar = float(pi[tail] @ profit[tail] / pi[tail].sum())
    return ProfitMetrics(mean, std, var, cvar, alpha)

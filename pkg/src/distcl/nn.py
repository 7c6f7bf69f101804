"""Feed-forward ReLU networks with a mean head and a standard-deviation head.

The sigma head is ``relu(affine) + epsilon`` so that the whole network stays
piecewise linear (embeddable as MILP constraints) while predicted standard
deviations stay bounded away from zero. Training minimises the mean Gaussian
negative log-likelihood with Adam; gradients are exact backpropagation.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT_HEADER = "DISTCL-NET v1"
DEFAULT_EPSILON = 1e-3


class NetworkFormatError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.biases = np.atleast_1d(np.asarray(self.biases, dtype=float))
        if self.weights.shape[0] != self.biases.shape[0]:
            raise ValueError(f"weights {self.weights.shape} and biases {self.biases.shape} disagree")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("layer has non-finite entries")

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]


@dataclass
class Network:
    layers: list[DenseLayer]
    mu_head: DenseLayer
    sigma_head: DenseLayer
    shift: np.ndarray
    scale: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    input_names: list[str] | None = None

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=float).ravel()
        self.scale = np.asarray(self.scale, dtype=float).ravel()
        if self.shift.shape != self.scale.shape:
            raise ValueError("scaler shift and scale differ in length")
        if np.any(~(self.scale > 0)) or not np.all(np.isfinite(self.scale)):
            raise ValueError("scaler scale entries must be finite and strictly positive")
        if not np.all(np.isfinite(self.shift)):
            raise ValueError("scaler shift entries must be finite")
        if not self.epsilon > 0:
            raise ValueError("sigma floor epsilon must be positive")
        width = self.input_dim
        for k, layer in enumerate(self.layers):
            if layer.in_width != width:
                raise ValueError(f"layer {k} expects {layer.in_width} inputs, previous width is {width}")
            width = layer.out_width
        for head_name, head in (("mu", self.mu_head), ("sigma", self.sigma_head)):
            if head.out_width != 1 or head.in_width != width:
                raise ValueError(f"{head_name} head must be 1 x {width}, got {head.weights.shape}")
        if self.input_names is not None and len(self.input_names) != self.input_dim:
            raise ValueError("input_names length differs from input_dim")

    @property
    def input_dim(self) -> int:
        return self.shift.size

    @property
    def hidden_widths(self) -> list[int]:
        return [layer.out_width for layer in self.layers]

    @property
    def name(self) -> str:
        return layout_name(len(self.layers), self.layers[0].out_width if self.layers else 0)

    def params(self) -> list[np.ndarray]:
        """Trainable arrays, in backprop order (references, not copies)."""
        out = []
        for layer in self.layers + [self.mu_head, self.sigma_head]:
            out.extend([layer.weights, layer.biases])
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Network":
        return Network([DenseLayer(l.weights.copy(), l.biases.copy()) for l in self.layers],
                       DenseLayer(self.mu_head.weights.copy(), self.mu_head.biases.copy()),
                       DenseLayer(self.sigma_head.weights.copy(), self.sigma_head.biases.copy()),
                       self.shift.copy(), self.scale.copy(), self.epsilon,
                       list(self.input_names) if self.input_names else None)


def layout_name(hidden_layers: int, neurons: int) -> str:
    return f"DNN({hidden_layers},{neurons})"


def _relu(a):
    return np.maximum(a, 0.0)


def forward_batch(net: Network, X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"expected inputs of shape (N, {net.input_dim}), got {X.shape}")
    h = (X - net.shift) / net.scale
    for layer in net.layers:
        h = _relu(h @ layer.weights.T + layer.biases)
    mu = h @ net.mu_head.weights[0] + net.mu_head.biases[0]
    sigma = _relu(h @ net.sigma_head.weights[0] + net.sigma_head.biases[0]) + net.epsilon
    return mu, sigma


def forward(net: Network, x) -> tuple[float, float]:
    """Predicted (mean, std) for one raw input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != net.input_dim:
        raise ValueError(f"input has {x.size} features, network expects {net.input_dim}")
    mu, sigma = forward_batch(net, x[None, :])
    return float(mu[0]), float(sigma[0])


def gaussian_nll(y: float, mu: float, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return 0.5 * (math.log(sigma * sigma) + (y - mu) ** 2 / (sigma * sigma))


def mean_nll(net: Network, X, y) -> float:
    mu, sigma = forward_batch(net, X)
    y = np.asarray(y, dtype=float)
    return float(np.mean(0.5 * (np.log(sigma ** 2) + (y - mu) ** 2 / sigma ** 2)))


def loss_and_grad(net: Network, X, y) -> tuple[float, list[np.ndarray]]:
    """Mean Gaussian NLL over (X, y) and its gradient w.r.t. ``net.params()``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    acts = [(X - net.shift) / net.scale]
    pres = []
    for layer in net.layers:
        pre = acts[-1] @ layer.weights.T + layer.biases
        pres.append(pre)
        acts.append(_relu(pre))
    h = acts[-1]
    mu = h @ net.mu_head.weights[0] + net.mu_head.biases[0]
    s_raw = h @ net.sigma_head.weights[0] + net.sigma_head.biases[0]
    sigma = _relu(s_raw) + net.epsilon
    resid = y - mu
    var = sigma ** 2
    loss = float(np.mean(0.5 * (np.log(var) + resid ** 2 / var)))

    d_mu = -resid / var / n
    d_sigma = (1.0 / sigma - resid ** 2 / (var * sigma)) / n
    d_sraw = d_sigma * (s_raw > 0)
    grads_heads = [
        (d_mu[:, None] * h).sum(axis=0)[None, :], np.array([d_mu.sum()]),
        (d_sraw[:, None] * h).sum(axis=0)[None, :], np.array([d_sraw.sum()]),
    ]
    d_h = np.outer(d_mu, net.mu_head.weights[0]) + np.outer(d_sraw, net.sigma_head.weights[0])
    grads_layers: list[np.ndarray] = []
    for k in range(len(net.layers) - 1, -1, -1):
        d_pre = d_h * (pres[k] > 0)
        grads_layers = [d_pre.T @ acts[k], d_pre.sum(axis=0)] + grads_layers
        d_h = d_pre @ net.layers[k].weights
    return loss, grads_layers + grads_heads


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_params: int
    worst_index: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def gradient_check(net: Network, X, y, step: float = 1e-5) -> GradCheckReport:
    """Analytic gradient vs. central finite differences of the mean NLL."""
    _, grads = loss_and_grad(net, X, y)
    analytic = np.concatenate([g.ravel() for g in grads])
    probe = net.copy()
    params = probe.params()
    numeric = np.empty_like(analytic)
    k = 0
    for p in params:
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = mean_nll(probe, X, y)
            flat[i] = old - step
            dn = mean_nll(probe, X, y)
            flat[i] = old
            numeric[k] = (up - dn) / (2 * step)
            k += 1
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = abs_err / denom
    worst = int(np.argmax(rel)) if rel.size else -1
    return GradCheckReport(float(rel.max(initial=0.0)), float(abs_err.max(initial=0.0)),
                           analytic.size, worst)


# -- data ---------------------------------------------------------------------

@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    column_names: list[str]
    decision_columns: list[int] = field(default_factory=list)
    target_name: str = "y"

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        n, d = self.features.shape
        if n < 1:
            raise ValueError("dataset is empty")
        if self.targets.size != n:
            raise ValueError(f"{n} feature rows but {self.targets.size} targets")
        if len(self.column_names) != d:
            raise ValueError(f"{d} feature columns but {len(self.column_names)} names")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains missing or non-finite values")
        if any(not 0 <= c < d for c in self.decision_columns):
            raise ValueError("decision column index out of range")

    def __len__(self) -> int:
        return self.targets.size


def save_dataset(data: Dataset, csv_path, sidecar_path=None) -> None:
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.column_names) + [data.target_name])
        for row, t in zip(data.features, data.targets):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
    sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    meta = {"target": data.target_name,
            "decision_columns": [data.column_names[i] for i in data.decision_columns]}
    sidecar_path.write_text(json.dumps(meta, indent=2) + "\n")


def load_dataset(csv_path, sidecar_path=None) -> Dataset:
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    meta = json.loads(sidecar_path.read_text())
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{csv_path}: empty file")
    header, body = rows[0], rows[1:]
    target = meta["target"]
    if target not in header:
        raise ValueError(f"{csv_path}: target column {target!r} not in header")
    ti = header.index(target)
    names = [h for i, h in enumerate(header) if i != ti]
    try:
        values = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{csv_path}: {exc}") from None
    if values.size == 0:
        raise ValueError(f"{csv_path}: no data rows")
    decision = []
    for c in meta.get("decision_columns", []):
        if c not in names:
            raise ValueError(f"{csv_path}: decision column {c!r} not in header")
        decision.append(names.index(c))
    feats = np.delete(values, ti, axis=1)
    return Dataset(feats, values[:, ti], names, decision, target)


# -- training -------------------------------------------------------------------

@dataclass
class TrainConfig:
    hidden_layers: int = 1
    neurons: int = 20
    epochs: int = 5000
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    val_fraction: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sigma_floor: float = DEFAULT_EPSILON

    @property
    def name(self) -> str:
        return layout_name(self.hidden_layers, self.neurons)


@dataclass
class TrainingReport:
    name: str
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    best_val_loss: float
    fit_seconds: float
    n_train: int
    n_val: int


def init_network(input_dim: int, hidden_layers: int, neurons: int, rng,
                 epsilon: float = DEFAULT_EPSILON, sigma_bias: float = 1.0) -> Network:
    layers, width = [], input_dim
    for _ in range(hidden_layers):
        W = rng.normal(0.0, math.sqrt(2.0 / width), size=(neurons, width))
        layers.append(DenseLayer(W, np.zeros(neurons)))
        width = neurons
    mu = DenseLayer(rng.normal(0.0, math.sqrt(1.0 / width), size=(1, width)), np.zeros(1))
    sig = DenseLayer(rng.normal(0.0, 0.1 * math.sqrt(1.0 / width), size=(1, width)),
                     np.array([sigma_bias]))
    return Network(layers, mu, sig, np.zeros(input_dim), np.ones(input_dim), epsilon)


def _unscale_targets(net: Network, y_shift: float, y_scale: float, epsilon: float) -> Network:
    # relu(s * a) = s * relu(a) for s > 0, so the target scale folds into both heads
    out = net.copy()
    out.mu_head.weights *= y_scale
    out.mu_head.biases = out.mu_head.biases * y_scale + y_shift
    out.sigma_head.weights *= y_scale
    out.sigma_head.biases *= y_scale
    out.epsilon = epsilon
    return out


def train(data: Dataset, config: TrainConfig) -> tuple[Network, TrainingReport]:
    """Fit a distributional network; returns the best-validation snapshot."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    n = len(data)
    order = rng.permutation(n)
    n_val = int(round(n * config.val_fraction)) if n > 1 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]
    Xtr, ytr = data.features[tr_idx], data.targets[tr_idx]
    Xva, yva = data.features[val_idx], data.targets[val_idx]

    shift = Xtr.mean(axis=0)
    scale = Xtr.std(axis=0)
    scale[scale == 0] = 1.0
    y_shift = float(ytr.mean())
    y_scale = float(ytr.std()) or 1.0

    net = init_network(data.features.shape[1], config.hidden_layers, config.neurons, rng,
                       epsilon=config.sigma_floor / y_scale)
    net.shift, net.scale = shift, scale
    net.input_names = list(data.column_names)
    ztr = (ytr - y_shift) / y_scale

    params = net.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0
    train_hist, val_hist = [], []
    best, best_val, best_epoch = None, math.inf, -1
    b1, b2 = config.beta1, config.beta2

    for epoch in range(config.epochs):
        perm = rng.permutation(Xtr.shape[0])
        for start in range(0, perm.size, config.batch_size):
            batch = perm[start:start + config.batch_size]
            _, grads = loss_and_grad(net, Xtr[batch], ztr[batch])
            step += 1
            lr_t = config.learning_rate * math.sqrt(1 - b2 ** step) / (1 - b1 ** step)
            for p, g, a, v in zip(params, grads, m1, m2):
                a *= b1
                a += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= lr_t * a / (np.sqrt(v) + config.adam_eps)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDiverged(f"weights became non-finite at epoch {epoch + 1}")
        snapshot = _unscale_targets(net, y_shift, y_scale, config.sigma_floor)
        tr_loss = mean_nll(snapshot, Xtr, ytr)
        va_loss = mean_nll(snapshot, Xva, yva) if n_val else tr_loss
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch + 1}")
        train_hist.append(tr_loss)
        val_hist.append(va_loss)
        if va_loss < best_val:
            best, best_val, best_epoch = snapshot, va_loss, epoch + 1
    if best is None:
        best = _unscale_targets(net, y_shift, y_scale, config.sigma_floor)
        best_val = mean_nll(best, Xva, yva) if n_val else mean_nll(best, Xtr, ytr)
    report = TrainingReport(config.name, train_hist, val_hist, best_epoch, best_val,
                            time.perf_counter() - t0, int(tr_idx.size), int(n_val))
    log.info("%s: best val NLL %.5f at epoch %d (%.1fs)", config.name, best_val,
             best_epoch, report.fit_seconds)
    return best, report


def split_indices(n: int, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """The (train, validation) row indices ``train`` uses for this config."""
    order = np.random.default_rng(config.seed).permutation(n)
    n_val = int(round(n * config.val_fraction)) if n > 1 else 0
    return order[n_val:], order[:n_val]


# -- weights file ---------------------------------------------------------------

def _nums(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def dumps_network(net: Network) -> str:
    lines = [FORMAT_HEADER, f"input_dim {net.input_dim}"]
    if net.input_names:
        lines.append("inputs " + " ".join(net.input_names))
    lines += [f"epsilon {_nums([net.epsilon])}",
              f"scaler_shift {_nums(net.shift)}",
              f"scaler_scale {_nums(net.scale)}",
              f"hidden_layers {len(net.layers)}"]
    for k, layer in enumerate(net.layers):
        lines.append(f"layer {k} {layer.out_width} {layer.in_width}")
        lines.extend(_nums(row) for row in layer.weights)
        lines.append(f"bias {_nums(layer.biases)}")
    for tag, head in (("mu_head", net.mu_head), ("sigma_head", net.sigma_head)):
        lines.append(f"{tag} {head.in_width}")
        lines.append(_nums(head.weights[0]))
        lines.append(f"bias {_nums(head.biases)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net), encoding="utf-8")


class _Reader:
    def __init__(self, text: str):
        self.lines = [ln.strip() for ln in text.splitlines()]
        self.pos = 0

    def next(self, section: str) -> tuple[str, int]:
        while self.pos < len(self.lines) and not self.lines[self.pos]:
            self.pos += 1
        if self.pos >= len(self.lines):
            raise NetworkFormatError(f"unexpected end of file: missing section {section!r}")
        self.pos += 1
        return self.lines[self.pos - 1], self.pos

    def keyed(self, key: str) -> tuple[list[str], int]:
        line, ln = self.next(key)
        parts = line.split()
        if parts[0] != key:
            raise NetworkFormatError(f"line {ln}: expected {key!r}, found {parts[0]!r}")
        return parts[1:], ln

    @staticmethod
    def floats(tokens, ln, expected=None, what="values") -> np.ndarray:
        try:
            vals = np.array([float(t) for t in tokens], dtype=float)
        except ValueError:
            raise NetworkFormatError(f"line {ln}: unparseable number in {what}") from None
        if expected is not None and vals.size != expected:
            raise NetworkFormatError(f"line {ln}: {what} has {vals.size} entries, expected {expected}")
        return vals


def loads_network(text: str) -> Network:
    rd = _Reader(text)
    header, ln = rd.next("header")
    if header != FORMAT_HEADER:
        if header.startswith("DISTCL-NET"):
            raise NetworkFormatError(f"line {ln}: unsupported version {header!r}")
        raise NetworkFormatError(f"line {ln}: not a network file (header {header!r})")
    tok, ln = rd.keyed("input_dim")
    try:
        d = int(tok[0])
    except (ValueError, IndexError):
        raise NetworkFormatError(f"line {ln}: bad input_dim") from None
    names = None
    line, ln2 = rd.next("epsilon")
    if line.startswith("inputs"):
        names = line.split()[1:]
        if len(names) != d:
            raise NetworkFormatError(f"line {ln2}: {len(names)} input names for input_dim {d}")
    else:
        rd.pos -= 1
    tok, ln = rd.keyed("epsilon")
    eps = float(rd.floats(tok, ln, 1, "epsilon")[0])
    tok, ln = rd.keyed("scaler_shift")
    shift = rd.floats(tok, ln, d, "scaler_shift")
    tok, ln = rd.keyed("scaler_scale")
    scale = rd.floats(tok, ln, d, "scaler_scale")
    if np.any(~(scale > 0)):
        raise NetworkFormatError(f"line {ln}: scaler_scale entries must be strictly positive")
    tok, ln = rd.keyed("hidden_layers")
    n_layers = int(tok[0])
    layers = []
    width = d
    for k in range(n_layers):
        tok, ln = rd.keyed("layer")
        if len(tok) != 3 or int(tok[0]) != k:
            raise NetworkFormatError(f"line {ln}: bad layer header")
        out_w, in_w = int(tok[1]), int(tok[2])
        if in_w != width:
            raise NetworkFormatError(f"line {ln}: layer {k} input width {in_w}, expected {width}")
        rows = []
        for _ in range(out_w):
            line, ln = rd.next(f"layer {k} weights")
            rows.append(rd.floats(line.split(), ln, in_w, f"layer {k} weights"))
        tok, ln = rd.keyed("bias")
        bias = rd.floats(tok, ln, out_w, f"layer {k} bias")
        layers.append(DenseLayer(np.array(rows), bias))
        width = out_w
    heads = []
    for tag in ("mu_head", "sigma_head"):
        tok, ln = rd.keyed(tag)
        if int(tok[0]) != width:
            raise NetworkFormatError(f"line {ln}: {tag} width {tok[0]}, expected {width}")
        line, ln = rd.next(f"{tag} weights")
        w = rd.floats(line.split(), ln, width, f"{tag} weights")
        tok, ln = rd.keyed("bias")
        b = rd.floats(tok, ln, 1, f"{tag} bias")
        heads.append(DenseLayer(w[None, :], b))
    rd.keyed("end")
    try:
        return Network(layers, heads[0], heads[1], shift, scale, eps, names)
    except ValueError as exc:
        raise NetworkFormatError(str(exc)) from None


def load_network(path) -> Network:
    return loads_network(Path(path).read_text(encoding="utf-8"))

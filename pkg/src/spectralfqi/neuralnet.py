"""Fully connected ReLU regressor with inverted dropout and exact backprop.

All parameters live in one flat float64 vector; per-layer weight matrices and
bias vectors are views into it.  That keeps the Adam update a handful of
vector operations regardless of depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, SchemaError


@dataclass(frozen=True)
class NetworkArchitecture:
    input_dim: int
    hidden_widths: tuple[int, ...] = (15, 5, 5)
    dropout_rate: float = 0.1
    v_max: float = math.inf
    output_dim: int = 1

    def __post_init__(self):
        widths = tuple(int(w) for w in self.hidden_widths)
        object.__setattr__(self, "hidden_widths", widths)
        if self.input_dim < 1:
            raise DimensionError("input_dim must be >= 1")
        if not widths or min(widths) < 1:
            raise DimensionError(f"need at least one hidden layer of positive width, got {widths}")
        if self.output_dim != 1:
            raise DimensionError("output_dim must be 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_widths, self.output_dim]
        return [(dims[j + 1], dims[j]) for j in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)


def _slices(shapes):
    out, pos = [], 0
    for o, i in shapes:
        out.append((slice(pos, pos + o * i), slice(pos + o * i, pos + o * i + o)))
        pos += o * i + o
    return out


class NetworkParameters:
    """Weights ``W_j`` (out x in) and biases ``v_j`` stored in one flat vector."""

    def __init__(self, flat: np.ndarray, shapes: Sequence[tuple[int, int]]):
        self.shapes = [tuple(s) for s in shapes]
        self.flat = np.asarray(flat, dtype=float)
        if self.flat.shape != (sum(o * i + o for o, i in self.shapes),):
            raise DimensionError("flat parameter vector does not match layer shapes")
        self.weights = []
        self.biases = []
        for (o, i), (ws, bs) in zip(self.shapes, _slices(self.shapes)):
            self.weights.append(self.flat[ws].reshape(o, i))
            self.biases.append(self.flat[bs])

    @classmethod
    def from_layers(cls, weights, biases) -> "NetworkParameters":
        weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in weights]
        biases = [np.atleast_1d(np.asarray(b, dtype=float)) for b in biases]
        shapes = [w.shape for w in weights]
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[0],):
                raise DimensionError("bias length must match weight rows")
        flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(weights, biases)])
        return cls(flat, shapes)

    def copy(self) -> "NetworkParameters":
        return NetworkParameters(self.flat.copy(), self.shapes)

    def __eq__(self, other):
        if not isinstance(other, NetworkParameters):
            return NotImplemented
        return self.shapes == other.shapes and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"NetworkParameters(shapes={self.shapes})"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("need epochs >= 1, batch_size >= 1, learning_rate > 0")


def _check_arch(params: NetworkParameters, arch: NetworkArchitecture):
    if params.shapes != arch.layer_shapes:
        raise DimensionError(f"parameters {params.shapes} do not fit architecture {arch.layer_shapes}")


def init_network(arch: NetworkArchitecture, seed: int) -> NetworkParameters:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for o, i in arch.layer_shapes:
        bound = 1.0 / math.sqrt(i)
        weights.append(rng.uniform(-bound, bound, size=(o, i)))
        biases.append(np.zeros(o))
    return NetworkParameters.from_layers(weights, biases)


def dropout_masks(arch: NetworkArchitecture, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout multipliers, one ``(n, width)`` array per hidden layer."""
    rate = arch.dropout_rate
    if rate == 0:
        return [None] * len(arch.hidden_widths)
    keep = 1.0 - rate
    return [(rng.random((n, w)) >= rate) / keep for w in arch.hidden_widths]


def _as_batch(inputs, arch):
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != arch.input_dim:
        raise DimensionError(f"input has {x.shape[1]} features, network expects {arch.input_dim}")
    return x, single


def _forward(params, x, masks):
    """Pre-clamp output plus the cache needed by backprop."""
    acts = [x]
    pres = []
    h = x
    n_hidden = len(params.weights) - 1
    for j in range(n_hidden):
        pre = h @ params.weights[j].T + params.biases[j]
        h = np.maximum(pre, 0.0)
        if masks is not None and masks[j] is not None:
            h = h * masks[j]
        pres.append(pre)
        acts.append(h)
    out = h @ params.weights[-1][0] + params.biases[-1][0]
    return out, acts, pres


def forward(params: NetworkParameters, arch: NetworkArchitecture, inputs, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Network output clamped to ``[-v_max, v_max]``.

    ``inputs`` is one vector (returns a float) or an ``(n, d0)`` array (returns
    an array).  In ``"train"`` mode hidden activations are dropped with
    probability ``arch.dropout_rate`` and survivors rescaled by ``1/(1-rate)``.
    """
    _check_arch(params, arch)
    x, single = _as_batch(inputs, arch)
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an rng")
        masks = dropout_masks(arch, x.shape[0], rng)
    elif mode == "eval":
        masks = None
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out, _, _ = _forward(params, x, masks)
    out = np.clip(out, -arch.v_max, arch.v_max)
    return float(out[0]) if single else out


def _loss_and_grad(params, arch, x, y, masks, grad_out: np.ndarray):
    """Mean squared error and its gradient, written into ``grad_out`` (flat layout)."""
    raw, acts, pres = _forward(params, x, masks)
    f = np.clip(raw, -arch.v_max, arch.v_max)
    err = f - y
    n = y.size
    loss = float(err @ err) / n
    d = (2.0 / n) * err * (np.abs(raw) < arch.v_max)
    sl = _slices(params.shapes)
    last = len(params.weights) - 1
    ws, bs = sl[last]
    grad_out[ws] = d @ acts[last]
    grad_out[bs] = d.sum()
    dh = np.outer(d, params.weights[last][0])
    for j in range(last - 1, -1, -1):
        if masks is not None and masks[j] is not None:
            dh = dh * masks[j]
        dh = dh * (pres[j] > 0)
        ws, bs = sl[j]
        grad_out[ws] = (dh.T @ acts[j]).ravel()
        grad_out[bs] = dh.sum(axis=0)
        if j:
            dh = dh @ params.weights[j]
    return loss, grad_out


def gradient(params: NetworkParameters, arch: NetworkArchitecture, inputs, targets,
             masks: list | None = None) -> NetworkParameters:
    """Exact gradient of ``mean((f(x) - y)^2)`` with respect to every parameter.

    ``masks`` (from :func:`dropout_masks`) fixes a train-mode dropout pattern;
    ``None`` differentiates the eval-mode network.
    """
    _check_arch(params, arch)
    x, _ = _as_batch(inputs, arch)
    y = np.atleast_1d(np.asarray(targets, dtype=float))
    if y.size == 0 or y.size != x.shape[0]:
        raise DimensionError("need a non-empty batch with one target per input")
    g = np.empty_like(params.flat)
    _loss_and_grad(params, arch, x, y, masks, g)
    return NetworkParameters(g, params.shapes)


def mse(params: NetworkParameters, arch: NetworkArchitecture, inputs, targets) -> float:
    pred = forward(params, arch, np.atleast_2d(inputs))
    err = pred - np.asarray(targets, dtype=float)
    return float(err @ err) / err.size


def train_regression(params: NetworkParameters, arch: NetworkArchitecture, inputs, targets,
                     cfg: TrainConfig) -> NetworkParameters:
    """Minibatch Adam on squared error; returns the best parameters seen.

    Training loss is the eval-mode MSE on the full data, recorded for the
    starting parameters and after each epoch.  The input ``params`` is not
    modified.
    """
    _check_arch(params, arch)
    x, _ = _as_batch(inputs, arch)
    y = np.asarray(targets, dtype=float).reshape(-1)
    n = y.size
    if n == 0 or n != x.shape[0]:
        raise DimensionError("inputs and targets must be non-empty and equally long")
    rng = np.random.default_rng(cfg.seed)
    work = params.copy()
    best = work.flat.copy()
    best_loss = mse(work, arch, x, y)
    if not math.isfinite(best_loss):
        raise DivergenceError("initial loss is not finite")
    grad = np.empty_like(work.flat)
    m1 = np.zeros_like(work.flat)
    m2 = np.zeros_like(work.flat)
    b1, b2, lr, eps = cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.eps
    step = 0
    bs = min(cfg.batch_size, n)
    use_dropout = arch.dropout_rate > 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            masks = dropout_masks(arch, idx.size, rng) if use_dropout else None
            _loss_and_grad(work, arch, x[idx], y[idx], masks, grad)
            step += 1
            m1 *= b1
            m1 += (1 - b1) * grad
            m2 *= b2
            m2 += (1 - b2) * grad * grad
            a = lr * math.sqrt(1 - b2 ** step) / (1 - b1 ** step)
            work.flat -= a * m1 / (np.sqrt(m2) + eps)
        loss = mse(work, arch, x, y)
        if not math.isfinite(loss):
            raise DivergenceError(f"training loss became {loss}; lower the learning rate")
        if loss < best_loss:
            best_loss = loss
            best[:] = work.flat
    return NetworkParameters(best, params.shapes)


def gradient_check(arch: NetworkArchitecture, seed: int = 0, batch_size: int = 16,
                   h: float = 1e-5, linear_region: bool = False) -> float:
    """Worst relative error between backprop and central finite differences.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, 1e-6)``.  With
    ``linear_region`` every ReLU is kept active (positive weights, biases and
    inputs), so no finite-difference step can cross a kink.  The output clamp
    is lifted and dropout disabled during the check.
    """
    arch = replace(arch, v_max=math.inf, dropout_rate=0.0)
    rng = np.random.default_rng(seed)
    params = init_network(arch, seed)
    if linear_region:
        params.flat[:] = np.abs(params.flat) + 0.05
        x = rng.uniform(0.1, 1.0, size=(batch_size, arch.input_dim))
    else:
        params.flat[:] = rng.normal(0.0, 0.5, size=params.flat.size)
        x = rng.normal(size=(batch_size, arch.input_dim))
    y = rng.normal(size=batch_size)
    analytic = gradient(params, arch, x, y).flat
    numeric = np.empty_like(analytic)
    g = np.empty_like(analytic)
    for k in range(params.flat.size):
        old = params.flat[k]
        params.flat[k] = old + h
        up, _ = _loss_and_grad(params, arch, x, y, None, g)
        params.flat[k] = old - h
        down, _ = _loss_and_grad(params, arch, x, y, None, g)
        params.flat[k] = old
        numeric[k] = (up - down) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def save_parameters(params: NetworkParameters, path) -> Path:
    path = Path(path)
    lines = ["layers=" + ",".join(f"{o}x{i}" for o, i in params.shapes)]
    for w, b in zip(params.weights, params.biases):
        lines += [" ".join(f"{v:.16e}" for v in row) for row in w]
        lines.append(" ".join(f"{v:.16e}" for v in b))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_parameters(path) -> NetworkParameters:
    lines = Path(path).read_text().splitlines()
    try:
        key, spec = lines[0].split("=", 1)
        if key != "layers":
            raise ValueError("missing layers header")
        shapes = [tuple(int(v) for v in s.split("x")) for s in spec.split(",")]
        weights, biases, pos = [], [], 1
        for o, i in shapes:
            w = np.array([[float(v) for v in lines[pos + r].split()] for r in range(o)])
            b = np.array([float(v) for v in lines[pos + o].split()])
            if w.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"layer {o}x{i} has wrong shape")
            weights.append(w)
            biases.append(b)
            pos += o + 1
    except (IndexError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed parameter file ({exc})") from None
    return NetworkParameters.from_layers(weights, biases)

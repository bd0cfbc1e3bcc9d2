"""Parameterized classifiers producing label distributions, with losses.

A predictor is a small feed-forward net `x -> softmax(logits)`.  The
forward pass exists twice: a plain numpy path for evaluation and a
graph-building path (`log_probs_graph`) for gradients through the
training objectives and invariance constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, ParameterLayout, ParameterVector

_ACTIVATIONS = {"tanh": np.tanh, "relu": lambda z: np.maximum(z, 0.0)}
_GRAPH_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


@dataclass(frozen=True)
class Architecture:
    """Layer sizes from input to output, e.g. (5, 16, 2)."""

    layer_sizes: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def layout(self) -> ParameterLayout:
        entries = []
        for i, (n_in, n_out) in enumerate(
                zip(self.layer_sizes, self.layer_sizes[1:])):
            entries.append((f"W{i}", (n_in, n_out)))
            entries.append((f"b{i}", (n_out,)))
        return ParameterLayout(tuple(entries))


@dataclass(frozen=True)
class Predictor:
    arch: Architecture
    params: ParameterVector


@dataclass(frozen=True)
class LossSpec:
    """Cross-entropy clamped into [0, B]."""

    bound: float = 20.0

    def __post_init__(self):
        if self.bound <= 0:
            raise ValueError("loss bound must be positive")


def init_predictor(arch: Architecture, seed: int) -> Predictor:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seeded."""
    rng = np.random.default_rng(seed)
    layout = arch.layout()
    arrays = {}
    for name, shape in layout.entries:
        fan_in = shape[0] if name.startswith("W") else arch.layer_sizes[
            int(name[1:])]
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return Predictor(arch, ParameterVector(layout.flatten(arrays), layout))


def with_params(p: Predictor, values: np.ndarray) -> Predictor:
    return Predictor(p.arch, ParameterVector(values, p.params.layout))


# -- forward passes ---------------------------------------------------------

def logits_batch(p: Predictor, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != p.arch.input_dim:
        raise DimensionError(
            f"input dim {X.shape[1]}, predictor expects {p.arch.input_dim}")
    params = p.params.layout.unflatten(p.params.values)
    act = _ACTIVATIONS[p.arch.activation]
    h = X
    n_layers = len(p.arch.layer_sizes) - 1
    for i in range(n_layers):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        if i < n_layers - 1:
            h = act(h)
    return h


def predict_batch(p: Predictor, X: np.ndarray) -> np.ndarray:
    """Class distributions, one row per input, rows on the simplex."""
    z = logits_batch(p, X)
    z = z - z.max(axis=1, keepdims=True)
    q = np.exp(z)
    return q / q.sum(axis=1, keepdims=True)


def predict(p: Predictor, x: np.ndarray) -> np.ndarray:
    return predict_batch(p, np.asarray(x, dtype=np.float64)[None, :])[0]


def log_probs_graph(arch: Architecture, params: dict,
                    X: np.ndarray) -> ad.Node:
    """Graph-building forward pass: rows of log-softmax(logits)."""
    act = _GRAPH_ACTIVATIONS[arch.activation]
    h = ad.constant(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    n_layers = len(arch.layer_sizes) - 1
    for i in range(n_layers):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        if i < n_layers - 1:
            h = act(h)
    lse = ad.logsumexp(h, axis=1)
    return h - ad.Node(lse.value.reshape(-1, 1), (lse,),
                       (lambda g: g.sum(axis=1),))


# -- losses -----------------------------------------------------------------

def cross_entropy(q: np.ndarray, y: int, spec: LossSpec) -> float:
    """min(-log q[y], B); exact zero for a correct one-hot prediction."""
    q = np.asarray(q, dtype=np.float64)
    if not 0 <= y < q.shape[0]:
        raise ValueError(f"label {y} out of range for {q.shape[0]} classes")
    qy = q[y]
    if qy >= 1.0:
        return 0.0
    if qy <= 0.0:
        return float(spec.bound)
    return float(min(-np.log(qy), spec.bound))


def empirical_risk(p: Predictor, data, spec: LossSpec) -> float:
    """Mean clamped cross-entropy over an environment dataset."""
    if len(data.y) == 0:
        raise ValueError("empty dataset")
    q = predict_batch(p, data.X)
    qy = np.clip(q[np.arange(len(data.y)), data.y], 1e-300, None)
    return float(np.mean(np.minimum(-np.log(qy), spec.bound)))


def accuracy(p: Predictor, data) -> float:
    q = predict_batch(p, data.X)
    return float(np.mean(q.argmax(axis=1) == data.y))


def cross_entropy_graph(log_probs: ad.Node, y: np.ndarray,
                        spec: LossSpec) -> ad.Node:
    """Mean clamped cross-entropy as a graph node (one row per example)."""
    y = np.asarray(y, dtype=np.intp)
    onehot = np.zeros(log_probs.shape)
    onehot[np.arange(y.size), y] = 1.0
    picked = ad.sum_(log_probs * ad.constant(onehot), axis=1)
    return ad.mean(ad.minimum(-picked, spec.bound))


# -- serialization ----------------------------------------------------------

def save_text(p: Predictor) -> str:
    """Flat text format: layer sizes header, then the parameter list."""
    header = " ".join(str(n) for n in p.arch.layer_sizes)
    body = " ".join(repr(float(v)) for v in p.params.values)
    return f"{header} {p.arch.activation}\n{body}\n"


def load_text(text: str) -> Predictor:
    lines = text.strip().split("\n")
    head = lines[0].split()
    arch = Architecture(tuple(int(n) for n in head[:-1]), head[-1])
    values = np.array([float(v) for v in lines[1].split()])
    return Predictor(arch, ParameterVector(values, arch.layout()))

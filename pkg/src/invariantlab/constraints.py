"""Distances between predictive distributions and the invariance term.

The constraint functional is the mean distance between the predictor's
outputs on paired inputs (an instance and its transformed counterpart).
KL with a small smoothing constant is the operative choice; total
variation is available as an alternative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import predictors as pred
from .autodiff import DimensionError


@dataclass(frozen=True)
class DistanceMetric:
    kind: str = "kl"  # "kl" | "total-variation"
    smoothing: float = 1e-8
    bound: float = 20.0  # clamp ceiling for KL

    def __post_init__(self):
        if self.kind not in ("kl", "total-variation"):
            raise ValueError(f"unknown distance kind {self.kind!r}")


def distance(m: DistanceMetric, p: np.ndarray, q: np.ndarray) -> float:
    """d(p, q) for two simplex vectors; non-negative, zero iff p == q."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"distribution shapes differ: {p.shape} vs "
                             f"{q.shape}")
    if m.kind == "kl":
        eps = m.smoothing
        val = float(np.sum(p * np.log((p + eps) / (q + eps))))
        return min(max(val, 0.0), m.bound)
    return 0.5 * float(np.abs(p - q).sum())


def _pairwise_batch(m: DistanceMetric, P: np.ndarray,
                    Q: np.ndarray) -> np.ndarray:
    if m.kind == "kl":
        eps = m.smoothing
        vals = np.sum(P * np.log((P + eps) / (Q + eps)), axis=1)
        return np.clip(vals, 0.0, m.bound)
    return 0.5 * np.abs(P - Q).sum(axis=1)


def dist_reg(p: pred.Predictor, batch, m: DistanceMetric) -> float:
    """Mean pairwise distance over a batch of (x, x_transformed) pairs."""
    X, Xt = _split_pairs(batch)
    P = pred.predict_batch(p, X)
    Q = pred.predict_batch(p, Xt)
    return float(np.mean(_pairwise_batch(m, P, Q)))


def per_example_dist(p: pred.Predictor, X: np.ndarray, Xt: np.ndarray,
                     m: DistanceMetric) -> np.ndarray:
    """Distance per paired row, without averaging."""
    return _pairwise_batch(m, pred.predict_batch(p, X),
                           pred.predict_batch(p, Xt))


def constraint_value(p: pred.Predictor, X: np.ndarray, G,
                     e, m: DistanceMetric) -> float:
    """Mean d(phi(x), phi(G(x, e))) over the sample, for a fixed code."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty sample")
    codes = np.broadcast_to(e.code, (X.shape[0], e.code.shape[0]))
    Xt = G.apply_batch(X, codes)
    return float(np.mean(per_example_dist(p, X, Xt, m)))


def _split_pairs(batch):
    if isinstance(batch, tuple) and len(batch) == 2:
        X, Xt = batch
    else:
        pairs = list(batch)
        if not pairs:
            raise ValueError("empty batch")
        X = np.array([a for a, _ in pairs], dtype=np.float64)
        Xt = np.array([b for _, b in pairs], dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xt = np.atleast_2d(np.asarray(Xt, dtype=np.float64))
    if X.shape != Xt.shape:
        raise DimensionError("paired inputs must share dimensions")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    return X, Xt


# -- graph version (differentiable w.r.t. theta) -----------------------------

def dist_reg_graph(arch: pred.Architecture, params: dict, X: np.ndarray,
                   Xt: np.ndarray, m: DistanceMetric,
                   reverse: bool = False) -> ad.Node:
    """distReg as a graph node; gradient flows through both predictions.

    The first (clean) prediction is the KL reference distribution by
    default; `reverse` swaps the argument order.
    """
    logp = pred.log_probs_graph(arch, params, X)
    logq = pred.log_probs_graph(arch, params, Xt)
    if reverse:
        logp, logq = logq, logp
    if m.kind == "kl":
        eps = m.smoothing
        p_probs = ad.exp(logp)
        q_probs = ad.exp(logq)
        ratio = ad.log((p_probs + eps) / (q_probs + eps))
        per_pair = ad.sum_(p_probs * ratio, axis=1)
        per_pair = ad.minimum(ad.maximum(per_pair, 0.0), m.bound)
    else:
        diff = ad.exp(logp) - ad.exp(logq)
        per_pair = 0.5 * ad.sum_(ad.maximum(diff, -diff), axis=1)
    return ad.mean(per_pair)


def dist_reg_tape(p: pred.Predictor, X: np.ndarray, Xt: np.ndarray,
                  m: DistanceMetric) -> ad.Tape:
    """A tape computing dist_reg as a function of the parameters."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xt = np.atleast_2d(np.asarray(Xt, dtype=np.float64))
    return ad.Tape(
        lambda params: dist_reg_graph(p.arch, params, X, Xt, m),
        p.params.layout)

"""Training procedures: plain risk minimization, the primal-dual
constrained method, and its data-augmentation / fixed-weight variants.

All variants share one minibatch loop.  Per step the objective graph is

    loss(theta) + <dual weights, distReg(theta)>

where the distance regularizer pairs each example with a transformed
counterpart.  The dual weights are updated by projected ascent
(lambda <- [lambda + eta_d * (distReg - gamma)]_+), held fixed for the
regularized variant, and absent for the unconstrained ones.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import constraints as cons
from . import predictors as pred
from . import transforms

ALGORITHMS = ("erm", "mbdg", "mbda", "mbdg-da", "mbdg-reg")


class TrainingFailure(RuntimeError):
    """Training aborted (non-finite values); carries the partial trace."""

    def __init__(self, message: str, trace: "TrainTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class DualState:
    """Non-negative dual weight(s) with the margin and ascent step size."""

    lam: np.ndarray  # shape (1,) in single mode, (n_envs,) per-env
    gamma: float
    eta_dual: float

    def __post_init__(self):
        arr = np.asarray(self.lam, dtype=np.float64).reshape(-1)
        if np.any(arr < 0.0):
            raise ValueError("dual variables must be non-negative")
        if self.gamma <= 0.0:
            raise ValueError("margin gamma must be positive")
        if self.eta_dual < 0.0:
            raise ValueError("dual step size must be non-negative")
        object.__setattr__(self, "lam", arr)


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "mbdg"
    eta_primal: float = 0.1
    eta_dual: float = 0.05
    gamma: float = 0.025
    weight: float = 1.0  # fixed dual weight, mbdg-reg only
    batch_size: int = 128
    steps: int = 2000
    seed: int = 0
    hidden: int = 16
    loss_bound: float = 20.0
    constraint_mode: str = "pair-G-samples"  # | "against-clean"
    dual_mode: str = "single"  # | "per-env"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.eta_primal <= 0.0:
            raise ValueError("primal step size must be positive")
        if self.gamma <= 0.0:
            raise ValueError("margin gamma must be positive")
        if self.weight < 0.0:
            raise ValueError("regularization weight must be non-negative")
        if self.steps < 1:
            raise ValueError("need at least one step")
        if self.constraint_mode not in ("pair-G-samples", "against-clean"):
            raise ValueError(
                f"unknown constraint mode {self.constraint_mode!r}")
        if self.dual_mode not in ("single", "per-env"):
            raise ValueError(f"unknown dual mode {self.dual_mode!r}")


@dataclass
class TrainTrace:
    env_ids: list
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    lam: list = field(default_factory=list)  # arrays, one per step
    distreg: list = field(default_factory=list)
    gamma: float = 0.0

    def append(self, step, loss, lam, distreg):
        self.steps.append(step)
        self.losses.append(float(loss))
        self.lam.append(np.atleast_1d(np.asarray(lam, dtype=float)).copy())
        self.distreg.append(
            np.atleast_1d(np.asarray(distreg, dtype=float)).copy())

    def to_csv(self) -> str:
        per_env = len(self.lam) > 0 and self.lam[0].size > 1
        buf = io.StringIO()
        head = ["step", "loss", "lambda"]
        if per_env:
            head += [f"lambda_{e}" for e in self.env_ids]
        head.append("gamma")
        head.append("distreg")
        if per_env:
            head += [f"distreg_{e}" for e in self.env_ids]
        buf.write(",".join(head) + "\n")
        fmt = "{:.17g}".format
        for i, step in enumerate(self.steps):
            row = [str(step), fmt(self.losses[i]),
                   fmt(float(self.lam[i].mean()))]
            if per_env:
                row += [fmt(v) for v in self.lam[i]]
            row.append(fmt(self.gamma))
            row.append(fmt(float(self.distreg[i].mean())))
            if per_env:
                row += [fmt(v) for v in self.distreg[i]]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


# -- step primitives ---------------------------------------------------------

def dual_step(lam: np.ndarray, distreg_value, gamma: float,
              eta_dual: float) -> np.ndarray:
    """Projected dual ascent: [lambda + eta_d * (distReg - gamma)]_+."""
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    step = np.atleast_1d(np.asarray(distreg_value, dtype=np.float64)) - gamma
    return np.maximum(lam + eta_dual * step, 0.0)


def _objective_graph(arch, params, X, y, pairs, lam, loss_spec, metric,
                     extra_loss_batches=()):
    """loss + <lam, distReg> over one minibatch, as (node, loss, distreg)."""
    logp = pred.log_probs_graph(arch, params, X)
    loss = pred.cross_entropy_graph(logp, y, loss_spec)
    for Xe, ye in extra_loss_batches:
        logpe = pred.log_probs_graph(arch, params, Xe)
        loss = loss + pred.cross_entropy_graph(logpe, ye, loss_spec)
    if pairs is None:
        return loss, loss, None
    dist_nodes = [cons.dist_reg_graph(arch, params, Xa, Xb, metric)
                  for Xa, Xb in pairs]
    lam = np.atleast_1d(lam)
    total = loss
    scale = 1.0 / len(dist_nodes)
    for lam_e, node in zip(lam, dist_nodes):
        if lam_e != 0.0:
            total = total + (float(lam_e) * scale) * node
    return total, loss, dist_nodes


def primal_step(p: pred.Predictor, lam, minibatch, G,
                config: SolverConfig, rng=None,
                metric: cons.DistanceMetric | None = None) -> pred.Predictor:
    """One SGD step on loss + lambda * distReg over the minibatch."""
    X, y = minibatch
    metric = metric or cons.DistanceMetric(bound=config.loss_bound)
    loss_spec = pred.LossSpec(config.loss_bound)
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    pairs = None
    if G is not None and np.any(lam != 0.0):
        rng = rng or np.random.default_rng(config.seed)
        pairs = [_constraint_pair(X, G, rng, config.constraint_mode)]
    params = {name: ad.Node(arr) for name, arr in
              p.params.layout.unflatten(p.params.values).items()}
    total, _, _ = _objective_graph(
        p.arch, params, X, y, pairs, lam, loss_spec, metric)
    grads = ad.backward(total)
    return _sgd_update(p, params, grads, config.eta_primal)


def _sgd_update(p, params, grads, eta):
    arrays = {name: node.value - eta * grads.get(id(node),
                                                 np.zeros(node.shape))
              for name, node in params.items()}
    flat = p.params.layout.flatten(arrays)
    if not np.all(np.isfinite(flat)):
        raise ad.NonFiniteError("non-finite parameter update")
    return pred.with_params(p, flat)


def _constraint_pair(X, G, rng, mode):
    if mode == "pair-G-samples":
        return (transforms.generate_batch(G, X, rng),
                transforms.generate_batch(G, X, rng))
    return (X, transforms.generate_batch(G, X, rng))


def empirical_lagrangian(p: pred.Predictor, dual: DualState, datasets,
                         G, env_codes, metric: cons.DistanceMetric,
                         loss_spec: pred.LossSpec) -> float:
    """R_hat + (1/|E|) sum_e [L_hat^e - gamma] * lambda(e)."""
    lam = dual.lam
    if lam.size not in (1, len(datasets)):
        raise ValueError("dual variable count does not match environments")
    if lam.size == 1:
        lam = np.full(len(datasets), lam[0])
    n_total = sum(len(d) for d in datasets)
    risk = sum(pred.empirical_risk(p, d, loss_spec) * len(d)
               for d in datasets) / n_total
    penalty = 0.0
    for lam_e, d in zip(lam, datasets):
        L_e = cons.constraint_value(p, d.X, G, env_codes[d.env], metric)
        penalty += (L_e - dual.gamma) * lam_e
    return float(risk + penalty / len(datasets))


def worst_domain_risk(p: pred.Predictor, datasets,
                      loss_spec: pred.LossSpec) -> tuple:
    """Max per-environment empirical risk; ties broken by lowest index."""
    if not datasets:
        raise ValueError("need at least one environment dataset")
    risks = [pred.empirical_risk(p, d, loss_spec) for d in datasets]
    best = int(np.argmax(risks))
    return risks[best], datasets[best].env


# -- the training loop --------------------------------------------------------

def train(config: SolverConfig, datasets, G,
          metric: cons.DistanceMetric | None = None):
    """Train a predictor on the given environments; returns (p, trace)."""
    if not datasets:
        raise ValueError("need at least one training environment")
    algo = config.algorithm
    metric = metric or cons.DistanceMetric(bound=config.loss_bound)
    loss_spec = pred.LossSpec(config.loss_bound)
    env_ids = [d.env for d in datasets]

    input_dim = datasets[0].X.shape[1]
    n_classes = int(max(d.y.max() for d in datasets)) + 1
    arch = pred.Architecture((input_dim, config.hidden, n_classes))
    p = pred.init_predictor(arch, config.seed)

    batch_rng = np.random.default_rng([config.seed, 1])
    gen_rng = np.random.default_rng([config.seed, 2])

    per_env = config.dual_mode == "per-env" and algo in (
        "mbdg", "mbdg-da", "mbdg-reg")
    n_lam = len(datasets) if per_env else 1
    if algo == "mbdg-reg":
        lam = np.full(n_lam, config.weight)
    else:
        lam = np.zeros(n_lam)

    X_all = np.vstack([d.X for d in datasets])
    y_all = np.concatenate([d.y for d in datasets])
    env_slices = []
    offset = 0
    for d in datasets:
        env_slices.append(slice(offset, offset + len(d)))
        offset += len(d)

    trace = TrainTrace(env_ids=env_ids, gamma=config.gamma)

    for step in range(config.steps):
        if per_env:
            batches = []
            for sl in env_slices:
                idx = batch_rng.integers(sl.start, sl.stop,
                                         size=config.batch_size)
                batches.append((X_all[idx], y_all[idx]))
            X = np.vstack([b[0] for b in batches])
            y = np.concatenate([b[1] for b in batches])
        else:
            idx = batch_rng.integers(0, len(y_all), size=config.batch_size)
            X, y = X_all[idx], y_all[idx]
            batches = [(X, y)]

        pairs = None
        extra = ()
        if algo != "erm":
            if algo == "mbdg" and config.constraint_mode == "pair-G-samples":
                pairs = [(transforms.generate_batch(G, bX, gen_rng),
                          transforms.generate_batch(G, bX, gen_rng))
                         for bX, _ in batches]
            elif algo in ("mbdg", "mbdg-da", "mbdg-reg", "mbda"):
                gen = [(bX, transforms.generate_batch(G, bX, gen_rng))
                       for bX, _ in batches]
                pairs = gen
            if algo == "mbda":
                extra = tuple((Xt, by) for (_, Xt), (_, by)
                              in zip(pairs, batches))
                pairs = None
            elif algo == "mbdg-da":
                extra = tuple(
                    [(transforms.generate_batch(G, bX, gen_rng), by)
                     for bX, by in batches]
                    + [(Xt, by) for (_, Xt), (_, by) in zip(pairs, batches)])
            elif algo == "mbdg-reg":
                extra = tuple((Xt, by) for (_, Xt), (_, by)
                              in zip(pairs, batches))

        params = {name: ad.Node(arr) for name, arr in
                  p.params.layout.unflatten(p.params.values).items()}
        try:
            total, loss_node, dist_nodes = _objective_graph(
                arch, params, X, y, pairs, lam, loss_spec, metric,
                extra_loss_batches=extra)
            # always evaluate the constraint for the trace and dual
            # update, even while all dual weights are zero
            if pairs is not None and dist_nodes is None:
                dist_nodes = [cons.dist_reg_graph(arch, params, Xa, Xb,
                                                  metric)
                              for Xa, Xb in pairs]
            grads = ad.backward(total)
            p = _sgd_update(p, params, grads, config.eta_primal)
        except ad.NonFiniteError as e:
            raise TrainingFailure(f"step {step}: {e}", trace) from e

        if dist_nodes is not None:
            distreg = np.array([float(n.value) for n in dist_nodes])
        else:
            distreg = np.zeros(n_lam)
        if algo in ("mbdg", "mbdg-da"):
            lam = dual_step(lam, distreg, config.gamma, config.eta_dual)
        trace.append(step, float(loss_node.value), lam, distreg)

    return p, trace

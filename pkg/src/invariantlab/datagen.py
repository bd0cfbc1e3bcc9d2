"""Synthetic multi-domain dataset generators and Bayes-optimal oracles.

Two data-generating processes are provided:

* covariate shift — labels drawn from a base two-Gaussian mixture, each
  environment observing the instances through a fixed transformation
  code, labels untouched;
* concept shift — a two-bit analog of the color/label spurious
  correlation task: a "shape" feature block agrees with the label with
  probability rho_shape, a one-hot color pair agrees with probability
  p_e that varies per environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import transforms
from .transforms import EnvironmentCode


@dataclass(frozen=True)
class LabeledExample:
    x: np.ndarray
    y: int
    env: str


@dataclass(frozen=True)
class EnvironmentDataset:
    env: str
    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,) integer labels

    def __post_init__(self):
        if len(self.y) < 1:
            raise ValueError("environment dataset must be non-empty")

    def __len__(self):
        return len(self.y)

    def examples(self):
        return [LabeledExample(self.X[i], int(self.y[i]), self.env)
                for i in range(len(self.y))]


@dataclass(frozen=True)
class CovariateShiftSpec:
    """Base two-Gaussian mixture pushed through G per environment."""

    mean0: np.ndarray
    mean1: np.ndarray
    sigma: float
    model: object  # DomainTransformationModel
    train_codes: dict  # env id -> EnvironmentCode
    test_codes: dict
    class_prior: float = 0.5
    noise_dims: int = 0

    def __post_init__(self):
        if not 0.0 < self.class_prior < 1.0:
            raise ValueError("class prior must lie in (0, 1)")
        if set(self.train_codes) & set(self.test_codes):
            raise ValueError("train and test environments must be disjoint")


@dataclass(frozen=True)
class ConceptShiftSpec:
    """Two-bit spurious-correlation task."""

    rho_shape: float = 0.75
    env_agreements: dict = field(
        default_factory=lambda: {"e0.9": 0.9, "e0.8": 0.8, "e0.1": 0.1})
    n_per_env: int = 20000
    shape_mean: float = 1.0
    shape_sigma: float = 1.0
    color_scale: float = 1.0

    def __post_init__(self):
        probs = [self.rho_shape, *self.env_agreements.values()]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return 5  # 2 shape + 1 noise + 2 color

    @property
    def color_indices(self) -> tuple:
        return (3, 4)


def _draw_base(spec: CovariateShiftSpec, n: int, rng: np.random.Generator):
    y = (rng.random(n) < spec.class_prior).astype(np.intp)
    means = np.where(y[:, None] == 1, np.asarray(spec.mean1, dtype=float),
                     np.asarray(spec.mean0, dtype=float))
    X = means + spec.sigma * rng.standard_normal(means.shape)
    if spec.noise_dims:
        X = np.hstack([X, rng.standard_normal((n, spec.noise_dims))])
    return X, y


def gen_covariate_shift(spec: CovariateShiftSpec, n_per_env: int,
                        seed: int) -> list:
    """One dataset per declared environment; labels stable across envs.

    Every environment observes the same base draw (same seed), so labels
    match example-by-example across environments.
    """
    if n_per_env < 1:
        raise ValueError("need at least one example per environment")
    rng = np.random.default_rng(seed)
    X, y = _draw_base(spec, n_per_env, rng)
    out = []
    for env, code in {**spec.train_codes, **spec.test_codes}.items():
        codes = np.broadcast_to(code.code, (n_per_env, code.code.shape[0]))
        out.append(EnvironmentDataset(env, spec.model.apply_batch(X, codes),
                                      y.copy()))
    return out


def gen_concept_shift(spec: ConceptShiftSpec, seed: int) -> list:
    """Per-env datasets where the color bit agrees with y with prob p_e."""
    out = []
    for k, (env, p_e) in enumerate(sorted(spec.env_agreements.items())):
        rng = np.random.default_rng(seed + k)
        n = spec.n_per_env
        y = rng.integers(0, 2, size=n).astype(np.intp)
        shape_label = np.where(rng.random(n) < spec.rho_shape, y, 1 - y)
        color = np.where(rng.random(n) < p_e, y, 1 - y)
        signs = 2.0 * shape_label - 1.0
        shape = (spec.shape_mean * signs[:, None]
                 + spec.shape_sigma * rng.standard_normal((n, 2)))
        noise = rng.standard_normal((n, 1))
        c0 = spec.color_scale * (color == 0).astype(float)
        c1 = spec.color_scale * (color == 1).astype(float)
        X = np.hstack([shape, noise, c0[:, None], c1[:, None]])
        out.append(EnvironmentDataset(env, X, y))
    return out


def concept_shift_transform(spec: ConceptShiftSpec):
    """The color-resampling transformation matching the concept task."""
    return transforms.ColorResampleModel(
        indices=spec.color_indices, scale=spec.color_scale, onehot=True)


def bayes_oracle(spec, policy: str, env: str) -> float:
    """Exact expected accuracy of a fixed policy, by enumeration.

    The concept-shift instance distribution factorizes over the discrete
    pair (shape agreement, color agreement), so accuracies are closed
    form.  Gaussian shape noise is treated as fully informative of the
    shape bit (clusters are well separated by construction).
    """
    if not isinstance(spec, ConceptShiftSpec):
        raise ValueError("bayes_oracle supports concept-shift specs")
    if env not in spec.env_agreements:
        raise ValueError(f"unknown environment {env!r}")
    rho, p = spec.rho_shape, spec.env_agreements[env]
    if policy == "shape-only":
        return rho  # predict the label the shape bit indicates
    if policy == "color-only":
        return p  # predict the label the color bit indicates
    if policy == "joint":
        # enumerate observed (shape bit, color bit) pairs; the optimal
        # joint rule picks the label of maximum posterior in each cell
        return sum(
            0.5 * max((rho if s == y else 1 - rho)
                      * (p if c == y else 1 - p) for y in (0, 1))
            for s in (0, 1) for c in (0, 1))
    raise ValueError(f"unsupported policy {policy!r}")


# -- text dump format --------------------------------------------------------

def dump_datasets(datasets: list) -> str:
    """One record per line: features, label, env id; header with dims."""
    n = sum(len(d) for d in datasets)
    d = datasets[0].X.shape[1]
    lines = [f"{n} {d}"]
    for ds in datasets:
        for i in range(len(ds)):
            feats = " ".join(repr(float(v)) for v in ds.X[i])
            lines.append(f"{feats} {ds.y[i]} {ds.env}")
    return "\n".join(lines) + "\n"


def load_datasets(text: str) -> list:
    lines = text.strip().split("\n")
    n, d = (int(v) for v in lines[0].split())
    by_env = {}
    for line in lines[1:n + 1]:
        parts = line.split()
        env = parts[-1]
        by_env.setdefault(env, ([], []))
        by_env[env][0].append([float(v) for v in parts[:d]])
        by_env[env][1].append(int(parts[d]))
    return [EnvironmentDataset(env, np.array(X), np.array(y, dtype=np.intp))
            for env, (X, y) in by_env.items()]

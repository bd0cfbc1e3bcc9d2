"""Analytic domain transformation models and environment-code sampling.

Each model maps an instance and an environment code to a transformed
instance of the same dimension, and declares a distribution its codes
are sampled from.  Learned (GAN-based) transforms are out of scope; the
analytic kinds here expose the same inter-domain variation interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError


@dataclass(frozen=True)
class EnvironmentCode:
    code: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.code, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("environment code must be finite")
        object.__setattr__(self, "code", arr)


@dataclass(frozen=True)
class RotationModel:
    """Rotate the (i, j) coordinate plane by the code angle."""

    plane: tuple = (0, 1)
    angle_range: tuple = (0.0, 2.0 * np.pi)

    def __post_init__(self):
        i, j = self.plane
        if i == j:
            raise ValueError("plane indices must be distinct")

    code_dim = 1

    def identity_code(self) -> EnvironmentCode:
        return EnvironmentCode(np.zeros(1))

    def sample_codes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.angle_range
        return rng.uniform(lo, hi, size=(n, 1))

    def apply_batch(self, X: np.ndarray, codes: np.ndarray) -> np.ndarray:
        i, j = self.plane
        if i >= X.shape[1] or j >= X.shape[1]:
            raise DimensionError("rotation plane outside feature dimension")
        angles = codes[:, 0]
        c, s = np.cos(angles), np.sin(angles)
        out = X.copy()
        out[:, i] = c * X[:, i] - s * X[:, j]
        out[:, j] = s * X[:, i] + c * X[:, j]
        return out


@dataclass(frozen=True)
class ColorResampleModel:
    """Overwrite the color coordinates with freshly sampled bit values.

    Codes hold one bit per color coordinate (fair Bernoulli); a
    sentinel value of -1 marks the identity code, which leaves the
    coordinate untouched.
    """

    indices: tuple
    scale: float = 1.0
    onehot: bool = False  # if set, exactly one index of the group is hot

    @property
    def code_dim(self) -> int:
        return len(self.indices)

    def identity_code(self) -> EnvironmentCode:
        return EnvironmentCode(-np.ones(self.code_dim))

    def sample_codes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.onehot:
            hot = rng.integers(0, self.code_dim, size=n)
            codes = np.zeros((n, self.code_dim))
            codes[np.arange(n), hot] = 1.0
            return codes
        return rng.integers(0, 2, size=(n, self.code_dim)).astype(np.float64)

    def apply_batch(self, X: np.ndarray, codes: np.ndarray) -> np.ndarray:
        if max(self.indices) >= X.shape[1]:
            raise DimensionError("color index outside feature dimension")
        out = X.copy()
        for k, idx in enumerate(self.indices):
            bits = codes[:, k]
            keep = bits < 0.0
            out[:, idx] = np.where(keep, X[:, idx], self.scale * bits)
        return out


@dataclass(frozen=True)
class BrightnessContrastModel:
    """Elementwise c*x + b on the configured coordinates."""

    indices: tuple
    contrast_range: tuple = (0.5, 1.5)
    brightness_range: tuple = (-0.5, 0.5)

    code_dim = 2

    def identity_code(self) -> EnvironmentCode:
        return EnvironmentCode(np.array([1.0, 0.0]))

    def sample_codes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        c = rng.uniform(*self.contrast_range, size=n)
        b = rng.uniform(*self.brightness_range, size=n)
        return np.column_stack([c, b])

    def apply_batch(self, X: np.ndarray, codes: np.ndarray) -> np.ndarray:
        if max(self.indices) >= X.shape[1]:
            raise DimensionError("coordinate index outside dimension")
        out = X.copy()
        idx = list(self.indices)
        out[:, idx] = codes[:, 0:1] * X[:, idx] + codes[:, 1:2]
        return out


@dataclass(frozen=True)
class CompositeModel:
    """Apply component models in order; codes are concatenated."""

    parts: tuple

    @property
    def code_dim(self) -> int:
        return sum(p.code_dim for p in self.parts)

    def identity_code(self) -> EnvironmentCode:
        return EnvironmentCode(
            np.concatenate([p.identity_code().code for p in self.parts]))

    def sample_codes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.hstack([p.sample_codes(n, rng) for p in self.parts])

    def apply_batch(self, X: np.ndarray, codes: np.ndarray) -> np.ndarray:
        out = X
        offset = 0
        for p in self.parts:
            out = p.apply_batch(out, codes[:, offset:offset + p.code_dim])
            offset += p.code_dim
        return out


def rotation_model(plane, angle_range) -> RotationModel:
    return RotationModel(tuple(plane), tuple(angle_range))


def apply(model, x: np.ndarray, e: EnvironmentCode) -> np.ndarray:
    """Transform a single instance under a fixed environment code."""
    x = np.asarray(x, dtype=np.float64)
    code = e.code
    if code.shape[0] != model.code_dim:
        raise DimensionError(
            f"code dim {code.shape[0]}, model expects {model.code_dim}")
    return model.apply_batch(x[None, :], code[None, :])[0]


def sample_environment(model, rng: np.random.Generator) -> EnvironmentCode:
    return EnvironmentCode(model.sample_codes(1, rng)[0])


def generate_image(model, x: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Resample the environment and transform: apply(G, x, e')."""
    return apply(model, x, sample_environment(model, rng))


def generate_batch(model, X: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Vectorized generate_image with a fresh code per row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return model.apply_batch(X, model.sample_codes(X.shape[0], rng))

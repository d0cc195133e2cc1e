"""Sample losses l(x; xi) with gradients and declared constants.

Constants follow the usual conventions: ``lipschitz_G`` bounds the per-sample
gradient norm, ``smooth_L`` bounds its Lipschitz constant, ``bound_B`` is a
uniform upper bound on the (nonnegative) loss or ``None`` when unbounded, and
``noise_sigma2`` bounds the variance of the loss over xi (``None`` = unknown).
"""
from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .datasets import Dataset, Sample
from .errors import MissingConstant


class LossModel:
    dim: int
    bound_B: Optional[float] = None
    noise_sigma2: Optional[float] = None
    # iterates must satisfy max|x_i| <= domain_radius for the constants to hold
    domain_radius: Optional[float] = None
    name = "loss"

    @property
    def lipschitz_G(self) -> float:
        raise NotImplementedError

    @property
    def smooth_L(self) -> float:
        raise NotImplementedError

    def batch_value(self, x, X, y) -> np.ndarray:
        raise NotImplementedError

    def batch_grad(self, x, X, y) -> np.ndarray:
        raise NotImplementedError

    def value(self, x, sample: Sample) -> float:
        X = np.asarray(sample.features, dtype=float)[None, :]
        return float(self.batch_value(np.asarray(x, dtype=float), X, np.array([sample.target]))[0])

    def grad(self, x, sample: Sample) -> np.ndarray:
        X = np.asarray(sample.features, dtype=float)[None, :]
        return self.batch_grad(np.asarray(x, dtype=float), X, np.array([sample.target]))[0]

    def bind(self, data: Dataset) -> "LossModel":
        """Return a copy whose data-dependent constants are computed from ``data``."""
        return self

    def in_domain(self, x) -> bool:
        if self.domain_radius is None:
            return True
        return bool(np.max(np.abs(x)) <= self.domain_radius)


def _counter_parts(x, xi):
    u = x * x + 1.0
    a = 1.0 + xi / u
    value = x * x * a * a
    deriv = 2.0 * x * a * (a - 2.0 * x * x * xi / (u * u))
    return value, deriv


class CounterexampleLoss(LossModel):
    """l(x; xi) = x^2 (1 + xi / (x^2 + 1))^2 with Rademacher xi carried as the target.

    Globally 8-smooth but only locally Lipschitz, so G is certified on the box
    |x| <= radius: grid maximum of |l'| plus L * h / 2, which is a true upper
    bound because l' is L-Lipschitz.
    """

    dim = 1
    noise_sigma2 = 4.0
    bound_B = None
    name = "counterexample"

    def __init__(self, radius: float = 10.0, grid_points: int = 200_001):
        self.domain_radius = float(radius)
        grid = np.linspace(-radius, radius, grid_points)
        h = grid[1] - grid[0]
        peak = max(np.abs(_counter_parts(grid, xi)[1]).max() for xi in (-1.0, 1.0))
        self._G = float(peak + self.smooth_L * h / 2.0)

    @property
    def lipschitz_G(self):
        return self._G

    @property
    def smooth_L(self):
        return 8.0

    def batch_value(self, x, X, y):
        return _counter_parts(float(np.asarray(x).reshape(-1)[0]), np.asarray(y, dtype=float))[0]

    def batch_grad(self, x, X, y):
        d = _counter_parts(float(np.asarray(x).reshape(-1)[0]), np.asarray(y, dtype=float))[1]
        return np.asarray(d, dtype=float).reshape(-1, 1)


def counterexample_loss(radius: float = 10.0) -> CounterexampleLoss:
    return CounterexampleLoss(radius)


@dataclasses.dataclass
class LogisticLoss(LossModel):
    """Multinomial cross-entropy of linear logits W f + b.

    ``x`` is ``W`` (num_classes x feature_dim, row-major) followed by ``b``.
    With R the largest norm of (f, 1): |grad| <= sqrt(2) R and the Hessian is
    bounded by R^2 / 2 because the softmax Jacobian has norm <= 1/2.
    """

    num_classes: int
    feature_dim: int
    feature_bound: Optional[float] = None
    noise_sigma2: Optional[float] = None
    name = "logistic"

    @property
    def dim(self):
        return self.num_classes * (self.feature_dim + 1)

    def _R(self):
        if self.feature_bound is None:
            raise MissingConstant("feature_bound", "bind the loss to a dataset first")
        return self.feature_bound

    @property
    def lipschitz_G(self):
        return math.sqrt(2.0) * self._R()

    @property
    def smooth_L(self):
        return self._R() ** 2 / 2.0

    def bind(self, data):
        return dataclasses.replace(self, feature_bound=data.max_feature_norm(augment_bias=True))

    def _unpack(self, x):
        x = np.asarray(x, dtype=float)
        C, d = self.num_classes, self.feature_dim
        return x[: C * d].reshape(C, d), x[C * d:]

    def _logits(self, x, X):
        W, b = self._unpack(x)
        return X @ W.T + b

    def batch_value(self, x, X, y):
        z = self._logits(x, X)
        idx = np.asarray(y, dtype=int)
        return logsumexp(z, axis=1) - z[np.arange(len(idx)), idx]

    def batch_grad(self, x, X, y):
        z = self._logits(x, X)
        P = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        idx = np.asarray(y, dtype=int)
        P[np.arange(len(idx)), idx] -= 1.0
        gW = P[:, :, None] * X[:, None, :]
        return np.concatenate([gW.reshape(len(idx), -1), P], axis=1)


def logistic_loss(num_classes: int, feature_dim: int, feature_bound: Optional[float] = None) -> LogisticLoss:
    return LogisticLoss(num_classes, feature_dim, feature_bound)


def _clip_constants():
    # with u = r^2 / B: |d/dr B tanh(r^2/B)| = 2 sqrt(B) sqrt(u) sech^2(u)
    # and |d^2/dr^2| = |2 sech^2(u) (1 - 4 u tanh u)|, whose sup is 2 at u = 0
    res = minimize_scalar(lambda u: -math.sqrt(u) / math.cosh(u) ** 2, bounds=(0.0, 5.0),
                          method="bounded", options={"xatol": 1e-12})
    c1 = -res.fun * (1.0 + 1e-9)
    grid = np.linspace(0.0, 20.0, 200_001)
    sech2 = 1.0 / np.cosh(grid) ** 2
    c2 = float(np.abs(2.0 * sech2 * (1.0 - 4.0 * grid * np.tanh(grid))).max())
    return c1, max(c2, 2.0)


_CLIP_C1, _CLIP_C2 = _clip_constants()


@dataclasses.dataclass
class ClippedQuadraticLoss(LossModel):
    """B * tanh((y - <w, f>)^2 / B): squared error that saturates smoothly at B."""

    feature_dim: int
    clip_B: float
    feature_bound: Optional[float] = None
    name = "clipped_quadratic"

    def __post_init__(self):
        if not self.clip_B > 0:
            raise ValueError("clip_B must be positive")

    @property
    def dim(self):
        return self.feature_dim

    @property
    def bound_B(self):
        return self.clip_B

    @property
    def noise_sigma2(self):
        # any [0, B]-valued variable has variance <= B^2 / 4
        return self.clip_B ** 2 / 4.0

    def _R(self):
        if self.feature_bound is None:
            raise MissingConstant("feature_bound", "bind the loss to a dataset first")
        return self.feature_bound

    @property
    def lipschitz_G(self):
        return 2.0 * math.sqrt(self.clip_B) * _CLIP_C1 * self._R()

    @property
    def smooth_L(self):
        return _CLIP_C2 * self._R() ** 2

    def bind(self, data):
        return dataclasses.replace(self, feature_bound=data.max_feature_norm())

    def batch_value(self, x, X, y):
        r = np.asarray(y, dtype=float) - X @ np.asarray(x, dtype=float)
        return self.clip_B * np.tanh(r * r / self.clip_B)

    def batch_grad(self, x, X, y):
        r = np.asarray(y, dtype=float) - X @ np.asarray(x, dtype=float)
        sech2 = 1.0 / np.cosh(r * r / self.clip_B) ** 2
        return (-2.0 * r * sech2)[:, None] * X


def clipped_quadratic_loss(feature_dim: int, clip_B: float, feature_bound: Optional[float] = None):
    return ClippedQuadraticLoss(feature_dim, clip_B, feature_bound)


def feature_bound_for_lipschitz(clip_B: float, target_G: float) -> float:
    """Feature-norm bound that makes the clipped loss exactly target_G-Lipschitz."""
    return target_G / (2.0 * math.sqrt(clip_B) * _CLIP_C1)


class FixedLoss(LossModel):
    """l(x; xi) = xi.target, independent of x: a table of fixed loss values."""

    bound_B = None
    noise_sigma2 = None
    name = "fixed"

    def __init__(self, dim: int = 1):
        self.dim = dim

    @property
    def lipschitz_G(self):
        return 1.0  # any positive constant bounds a zero gradient

    @property
    def smooth_L(self):
        return 1.0

    def batch_value(self, x, X, y):
        return np.array(y, dtype=float)

    def batch_grad(self, x, X, y):
        return np.zeros((len(y), self.dim))


def fixed_losses(values, name="fixed") -> Dataset:
    values = np.asarray(values, dtype=float)
    return Dataset(np.zeros((len(values), 1)), values, name=name)


def estimate_noise_sigma2(loss: LossModel, data: Dataset, probes, safety: float = 2.0) -> float:
    """max over probe points of the weighted variance of l(x, .), times ``safety``."""
    worst = 0.0
    for x in probes:
        v = loss.batch_value(x, data.features, data.targets)
        mean = np.dot(data.probs, v)
        worst = max(worst, float(np.dot(data.probs, (v - mean) ** 2)))
    return safety * worst

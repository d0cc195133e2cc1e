"""The rescaled penalized-DRO objective and the machinery around it.

For a loss l, divergence psi, penalty lam and rescaling constant G the joint
objective over w = (x, eta) is

    Lhat(x, eta) = E_xi[ lam * psi*((l(x; xi) - G eta) / lam) + G eta ]

and Psi(x) = min_eta Lhat(x, eta) is the penalized worst-case risk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import divergences as dv
from .datasets import Dataset, Sample
from .divergences import DivergenceSpec, Kind, is_finite
from .errors import BracketFailure, MissingConstant
from .losses import LossModel


@dataclass(frozen=True)
class DroProblem:
    loss: LossModel
    divergence: DivergenceSpec
    lam: float
    rescale_G: Optional[float] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.rescale_G is None:
            object.__setattr__(self, "rescale_G", float(self.loss.lipschitz_G))
        if not self.rescale_G > 0:
            raise ValueError("rescale_G must be positive")

    @property
    def G(self) -> float:
        return self.rescale_G

    @property
    def dim(self) -> int:
        return self.loss.dim + 1


def make_problem(loss, divergence, lam, data: Dataset = None, rescale_G=None) -> DroProblem:
    """Build a problem, computing data-dependent loss constants from ``data``."""
    if data is not None:
        loss = loss.bind(data)
    return DroProblem(loss, divergence, lam, rescale_G)


@dataclass(frozen=True)
class DualPoint:
    x: np.ndarray
    eta: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(x)) and math.isfinite(self.eta)):
            raise ValueError("DualPoint entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "eta", float(self.eta))

    def as_vector(self) -> np.ndarray:
        return np.append(self.x, self.eta)

    @classmethod
    def from_vector(cls, w) -> "DualPoint":
        w = np.asarray(w, dtype=float)
        return cls(w[:-1], w[-1])


@dataclass
class GradientEstimate:
    grad_x: np.ndarray
    grad_eta: float
    batch_size: int
    seed_state: Optional[dict] = field(default=None, repr=False)

    def as_vector(self) -> np.ndarray:
        return np.append(self.grad_x, self.grad_eta)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


def _split(w):
    if isinstance(w, DualPoint):
        return w.x, w.eta
    w = np.asarray(w, dtype=float)
    return w[:-1], float(w[-1])


def _z(p: DroProblem, losses, eta):
    return (losses - p.G * eta) / p.lam


def objective_sample(p: DroProblem, w, xi: Sample) -> float:
    x, eta = _split(w)
    z = (p.loss.value(x, xi) - p.G * eta) / p.lam
    return float(p.lam * dv.conj_value(p.divergence, z) + p.G * eta)


def per_sample_objective(p: DroProblem, w, X, y) -> np.ndarray:
    x, eta = _split(w)
    z = _z(p, p.loss.batch_value(x, X, y), eta)
    return p.lam * dv.conj_value(p.divergence, z) + p.G * eta


def per_sample_gradients(p: DroProblem, w, X, y) -> np.ndarray:
    """Rows are (psi*'(z) grad l, G (1 - psi*'(z))) for each sample."""
    x, eta = _split(w)
    z = _z(p, p.loss.batch_value(x, X, y), eta)
    s = np.atleast_1d(dv.conj_grad(p.divergence, z))
    gx = s[:, None] * p.loss.batch_grad(x, X, y)
    return np.concatenate([gx, (p.G * (1.0 - s))[:, None]], axis=1)


def full_objective(p: DroProblem, w, data: Dataset) -> float:
    return float(np.dot(data.probs, per_sample_objective(p, w, data.features, data.targets)))


def full_gradient(p: DroProblem, w, data: Dataset) -> GradientEstimate:
    g = data.probs @ per_sample_gradients(p, w, data.features, data.targets)
    return GradientEstimate(g[:-1], float(g[-1]), len(data))


def draw_batch(data: Dataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of an i.i.d. batch drawn with replacement from the empirical law."""
    if data.uniform:
        return rng.integers(0, len(data), size=batch_size)
    return rng.choice(len(data), size=batch_size, replace=True, p=data.probs)


def stochastic_gradient(p: DroProblem, w, data: Dataset, batch_size: int, rng: np.random.Generator,
                        use_all: bool = False) -> GradientEstimate:
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if use_all:
        return full_gradient(p, w, data)
    state = rng.bit_generator.state
    idx = draw_batch(data, batch_size, rng)
    g = per_sample_gradients(p, w, data.features[idx], data.targets[idx]).mean(axis=0)
    return GradientEstimate(g[:-1], float(g[-1]), batch_size, seed_state=state)


def _default_tol(width):
    return 1e-10 * (1.0 + abs(width))


def solve_eta(p: DroProblem, x, data: Dataset, tol: Optional[float] = None, max_iter: int = 200) -> float:
    """argmin over eta of Lhat(x, eta) by bisection on the monotone eta-gradient.

    The eta-gradient G * (1 - E psi*'((l - G eta) / lam)) is non-decreasing in
    eta. For smooth conjugates the result satisfies |grad_eta| <= tol. Plain
    CVaR has a step-function gradient; there the bracket is shrunk onto the
    jump (the minimizer) until its width is below tol.
    """
    losses = p.loss.batch_value(np.asarray(x, dtype=float), data.features, data.targets)
    probs = data.probs
    G, lam, div = p.G, p.lam, p.divergence

    def grad_eta(eta):
        return G * (1.0 - float(np.dot(probs, dv.conj_grad(div, (losses - G * eta) / lam))))

    C = dv.crossing_point(div)
    B = p.loss.bound_B
    if B is not None:
        # the minimizer lies in [-lam C / G, (B - lam C) / G]; widen by tol / L
        pad = (tol if tol is not None else 0.0) / p.loss.smooth_L + 1e-12 * (1.0 + B / G)
        lo, hi = -lam * C / G - pad, (B - lam * C) / G + pad
    else:
        lo = losses.min() / G - 10.0 * lam
        hi = losses.max() / G + 10.0 * lam
    g_lo, g_hi = grad_eta(lo), grad_eta(hi)
    doublings = 0
    while not (g_lo <= 0.0 <= g_hi):
        if doublings >= 60:
            raise BracketFailure(f"no sign change of the eta-gradient on [{lo:g}, {hi:g}]")
        width = hi - lo
        if g_lo > 0.0:
            lo -= width
            g_lo = grad_eta(lo)
        if g_hi < 0.0:
            hi += width
            g_hi = grad_eta(hi)
        doublings += 1
    if tol is None:
        tol = _default_tol(hi - lo)
    smooth = p.divergence.kind is not Kind.CVAR
    if smooth and abs(g_lo) <= tol:
        return lo
    if smooth and abs(g_hi) <= tol:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g_mid = grad_eta(mid)
        if smooth and abs(g_mid) <= tol:
            return mid
        if g_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if not smooth and hi - lo <= tol:
            return 0.5 * (lo + hi)
        if mid in (lo, hi) and hi - lo <= 4.0 * np.spacing(abs(mid) + 1.0):
            break
    if not smooth:
        return 0.5 * (lo + hi)
    best = min((lo, hi), key=lambda e: abs(grad_eta(e)))
    if abs(grad_eta(best)) <= tol:
        return best
    raise BracketFailure(f"eta bisection stalled at |grad_eta| = {abs(grad_eta(best)):.3g} > tol = {tol:.3g}")


def evaluate_psi(p: DroProblem, x, data: Dataset, tol: Optional[float] = None) -> float:
    eta = solve_eta(p, x, data, tol)
    return full_objective(p, DualPoint(x, eta), data)


@dataclass(frozen=True)
class StationarityReport:
    grad_norm: float
    threshold: float
    certified: bool
    split_norm: float
    split_certified: bool


def stationarity_transfer(grad: GradientEstimate, eps: float) -> StationarityReport:
    """Certify that x is eps-stationary for Psi from the full gradient of Lhat.

    Two sufficient conditions: |grad Lhat| <= eps / sqrt(2), or
    |grad_x Lhat| + |grad_eta Lhat| <= eps (the rescaled eta-gradient already
    carries the factor G).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    norm = grad.norm
    split = float(np.linalg.norm(grad.grad_x) + abs(grad.grad_eta))
    thr = eps / math.sqrt(2.0)
    return StationarityReport(norm, thr, norm <= thr, split, split <= eps)


@dataclass(frozen=True)
class TheoremConstants:
    K0: float
    K1: float
    Gamma2: float
    Lambda2: float
    Delta: Optional[float] = None
    delta_is_estimate: bool = True


def dro_constants(p: DroProblem, sigma2: Optional[float] = None, Gamma2: float = 8.0,
                  w0=None, data: Optional[Dataset] = None, delta: Optional[float] = None) -> TheoremConstants:
    """Generalized-smoothness and variance constants of Lhat.

    Smoothed CVaR uses its own sharper constants (bounded gradients, plain
    smoothness); every other divergence uses the general (K0, K1) and
    (Gamma, Lambda) bounds, which need a finite M and a loss-variance bound.
    """
    G = p.G
    L = p.loss.smooth_L
    lam = p.lam
    div = p.divergence
    if div.kind is Kind.SMOOTHED_CVAR:
        a = div.alpha
        K0 = L / a + G * G / (2.0 * lam * a)
        K1, G2, Lam2 = 0.0, 0.0, 2.0 * G * G / (a * a)
    else:
        M = div.smoothness_M
        if not is_finite(M):
            raise MissingConstant("smoothness_M", f"{div.label} has no finite smoothness constant")
        if sigma2 is None:
            sigma2 = p.loss.noise_sigma2
        if sigma2 is None:
            raise MissingConstant("noise_sigma2", "pass sigma2 or estimate it with estimate_noise_sigma2")
        K0 = L + 2.0 * G * G * M / lam
        K1 = L / G
        G2 = float(Gamma2)
        Lam2 = 11.0 * G * G * M * M * sigma2 / lam ** 2 + 8.0 * G * G
    is_estimate = True
    if delta is None and w0 is not None and data is not None:
        x0, _ = _split(w0)
        floor = float(p.loss.batch_value(x0, data.features, data.targets).min())
        delta = max(full_objective(p, w0, data) - floor, 0.0)
    elif delta is not None:
        is_estimate = False
    return TheoremConstants(K0, K1, G2, Lam2, delta, is_estimate)

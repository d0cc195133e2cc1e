"""psi-divergences, their convex conjugates and the constants the theory needs.

Every divergence here is a convex ``psi`` with ``psi(1) = 0`` and
``psi(s) = +inf`` for ``s < 0``. The conjugate ``psi*(t) = sup_s (s t - psi(s))``
is given in closed form together with its first two derivatives. All conjugate
functions accept scalars or numpy arrays.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import xlogy

from .errors import NotAbsolutelyContinuous, NotTwiceDifferentiable


class _Infinite:
    """Sentinel for +inf quantities (divergence values, constants).

    Deliberately supports no arithmetic so it cannot leak into computations.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "infinite"

    __str__ = __repr__

    def __reduce__(self):
        return (_Infinite, ())


INFINITE = _Infinite()

Constant = Union[float, _Infinite]


def is_finite(value) -> bool:
    return value is not INFINITE


class Kind(enum.Enum):
    CHI2 = "chi2"
    KL = "kl"
    CVAR = "cvar"
    SMOOTHED_CVAR = "smoothed_cvar"
    KL_REG_CVAR = "kl_reg_cvar"
    CRESSIE_READ = "cressie_read"


_NEEDS_ALPHA = {Kind.CVAR, Kind.SMOOTHED_CVAR, Kind.KL_REG_CVAR}


@dataclass(frozen=True)
class DivergenceSpec:
    kind: Kind
    alpha: Optional[float] = None
    k: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind in _NEEDS_ALPHA:
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError(f"{self.kind.value} needs alpha in (0, 1), got {self.alpha}")
        elif self.alpha is not None:
            raise ValueError(f"{self.kind.value} takes no alpha")
        if self.kind is Kind.CRESSIE_READ:
            # (t)_+^{k/(k-1)} is only a real convex power for k > 1
            if self.k is None or not self.k > 1.0:
                raise ValueError(f"Cressie-Read is supported for k > 1 only, got {self.k}")
        elif self.k is not None:
            raise ValueError(f"{self.kind.value} takes no k")

    @classmethod
    def chi2(cls):
        return cls(Kind.CHI2)

    @classmethod
    def kl(cls):
        return cls(Kind.KL)

    @classmethod
    def cvar(cls, alpha):
        return cls(Kind.CVAR, alpha=alpha)

    @classmethod
    def smoothed_cvar(cls, alpha):
        return cls(Kind.SMOOTHED_CVAR, alpha=alpha)

    @classmethod
    def kl_reg_cvar(cls, alpha):
        return cls(Kind.KL_REG_CVAR, alpha=alpha)

    @classmethod
    def cressie_read(cls, k):
        return cls(Kind.CRESSIE_READ, k=k)

    @property
    def label(self) -> str:
        if self.alpha is not None:
            return f"{self.kind.value}(alpha={self.alpha:g})"
        if self.k is not None:
            return f"{self.kind.value}(k={self.k:g})"
        return self.kind.value

    @property
    def smoothness_M(self) -> Constant:
        """Lipschitz constant of (psi*)'."""
        kind = self.kind
        if kind is Kind.CHI2:
            return 0.5
        if kind is Kind.SMOOTHED_CVAR:
            return 1.0 / (4.0 * self.alpha)
        if kind is Kind.KL_REG_CVAR:
            # (psi*)'' = e^t on t <= -log(alpha), 0 beyond; sup is 1/alpha
            return 1.0 / self.alpha
        if kind is Kind.CRESSIE_READ and self.k == 2.0:
            return 1.0
        return INFINITE

    @property
    def conj_lipschitz(self) -> Constant:
        """Lipschitz constant of psi* (sup of (psi*)')."""
        if self.kind in _NEEDS_ALPHA:
            return 1.0 / self.alpha
        return INFINITE

    @property
    def crossing_C(self) -> float:
        return crossing_point(self)

    @property
    def domain_max(self) -> Constant:
        """Right end of dom psi (open for the CVaR family)."""
        if self.kind in _NEEDS_ALPHA:
            return 1.0 / self.alpha
        return INFINITE


def conj_value(div: DivergenceSpec, t):
    t = np.asarray(t, dtype=float)
    kind = div.kind
    if kind is Kind.CHI2:
        out = -1.0 + 0.25 * np.maximum(t + 2.0, 0.0) ** 2
    elif kind is Kind.KL:
        out = np.expm1(t)
    elif kind is Kind.CVAR:
        out = np.maximum(t, 0.0) / div.alpha
    elif kind is Kind.SMOOTHED_CVAR:
        a = div.alpha
        out = np.logaddexp(math.log1p(-a), math.log(a) + t) / a
    elif kind is Kind.KL_REG_CVAR:
        a = div.alpha
        knot = -math.log(a)
        line = (1.0 + t + math.log(a)) / a - 1.0
        out = np.where(t <= knot, np.expm1(np.minimum(t, knot)), line)
    elif kind is Kind.CRESSIE_READ:
        k = div.k
        base = np.maximum((k - 1.0) * t + 1.0, 0.0)
        out = (base ** (k / (k - 1.0)) - 1.0) / k
    else:  # pragma: no cover
        raise ValueError(kind)
    return out[()] if out.ndim == 0 else out


def conj_grad(div: DivergenceSpec, t):
    """(psi*)'(t). For plain CVaR the kink at 0 takes the left limit 0."""
    t = np.asarray(t, dtype=float)
    kind = div.kind
    if kind is Kind.CHI2:
        out = 0.5 * np.maximum(t + 2.0, 0.0)
    elif kind is Kind.KL:
        out = np.exp(t)
    elif kind is Kind.CVAR:
        out = np.where(t > 0.0, 1.0 / div.alpha, 0.0)
    elif kind is Kind.SMOOTHED_CVAR:
        a = div.alpha
        # e^t / (1 - a + a e^t), written as a logistic to avoid overflow
        out = _expit(t + math.log(a) - math.log1p(-a)) / a
    elif kind is Kind.KL_REG_CVAR:
        a = div.alpha
        knot = -math.log(a)
        out = np.where(t <= knot, np.exp(np.minimum(t, knot)), 1.0 / a)
    elif kind is Kind.CRESSIE_READ:
        k = div.k
        base = np.maximum((k - 1.0) * t + 1.0, 0.0)
        out = base ** (1.0 / (k - 1.0))
    else:  # pragma: no cover
        raise ValueError(kind)
    return out[()] if out.ndim == 0 else out


def conj_second(div: DivergenceSpec, t):
    t = np.asarray(t, dtype=float)
    kind = div.kind
    if kind is Kind.CHI2:
        out = np.where(t > -2.0, 0.5, 0.0)
    elif kind is Kind.KL:
        out = np.exp(t)
    elif kind is Kind.CVAR:
        if np.any(t == 0.0):
            raise NotTwiceDifferentiable("CVaR conjugate has a kink at t = 0")
        out = np.zeros_like(t)
    elif kind is Kind.SMOOTHED_CVAR:
        a = div.alpha
        s = _expit(t + math.log(a) - math.log1p(-a))
        out = s * (1.0 - s) / a
    elif kind is Kind.KL_REG_CVAR:
        a = div.alpha
        knot = -math.log(a)
        if np.any(t == knot):
            raise NotTwiceDifferentiable("KL-regularized CVaR conjugate has a curvature jump at -log(alpha)")
        out = np.where(t < knot, np.exp(np.minimum(t, knot)), 0.0)
    elif kind is Kind.CRESSIE_READ:
        k = div.k
        base = (k - 1.0) * t + 1.0
        with np.errstate(divide="ignore"):
            out = np.where(base > 0.0, np.abs(base) ** ((2.0 - k) / (k - 1.0)), 0.0)
    else:  # pragma: no cover
        raise ValueError(kind)
    return out[()] if out.ndim == 0 else out


def _expit(u):
    return np.exp(-np.logaddexp(0.0, -u))


def crossing_point(div: DivergenceSpec) -> float:
    """C_psi with (psi*)'(C_psi) = 1.

    Every supported kind crosses level 1 at t = 0 (for plain CVaR this is the
    jump from 0 to 1/alpha). The value is still confirmed by bisection so a
    new kind with a different crossing cannot silently slip through.
    """
    if div.kind is Kind.CVAR:
        return 0.0
    lo, hi = -50.0, 50.0
    f_lo = conj_grad(div, lo) - 1.0
    if f_lo > 0 or conj_grad(div, hi) - 1.0 < 0:
        raise ValueError(f"no crossing of (psi*)' = 1 for {div.label}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if conj_grad(div, mid) - 1.0 < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15:
            break
    c = 0.5 * (lo + hi)
    return 0.0 if abs(c) < 1e-12 else c


def psi(div: DivergenceSpec, s):
    """The divergence generator; returns np.inf outside its domain."""
    s = np.asarray(s, dtype=float)
    kind = div.kind
    neg = s < 0.0
    sp = np.where(neg, 0.0, s)
    if kind is Kind.CHI2:
        # the generator whose conjugate is -1 + (t+2)_+^2 / 4
        out = (sp - 1.0) ** 2
    elif kind is Kind.KL:
        out = xlogy(sp, sp) - sp + 1.0
    elif kind in _NEEDS_ALPHA:
        a = div.alpha
        top = 1.0 / a
        inside = sp <= top
        sc = np.minimum(sp, top)
        if kind is Kind.CVAR:
            out = np.zeros_like(sc)
        elif kind is Kind.KL_REG_CVAR:
            out = xlogy(sc, sc) - sc + 1.0
        else:
            r = np.maximum(1.0 - a * sc, 0.0)
            out = xlogy(sc, sc) + xlogy(r, r / (1.0 - a)) / a
        out = np.where(inside, out, np.inf)
    elif kind is Kind.CRESSIE_READ:
        k = div.k
        out = (sp ** k - k * sp + k - 1.0) / (k * (k - 1.0))
    else:  # pragma: no cover
        raise ValueError(kind)
    out = np.where(neg, np.inf, out)
    return out[()] if out.ndim == 0 else out


def divergence_value(div: DivergenceSpec, q, p, atol: float = 1e-9):
    """sum_i p_i psi(q_i / p_i) for discrete weights; INFINITE off the domain."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape or q.ndim != 1:
        raise ValueError("q and p must be 1-d arrays of equal length")
    for name, w in (("q", q), ("p", p)):
        if np.any(w < 0) or abs(w.sum() - 1.0) > atol:
            raise ValueError(f"{name} must be nonnegative and sum to 1")
    support = p > 0
    if np.any(q[~support] > 0):
        raise NotAbsolutelyContinuous("q puts mass where p has none")
    ratio = q[support] / p[support]
    vals = psi(div, ratio)
    if np.any(np.isinf(vals)):
        return INFINITE
    # the open end of the CVaR-family domain is excluded
    top = div.domain_max
    if is_finite(top) and np.any(ratio >= top):
        return INFINITE
    return float(np.dot(p[support], vals))

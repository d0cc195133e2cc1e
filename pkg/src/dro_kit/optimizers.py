"""Normalized momentum SGD, plain SGD and randomized projected SGD (RSPG).

The optimizers work on any object exposing the small objective interface of
:class:`DroObjective` (``stochastic_gradient``, ``full_gradient``, ``value``,
``check``), so they can be exercised on toy objectives as well as on the DRO
joint objective over w = (x, eta).
"""
from __future__ import annotations

import enum
import io
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import core
from .core import DroProblem, DualPoint, TheoremConstants
from .datasets import Dataset
from .divergences import crossing_point
from .errors import DivergenceDetected, LeftCertifiedRegion, MissingConstant, TraceIncomplete, UnboundedLoss

ZERO_MOMENTUM = 1e-300


class Method(enum.Enum):
    NORMALIZED_MOMENTUM = "normalized_momentum"
    SGD = "sgd"
    RSPG = "rspg"


@dataclass(frozen=True)
class OptimizerConfig:
    method: Method
    step_gamma: float
    momentum_beta: float = 0.9
    batch_S: int = 1
    iters_T: int = 100
    target_eps: float = 0.1
    seed: int = 0
    eta_box: Optional[Tuple[float, float]] = None
    record_every: int = 10
    record_full: bool = False
    use_all: bool = False
    blowup: float = 1e12

    def __post_init__(self):
        if isinstance(self.method, str):
            object.__setattr__(self, "method", Method(self.method))
        if not self.step_gamma >= 0:
            raise ValueError("step_gamma must be nonnegative")
        if not 0.0 <= self.momentum_beta < 1.0:
            raise ValueError("momentum_beta must lie in [0, 1)")
        if self.batch_S < 1 or self.iters_T < 1 or self.record_every < 1:
            raise ValueError("batch_S, iters_T and record_every must be positive")
        if self.method is Method.RSPG:
            if self.eta_box is None:
                raise ValueError("RSPG needs an eta_box")
            if not self.eta_box[0] <= self.eta_box[1]:
                raise ValueError("eta_box must satisfy U <= V")


@dataclass
class TraceRecord:
    iter: int
    objective: float
    grad_norm: float
    mom_norm: float
    step: float
    eta: float
    evals: int
    skipped: bool = False


@dataclass
class TrainingTrace:
    method: str
    records: List[TraceRecord] = field(default_factory=list)
    gradient_evaluations: int = 0
    wall_time: float = 0.0
    skipped_steps: int = 0
    output_index: Optional[int] = None
    beta: Optional[float] = None
    # (iter, gradient evaluations, value) from an optional monitor such as Psi
    monitor: List[Tuple[int, int, float]] = field(default_factory=list)
    # filled only when record_full is set
    iterates: Optional[np.ndarray] = None
    momenta: Optional[np.ndarray] = None
    stoch_grads: Optional[np.ndarray] = None
    full_grads: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    @property
    def best_grad_norm(self) -> float:
        norms = [r.grad_norm for r in self.records if not math.isnan(r.grad_norm)]
        return min(norms) if norms else math.nan

    def evals_to_grad_norm(self, threshold: float) -> Optional[int]:
        for r in self.records:
            if not math.isnan(r.grad_norm) and r.grad_norm <= threshold:
                return r.evals
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iter,objective,grad_norm,mom_norm,step,eta\n")
        for r in self.records:
            buf.write(",".join([str(r.iter)] + [format(v, ".17g") for v in
                                                 (r.objective, r.grad_norm, r.mom_norm, r.step, r.eta)]) + "\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.records[-1].iter if self.records else 0,
            "best_grad_norm": self.best_grad_norm,
            "gradient_evaluations": self.gradient_evaluations,
            "skipped_steps": self.skipped_steps,
            "wall_time": self.wall_time,
        }


class DroObjective:
    """F(w) = Lhat(x, eta) on an empirical dataset, with w = (x, eta) flattened."""

    def __init__(self, problem: DroProblem, data: Dataset):
        self.problem = problem
        self.data = data
        self.dim = problem.dim

    def stochastic_gradient(self, w, batch_size, rng, use_all=False):
        """Return (mini-batch gradient, mini-batch objective estimate)."""
        p, data = self.problem, self.data
        if use_all:
            rows = core.per_sample_gradients(p, w, data.features, data.targets)
            vals = core.per_sample_objective(p, w, data.features, data.targets)
            return data.probs @ rows, float(np.dot(data.probs, vals))
        idx = core.draw_batch(data, batch_size, rng)
        X, y = data.features[idx], data.targets[idx]
        g = core.per_sample_gradients(p, w, X, y).mean(axis=0)
        return g, float(core.per_sample_objective(p, w, X, y).mean())

    def full_gradient(self, w):
        return core.full_gradient(self.problem, w, self.data).as_vector()

    def value(self, w):
        return core.full_objective(self.problem, w, self.data)

    def check(self, w):
        if not self.problem.loss.in_domain(np.asarray(w)[:-1]):
            raise LeftCertifiedRegion(
                f"iterate x={np.asarray(w)[:-1]} left the box |x| <= {self.problem.loss.domain_radius} "
                "on which the loss constants are certified")

    def eta_of(self, w):
        return float(w[-1])


class QuadraticObjective:
    """F(w) = 0.5 |w|^2 with optional additive Gaussian gradient noise (test fixture)."""

    def __init__(self, dim, noise=0.0):
        self.dim = dim
        self.noise = noise

    def stochastic_gradient(self, w, batch_size, rng, use_all=False):
        g = np.array(w, dtype=float)
        if self.noise and not use_all:
            g = g + self.noise * rng.normal(size=(batch_size, self.dim)).mean(axis=0)
        return g, self.value(w)

    def full_gradient(self, w):
        return np.array(w, dtype=float)

    def value(self, w):
        return 0.5 * float(np.dot(w, w))

    def check(self, w):
        pass

    def eta_of(self, w):
        return float(w[-1])


def _as_vector(w0):
    return w0.as_vector() if isinstance(w0, DualPoint) else np.array(w0, dtype=float)


def _run(objective, w0, cfg: OptimizerConfig, monitor=None, monitor_every=None):
    rng = np.random.default_rng(cfg.seed)
    S, T, k = cfg.batch_S, cfg.iters_T, cfg.record_every
    gamma, beta = cfg.step_gamma, cfg.momentum_beta
    method = cfg.method
    trace = TrainingTrace(method.value, beta=beta if method is Method.NORMALIZED_MOMENTUM else None)
    start = time.perf_counter()
    w = _as_vector(w0)
    objective.check(w)
    evals = 0
    box = cfg.eta_box

    def cost():
        return len(objective.data) if cfg.use_all and hasattr(objective, "data") else S

    def grad_norm_at(v):
        if method is Method.RSPG:
            return float(np.linalg.norm(generalized_gradient(objective.full_gradient(v), v, gamma, box)))
        return float(np.linalg.norm(objective.full_gradient(v)))

    m = np.zeros_like(w)
    if method is Method.NORMALIZED_MOMENTUM:
        # m_0 is an independent first stochastic gradient at w_0
        m, _ = objective.stochastic_gradient(w, S, rng, cfg.use_all)
        evals += cost()
    full = cfg.record_full
    if full:
        hist_w, hist_m, hist_g = [w.copy()], [m.copy()], []
        hist_full, hist_val = [objective.full_gradient(w)], [objective.value(w)]
    trace.records.append(TraceRecord(0, objective.value(w), grad_norm_at(w), float(np.linalg.norm(m)), 0.0,
                                     objective.eta_of(w), evals))
    if monitor is not None:
        monitor_every = monitor_every or k
        trace.monitor.append((0, evals, float(monitor(w))))
    try:
        for t in range(1, T + 1):
            g, fhat = objective.stochastic_gradient(w, S, rng, cfg.use_all)
            evals += cost()
            if not math.isfinite(fhat) or abs(fhat) > cfg.blowup or not np.all(np.isfinite(g)):
                raise DivergenceDetected(f"objective estimate {fhat:.3g} exceeded {cfg.blowup:g} at iteration {t}")
            skipped = False
            if method is Method.NORMALIZED_MOMENTUM:
                m = beta * m + (1.0 - beta) * g
                nm = float(np.linalg.norm(m))
                if nm <= ZERO_MOMENTUM:
                    skipped = True
                    w_new = w.copy()
                else:
                    w_new = w - gamma * (m / nm)
            elif method is Method.SGD:
                m = g
                w_new = w - gamma * g
            else:
                m = g
                w_new = w - gamma * g
                w_new[-1] = min(max(w_new[-1], box[0]), box[1])
            if skipped:
                trace.skipped_steps += 1
            objective.check(w_new)
            step = float(np.linalg.norm(w_new - w))
            w = w_new
            gn = grad_norm_at(w) if (t % k == 0 or t == T) else math.nan
            trace.records.append(TraceRecord(t, fhat, gn, float(np.linalg.norm(m)), step,
                                             objective.eta_of(w), evals, skipped))
            if monitor is not None and (t % monitor_every == 0 or t == T):
                trace.monitor.append((t, evals, float(monitor(w))))
            if full:
                hist_w.append(w.copy())
                hist_m.append(m.copy())
                hist_g.append(g.copy())
                hist_full.append(objective.full_gradient(w))
                hist_val.append(objective.value(w))
    except DivergenceDetected as exc:
        trace.gradient_evaluations = evals
        trace.wall_time = time.perf_counter() - start
        exc.trace = trace
        raise
    trace.gradient_evaluations = evals
    trace.wall_time = time.perf_counter() - start
    if full:
        trace.iterates = np.array(hist_w)
        trace.momenta = np.array(hist_m)
        trace.stoch_grads = np.array(hist_g)
        trace.full_grads = np.array(hist_full)
        trace.values = np.array(hist_val)
    return w, trace


def _output_point(w, objective):
    if isinstance(objective, DroObjective):
        return DualPoint.from_vector(w)
    return w


def run(objective, w0, cfg: OptimizerConfig, monitor=None, monitor_every=None):
    """Dispatch on cfg.method. ``monitor(w)`` is recorded every ``monitor_every`` iterations."""
    if cfg.method is Method.RSPG:
        return rspg(objective, w0, cfg, monitor, monitor_every)
    w, trace = _run(objective, w0, cfg, monitor, monitor_every)
    return _output_point(w, objective), trace


def normalized_momentum(objective, w0, cfg: OptimizerConfig):
    """m_t = beta m_{t-1} + (1 - beta) g_t;  w_t = w_{t-1} - gamma m_t / |m_t|."""
    if cfg.method is not Method.NORMALIZED_MOMENTUM:
        raise ValueError("config method must be normalized_momentum")
    return run(objective, w0, cfg)


def sgd(objective, w0, cfg: OptimizerConfig):
    if cfg.method is not Method.SGD:
        raise ValueError("config method must be sgd")
    return run(objective, w0, cfg)


def rspg(objective, w0, cfg: OptimizerConfig, monitor=None, monitor_every=None):
    """Projected SGD on R^n x [U, V]; returns a uniformly drawn iterate w_R, R in 1..T."""
    if cfg.method is not Method.RSPG:
        raise ValueError("config method must be rspg")
    full = replace(cfg, record_full=True) if not cfg.record_full else cfg
    w_T, trace = _run(objective, w0, full, monitor, monitor_every)
    R = int(np.random.default_rng([cfg.seed, 1]).integers(1, cfg.iters_T + 1))
    trace.output_index = R
    chosen = trace.iterates[R].copy()
    if not cfg.record_full:
        trace.momenta = trace.stoch_grads = trace.full_grads = trace.values = None
        trace.iterates = None
    return _output_point(chosen, objective), trace


def run_normalized_momentum(p: DroProblem, data: Dataset, w0, cfg: OptimizerConfig):
    return normalized_momentum(DroObjective(p, data), w0, cfg)


def run_sgd(p: DroProblem, data: Dataset, w0, cfg: OptimizerConfig):
    return sgd(DroObjective(p, data), w0, cfg)


def run_rspg(p: DroProblem, data: Dataset, w0, cfg: OptimizerConfig):
    if p.loss.bound_B is None:
        raise UnboundedLoss("RSPG needs a bounded loss (bound_B)")
    return rspg(DroObjective(p, data), w0, cfg)


def project_eta(w, box):
    w = np.array(w, dtype=float)
    w[-1] = min(max(w[-1], box[0]), box[1])
    return w


def generalized_gradient(grad, w, gamma, box):
    """(w - w+) / gamma with w+ the projection of w - gamma grad onto R^n x box."""
    w = np.asarray(w, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if gamma <= 0:
        return grad.copy()
    return (w - project_eta(w - gamma * grad, box)) / gamma


@dataclass(frozen=True)
class EtaInterval:
    U: float
    V: float
    U_wide: float
    V_wide: float


def eta_interval(p: DroProblem, eps: float = 0.0) -> EtaInterval:
    """[U, V] containing an optimal eta for losses in [0, B], and its eps/L widening."""
    B = p.loss.bound_B
    if B is None:
        raise UnboundedLoss("the eta interval needs a bounded loss (bound_B)")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    C = crossing_point(p.divergence)
    U = -p.lam * C / p.G
    V = (B - p.lam * C) / p.G
    pad = eps / p.loss.smooth_L
    return EtaInterval(U, V, U - pad, V + pad)


def theorem_hyperparams(c: TheoremConstants, eps: float, seed: int = 0, record_every: int = 10) -> OptimizerConfig:
    """Step size, momentum, batch size and horizon prescribed by the convergence theorem.

    With Gamma = 0 the batch-size formula degenerates (S = 64 Gamma^2 = 0), so
    S = 1 is used and the momentum rule takes the Gamma that a unit batch
    corresponds to, Gamma^2 = 1/64.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if c.Delta is None:
        raise MissingConstant("Delta", "pass delta or an initial point to dro_constants")
    K0, K1, G2, L2 = c.K0, c.K1, c.Gamma2, c.Lambda2
    limit = min(K0 / K1 if K1 > 0 else math.inf, math.sqrt(L2 / G2) / 2.0 if G2 > 0 else math.inf)
    if eps > limit:
        warnings.warn(f"eps={eps:g} exceeds the small-eps regime bound {limit:.4g}; "
                      "the guarantee may not apply", RuntimeWarning, stacklevel=2)
    S = max(1, math.ceil(round(64.0 * G2, 9)))
    G2_eff = G2 if G2 > 0 else S / 64.0
    one_minus_beta = 1.0 if L2 == 0 else min(4.0 * G2_eff * eps * eps / L2, 1.0)
    beta = 1.0 - one_minus_beta
    inner = eps / K0 if K1 == 0 else min(1.0 / K1, eps / K0)
    gamma = inner * one_minus_beta / 8.0
    T = max(1, math.ceil(round(4.0 * c.Delta / (gamma * eps), 6)))
    return OptimizerConfig(Method.NORMALIZED_MOMENTUM, step_gamma=gamma, momentum_beta=beta, batch_S=S,
                           iters_T=T, target_eps=eps, seed=seed, record_every=record_every)


def momentum_error_decomposition(trace: TrainingTrace):
    """Direct delta_t = m_{t+1} - grad F(w_t) and its unrolled reconstruction.

    The reconstruction is
        beta sum_tau beta^tau (gF(w_{t-tau-1}) - gF(w_{t-tau}))
        + (1 - beta) sum_{tau < t} beta^tau dhat_{t-tau} + (1 - beta) beta^t dhat_0
        + beta^{t+1} (m_0 - gF(w_0)),
    with dhat_s the mini-batch noise at w_s. Both are returned as (T, dim) arrays.
    """
    if trace.momenta is None or trace.full_grads is None or trace.stoch_grads is None:
        raise TraceIncomplete("run with record_full=True to decompose the momentum error")
    if trace.method != Method.NORMALIZED_MOMENTUM.value:
        raise TraceIncomplete("momentum decomposition applies to normalized-momentum traces")
    m = trace.momenta
    gF = trace.full_grads
    ghat = trace.stoch_grads
    T = len(ghat)
    beta = _infer_beta(trace)
    dhat = ghat - gF[:T]
    direct = m[1:T + 1] - gF[:T]
    recon = np.zeros_like(direct)
    for t in range(T):
        acc = beta ** (t + 1) * (m[0] - gF[0]) + (1.0 - beta) * beta ** t * dhat[0]
        for tau in range(t):
            acc = acc + beta * beta ** tau * (gF[t - tau - 1] - gF[t - tau])
            acc = acc + (1.0 - beta) * beta ** tau * dhat[t - tau]
        recon[t] = acc
    return direct, recon


def _infer_beta(trace):
    if getattr(trace, "beta", None) is not None:
        return trace.beta
    raise TraceIncomplete("trace does not carry its momentum factor")

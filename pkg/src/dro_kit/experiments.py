"""Grid-tuned optimizer races on desk-scale problems.

Each arm tries every step size in the grid with a fixed seed and keeps the one
that reaches its target with the fewest gradient evaluations. Runs that blow up
or leave the certified region are recorded as failed, not retried.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .core import DroProblem, DualPoint, evaluate_psi, make_problem
from .datasets import Dataset, rademacher_dataset, synth_imbalanced
from .divergences import DivergenceSpec
from .errors import DivergenceDetected
from .losses import counterexample_loss, logistic_loss
from .optimizers import DroObjective, Method, OptimizerConfig, TrainingTrace, run

LR_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


def default_workers() -> int:
    raw = os.environ.get("DRO_KIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class PsiMonitor:
    """Psi(x) = min_eta Lhat(x, eta), re-solved from scratch (never the optimizer's eta)."""

    def __init__(self, problem: DroProblem, data: Dataset, tol: Optional[float] = None):
        self.problem = problem
        self.data = data
        self.tol = tol

    def __call__(self, w):
        return evaluate_psi(self.problem, np.asarray(w)[:-1], self.data, self.tol)


@dataclass
class RunResult:
    gamma: float
    trace: Optional[TrainingTrace]
    point: Optional[DualPoint]
    failure: Optional[str] = None


@dataclass
class ArmResult:
    method: str
    gamma: Optional[float]
    evals_to_target: Optional[int]
    final_value: float
    runs: List[RunResult]


def _one(args):
    objective, w0, cfg, monitor, monitor_every = args
    try:
        point, trace = run(objective, w0, cfg, monitor, monitor_every)
        return RunResult(cfg.step_gamma, trace, point)
    except DivergenceDetected as exc:
        return RunResult(cfg.step_gamma, exc.trace, None, f"{type(exc).__name__}: {exc}")


def sweep(objective, w0, cfg: OptimizerConfig, grid: Sequence[float] = LR_GRID, monitor=None,
          monitor_every=None, workers: Optional[int] = None) -> List[RunResult]:
    """Run ``cfg`` once per step size; runs are independent and may go in parallel."""
    jobs = [(objective, w0, replace(cfg, step_gamma=g), monitor, monitor_every) for g in grid]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_one, jobs))
    return [_one(j) for j in jobs]


def pick_fastest(method: str, runs: List[RunResult], evals_of: Callable[[TrainingTrace], Optional[int]],
                 final_of: Callable[[RunResult], float]) -> ArmResult:
    best = None
    for r in runs:
        if r.failure is not None or r.trace is None:
            continue
        e = evals_of(r.trace)
        if e is not None and (best is None or e < best[0]):
            best = (e, r)
    if best is None:
        finals = [final_of(r) for r in runs if r.failure is None]
        return ArmResult(method, None, None, min(finals) if finals else math.nan, runs)
    return ArmResult(method, best[1].gamma, best[0], final_of(best[1]), runs)


def evals_to_monitor_level(trace: TrainingTrace, level: float) -> Optional[int]:
    for _, evals, value in trace.monitor:
        if value <= level:
            return evals
    return None


def counterexample_race(lam: float = 1.0, x0: float = 3.0, iters: int = 2000, batch: int = 1,
                        beta: float = 0.9, threshold: float = 0.1, seed: int = 0,
                        methods=(Method.NORMALIZED_MOMENTUM, Method.SGD), grid=LR_GRID,
                        workers=None) -> Dict[str, ArmResult]:
    """Gradient evaluations until |grad Lhat| <= threshold on the chi^2 counter-example."""
    data = rademacher_dataset()
    p = make_problem(counterexample_loss(), DivergenceSpec.chi2(), lam, data)
    obj = DroObjective(p, data)
    out = {}
    for m in methods:
        cfg = OptimizerConfig(m, grid[0], beta, batch, iters, seed=seed, record_every=1)
        runs = sweep(obj, DualPoint([x0], 0.0), cfg, grid, workers=workers)
        out[Method(m).value] = pick_fastest(
            Method(m).value, runs, lambda tr: tr.evals_to_grad_norm(threshold),
            lambda r: r.trace.best_grad_norm)
    return out


def logistic_problem(divergence: DivergenceSpec, lam: float, seed: int = 0, base_n: int = 500,
                     feature_dim: int = 10, separation: float = 3.0):
    data = synth_imbalanced(seed, base_n=base_n, feature_dim=feature_dim, separation=separation)
    n_cls = int(data.targets.max()) + 1
    return make_problem(logistic_loss(n_cls, feature_dim), divergence, lam, data), data


def logistic_race(lam: float = 0.1, batch: int = 128, epochs: int = 12, psi_every: int = 2, beta: float = 0.9,
                  rel_gap: float = 0.05, seed: int = 0, data_seed: int = 0,
                  methods=(Method.NORMALIZED_MOMENTUM, Method.SGD), grid=LR_GRID, workers=None):
    """Gradient evaluations until Psi is within rel_gap of the best Psi any run attained."""
    p, data = logistic_problem(DivergenceSpec.chi2(), lam, data_seed)
    obj = DroObjective(p, data)
    iters = math.ceil(len(data) / batch) * epochs
    monitor = PsiMonitor(p, data)
    w0 = DualPoint(np.zeros(p.loss.dim), 0.0)
    all_runs = {}
    for m in methods:
        cfg = OptimizerConfig(m, grid[0], beta, batch, iters, seed=seed, record_every=iters)
        all_runs[Method(m).value] = sweep(obj, w0, cfg, grid, monitor, psi_every, workers)
    best = min(v for runs in all_runs.values() for r in runs if r.failure is None for _, _, v in r.trace.monitor)
    level = (1.0 + rel_gap) * best
    out = {m: pick_fastest(m, runs, lambda tr: evals_to_monitor_level(tr, level),
                           lambda r: r.trace.monitor[-1][2])
           for m, runs in all_runs.items()}
    return out, best


def cvar_race(alpha: float = 0.02, lam: float = 0.1, batch: int = 128, epochs: int = 10, beta: float = 0.9,
              method=Method.NORMALIZED_MOMENTUM, seed: int = 0, data_seed: int = 0, separation: float = 3.0,
              grid=LR_GRID, workers=None):
    """Train on smoothed CVaR and on plain CVaR with the same optimizer and budget.

    Both arms are scored by the plain CVaR objective of their final iterate, each
    with its best step size from the grid.
    """
    pc, data = logistic_problem(DivergenceSpec.cvar(alpha), lam, data_seed, separation=separation)
    ps = DroProblem(pc.loss, DivergenceSpec.smoothed_cvar(alpha), lam)
    iters = math.ceil(len(data) / batch) * epochs
    w0 = DualPoint(np.zeros(pc.loss.dim), 0.0)
    out = {}
    for name, p in (("cvar", pc), ("smoothed_cvar", ps)):
        cfg = OptimizerConfig(method, grid[0], beta, batch, iters, seed=seed, record_every=iters)
        runs = sweep(DroObjective(p, data), w0, cfg, grid, workers=workers)
        scored = [(evaluate_psi(pc, r.point.x, data), r) for r in runs if r.failure is None]
        value, best = min(scored, key=lambda vr: vr[0])
        out[name] = ArmResult(name, best.gamma, best.trace.gradient_evaluations, value, runs)
    return out

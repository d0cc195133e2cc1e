"""dro-kit command line: run, verify and compare.

Exit codes: 0 success, 2 the optimizer diverged, 3 bad configuration or input.
"""
from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import core, verify
from .core import DualPoint, make_problem
from .errors import ConfigError, DivergenceDetected, DroKitError
from .experiments import LR_GRID, PsiMonitor, default_workers, evals_to_monitor_level, pick_fastest, sweep
from .optimizers import DroObjective, Method, OptimizerConfig, eta_interval, run, theorem_hyperparams

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 2, 3
NOT_REACHED = "not-reached"


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(float(u)) for u in np.ravel(v))
    return str(v)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))


def _summary_text(items) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in items.items())


def build(c: cfgmod.ExperimentConfig):
    """Problem, data, initial point and optimizer config described by ``c``."""
    data = c.dataset()
    loss = c.loss_model(data)
    p = make_problem(loss, c.divergence_spec(), c.lam, data, c.rescale_G)
    n_x = p.loss.dim
    if c.x0 is None:
        x0 = np.zeros(n_x)
    elif len(c.x0) == 1:
        x0 = np.full(n_x, c.x0[0])
    elif len(c.x0) == n_x:
        x0 = np.array(c.x0)
    else:
        raise ConfigError(f"optimizer.x0 has {len(c.x0)} entries, the model has {n_x}")
    w0 = DualPoint(x0, c.eta0)
    ep = cfgmod.epoch_iters(len(data), c.batch_S)
    extras = {}
    if c.theorem_auto:
        consts = core.dro_constants(p, Gamma2=c.gamma2, w0=w0, data=data)
        ocfg = theorem_hyperparams(consts, c.target_eps, seed=c.seed, record_every=c.record_every)
        extras.update(K0=consts.K0, K1=consts.K1, Gamma2=consts.Gamma2, Lambda2=consts.Lambda2,
                      Delta=consts.Delta, T_prescribed=ocfg.iters_T)
        cap = c.iters_T if c.iters_T is not None else (math.ceil(c.epochs * ep) if c.epochs else None)
        if cap is not None and cap < ocfg.iters_T:
            ocfg = OptimizerConfig(ocfg.method, ocfg.step_gamma, ocfg.momentum_beta, ocfg.batch_S, cap,
                                   ocfg.target_eps, ocfg.seed, record_every=ocfg.record_every)
        ep = cfgmod.epoch_iters(len(data), ocfg.batch_S)
        return p, data, w0, ocfg, ep, extras
    if c.step_gamma is None and not c.methods:
        raise ConfigError("optimizer.step_gamma is required")
    T = c.iters_T if c.iters_T is not None else (math.ceil(c.epochs * ep) if c.epochs else 100)
    box = c.eta_box
    if c.method == "rspg" and box is None:
        iv = eta_interval(p, c.target_eps)
        box = (iv.U_wide, iv.V_wide)
    try:
        ocfg = OptimizerConfig(Method(c.method), c.step_gamma if c.step_gamma is not None else LR_GRID[0],
                               c.momentum_beta, c.batch_S, T, c.target_eps, c.seed, box, c.record_every,
                               use_all=c.use_all)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return p, data, w0, ocfg, ep, extras


def _psi_every_iters(c, ep):
    return max(1, int(round(c.psi_every * ep)))


def _psi_curve(trace, ep) -> str:
    lines = ["epoch,iter,gradient_evaluations,psi\n"]
    for it, evals, value in trace.monitor:
        lines.append(f"{_fmt(it / ep)},{it},{evals},{_fmt(value)}\n")
    return "".join(lines)


def cmd_run(config_path) -> int:
    try:
        c = cfgmod.load(config_path)
        p, data, w0, ocfg, ep, extras = build(c)
    except DroKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = c.output_dir
    monitor = PsiMonitor(p, data, c.eta_tol)
    status = "completed"
    code = EXIT_OK
    try:
        point, trace = run(DroObjective(p, data), w0, ocfg, monitor, _psi_every_iters(c, ep))
    except DivergenceDetected as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        trace, point, status, code = exc.trace, None, f"diverged: {exc}", EXIT_DIVERGED
    _write(out / "trace.csv", trace.to_csv() if trace is not None else "iter,objective,grad_norm,mom_norm,step,eta\n")
    _write(out / "psi_curve.csv", _psi_curve(trace, ep) if trace is not None else "epoch,iter,gradient_evaluations,psi\n")
    summary = {"status": status, "loss": p.loss.name, "divergence": p.divergence.label, "lambda": p.lam, "G": p.G,
               "samples": len(data), "method": ocfg.method.value, "step_gamma": ocfg.step_gamma,
               "momentum_beta": ocfg.momentum_beta, "batch_S": ocfg.batch_S, "iters_T": ocfg.iters_T,
               "seed": ocfg.seed}
    summary.update(extras)
    if trace is not None:
        summary.update(trace.summary())
        if trace.output_index is not None:
            summary["output_index"] = trace.output_index
    if point is not None:
        summary["final_x"] = point.x
        summary["final_eta"] = point.eta
        summary["final_psi"] = core.evaluate_psi(p, point.x, data, c.eta_tol)
    _write(out / "summary.txt", _summary_text(summary))
    return code


def cmd_verify(suite: str = "all", out_dir=None) -> int:
    names = list(verify.SUITES) if suite == "all" else [suite]
    if suite != "all" and suite not in verify.SUITES:
        print(f"error: unknown suite {suite!r}; valid: all, " + ", ".join(verify.SUITES), file=sys.stderr)
        return EXIT_CONFIG
    workers = default_workers()
    if workers > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(names))) as pool:
            reports = list(pool.map(_run_check, names))
    else:
        reports = [_run_check(n) for n in names]
    for r in reports:
        print(f"{r.check_name}: {'PASS' if r.passed else 'FAIL'} worst_violation={r.worst_violation:.3g} "
              f"tolerance={r.tolerance:.3g} instances={r.instances_tested}")
        if out_dir is not None:
            _write(Path(out_dir) / f"{r.check_name}.txt", r.to_text())
    return EXIT_OK if all(r.passed for r in reports) else 1


def _run_check(name):
    return verify.SUITES[name]()


def cmd_compare(config_path) -> int:
    try:
        c = cfgmod.load(config_path)
        methods = c.methods or [c.method]
        if "theorem-auto" in methods:
            raise ConfigError("compare.methods must list grid-tunable methods")
        c.method = methods[0]
        p, data, w0, base, ep, _ = build(c)
    except DroKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    grid = c.grid or list(LR_GRID)
    obj = DroObjective(p, data)
    every = _psi_every_iters(c, ep)
    psi_metric = c.metric == "psi_rel"
    monitor = PsiMonitor(p, data, c.eta_tol) if psi_metric else None
    record = every if psi_metric else 1
    runs = {}
    for i, name in enumerate(methods):
        box = base.eta_box
        if name == "rspg" and box is None:
            iv = eta_interval(p, c.target_eps)
            box = (iv.U_wide, iv.V_wide)
        # arms get independent streams at fixed offsets from the master seed
        cfg = OptimizerConfig(Method(name), grid[0], base.momentum_beta, base.batch_S, base.iters_T,
                              base.target_eps, base.seed + i, box, record, use_all=base.use_all)
        runs[name] = sweep(obj, w0, cfg, grid, monitor, every if psi_metric else None)
    out = c.output_dir
    for name, rs in runs.items():
        for r in rs:
            if r.trace is not None:
                _write(out / "traces" / f"{name}_gamma{r.gamma:g}.csv", r.trace.to_csv())
    if psi_metric:
        finite = [v for rs in runs.values() for r in rs if r.failure is None for _, _, v in r.trace.monitor]
        level = (1.0 + c.rel_gap) * min(finite) if finite else -math.inf
        evals_of = lambda tr: evals_to_monitor_level(tr, level)
    else:
        evals_of = lambda tr: tr.evals_to_grad_norm(c.threshold)
    lines = ["optimizer,step_gamma,gradient_evaluations_to_threshold,final_psi\n"]
    for name, rs in runs.items():
        arm = pick_fastest(name, rs, evals_of, lambda r: 0.0)
        chosen = next((r for r in rs if r.gamma == arm.gamma), None)
        if arm.evals_to_target is None:
            ok = [r for r in rs if r.failure is None]
            chosen = min(ok, key=lambda r: r.trace.best_grad_norm) if ok else None
        psi = core.evaluate_psi(p, chosen.point.x, data, c.eta_tol) if chosen is not None else math.nan
        gamma = _fmt(chosen.gamma) if chosen is not None else NOT_REACHED
        reached = str(arm.evals_to_target) if arm.evals_to_target is not None else NOT_REACHED
        lines.append(f"{name},{gamma},{reached},{_fmt(psi)}\n")
    _write(out / "compare.csv", "".join(lines))
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dro-kit", description="Penalized DRO optimization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one configured optimization")
    r.add_argument("config")
    v = sub.add_parser("verify", help="run certification checks")
    v.add_argument("suite", nargs="?", default="all")
    v.add_argument("--out", default=None, help="directory for key=value reports")
    cp = sub.add_parser("compare", help="grid-tuned race between optimizers")
    cp.add_argument("config")
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "verify":
        return cmd_verify(args.suite, args.out)
    return cmd_compare(args.config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Independent oracles and property checks for the DRO machinery.

Every check returns a :class:`CheckReport` whose ``worst_violation`` is the
largest amount by which the certified inequality fails (so <= tolerance is a
pass) together with the inputs that produced it.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from . import core
from . import divergences as dv
from .core import DroProblem, DualPoint, make_problem
from .datasets import Dataset, rademacher_dataset, synth_imbalanced
from .divergences import DivergenceSpec, Kind
from .errors import ConfigError
from .losses import (FixedLoss, clipped_quadratic_loss, counterexample_loss, feature_bound_for_lipschitz,
                     fixed_losses, logistic_loss)
from .optimizers import (DroObjective, Method, OptimizerConfig, generalized_gradient, momentum_error_decomposition,
                         run)


@dataclass
class CheckReport:
    check_name: str
    instances_tested: int
    worst_violation: float
    witness: Dict[str, object]
    tolerance: float = 0.0
    details: Dict[str, object] = field(default_factory=dict)
    rows: Optional[List[tuple]] = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return bool(self.worst_violation <= self.tolerance)

    def to_text(self) -> str:
        lines = [f"check_name={self.check_name}", f"passed={str(self.passed).lower()}",
                 f"instances_tested={self.instances_tested}",
                 f"worst_violation={self.worst_violation:.17g}", f"tolerance={self.tolerance:.17g}"]
        lines += [f"witness.{k}={_fmt(v)}" for k, v in self.witness.items()]
        lines += [f"{k}={_fmt(v)}" for k, v in self.details.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("instance,violation\n")
        for i, v in self.rows or []:
            buf.write(f"{i},{v:.17g}\n")
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + " ".join(_fmt(float(u)) for u in np.ravel(v)) + "]"
    return str(v)


def _report(name, violations, witnesses, tolerance, details=None, keep_rows=False):
    violations = np.asarray(violations, dtype=float)
    i = int(np.argmax(violations))
    rows = list(enumerate(violations.tolist())) if keep_rows else None
    return CheckReport(name, len(violations), float(violations[i]), witnesses(i), tolerance, details or {}, rows)


# conjugate oracle

ORACLE_KINDS = (
    DivergenceSpec.chi2(),
    DivergenceSpec.kl(),
    DivergenceSpec.cvar(0.5),
    DivergenceSpec.cvar(0.02),
    DivergenceSpec.smoothed_cvar(0.02),
    DivergenceSpec.smoothed_cvar(0.25),
    DivergenceSpec.kl_reg_cvar(0.02),
    DivergenceSpec.kl_reg_cvar(0.5),
    DivergenceSpec.cressie_read(2.0),
    DivergenceSpec.cressie_read(3.0),
)


def _s_grid(div: DivergenceSpec):
    top = div.domain_max
    if dv.is_finite(top):
        # the closure point 1/alpha is where the sup sits for large t
        return np.linspace(0.0, top, 400_001)
    return np.unique(np.concatenate([np.linspace(0.0, 10.0, 100_001), np.geomspace(10.0, 1e3, 100_001)]))


def brute_force_conjugate(div: DivergenceSpec, t, s_grid=None) -> np.ndarray:
    """sup over a dense s-grid of s t - psi(s); uses only psi."""
    s = _s_grid(div) if s_grid is None else s_grid
    ps = dv.psi(div, s)
    finite = np.isfinite(ps)
    s, ps = s[finite], ps[finite]
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([np.max(s * ti - ps) for ti in t])


def check_conjugate_oracle(kinds=ORACLE_KINDS, n_t: int = 200, t_max: float = 5.0, tol: float = 1e-4) -> CheckReport:
    ts = np.linspace(-t_max, t_max, n_t)
    viol, wit = [], []
    for div in kinds:
        gap = np.abs(dv.conj_value(div, ts) - brute_force_conjugate(div, ts))
        j = int(np.argmax(gap))
        viol.append(gap[j])
        wit.append({"divergence": div.label, "t": float(ts[j])})
    return _report("conjugate-oracle", viol, lambda i: wit[i], tol, {"points_per_kind": n_t})


# variance bound

def counterexample_problem(lam: float = 1.0, divergence: Optional[DivergenceSpec] = None):
    data = rademacher_dataset()
    div = DivergenceSpec.chi2() if divergence is None else divergence
    return make_problem(counterexample_loss(), div, lam, data), data


def exact_gradient_variance(p: DroProblem, w, data: Dataset):
    """E |g(xi) - E g|^2 under the empirical law, and the mean gradient."""
    rows = core.per_sample_gradients(p, w, data.features, data.targets)
    mean = data.probs @ rows
    return float(data.probs @ np.sum((rows - mean) ** 2, axis=1)), mean


def check_variance_bound(lam: float = 1.0, half_width: float = 3.0, n_grid: int = 41,
                         slack: float = 1e-9) -> CheckReport:
    p, data = counterexample_problem(lam)
    G, M, sigma2 = p.G, p.divergence.smoothness_M, p.loss.noise_sigma2
    axis = np.linspace(-half_width, half_width, n_grid)
    viol, pts = [], []
    for x in axis:
        for eta in axis:
            w = np.array([x, eta])
            var, mean = exact_gradient_variance(p, w, data)
            bound = 11.0 * G * G * M * M * sigma2 / lam ** 2 + 8.0 * (G * G + float(mean @ mean))
            viol.append(var - bound)
            pts.append((float(x), float(eta)))
    return _report("variance-bound", viol, lambda i: {"x": pts[i][0], "eta": pts[i][1]}, slack,
                   {"G": G, "M": M, "sigma2": sigma2, "lambda": lam})


# generalized smoothness

def _pair(rng, dim, center_box, radius):
    w = rng.uniform(-center_box, center_box, size=dim)
    d = rng.normal(size=dim)
    d *= radius * rng.uniform() / np.linalg.norm(d)
    return w, w + d


def check_generalized_smoothness(p: Optional[DroProblem] = None, data: Optional[Dataset] = None,
                                 n_pairs: int = 1000, radius: float = 0.1, center_box: float = 3.0,
                                 seed: int = 0, slack: float = 1e-8) -> CheckReport:
    """|grad(w) - grad(w')| <= (K0 + K1 |grad(w)|) |w - w'| for random close pairs, both orderings."""
    if p is None:
        p, data = counterexample_problem(1.0)
    c = core.dro_constants(p)
    rng = np.random.default_rng(seed)
    viol, wit = [], []
    for _ in range(n_pairs):
        w, w2 = _pair(rng, p.dim, center_box, radius)
        g = core.full_gradient(p, w, data).as_vector()
        g2 = core.full_gradient(p, w2, data).as_vector()
        lhs = np.linalg.norm(g - g2)
        dist = np.linalg.norm(w - w2)
        v = max(lhs - (c.K0 + c.K1 * np.linalg.norm(g)) * dist, lhs - (c.K0 + c.K1 * np.linalg.norm(g2)) * dist)
        viol.append(v)
        wit.append({"w": w, "w_prime": w2})
    return _report("generalized-smoothness", viol, lambda i: wit[i], slack,
                   {"K0": c.K0, "K1": c.K1, "radius": radius})


# smoothed CVaR constants

def check_smoothed_cvar_constants(alphas=(0.02, 0.25, 0.5), n_draws: int = 1000, seed: int = 0,
                                  slack: float = 1e-12) -> CheckReport:
    """Grid sups of (psi*)' and (psi*)'' and sampled per-sample |grad Lhat(xi)|^2 <= 2 G^2 / alpha^2.

    Violations are reported relative to each bound so the three families are comparable.
    """
    ts = np.linspace(-20.0, 20.0, 400_001)
    rng = np.random.default_rng(seed)
    lp, ldata = _logistic_small(DivergenceSpec.smoothed_cvar(0.5), 0.1)
    viol, wit = [], []
    for a in alphas:
        div = DivergenceSpec.smoothed_cvar(a)
        viol.append(float(np.max(dv.conj_grad(div, ts))) * a - 1.0)
        wit.append({"alpha": a, "quantity": "sup conj_grad"})
        viol.append(float(np.max(dv.conj_second(div, ts))) * 4.0 * a - 1.0)
        wit.append({"alpha": a, "quantity": "sup conj_second"})
        for lam in (1.0, 0.1):
            cp, cdata = counterexample_problem(lam, div)
            p = DroProblem(lp.loss, div, lam)
            for prob, data, scale in ((cp, cdata, 3.0), (p, ldata, 1.0)):
                bound = 2.0 * prob.G ** 2 / a ** 2
                W = rng.normal(scale=scale, size=(n_draws, prob.dim))
                if prob.loss.domain_radius is not None:
                    # G is only certified on the box
                    r = prob.loss.domain_radius
                    W[:, :-1] = rng.uniform(-r, r, size=(n_draws, prob.dim - 1))
                W[:, -1] = rng.normal(scale=3.0, size=n_draws)
                idx = rng.integers(0, len(data), size=n_draws)
                worst, where = -np.inf, None
                for k in range(n_draws):
                    row = core.per_sample_gradients(prob, W[k], data.features[idx[k]:idx[k] + 1],
                                                    data.targets[idx[k]:idx[k] + 1])[0]
                    r = float(row @ row) / bound - 1.0
                    if r > worst:
                        worst, where = r, k
                viol.append(worst)
                wit.append({"alpha": a, "lambda": lam, "loss": prob.loss.name, "w": W[where],
                            "sample": int(idx[where])})
    return _report("smoothed-cvar-constants", viol, lambda i: wit[i], slack, {"draws_per_case": n_draws})


def _logistic_small(div, lam, seed=0, base_n=20):
    data = synth_imbalanced(seed, base_n=base_n, feature_dim=10)
    return make_problem(logistic_loss(10, 10), div, lam, data), data


# CVaR limit

CVAR_LIMIT_LOSSES = (0.4, 1.7, 0.9, 3.2, 2.5)


def cvar_psi_oracle(losses, probs, alpha: float, G: float = 1.0, n_grid: int = 400) -> float:
    """min over eta of E[(l - G eta)_+ / alpha] + G eta: coarse grid, then bounded Brent refinement."""
    losses = np.asarray(losses, dtype=float)
    probs = np.asarray(probs, dtype=float)

    def h(eta):
        return float(probs @ np.maximum(losses - G * eta, 0.0)) / alpha + G * eta

    lo, hi = losses.min() / G, losses.max() / G
    grid = np.linspace(lo, hi, n_grid)
    vals = [h(e) for e in grid]
    j = int(np.argmin(vals))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, n_grid - 1)]
    res = minimize_scalar(h, bracket=None, bounds=(a, b), method="bounded", options={"xatol": 1e-13})
    return min(float(res.fun), float(vals[j]))


def smoothing_gap_bound(lam: float, alpha: float) -> float:
    return lam / alpha * max(-math.log(alpha), -math.log1p(-alpha))


def check_cvar_limit(losses=CVAR_LIMIT_LOSSES, alpha: float = 0.2, lams=(1.0, 0.3, 0.1, 0.03, 0.01),
                     tol: float = 1e-6) -> CheckReport:
    """|Psi_smoothed(lam) - Psi_CVaR| is non-increasing along decreasing lam and within the smoothing bound.

    Also certifies the per-sample bound on a z-grid.
    """
    data = fixed_losses(losses)
    x = np.zeros(1)
    target = cvar_psi_oracle(losses, data.probs, alpha)
    gaps, viol, wit = [], [], []
    for lam in lams:
        p = DroProblem(FixedLoss(), DivergenceSpec.smoothed_cvar(alpha), lam)
        gap = abs(core.evaluate_psi(p, x, data) - target)
        gaps.append(gap)
        viol.append(gap - smoothing_gap_bound(lam, alpha))
        wit.append({"lambda": lam, "gap": gap, "kind": "bound"})
    for prev, cur, lam in zip(gaps, gaps[1:], lams[1:]):
        viol.append(cur - prev)
        wit.append({"lambda": lam, "gap": cur, "kind": "monotone"})
    z = np.linspace(-50.0, 50.0, 200_001)
    div = DivergenceSpec.smoothed_cvar(alpha)
    for lam in lams:
        per = np.abs(lam * dv.conj_value(div, z / lam) - np.maximum(z, 0.0) / alpha)
        viol.append(float(per.max()) - smoothing_gap_bound(lam, alpha))
        wit.append({"lambda": lam, "kind": "per-sample", "z": float(z[int(np.argmax(per))])})
    return _report("cvar-limit", viol, lambda i: wit[i], tol,
                   {"alpha": alpha, "psi_cvar": target, "gaps": gaps})


# finite differences

def fd_gradient(f: Callable[[np.ndarray], float], w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    g = np.empty_like(w)
    for i in range(len(w)):
        h = 1e-6 * (1.0 + abs(w[i]))
        up, dn = w.copy(), w.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (up[i] - dn[i])
    return g


def fd_families():
    """The three problem families used for the gradient check."""
    cp, cdata = counterexample_problem(1.0)
    lp, ldata = _logistic_small(DivergenceSpec.chi2(), 0.1)
    sp, sdata = _logistic_small(DivergenceSpec.smoothed_cvar(0.02), 0.1)
    return [("counterexample/chi2", cp, cdata, 3.0), ("logistic/chi2", lp, ldata, 0.5),
            ("logistic/smoothed_cvar", sp, sdata, 0.5)]


def check_gradient_fd(n_points: int = 50, seed: int = 0, tol: float = 1e-5, families=None) -> CheckReport:
    """max_i |g_i - fd_i| / max(1, |fd_i|) over random points (relative error with a unit floor)."""
    rng = np.random.default_rng(seed)
    viol, wit = [], []
    for name, p, data, scale in families or fd_families():
        for _ in range(n_points):
            w = rng.normal(scale=scale, size=p.dim)
            losses = p.loss.batch_value(w[:-1], data.features, data.targets)
            w[-1] = rng.uniform(losses.min(), losses.max() + 1.0) / p.G
            g = core.full_gradient(p, w, data).as_vector()
            fd = fd_gradient(lambda v: core.full_objective(p, v, data), w)
            err = np.abs(g - fd) / np.maximum(1.0, np.abs(fd))
            viol.append(float(err.max()))
            wit.append({"family": name, "w": w})
    return _report("gradient-fd", viol, lambda i: wit[i], tol, {"points_per_family": n_points})


# momentum identity and descent inequalities

def recorded_momentum_run(iters: int, gamma: float = 0.01, beta: float = 0.9, batch: int = 1, seed: int = 0,
                          lam: float = 1.0, x0: float = 3.0):
    p, data = counterexample_problem(lam)
    cfg = OptimizerConfig(Method.NORMALIZED_MOMENTUM, gamma, beta, batch, iters, seed=seed, record_every=1,
                          record_full=True)
    _, trace = run(DroObjective(p, data), DualPoint([x0], 0.0), cfg)
    return p, data, cfg, trace


def check_momentum_identity(iters: int = 50, seed: int = 0, tol: float = 1e-10) -> CheckReport:
    _, _, _, trace = recorded_momentum_run(iters, seed=seed)
    direct, recon = momentum_error_decomposition(trace)
    gap = np.abs(direct - recon).max(axis=1)
    return _report("momentum-identity", gap, lambda i: {"t": i, "delta": direct[i]}, tol,
                   {"beta": trace.beta, "max_abs_delta": float(np.abs(direct).max())})


def check_descent_inequalities(iters: int = 500, gamma: float = 0.01, seed: int = 0,
                               slack: float = 1e-8) -> CheckReport:
    """Per-step quadratic upper bound and the per-step descent bound with the momentum error."""
    p, data, cfg, trace = recorded_momentum_run(iters, gamma=gamma, seed=seed)
    c = core.dro_constants(p)
    W, F, gF, m = trace.iterates, trace.values, trace.full_grads, trace.momenta
    viol, wit = [], []
    for t in range(iters):
        if trace.records[t + 1].skipped:
            continue
        z = W[t] - W[t + 1]
        gn = float(np.linalg.norm(gF[t]))
        zn = float(np.linalg.norm(z))
        upper = F[t] - float(gF[t] @ z) + 0.5 * (c.K0 + c.K1 * gn) * zn * zn
        viol.append(F[t + 1] - upper)
        wit.append({"t": t, "inequality": "quadratic-upper-bound"})
        delta = float(np.linalg.norm(m[t + 1] - gF[t]))
        lower = (gamma - 0.5 * c.K1 * gamma ** 2) * gn - 0.5 * c.K0 * gamma ** 2 - 2.0 * gamma * delta
        viol.append(lower - (F[t] - F[t + 1]))
        wit.append({"t": t, "inequality": "per-step-descent"})
    return _report("descent-inequalities", viol, lambda i: wit[i], slack,
                   {"K0": c.K0, "K1": c.K1, "gamma": gamma, "steps": iters})


# bounded loss case

def clipped_problem(lam: float = 1.0, clip_B: float = 2.0, G: float = 1.0, n: int = 200, dim: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    R = feature_bound_for_lipschitz(clip_B, G)
    X = rng.normal(size=(n, dim))
    X *= (R * rng.uniform(0.2, 1.0, size=n) / np.linalg.norm(X, axis=1))[:, None]
    X[0] *= R / np.linalg.norm(X[0])  # one row on the bound so R is attained
    y = X @ rng.normal(size=dim) + rng.normal(scale=0.5, size=n)
    data = Dataset(X, y, name="clipped_regression")
    return make_problem(clipped_quadratic_loss(dim, clip_B), DivergenceSpec.chi2(), lam, data), data


def bounded_constants(p: DroProblem):
    """Lambda^2 and the smoothness constant on R^n x [U, V] for a loss bounded by B."""
    G, lam, B, L = p.G, p.lam, p.loss.bound_B, p.loss.smooth_L
    M = p.divergence.smoothness_M
    top = float(dv.conj_grad(p.divergence, dv.crossing_point(p.divergence) + B / lam))
    Lam2 = 2.0 * top ** 2 * G ** 2 + G ** 2
    a = top * L + 2.0 * G * G * M / lam
    b = 2.0 * G * G * M / lam
    return Lam2, math.hypot(a, b)


def check_bounded_case(n_draws: int = 1000, seed: int = 0, slack: float = 1e-9) -> CheckReport:
    from .optimizers import eta_interval

    p, data = clipped_problem()
    Lam2, K = bounded_constants(p)
    box = eta_interval(p, 0.0)
    rng = np.random.default_rng(seed)
    viol, wit = [], []
    for _ in range(n_draws):
        w = np.append(rng.normal(scale=2.0, size=p.loss.dim), rng.uniform(box.U, box.V))
        k = int(rng.integers(0, len(data)))
        row = core.per_sample_gradients(p, w, data.features[k:k + 1], data.targets[k:k + 1])[0]
        viol.append(float(row @ row) - Lam2)
        wit.append({"kind": "gradient-bound", "w": w, "sample": k})
    for _ in range(n_draws):
        w = np.append(rng.normal(scale=2.0, size=p.loss.dim), rng.uniform(box.U, box.V))
        w2 = w + rng.normal(scale=0.1, size=p.dim)
        w2[-1] = min(max(w2[-1], box.U), box.V)
        g = core.full_gradient(p, w, data).as_vector()
        g2 = core.full_gradient(p, w2, data).as_vector()
        viol.append(float(np.linalg.norm(g - g2) - K * np.linalg.norm(w - w2)))
        wit.append({"kind": "smoothness", "w": w, "w_prime": w2})
    gamma = 1e-3
    for _ in range(100):
        w = np.append(rng.normal(size=p.loss.dim), rng.uniform(box.U + 0.25, box.V - 0.25))
        g = core.full_gradient(p, w, data).as_vector()
        if not box.U <= w[-1] - gamma * g[-1] <= box.V:
            continue
        gg = generalized_gradient(g, w, gamma, (box.U, box.V))
        # exact only up to the rounding of (w - (w - gamma g)) / gamma
        viol.append(float(np.max(np.abs(gg - g))) - 1e-12 * (1.0 + float(np.max(np.abs(g)))) / gamma)
        wit.append({"kind": "inactive-projection", "w": w})
    return _report("bounded-case", viol, lambda i: wit[i], slack,
                   {"Lambda2": Lam2, "K": K, "U": box.U, "V": box.V, "G": p.G})


# determinism

def check_determinism(seed: int = 7) -> CheckReport:
    cp, cdata = counterexample_problem(1.0)
    lp, ldata = _logistic_small(DivergenceSpec.chi2(), 0.1)
    cases = [
        ("counterexample/nm", DroObjective(cp, cdata), DualPoint([3.0], 0.0),
         OptimizerConfig(Method.NORMALIZED_MOMENTUM, 0.01, 0.9, 2, 300, seed=seed, record_every=5)),
        ("counterexample/sgd", DroObjective(cp, cdata), DualPoint([3.0], 0.0),
         OptimizerConfig(Method.SGD, 0.003, 0.0, 2, 300, seed=seed, record_every=5)),
        ("logistic/nm", DroObjective(lp, ldata), DualPoint(np.zeros(lp.loss.dim), 0.0),
         OptimizerConfig(Method.NORMALIZED_MOMENTUM, 0.03, 0.9, 16, 200, seed=seed, record_every=10)),
    ]
    viol, wit = [], []
    for name, obj, w0, cfg in cases:
        a = run(obj, w0, cfg)[1].to_csv()
        b = run(obj, w0, cfg)[1].to_csv()
        viol.append(0.0 if a == b else 1.0)
        wit.append({"case": name})
    return _report("determinism", viol, lambda i: wit[i], 0.0)


# racing experiments

def check_fig1_ordering(workers=None) -> CheckReport:
    from .experiments import cvar_race, counterexample_race, logistic_race

    viol, wit = [], []
    ce = counterexample_race(workers=workers)
    nm, sg = ce["normalized_momentum"].evals_to_target, ce["sgd"].evals_to_target
    viol.append(_race_violation(nm, sg))
    wit.append({"race": "counterexample", "nm_evals": nm, "sgd_evals": sg})
    lg, best = logistic_race(workers=workers)
    nm, sg = lg["normalized_momentum"].evals_to_target, lg["sgd"].evals_to_target
    viol.append(_race_violation(nm, sg))
    wit.append({"race": "logistic", "nm_evals": nm, "sgd_evals": sg, "best_psi": best})
    cv = cvar_race(workers=workers)
    smo, plain = cv["smoothed_cvar"].final_value, cv["cvar"].final_value
    viol.append(smo - plain)
    wit.append({"race": "cvar", "smoothed_cvar_final": smo, "cvar_final": plain})
    return _report("fig1-ordering", viol, lambda i: wit[i], 0.0)


def _race_violation(nm, sgd):
    """<= 0 iff normalized momentum reached the target with strictly fewer evaluations."""
    if nm is None:
        return math.inf
    if sgd is None:
        return -1.0
    return float(nm - sgd + 1)


SUITES: Dict[str, Callable[[], CheckReport]] = {
    "conjugate-oracle": check_conjugate_oracle,
    "variance-bound": check_variance_bound,
    "generalized-smoothness": check_generalized_smoothness,
    "smoothed-cvar-constants": check_smoothed_cvar_constants,
    "cvar-limit": check_cvar_limit,
    "gradient-fd": check_gradient_fd,
    "momentum-identity": check_momentum_identity,
    "descent-inequalities": check_descent_inequalities,
    "fig1-ordering": check_fig1_ordering,
    "bounded-case": check_bounded_case,
    "determinism": check_determinism,
}


def run_suite(name: str) -> List[CheckReport]:
    if name == "all":
        return [fn() for fn in SUITES.values()]
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; valid: all, " + ", ".join(SUITES))
    return [SUITES[name]()]

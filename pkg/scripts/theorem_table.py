"""Prescribed hyperparameters across target accuracies and the eps^-4 trend.

The total gradient budget S * T should grow like eps^-4 once the momentum rule
is in its small-eps regime; the fitted log-log slope is printed at the end.
"""
import argparse
import math
import warnings

import numpy as np

from dro_kit.core import DualPoint, dro_constants, make_problem
from dro_kit.datasets import rademacher_dataset
from dro_kit.divergences import DivergenceSpec
from dro_kit.losses import counterexample_loss
from dro_kit.optimizers import theorem_hyperparams


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--gamma2", type=float, default=8.0)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025, 0.0125])
    args = ap.parse_args()
    data = rademacher_dataset()
    p = make_problem(counterexample_loss(), DivergenceSpec.chi2(), args.lam, data)
    c = dro_constants(p, Gamma2=args.gamma2, w0=DualPoint([3.0], 0.0), data=data)
    print(f"K0={c.K0:.4g} K1={c.K1:.4g} Gamma2={c.Gamma2:g} Lambda2={c.Lambda2:.4g} Delta={c.Delta:.4g}")
    print("eps,S,beta,gamma,T,budget")
    budgets = []
    for eps in args.eps:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cfg = theorem_hyperparams(c, eps)
        budget = cfg.batch_S * cfg.iters_T
        budgets.append(budget)
        print(f"{eps:g},{cfg.batch_S},{cfg.momentum_beta:.10g},{cfg.step_gamma:.4g},{cfg.iters_T},{budget}")
    slope = np.polyfit(np.log(args.eps), np.log(budgets), 1)[0]
    print(f"log-log slope of budget vs eps: {slope:.3f} (eps^-4 trend means -4)")


if __name__ == "__main__":
    main()

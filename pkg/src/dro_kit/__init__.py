"""Penalized psi-divergence DRO: conjugates, the rescaled dual objective, optimizers and checks."""
from .core import DroProblem, DualPoint, evaluate_psi, full_gradient, full_objective, make_problem, solve_eta
from .datasets import Dataset, Sample, load_csv, rademacher_dataset, save_csv, synth_imbalanced
from .divergences import INFINITE, DivergenceSpec, Kind
from .optimizers import Method, OptimizerConfig, TrainingTrace, run

__version__ = "0.1.0"

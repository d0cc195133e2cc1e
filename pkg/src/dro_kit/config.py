"""Experiment configs: a line-based ``section.key = value`` format.

Lines starting with ``#`` are comments. Keys are validated against the schema
below so that typos fail loudly instead of silently taking a default.
Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .datasets import Dataset, load_csv, rademacher_dataset, synth_imbalanced
from .divergences import DivergenceSpec, Kind
from .errors import ConfigError, ParseError
from .losses import clipped_quadratic_loss, counterexample_loss, fixed_losses, logistic_loss, FixedLoss

SCHEMA = {
    "problem": {"loss", "divergence", "lambda", "alpha", "k", "radius", "clip_B", "num_classes", "rescale_G"},
    "data": {"source", "path", "seed", "base_n", "feature_dim", "separation", "n_pairs", "values"},
    "optimizer": {"method", "step_gamma", "momentum_beta", "batch_S", "iters_T", "epochs", "target_eps", "seed",
                  "record_every", "eta_box", "x0", "eta0", "gamma2", "use_all"},
    "evaluation": {"psi_every", "eta_tol"},
    "output": {"dir"},
    "compare": {"methods", "grid", "metric", "threshold", "rel_gap"},
}


def parse_lines(text: str) -> Dict[str, Dict[str, str]]:
    out: Dict[str, Dict[str, str]] = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'section.key = value'", line=lineno)
        lhs, value = line.split("=", 1)
        lhs = lhs.strip()
        if "." not in lhs:
            raise ParseError(f"key {lhs!r} has no section", line=lineno)
        section, key = lhs.split(".", 1)
        if section not in SCHEMA:
            raise ParseError(f"unknown section {section!r}", line=lineno)
        if key not in SCHEMA[section]:
            raise ParseError(f"unknown key {section}.{key}", line=lineno)
        if key in out.setdefault(section, {}):
            raise ParseError(f"duplicate key {section}.{key}", line=lineno)
        out[section][key] = value.split("#", 1)[0].strip()
    return out


def _float(v, name):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {v!r}") from None


def _int(v, name):
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {v!r}") from None


def _floats(v, name):
    return [_float(u.strip(), name) for u in v.split(",") if u.strip()]


def _bool(v, name):
    if v.lower() in ("true", "yes", "1"):
        return True
    if v.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"{name} must be true or false, got {v!r}")


@dataclass
class ExperimentConfig:
    loss: str = "counterexample"
    divergence: str = "chi2"
    lam: float = 0.1
    alpha: Optional[float] = None
    k: Optional[float] = None
    radius: float = 10.0
    clip_B: Optional[float] = None
    num_classes: Optional[int] = None
    rescale_G: Optional[float] = None
    data_source: str = "rademacher"
    data_path: Optional[Path] = None
    data_seed: int = 0
    base_n: int = 500
    feature_dim: int = 10
    separation: float = 3.0
    n_pairs: int = 1
    values: List[float] = field(default_factory=list)
    method: str = "normalized_momentum"
    step_gamma: Optional[float] = None
    momentum_beta: float = 0.9
    batch_S: int = 1
    iters_T: Optional[int] = None
    epochs: Optional[float] = None
    target_eps: float = 0.1
    seed: int = 0
    record_every: int = 10
    eta_box: Optional[Tuple[float, float]] = None
    x0: Optional[List[float]] = None
    eta0: float = 0.0
    gamma2: float = 8.0
    use_all: bool = False
    psi_every: float = 1.0
    eta_tol: Optional[float] = None
    output_dir: Path = Path("out")
    methods: List[str] = field(default_factory=list)
    grid: List[float] = field(default_factory=list)
    metric: str = "grad_norm"
    threshold: float = 0.1
    rel_gap: float = 0.05

    @property
    def theorem_auto(self) -> bool:
        return self.method == "theorem-auto"

    def divergence_spec(self) -> DivergenceSpec:
        try:
            kind = Kind(self.divergence)
        except ValueError:
            raise ConfigError(f"unknown divergence {self.divergence!r}; valid: "
                              + ", ".join(k.value for k in Kind)) from None
        try:
            return DivergenceSpec(kind, alpha=self.alpha, k=self.k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dataset(self) -> Dataset:
        src = self.data_source
        if src == "rademacher":
            return rademacher_dataset(self.n_pairs)
        if src == "synth_imbalanced":
            return synth_imbalanced(self.data_seed, base_n=self.base_n, feature_dim=self.feature_dim,
                                    separation=self.separation)
        if src == "fixed":
            if not self.values:
                raise ConfigError("data.values is required for data.source = fixed")
            return fixed_losses(self.values)
        if src == "csv":
            if self.data_path is None:
                raise ConfigError("data.path is required for data.source = csv")
            if not self.data_path.is_file():
                raise ConfigError(f"data file not found: {self.data_path}")
            return load_csv(self.data_path)
        raise ConfigError(f"unknown data.source {src!r}; valid: rademacher, synth_imbalanced, fixed, csv")

    def loss_model(self, data: Dataset):
        name = self.loss
        if name == "counterexample":
            return counterexample_loss(self.radius)
        if name == "logistic":
            n_cls = self.num_classes or int(data.targets.max()) + 1
            return logistic_loss(n_cls, data.dim)
        if name == "clipped_quadratic":
            if self.clip_B is None:
                raise ConfigError("problem.clip_B is required for the clipped_quadratic loss")
            return clipped_quadratic_loss(data.dim, self.clip_B)
        if name == "fixed":
            return FixedLoss(data.dim)
        raise ConfigError(f"unknown loss {name!r}; valid: counterexample, logistic, clipped_quadratic, fixed")


def from_text(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    raw = parse_lines(text)
    c = ExperimentConfig()
    pr, da, op = raw.get("problem", {}), raw.get("data", {}), raw.get("optimizer", {})
    ev, ou, co = raw.get("evaluation", {}), raw.get("output", {}), raw.get("compare", {})
    c.loss = pr.get("loss", c.loss)
    c.divergence = pr.get("divergence", c.divergence)
    if "lambda" in pr:
        c.lam = _float(pr["lambda"], "problem.lambda")
    if "alpha" in pr:
        c.alpha = _float(pr["alpha"], "problem.alpha")
    if "k" in pr:
        c.k = _float(pr["k"], "problem.k")
    if "radius" in pr:
        c.radius = _float(pr["radius"], "problem.radius")
    if "clip_B" in pr:
        c.clip_B = _float(pr["clip_B"], "problem.clip_B")
    if "num_classes" in pr:
        c.num_classes = _int(pr["num_classes"], "problem.num_classes")
    if "rescale_G" in pr:
        c.rescale_G = _float(pr["rescale_G"], "problem.rescale_G")
    c.data_source = da.get("source", c.data_source)
    if "path" in da:
        c.data_path = (base_dir / da["path"]).resolve()
    for key, attr in (("seed", "data_seed"), ("base_n", "base_n"), ("feature_dim", "feature_dim"),
                      ("n_pairs", "n_pairs")):
        if key in da:
            setattr(c, attr, _int(da[key], f"data.{key}"))
    if "separation" in da:
        c.separation = _float(da["separation"], "data.separation")
    if "values" in da:
        c.values = _floats(da["values"], "data.values")
    c.method = op.get("method", c.method)
    if "step_gamma" in op:
        c.step_gamma = _float(op["step_gamma"], "optimizer.step_gamma")
    for key in ("momentum_beta", "target_eps", "eta0", "gamma2", "epochs"):
        if key in op:
            setattr(c, key, _float(op[key], f"optimizer.{key}"))
    for key in ("batch_S", "iters_T", "seed", "record_every"):
        if key in op:
            setattr(c, key, _int(op[key], f"optimizer.{key}"))
    if "eta_box" in op:
        box = _floats(op["eta_box"], "optimizer.eta_box")
        if len(box) != 2:
            raise ConfigError("optimizer.eta_box needs two numbers U, V")
        c.eta_box = (box[0], box[1])
    if "x0" in op:
        c.x0 = _floats(op["x0"], "optimizer.x0")
    if "use_all" in op:
        c.use_all = _bool(op["use_all"], "optimizer.use_all")
    if "psi_every" in ev:
        c.psi_every = _float(ev["psi_every"], "evaluation.psi_every")
    if "eta_tol" in ev:
        c.eta_tol = _float(ev["eta_tol"], "evaluation.eta_tol")
    if "dir" in ou:
        c.output_dir = (base_dir / ou["dir"]).resolve()
    else:
        c.output_dir = (base_dir / c.output_dir).resolve()
    if "methods" in co:
        c.methods = [m.strip() for m in co["methods"].split(",") if m.strip()]
    if "grid" in co:
        c.grid = _floats(co["grid"], "compare.grid")
    c.metric = co.get("metric", c.metric)
    if c.metric not in ("grad_norm", "psi_rel"):
        raise ConfigError(f"compare.metric must be grad_norm or psi_rel, got {c.metric!r}")
    if "threshold" in co:
        c.threshold = _float(co["threshold"], "compare.threshold")
    if "rel_gap" in co:
        c.rel_gap = _float(co["rel_gap"], "compare.rel_gap")
    _validate(c)
    return c


def _validate(c: ExperimentConfig):
    valid = ("normalized_momentum", "sgd", "rspg", "theorem-auto")
    if c.method not in valid:
        raise ConfigError(f"unknown optimizer.method {c.method!r}; valid: " + ", ".join(valid))
    for m in c.methods:
        if m not in valid[:3]:
            raise ConfigError(f"unknown method {m!r} in compare.methods")
    if not c.lam > 0:
        raise ConfigError("problem.lambda must be positive")
    if c.batch_S < 1:
        raise ConfigError("optimizer.batch_S must be positive")
    if not c.psi_every > 0:
        raise ConfigError("evaluation.psi_every must be positive")
    if c.iters_T is not None and c.epochs is not None:
        raise ConfigError("set at most one of optimizer.iters_T and optimizer.epochs")
    if c.data_source == "csv" and c.data_path is not None and not c.data_path.is_file():
        raise ConfigError(f"data file not found: {c.data_path}")


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{path} is not UTF-8") from None
    return from_text(text, path.parent)


def epoch_iters(n: int, batch: int) -> int:
    return math.ceil(n / batch)

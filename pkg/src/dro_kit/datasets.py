"""Samples, datasets, the synthetic imbalanced generator and the CSV format."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .errors import BadRatio, DimensionMismatch, ParseError

# per-class sampling ratios of the imbalanced ten-class construction
IMBALANCE_RATIOS = (0.804, 0.543, 0.997, 0.593, 0.390, 0.285, 0.959, 0.806, 0.967, 0.660)


@dataclass(frozen=True)
class Sample:
    features: tuple
    target: float
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in np.ravel(self.features)))
        if not all(math.isfinite(v) for v in self.features):
            raise ValueError("sample features must be finite")
        if not self.weight > 0:
            raise ValueError("sample weight must be positive")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable empirical distribution; row i has probability weight_i / sum(weight)."""

    features: np.ndarray
    targets: np.ndarray
    weights: np.ndarray = None
    name: str = "data"
    _probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.targets, dtype=float).reshape(-1)
        w = np.ones(len(y)) if self.weights is None else np.array(self.weights, dtype=float).reshape(-1)
        if len(y) == 0:
            raise ValueError("dataset must be nonempty")
        if X.shape[0] != len(y) or len(w) != len(y):
            raise DimensionMismatch("features, targets and weights disagree in length")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        for arr in (X, y, w):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "weights", w)
        probs = w / w.sum()
        probs.setflags(write=False)
        object.__setattr__(self, "_probs", probs)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], name: str = "data") -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ValueError("dataset must be nonempty")
        dims = {len(s.features) for s in samples}
        if len(dims) != 1:
            raise DimensionMismatch(f"samples have differing feature dimensions {sorted(dims)}")
        X = np.array([s.features for s in samples], dtype=float)
        return cls(X, [s.target for s in samples], [s.weight for s in samples], name=name)

    def __len__(self):
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    @property
    def samples(self) -> List[Sample]:
        return [Sample(tuple(f), t, w) for f, t, w in zip(self.features, self.targets, self.weights)]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        # the name is a label, not part of the distribution
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.weights, other.weights)
        )

    def max_feature_norm(self, augment_bias: bool = False) -> float:
        sq = np.einsum("ij,ij->i", self.features, self.features)
        if augment_bias:
            sq = sq + 1.0
        return float(np.sqrt(sq.max()))


def rademacher_dataset(n_pairs: int = 1) -> Dataset:
    """Exact two-point noise xi in {-1, +1} with equal mass (counter-example data)."""
    targets = np.tile([-1.0, 1.0], n_pairs)
    return Dataset(np.zeros((len(targets), 1)), targets, name="rademacher")


def class_counts(ratios: Iterable[float], base_n: int) -> List[int]:
    # half-up on the decimal value: 0.285 * 500 = 142.5 -> 143
    return [int((Decimal(repr(float(r))) * base_n).quantize(Decimal(1), rounding=ROUND_HALF_UP)) for r in ratios]


def synth_imbalanced(
    seed: int,
    per_class_ratios: Sequence[float] = IMBALANCE_RATIOS,
    base_n: int = 500,
    feature_dim: int = 10,
    separation: float = 3.0,
    name: str = "synth_imbalanced",
) -> Dataset:
    """Gaussian class blobs; class i gets round(ratio_i * base_n) samples."""
    ratios = [float(r) for r in per_class_ratios]
    bad = [r for r in ratios if not 0.0 < r <= 1.0]
    if bad:
        raise BadRatio(f"ratios must lie in (0, 1], got {bad}")
    if base_n < 1:
        raise ValueError("base_n must be positive")
    rng = np.random.default_rng(seed)
    # expected distance between two class means is about separation * sqrt(2)
    means = rng.normal(scale=separation / math.sqrt(feature_dim), size=(len(ratios), feature_dim))
    blocks, labels = [], []
    for cls, n in enumerate(class_counts(ratios, base_n)):
        blocks.append(means[cls] + rng.normal(size=(n, feature_dim)))
        labels.append(np.full(n, float(cls)))
    return Dataset(np.vstack(blocks), np.concatenate(labels), name=name)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(dataset: Dataset, path) -> None:
    buf = io.StringIO()
    buf.write(f"# dim={dataset.dim}\n")
    for f, t, w in zip(dataset.features, dataset.targets, dataset.weights):
        buf.write(",".join([_fmt(v) for v in f] + [_fmt(t), _fmt(w)]) + "\n")
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def load_csv(path, name: str = None) -> Dataset:
    path = Path(path)
    text = path.read_bytes().decode("utf-8")
    lines = text.split("\n")
    if not lines or not lines[0].startswith("# dim="):
        raise ParseError("expected header '# dim=<d>'", line=1)
    try:
        dim = int(lines[0][len("# dim="):].strip())
    except ValueError:
        raise ParseError("bad dimension in header", line=1) from None
    if dim < 1:
        raise ParseError("dimension must be positive", line=1)
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if raw.strip() == "":
            continue
        parts = raw.split(",")
        if len(parts) != dim + 2:
            raise DimensionMismatch(f"line {lineno}: expected {dim + 2} fields, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ParseError(f"non-numeric field in {raw!r}", line=lineno) from None
    if not rows:
        raise ParseError("no samples")
    arr = np.array(rows, dtype=float)
    try:
        return Dataset(arr[:, :dim], arr[:, dim], arr[:, dim + 1], name=name or path.stem)
    except ValueError as exc:
        raise ParseError(str(exc)) from None

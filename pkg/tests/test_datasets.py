import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dro_kit.datasets import (IMBALANCE_RATIOS, Dataset, Sample, class_counts, load_csv, rademacher_dataset,
                              save_csv, synth_imbalanced)
from dro_kit.errors import BadRatio, DimensionMismatch, ParseError


def test_class_counts_round_half_up():
    counts = class_counts(IMBALANCE_RATIOS, 500)
    assert counts == [402, 272, 499, 297, 195, 143, 480, 403, 484, 330]
    assert counts[5] == 143  # 0.285 * 500 = 142.5


def test_synth_imbalanced_shape_and_labels():
    d = synth_imbalanced(0)
    assert len(d) == sum(class_counts(IMBALANCE_RATIOS, 500))
    assert d.dim == 10
    assert np.bincount(d.targets.astype(int)).tolist() == class_counts(IMBALANCE_RATIOS, 500)


def test_synth_imbalanced_deterministic():
    assert synth_imbalanced(4, base_n=50) == synth_imbalanced(4, base_n=50)
    assert synth_imbalanced(4, base_n=50) != synth_imbalanced(5, base_n=50)


def test_bad_ratio():
    with pytest.raises(BadRatio):
        synth_imbalanced(0, per_class_ratios=(0.5, 1.5))
    with pytest.raises(BadRatio):
        synth_imbalanced(0, per_class_ratios=(0.0, 0.5))


def test_rademacher_dataset():
    d = rademacher_dataset()
    assert d.targets.tolist() == [-1.0, 1.0]
    assert np.allclose(d.probs, 0.5)


def test_dataset_is_read_only():
    d = rademacher_dataset()
    with pytest.raises(ValueError):
        d.targets[0] = 3.0


def test_weights_define_probs():
    d = Dataset(np.zeros((3, 1)), [1, 2, 3], [1, 1, 2])
    assert d.probs.tolist() == [0.25, 0.25, 0.5]
    assert not d.uniform
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), [1, 2], [1, 0])


def test_from_samples_dimension_check():
    with pytest.raises(DimensionMismatch):
        Dataset.from_samples([Sample((1.0,), 0.0), Sample((1.0, 2.0), 0.0)])


def test_csv_round_trip(tmp_path):
    d = synth_imbalanced(1, base_n=20, feature_dim=3)
    path = tmp_path / "d.csv"
    save_csv(d, path)
    back = load_csv(path)
    assert back == d
    text = path.read_bytes().decode()
    assert text.startswith("# dim=3\n") and "\r" not in text


def test_csv_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("# dim=2\n")
    with pytest.raises(ParseError, match="no samples"):
        load_csv(p)
    p.write_text("# dim=2\n1,2,3,1\n1,x,3,1\n")
    with pytest.raises(ParseError, match="line 3"):
        load_csv(p)
    p.write_text("# dim=2\n1,2,3\n")
    with pytest.raises(DimensionMismatch):
        load_csv(p)
    p.write_text("dim=2\n1,2,3,1\n")
    with pytest.raises(ParseError):
        load_csv(p)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(finite, finite, st.floats(0.01, 100)), min_size=1, max_size=20))
def test_csv_round_trip_property(tmp_path_factory, rows):
    d = Dataset(np.array([[r[0]] for r in rows]), [r[1] for r in rows], [r[2] for r in rows])
    path = tmp_path_factory.mktemp("csv") / "d.csv"
    save_csv(d, path)
    assert load_csv(path) == d

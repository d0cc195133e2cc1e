import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dro_kit import divergences as dv
from dro_kit.divergences import INFINITE, DivergenceSpec, Kind
from dro_kit.errors import NotAbsolutelyContinuous, NotTwiceDifferentiable

ALL = [
    DivergenceSpec.chi2(),
    DivergenceSpec.kl(),
    DivergenceSpec.cvar(0.3),
    DivergenceSpec.smoothed_cvar(0.02),
    DivergenceSpec.smoothed_cvar(0.5),
    DivergenceSpec.kl_reg_cvar(0.1),
    DivergenceSpec.cressie_read(2.0),
    DivergenceSpec.cressie_read(1.5),
]
SMOOTH = [d for d in ALL if d.kind is not Kind.CVAR]


def test_conj_value_examples():
    assert dv.conj_value(DivergenceSpec.chi2(), 0.0) == 0.0
    assert dv.conj_value(DivergenceSpec.kl(), 0.0) == 0.0
    assert dv.conj_value(DivergenceSpec.cvar(0.5), -1.0) == 0.0
    # brute force sup_s 2 s - (s - 1)^2 is 3, attained at s = 2
    s = np.linspace(0, 100, 1_000_001)
    assert np.max(2 * s - (s - 1) ** 2) == pytest.approx(3.0, abs=1e-9)
    assert dv.conj_value(DivergenceSpec.chi2(), 2.0) == pytest.approx(3.0, abs=1e-12)


def test_conj_grad_examples():
    assert dv.conj_grad(DivergenceSpec.smoothed_cvar(0.02), 0.0) == pytest.approx(1.0, abs=1e-15)
    assert dv.conj_grad(DivergenceSpec.chi2(), 0.0) == 1.0
    kl = DivergenceSpec.kl()
    h = 1e-6
    fd = (dv.conj_value(kl, 1 + h) - dv.conj_value(kl, 1 - h)) / (2 * h)
    assert fd == pytest.approx(math.e, rel=1e-8)
    assert dv.conj_grad(kl, 1.0) == pytest.approx(fd, rel=1e-8)


def test_cvar_kink_takes_left_limit():
    d = DivergenceSpec.cvar(0.25)
    assert dv.conj_grad(d, 0.0) == 0.0
    assert dv.conj_grad(d, 1e-300) == 4.0
    with pytest.raises(NotTwiceDifferentiable):
        dv.conj_second(d, 0.0)
    assert dv.conj_second(d, 0.5) == 0.0


def test_conj_second_examples():
    a = 0.02
    d = DivergenceSpec.smoothed_cvar(a)
    assert dv.conj_second(d, 0.0) == pytest.approx(0.98, abs=1e-14)
    h = 1e-6
    fd = (dv.conj_grad(d, h) - dv.conj_grad(d, -h)) / (2 * h)
    assert fd == pytest.approx(0.98, rel=1e-7)
    assert dv.conj_second(DivergenceSpec.chi2(), 5.0) == 0.5
    t = np.linspace(-30, 30, 10001)
    assert dv.conj_second(DivergenceSpec.smoothed_cvar(0.25), t).max() <= 1.0 + 1e-12


def test_kl_reg_cvar_knot_is_not_twice_differentiable():
    d = DivergenceSpec.kl_reg_cvar(0.1)
    with pytest.raises(NotTwiceDifferentiable):
        dv.conj_second(d, -math.log(0.1))


@pytest.mark.parametrize("div", ALL, ids=lambda d: d.label)
def test_crossing_point_is_zero(div):
    c = dv.crossing_point(div)
    assert c == 0.0
    if div.kind is not Kind.CVAR:
        assert abs(dv.conj_grad(div, c) - 1.0) <= 1e-10


def test_crossing_point_oracle_bisection():
    # independent bisection for chi^2 on [-10, 10]
    lo, hi = -10.0, 10.0
    for _ in range(100):
        mid = (lo + hi) / 2
        if 0.5 * max(mid + 2, 0) - 1 < 0:
            lo = mid
        else:
            hi = mid
    assert abs(lo) < 1e-12
    assert dv.crossing_point(DivergenceSpec.chi2()) == pytest.approx(lo, abs=1e-12)


def test_constants():
    assert DivergenceSpec.chi2().smoothness_M == 0.5
    assert DivergenceSpec.kl().smoothness_M is INFINITE
    assert DivergenceSpec.smoothed_cvar(0.25).smoothness_M == 1.0
    assert DivergenceSpec.smoothed_cvar(0.02).conj_lipschitz == pytest.approx(50.0)
    assert DivergenceSpec.kl_reg_cvar(0.1).smoothness_M == pytest.approx(10.0)
    assert DivergenceSpec.cressie_read(2.0).smoothness_M == 1.0
    assert DivergenceSpec.cressie_read(3.0).smoothness_M is INFINITE
    assert repr(INFINITE) == "infinite"
    with pytest.raises(TypeError):
        INFINITE + 1


@pytest.mark.parametrize("kwargs", [
    dict(kind=Kind.CVAR), dict(kind=Kind.CVAR, alpha=1.0), dict(kind=Kind.CHI2, alpha=0.5),
    dict(kind=Kind.CRESSIE_READ, k=0.5), dict(kind=Kind.CRESSIE_READ, k=1.0), dict(kind=Kind.KL, k=2.0),
])
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(ValueError):
        DivergenceSpec(**kwargs)


def test_divergence_value_examples():
    chi2 = DivergenceSpec.chi2()
    assert dv.divergence_value(chi2, [0.5, 0.5], [0.5, 0.5]) == 0.0
    # direct summation with psi(s) = (s - 1)^2
    expected = 0.5 * (1.5 - 1) ** 2 + 0.5 * (0.5 - 1) ** 2
    assert dv.divergence_value(chi2, [0.75, 0.25], [0.5, 0.5]) == pytest.approx(expected)
    assert expected == 0.25
    cv = DivergenceSpec.cvar(0.4)
    assert dv.divergence_value(cv, [1.0, 0.0], [0.3, 0.7]) is INFINITE
    assert dv.divergence_value(cv, [1.0, 0.0], [0.5, 0.5]) == 0.0
    with pytest.raises(NotAbsolutelyContinuous):
        dv.divergence_value(chi2, [0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError):
        dv.divergence_value(chi2, [0.5, 0.6], [0.5, 0.5])


@pytest.mark.parametrize("div", ALL, ids=lambda d: d.label)
def test_conj_grad_monotone_and_nonnegative(div):
    t = np.linspace(-8, 8, 4001)
    g = dv.conj_grad(div, t)
    assert np.all(g >= 0)
    assert np.all(np.diff(g) >= -1e-15)


@pytest.mark.parametrize("div", SMOOTH, ids=lambda d: d.label)
def test_derivative_consistency(div):
    rng = np.random.default_rng(3)
    for t in rng.uniform(-4, 4, size=100):
        h = 1e-5 * (1 + abs(t))
        fd = (dv.conj_value(div, t + h) - dv.conj_value(div, t - h)) / (2 * h)
        g = dv.conj_grad(div, t)
        assert abs(g - fd) <= 1e-6 * max(1.0, abs(g))


@pytest.mark.parametrize("div", ALL, ids=lambda d: d.label)
def test_conjugate_fenchel_young(div):
    # psi*(t) >= s t - psi(s) for every s in the domain
    s = np.linspace(0, 8, 801)
    ps = dv.psi(div, s)
    ok = np.isfinite(ps)
    for t in np.linspace(-3, 3, 31):
        assert np.all(dv.conj_value(div, t) >= s[ok] * t - ps[ok] - 1e-12)


def test_psi_is_zero_at_one_and_infinite_off_domain():
    for div in ALL:
        assert dv.psi(div, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert dv.psi(div, -0.1) == np.inf
    assert dv.psi(DivergenceSpec.cvar(0.5), 2.5) == np.inf


weights = st.lists(st.floats(0.05, 1.0), min_size=2, max_size=6)


@given(weights, weights)
def test_divergence_value_nonnegative_and_zero_iff_equal(a, b):
    n = min(len(a), len(b))
    p = np.array(a[:n]) / sum(a[:n])
    q = np.array(b[:n]) / sum(b[:n])
    for div in (DivergenceSpec.chi2(), DivergenceSpec.kl(), DivergenceSpec.smoothed_cvar(0.2),
                DivergenceSpec.cressie_read(2.0)):
        v = dv.divergence_value(div, q, p)
        if v is INFINITE:
            continue
        assert v >= -1e-12
        assert dv.divergence_value(div, p, p) == pytest.approx(0.0, abs=1e-12)
        if np.max(np.abs(q - p)) > 1e-3:
            assert v > 0


@given(st.floats(-30, 30), st.floats(0.01, 0.99))
def test_smoothed_cvar_bounds_hold_everywhere(t, a):
    d = DivergenceSpec.smoothed_cvar(a)
    assert 0 <= dv.conj_grad(d, t) <= 1 / a + 1e-12
    assert 0 <= dv.conj_second(d, t) <= 1 / (4 * a) + 1e-12

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdelab.spectral import (
    EigenSystem,
    SpectralField,
    coercivity_margin,
    fractional_laplacian_system,
    semigroup_apply,
)

RNG = np.random.default_rng(20240811)


def test_semigroup_identity_at_zero():
    sys = EigenSystem(zetas=np.array([0.3, 1.7, 5.0]))
    u = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(semigroup_apply(sys, 0.0, u), u)


def test_semigroup_powers_of_two():
    sys = EigenSystem(zetas=np.array([1.0, 2.0]))
    out = semigroup_apply(sys, math.log(2.0), np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [0.5, 0.25], rtol=1e-14)


def test_semigroup_scalar_oracle():
    # 3.0 * exp(-0.7 * 1.3), frozen from a 40-digit evaluation
    sys = EigenSystem(zetas=np.array([0.7]))
    out = semigroup_apply(sys, 1.3, np.array([3.0]))
    np.testing.assert_allclose(out, [1.207572672100907924010696], rtol=1e-15)


def test_semigroup_rejects_negative_time():
    sys = EigenSystem(zetas=np.array([1.0]))
    with pytest.raises(ValueError):
        semigroup_apply(sys, -0.1, np.array([1.0]))


def test_semigroup_property_and_contraction():
    sys = EigenSystem(zetas=np.array([0.0, 0.9, 3.2, 11.0]))
    for _ in range(50):
        u = RNG.standard_normal(4)
        s, t = RNG.uniform(0, 2, size=2)
        two_step = semigroup_apply(sys, s, semigroup_apply(sys, t, u))
        one_step = semigroup_apply(sys, s + t, u)
        np.testing.assert_allclose(two_step, one_step, rtol=1e-13, atol=1e-15)
        assert np.linalg.norm(one_step) <= np.linalg.norm(u) + 1e-15
    # H-norm nonincreasing in t
    u = RNG.standard_normal(4)
    norms = [np.linalg.norm(semigroup_apply(sys, t, u)) for t in np.linspace(0, 3, 40)]
    assert np.all(np.diff(norms) <= 1e-15)


def test_fractional_laplacian_classical():
    sys = fractional_laplacian_system(order=2.0, n_modes=3, domain_length=math.pi)
    np.testing.assert_allclose(sys.zetas, [1.0, 4.0, 9.0], rtol=1e-14)


def test_fractional_laplacian_square_root():
    sys = fractional_laplacian_system(order=1.0, n_modes=3, domain_length=math.pi)
    np.testing.assert_allclose(sys.zetas, [1.0, 2.0, 3.0], rtol=1e-14)


def test_fractional_laplacian_quarter_power_oracle():
    # ((k pi / 2)^2)^(1/4), frozen from a 40-digit evaluation
    sys = fractional_laplacian_system(order=0.5, n_modes=2, domain_length=2.0)
    np.testing.assert_allclose(
        sys.zetas,
        [1.253314137315500251207883, 1.772453850905516027298167],
        rtol=1e-15,
    )


def test_fractional_laplacian_rejects_bad_order():
    for order in (0.0, -1.0, 2.5):
        with pytest.raises(ValueError):
            fractional_laplacian_system(order=order, n_modes=2)


def test_coercivity_margin_zero_field():
    sys = EigenSystem(zetas=np.array([1.0, 2.0]))
    assert coercivity_margin(sys, np.zeros(2)) == 0.0


def test_coercivity_margin_arithmetic():
    sys = EigenSystem(zetas=np.array([1.0]), lambda0=1.0, alpha=1.0)
    # 2*1*1 + 1*1 - 1*(1+1)*1 = 1
    assert coercivity_margin(sys, np.array([1.0])) == pytest.approx(1.0)


def test_coercivity_margin_property_sweep():
    for lam in (0.5, 1.0, 3.0):
        sys = EigenSystem(zetas=np.array([0.0, 0.4, 2.0, 9.0, 50.0]), lambda0=lam)
        assert sys.alpha == pytest.approx(min(2.0, lam))
        for _ in range(1000):
            u = RNG.standard_normal(5) * RNG.choice([1e-3, 1.0, 1e3])
            assert coercivity_margin(sys, u) >= -1e-9


@settings(max_examples=200, deadline=None)
@given(
    coeffs=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8),
    lam=st.floats(0.01, 5.0),
)
def test_coercivity_margin_nonnegative_hypothesis(coeffs, lam):
    k = len(coeffs)
    zetas = np.sort(np.abs(np.cumsum(np.ones(k))))
    sys = EigenSystem(zetas=zetas, lambda0=lam)
    assert coercivity_margin(sys, np.array(coeffs)) >= -1e-9 * (1 + np.sum(np.array(coeffs) ** 2))


def test_field_norm_ordering():
    sys = EigenSystem(zetas=np.array([0.5, 2.0, 7.0]))
    field = SpectralField(np.array([0.3, -1.1, 2.0]))
    assert field.h_norm() <= field.v_norm(sys)
    np.testing.assert_allclose(field.h_norm(), np.linalg.norm(field.coeffs))


def test_eigen_system_validation():
    with pytest.raises(ValueError):
        EigenSystem(zetas=np.array([2.0, 1.0]))
    with pytest.raises(ValueError):
        EigenSystem(zetas=np.array([-1.0, 1.0]))
    with pytest.raises(ValueError):
        EigenSystem(zetas=np.array([1.0]), lambda0=0.0)
    with pytest.raises(ValueError):
        EigenSystem(zetas=np.array([1.0]), lambda0=1.0, alpha=1.5)


def test_round_trip_dict():
    sys = EigenSystem(zetas=np.array([1.0, 4.0]), lambda0=2.0)
    back = EigenSystem.from_dict(sys.to_dict())
    assert np.array_equal(back.zetas, sys.zetas)
    assert back.lambda0 == sys.lambda0
    assert back.alpha == sys.alpha

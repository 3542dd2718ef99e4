import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piml_uq.physics import (AeroConstants, AeroPerturbation, AeroState, AffinePhysics,
                             FixedWingForces, GramacyLeePartial, PhysicsDomainError,
                             aero_pipeline, gl_full, gl_ideal_transfer, gl_partial,
                             gl_partial_derivative, physics_from_dict)

from _oracles import aero_batch, central_difference


def test_gl_partial_against_mpmath():
    mpmath.mp.dps = 40
    t = mpmath.mpf("1.23")
    ref = mpmath.sin(10 * mpmath.pi * t) / (2 * t) + (t - 1) ** 4
    assert gl_partial(1.23) == pytest.approx(float(ref), rel=1e-13)


def test_gl_partial_singularity():
    with pytest.raises(PhysicsDomainError):
        gl_partial(0.0)
    with pytest.raises(PhysicsDomainError):
        gl_partial_derivative(np.array([1.0, 0.0]))


def test_gl_full_is_the_warped_partial_curve():
    x = np.linspace(0.5, 2.5, 11)
    t = 0.5 + 2.0 * np.sin(np.pi * (x - 0.5) / 4.0)
    expected = np.sin(10 * np.pi * t) / (2 * t) + (t - 1) ** 4
    np.testing.assert_allclose(gl_full(x), expected, rtol=1e-14)
    assert gl_ideal_transfer(0.5) == 0.5
    assert gl_ideal_transfer(2.5) == pytest.approx(2.5)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.3, 2.9))
def test_gl_derivative_matches_mpmath_diff(t):
    mpmath.mp.dps = 30
    ref = mpmath.diff(lambda s: mpmath.sin(10 * mpmath.pi * s) / (2 * s) + (s - 1) ** 4, t)
    assert gl_partial_derivative(t) == pytest.approx(float(ref), rel=1e-9, abs=1e-9)


def test_gramacy_lee_model_contract():
    m = GramacyLeePartial()
    T = np.array([[0.6], [1.7]])
    np.testing.assert_array_equal(m.evaluate(T), gl_partial(T))
    assert m.jacobian(T).shape == (2, 1, 1)
    assert m.evaluate(np.array([1.0])).shape == (1,)
    with pytest.raises(PhysicsDomainError):
        m.evaluate(np.array([[0.2]]))
    with pytest.raises(ValueError):
        GramacyLeePartial((-1.0, 1.0))
    np.testing.assert_array_equal(m.in_domain(np.array([[0.1], [1.0], [np.nan]])),
                                  [False, True, False])


def test_aero_hand_chained_values():
    s = AeroState(V_inf=20.0, alpha=0.1, beta=0.05, aileron=0.1, rudder=-0.05, throttle=0.6)
    c = AeroConstants()
    c_l = 0.25 + 5.0 * 0.1
    c_d = 0.03 + 0.05 * c_l ** 2
    c_y = -0.30 * 0.05 + 0.12 * -0.05
    qs = 0.5 * 1.225 * 20.0 ** 2 * 0.30
    w = 1.50 * 9.80665
    f_x = qs * (-c_d * math.cos(0.1) + c_l * math.sin(0.1)) + 15.0 * 0.6 - w * math.sin(0.1)
    f_y = qs * c_y
    f_z = qs * (-c_d * math.sin(0.1) - c_l * math.cos(0.1)) + w * math.cos(0.1)
    got = aero_pipeline(s, c)
    assert got == pytest.approx((f_x, f_y, f_z), rel=1e-14)
    assert f_y == pytest.approx(-1.5435)
    np.testing.assert_allclose(FixedWingForces(c).evaluate(s.as_array()), got, rtol=1e-14)


def test_aileron_does_not_enter_the_standin():
    a = np.array([20.0, 0.05, 0.0, -0.2, 0.0, 0.5])
    b = a.copy()
    b[3] = 0.2
    np.testing.assert_array_equal(FixedWingForces().evaluate(a), FixedWingForces().evaluate(b))


def test_perturbation_changes_forces():
    s = AeroState(22.0, 0.12, 0.0, 0.0, 0.0, 0.7)
    base = np.array(aero_pipeline(s))
    pert = np.array(aero_pipeline(s, perturbation=AeroPerturbation()))
    assert np.all(np.abs(pert[[0, 2]] - base[[0, 2]]) > 1e-3)
    assert pert[1] == pytest.approx(base[1])
    zero = AeroPerturbation(0.0, 0.0, 1.0)
    np.testing.assert_allclose(aero_pipeline(s, perturbation=zero), base, rtol=1e-15)


def test_aero_jacobian_matches_finite_differences():
    m = FixedWingForces()
    T = aero_batch(np.random.default_rng(8), 20)
    J = m.jacobian(T)
    for n, t in enumerate(T):
        for j in range(3):
            fd = central_difference(lambda v: m.evaluate(v)[j], t, 1e-6)
            scale = np.max(np.abs(J[n, j])) + 1.0
            assert np.max(np.abs(J[n, j] - fd)) / scale < 1e-6


def test_aero_domain_and_states():
    with pytest.raises(PhysicsDomainError):
        FixedWingForces().evaluate(np.array([0.0, 0, 0, 0, 0, 0.5]))
    with pytest.raises(ValueError):
        AeroState(-1.0, 0, 0, 0, 0, 0.5)
    with pytest.raises(ValueError):
        AeroState(10.0, 0, 0, 0, 0, 1.5)
    with pytest.raises(ValueError):
        AeroConstants(mass=0.0)
    with pytest.raises(KeyError):
        AeroConstants.from_dict({"wingspan": 1.0})


def test_affine_physics():
    A = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    c = np.array([0.1, 0.2, 0.3])
    m = AffinePhysics(A, c)
    t = np.array([0.7, -1.1])
    np.testing.assert_allclose(m.evaluate(t), A @ t + c, rtol=1e-15)
    np.testing.assert_array_equal(m.jacobian(t), A)
    I = AffinePhysics.identity(2)
    np.testing.assert_array_equal(I.evaluate(t), t)


@pytest.mark.parametrize("model", [GramacyLeePartial((0.3, 2.0)),
                                   AffinePhysics(np.eye(2), [1.0, 2.0]),
                                   FixedWingForces(AeroConstants(mass=2.0))])
def test_physics_dict_round_trip(model):
    back = physics_from_dict(model.to_dict())
    assert back.to_dict() == model.to_dict()


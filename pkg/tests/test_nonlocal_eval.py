import math
from dataclasses import replace

import numpy as np
import pytest

from nonlocal_elliptic import (
    ConfigurationError,
    GridFunction,
    KernelParams,
    LinearOpSpec,
    NumericError,
    QuadratureConfig,
    default_dictionary,
    delta,
    eval_extremal_with_drift,
    eval_linear,
    eval_pucci,
    extremal_bracket,
    extremal_minus,
    fractional,
    second_order_target,
    sigma2_limit_check,
)
from nonlocal_elliptic.profiles import (
    Affine,
    Constant,
    GaussianBumps,
    QuadraticForm,
    RadialPower,
    Shifted,
)
from nonlocal_elliptic.quadrature import sphere_surface

PARAMS = KernelParams(n=2, sigma=1.5, lam=1.0, Lam=2.0, beta=0.5)


def negated(u):
    class _Neg:
        n = u.n
        value = staticmethod(lambda P: -u.value(P))
        grad = staticmethod(lambda P: -u.grad(P))
        hess = staticmethod(lambda x: -u.hess(x))
        kink_spheres = staticmethod(u.kink_spheres)
        far_model = staticmethod(u.far_model)
        far_dev = staticmethod(u.far_dev)

    return _Neg()


def test_delta_affine_cancellation_and_cutoff():
    u = Affine(np.array([2.0, -1.0]))
    p = np.array([2.0, -1.0])
    x = np.array([0.3, 0.1])
    inside = np.array([[0.5, 0.0], [0.0, -0.99]])
    assert np.allclose(delta(u, x, p, inside), 0.0)
    outside = np.array([[1.0, 0.0], [2.0, 2.0]])
    assert np.allclose(delta(u, x, p, outside), outside @ p)


def test_delta_quadratic_at_origin():
    u = QuadraticForm(np.eye(2), clip_radius=10.0)
    Y = np.array([[0.25, 0.0], [0.3, 0.4], [1.5, 0.0]])
    vals = delta(u, np.zeros(2), np.zeros(2), Y)
    assert np.allclose(vals, 0.5 * np.sum(Y * Y, axis=1))


def test_constant_field_evaluates_to_zero_exactly():
    u = Constant(3.7, 2)
    op = LinearOpSpec(fractional(PARAMS, 1.5))
    res = eval_linear(u, np.zeros(2), op)
    assert res.value == 0.0
    for sign in "+-":
        assert eval_pucci(u, np.zeros(2), sign, PARAMS).value == 0.0


def test_quadratic_oracle_value():
    # closed radial form: (2-s)/2 |dB1| int_0^1 r^(1-s) dr = |dB1|/2, any order
    u = QuadraticForm(np.eye(2), clip_radius=2.0)
    op = LinearOpSpec(extremal_minus(PARAMS))
    res = eval_linear(u, np.zeros(2), op)
    assert res.value == pytest.approx(math.pi, rel=1e-10)
    assert res.error_estimate < 1e-6
    assert res.shells_used > 0


def test_affine_slope_integrates_to_drift_term_only():
    # compact kernel: the odd integrand cancels exactly, leaving b . p
    u = Affine(np.array([0.7, -0.3]))
    x = np.array([0.4, -0.2])
    drift = 0.7 * 0.2 - 0.3 * 0.1
    res = eval_linear(u, x, LinearOpSpec(extremal_minus(PARAMS), (0.2, 0.1)))
    assert res.value == pytest.approx(drift, abs=1e-12)

    # full support: linear growth is only radially modeled beyond the
    # truncation sphere, so the bias must sit inside the reported estimate
    full = eval_linear(u, x, LinearOpSpec(fractional(PARAMS, 1.5), (0.2, 0.1)))
    assert abs(full.value - drift) <= full.error_estimate


def test_linearity_of_eval_linear():
    rng = np.random.default_rng(5)
    u = GaussianBumps.random(rng, 2)
    v = GaussianBumps.random(rng, 2)

    class Comb:
        n = 2
        value = staticmethod(lambda P: 2.0 * u.value(P) - 3.0 * v.value(P))
        grad = staticmethod(lambda P: 2.0 * u.grad(P) - 3.0 * v.grad(P))
        hess = staticmethod(lambda x: 2.0 * u.hess(x) - 3.0 * v.hess(x))
        kink_spheres = staticmethod(lambda: [])

        @staticmethod
        def far_model():
            return u.far_model()

        @staticmethod
        def far_dev():
            Cu, qu = u.far_dev()
            Cv, qv = v.far_dev()
            return 2.0 * Cu + 3.0 * Cv, max(qu, qv)

    op = LinearOpSpec(fractional(PARAMS, 1.5), (0.1, 0.0))
    x = np.array([0.2, -0.1])
    ru = eval_linear(u, x, op)
    rv = eval_linear(v, x, op)
    rc = eval_linear(Comb(), x, op)
    tol = rc.error_estimate + 2 * ru.error_estimate + 3 * rv.error_estimate + 1e-12
    assert abs(rc.value - (2 * ru.value - 3 * rv.value)) <= tol


def test_duality_is_exact_on_shared_nodes():
    rng = np.random.default_rng(7)
    for _ in range(5):
        u = GaussianBumps.random(rng, 2)
        x = rng.uniform(-0.3, 0.3, size=2)
        a = eval_pucci(negated(u), x, "+", PARAMS)
        b = eval_pucci(u, x, "-", PARAMS)
        assert a.value == -b.value


def test_sandwich_against_dictionary_members():
    rng = np.random.default_rng(9)
    d = default_dictionary(PARAMS)
    u = GaussianBumps.random(rng, 2)
    v = GaussianBumps.random(rng, 2)
    x = np.array([0.15, -0.1])
    for op in d.ops:
        lo, mid, hi, est = extremal_bracket(u, v, op, PARAMS, x)
        assert lo - est <= mid <= hi + est, (op.kernel.kind, lo, mid, hi, est)


def test_extremal_with_drift_reduces_to_pucci_at_zero_beta():
    p0 = replace(PARAMS, beta=0.0)
    u = QuadraticForm(np.array([[1.0, 0.0], [0.0, -0.7]]), clip_radius=2.0)
    x = np.array([0.3, 0.1])
    assert (
        eval_extremal_with_drift(u, x, "+", p0).value
        == eval_pucci(u, x, "+", p0).value
    )


def test_extremal_order_on_random_fields():
    rng = np.random.default_rng(11)
    for _ in range(5):
        u = GaussianBumps.random(rng, 2)
        x = rng.uniform(-0.3, 0.3, size=2)
        lo = eval_extremal_with_drift(u, x, "-", PARAMS)
        hi = eval_extremal_with_drift(u, x, "+", PARAMS)
        assert lo.value <= hi.value + lo.error_estimate + hi.error_estimate


def test_pucci_sign_argument_is_validated():
    u = Constant(0.0, 2)
    with pytest.raises(ValueError):
        eval_pucci(u, np.zeros(2), "plus", PARAMS)


def test_second_order_targets():
    # n=1, H=1: both directions positive, target = 2 lam
    p1 = KernelParams(n=1, sigma=1.5, lam=1.0, Lam=2.0, beta=0.0)
    assert second_order_target(p1, np.array([[1.0]])) == pytest.approx(2.0)
    # n=2 identity: lam |dB1|
    assert second_order_target(PARAMS, np.eye(2)) == pytest.approx(2 * math.pi, rel=1e-6)
    # n=2 saddle: 2 (lam - Lam)
    H = np.array([[1.0, 0.0], [0.0, -1.0]])
    assert second_order_target(PARAMS, H) == pytest.approx(-2.0, abs=1e-4)


def test_sigma2_gap_shrinks_monotonically():
    params = replace(PARAMS, beta=0.0, lower_support=0.75)
    u = QuadraticForm(np.eye(2), clip_radius=2.0)
    table = sigma2_limit_check(u, np.zeros(2), params)
    gaps = [row["gap"] for row in table]
    assert gaps[0] > gaps[1] > gaps[2]


def test_grid_function_interpolation_exact_on_quadratics():
    prof = QuadraticForm(np.array([[1.0, 0.2], [0.2, -0.5]]), clip_radius=4.0)
    gf = GridFunction.from_profile(prof, R=2.0, h=0.25, n=2)
    pts = np.array([[0.13, -0.41], [1.111, 0.77], [-0.9, 0.9]])
    assert np.allclose(gf.value(pts), prof.value(pts), atol=1e-12)
    g = gf.grad(pts)
    assert np.allclose(g, prof.grad(pts), atol=1e-9)


def test_grid_function_rejects_points_outside_lattice():
    prof = QuadraticForm(np.eye(2), clip_radius=4.0)
    gf = GridFunction.from_profile(prof, R=1.0, h=0.25, n=2)
    op = LinearOpSpec(fractional(PARAMS, 1.5))
    with pytest.raises(ValueError):
        eval_linear(gf, np.array([1.5, 0.0]), op)


def test_translation_invariance():
    base = GaussianBumps([[0.1, -0.2]], [0.3], [0.8])
    z = np.array([0.4, -0.3])
    moved = Shifted(base, z)
    op = LinearOpSpec(fractional(PARAMS, 1.5), (0.1, -0.2))
    x = np.array([0.05, 0.2])
    r0 = eval_linear(base, x, op)
    r1 = eval_linear(moved, x + z, op)
    assert r1.value == pytest.approx(r0.value, abs=1e-13)


def test_refinement_stays_within_reported_estimate():
    rng = np.random.default_rng(13)
    u = GaussianBumps.random(rng, 2)
    op = LinearOpSpec(fractional(PARAMS, 1.5))
    x = np.array([0.1, 0.1])
    coarse_cfg = QuadratureConfig(rel_tol=1e-4, radial_coarse=4, radial_fine=6, m_angular=24)
    fine_cfg = QuadratureConfig(rel_tol=5e-5, radial_coarse=8, radial_fine=12, m_angular=48)
    coarse = eval_linear(u, x, op, coarse_cfg)
    fine = eval_linear(u, x, op, fine_cfg)
    assert abs(fine.value - coarse.value) <= coarse.error_estimate + fine.error_estimate


def test_non_integrable_far_growth_raises():
    u = RadialPower(1.0, 1.8, n=2)  # grows faster than the order-1.5 tail decays
    op = LinearOpSpec(fractional(PARAMS, 1.5))
    with pytest.raises(NumericError):
        eval_linear(u, np.zeros(2), op)


def test_quadrature_config_validation():
    with pytest.raises(ConfigurationError):
        QuadratureConfig(rel_tol=0.0)

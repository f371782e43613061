import math

import numpy as np
import pytest

from nonlocal_elliptic import (
    ConfigurationError,
    KernelParams,
    KernelSpec,
    LinearOpSpec,
    compensated_shell,
    critical_samples,
    default_dictionary,
    drift_admissibility,
    drift_profile,
    eval_kernel,
    extremal_minus,
    extremal_plus,
    fractional,
    kernel_bounds_check,
    moment,
    rescale_operator,
    shell_tilted,
    tilted,
)

PARAMS = KernelParams(n=2, sigma=1.5, lam=1.0, Lam=2.0, beta=0.5)

# closed form: (2-1.5) * (2pi/2) * int_{1/4}^{1/2} rho^-1.5 drho * 0.25
MOMENT_SHELL_Y = 0.460075592255305


def test_params_validation():
    with pytest.raises(ConfigurationError):
        KernelParams(4, 1.5, 1.0, 2.0, 0.0)
    with pytest.raises(ConfigurationError):
        KernelParams(2, 2.0, 1.0, 2.0, 0.0)
    with pytest.raises(ConfigurationError):
        KernelParams(2, 1.5, 3.0, 2.0, 0.0)
    with pytest.raises(ConfigurationError):
        KernelParams(2, 1.5, 1.0, 2.0, -1.0)
    with pytest.raises(ConfigurationError):
        KernelParams(2, 1.5, 1.0, 2.0, 0.0, lower_support=0.0)
    # support radii above 1 are allowed (rescaled normalizations use 4)
    KernelParams(2, 1.5, 1.0, 2.0, 0.0, lower_support=4.0)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        tilted(PARAMS, 1.0, (1.5, 0.0))  # odd amplitude above isotropic level
    with pytest.raises(ConfigurationError):
        KernelSpec("shell_tilted", 2, 1.5, 1.0, iso_cut=0.5,
                   odd_vec=(0.5, 0.0), odd_lo=0.25, odd_hi=0.75)


def test_eval_kernel_point_values():
    plus = extremal_plus(PARAMS)
    assert eval_kernel(plus, np.array([1.0, 0.0])) == pytest.approx(1.0)

    minus = extremal_minus(PARAMS)
    assert eval_kernel(minus, np.array([2.0, 0.0])) == 0.0

    # a + |c| hits the upper envelope exactly
    t = tilted(PARAMS, 1.5, (0.5, 0.0))
    assert eval_kernel(t, np.array([1.0, 0.0])) == pytest.approx(
        eval_kernel(plus, np.array([1.0, 0.0]))
    )

    with pytest.raises(ValueError):
        eval_kernel(plus, np.zeros(2))


def test_bounds_check_fractional_sits_on_lower_envelope():
    spec = fractional(PARAMS, PARAMS.lam)
    ok, worst = kernel_bounds_check(spec, PARAMS, critical_samples(spec, PARAMS))
    assert ok
    assert worst == 0.0


def test_bounds_check_rejects_negative_part():
    spec = tilted(PARAMS, 1.2, (0.5, 0.0))  # a - |c| = 0.7 < lam
    ok, worst = kernel_bounds_check(spec, PARAMS, critical_samples(spec, PARAMS))
    assert not ok
    assert worst == pytest.approx(0.3)


def test_bounds_check_random_samples_agree():
    rng = np.random.default_rng(3)
    for spec in (extremal_plus(PARAMS), tilted(PARAMS, 1.5, (0.3, 0.4))):
        samples = critical_samples(spec, PARAMS, n_random=200, rng=rng)
        ok, worst = kernel_bounds_check(spec, PARAMS, samples)
        assert ok, worst


def test_bounds_check_requires_samples():
    spec = extremal_plus(PARAMS)
    with pytest.raises(ValueError):
        kernel_bounds_check(spec, PARAMS, np.empty((0, 2)))


def test_moment_even_kernel_vanishes():
    m = moment(fractional(PARAMS, 1.0), 0.25)
    assert np.allclose(m, 0.0)


def test_moment_shell_closed_form():
    spec = shell_tilted(PARAMS, 1.0, (0.0, 0.25), 0.25, 0.5)
    m = moment(spec, 0.0)
    assert m[0] == 0.0
    assert m[1] == pytest.approx(MOMENT_SHELL_Y, rel=1e-12)


def test_drift_profile_log_growth_at_sigma_one():
    params = KernelParams(n=2, sigma=1.0, lam=1.0, Lam=2.0, beta=0.5)
    op = LinearOpSpec(tilted(params, 1.5, (0.3, 0.0)))
    radii, q = drift_profile(op)
    # constant tilt at order one: q(r) = |c| (|dB1|/n) log(1/r)
    expect = 0.3 * math.pi * np.log(1.0 / radii)
    mask = radii < 1.0
    assert np.allclose(q[mask], expect[mask], rtol=1e-12)

    ok, ratio = drift_admissibility(op, params.beta)
    assert not ok
    assert ratio > 1.0


def test_drift_admissibility_monotone_in_beta():
    op = LinearOpSpec(tilted(PARAMS, 1.5, (0.3, 0.0)))
    ok_small, ratio_small = drift_admissibility(op, 0.2)
    ok_large, ratio_large = drift_admissibility(op, 2.0)
    assert ratio_large < ratio_small
    assert (not ok_small) or ok_large  # admissible at beta stays admissible above


def test_compensated_shell_is_silent_below_inner_radius():
    op = compensated_shell(PARAMS, (0.0, 0.25), 0.5, 1.0)
    radii = 2.0 ** -np.arange(1, 21)
    _, q = drift_profile(op, radii)
    assert np.all(q == 0.0)


def test_rescale_identity_and_fractional_invariance():
    op = LinearOpSpec(fractional(PARAMS, 1.5), (0.1, -0.2))
    same = rescale_operator(op, 1.0)
    assert same.kernel == op.kernel
    assert np.allclose(same.drift, op.drift)

    half = rescale_operator(op, 0.5)
    assert half.kernel == op.kernel  # full-support power law is scale free
    assert np.allclose(half.drift, 0.5 ** (PARAMS.sigma - 1.0) * np.asarray(op.drift))


def test_rescale_semigroup():
    op = compensated_shell(PARAMS, (0.0, 0.1), 0.25, 0.5)
    once_a, fac_a = rescale_operator(op, 0.5, alpha=1.0)
    twice, fac_b = rescale_operator(once_a, 0.4, alpha=1.0)
    direct, fac_c = rescale_operator(op, 0.2, alpha=1.0)
    assert twice.kernel == direct.kernel
    assert np.allclose(twice.drift, direct.drift, atol=1e-13)
    assert fac_a * fac_b == pytest.approx(fac_c, rel=1e-13)


def test_rescale_rejects_bad_arguments():
    op = LinearOpSpec(fractional(PARAMS, 1.5))
    with pytest.raises(ConfigurationError):
        rescale_operator(op, 1.5)
    with pytest.raises(ConfigurationError):
        rescale_operator(op, 0.5, alpha=1.7)


def test_default_dictionary_members_stay_in_class():
    d = default_dictionary(PARAMS)
    assert d.combinator == "inf"
    for op in d.ops:
        samples = critical_samples(op.kernel, PARAMS, n_random=50,
                                   rng=np.random.default_rng(11))
        ok, worst = kernel_bounds_check(op.kernel, PARAMS, samples)
        assert ok, (op.kernel.kind, worst)
        ok_drift, ratio = drift_admissibility(op, PARAMS.beta)
        assert ok_drift, (op.kernel.kind, ratio)

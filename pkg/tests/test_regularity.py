"""Tests for oscillation tables, tail reports, and quotient exponents."""

import math

import numpy as np
import pytest

from nonlocal_elliptic.errors import NumericError, RejectedInstance
from nonlocal_elliptic.kernel_family import (
    KernelParams,
    LinearOpSpec,
    OperatorDictionary,
    extremal_minus,
    fractional,
)
from nonlocal_elliptic.nonlocal_eval import GridFunction
from nonlocal_elliptic.profiles import Affine, Constant, RadialPower
from nonlocal_elliptic.regularity import (
    DecayTable,
    TailReport,
    difference_quotient_regularity,
    oscillation_decay,
    point_estimate_check,
)

PARAMS = KernelParams(n=1, sigma=1.5, lam=1.0, Lam=2.0, beta=1.0)
DYADIC = [1.0, 0.5, 0.25, 0.125, 0.0625]


def line_field(profile, h=1.0 / 128.0, R=2.0):
    return GridFunction.from_profile(profile, R, h, 1, exterior=profile)


class TestDecayTable:
    def test_requires_decreasing_radii(self):
        with pytest.raises(ValueError, match="decreasing"):
            DecayTable((1.0, 1.0, 0.5), (3.0, 2.0, 1.0), 1.0, 0.0)

    def test_requires_monotone_oscillations(self):
        with pytest.raises(ValueError, match="nonincreasing"):
            DecayTable((1.0, 0.5, 0.25), (1.0, 2.0, 0.5), 1.0, 0.0)

    def test_requires_nonnegative_oscillations(self):
        with pytest.raises(ValueError, match="nonnegative"):
            DecayTable((1.0, 0.5), (0.5, -0.1), 1.0, 0.0)


class TestOscillationDecay:
    def test_affine_exponent_one(self):
        u = line_field(Affine(np.array([0.7])))
        table = oscillation_decay(u, [0.0], DYADIC)
        assert table.fitted_exponent == pytest.approx(1.0, abs=1e-12)
        assert table.fit_residual < 1e-12

    def test_square_root_exponent_half_exact(self):
        # dyadic lattice radii make the ball maxima exact powers, so the
        # log-log points are collinear to rounding
        u = line_field(RadialPower(1.0, 0.5))
        table = oscillation_decay(u, [0.0], DYADIC)
        assert table.fitted_exponent == pytest.approx(0.5, abs=1e-12)
        assert table.fit_residual < 1e-12

    def test_rescaling_shifts_table_one_level(self):
        # r^{-a} u(r .) at r = 1/2 for homogeneous u reproduces the next
        # dyadic level: osc(r/2) = 2^{-a} osc(r) exactly
        u = line_field(RadialPower(1.0, 0.75))
        table = oscillation_decay(u, [0.0], DYADIC)
        o = np.array(table.oscillations)
        assert np.allclose(o[1:] / o[:-1], 2.0**-0.75, rtol=1e-12)

    def test_constant_field_flat_table(self):
        u = line_field(Constant(5.0, 1), h=1.0 / 64.0)
        table = oscillation_decay(u, [0.0], DYADIC[:4])
        assert table.fitted_exponent == math.inf
        assert all(o == 0.0 for o in table.oscillations)

    def test_off_center_probe(self):
        u = line_field(Affine(np.array([1.0])))
        table = oscillation_decay(u, [0.5], DYADIC)
        assert table.fitted_exponent == pytest.approx(1.0, abs=1e-12)

    def test_needs_four_levels(self):
        u = line_field(Affine(np.array([1.0])))
        with pytest.raises(ValueError, match="4 radius levels"):
            oscillation_decay(u, [0.0], [1.0, 0.5, 0.25])

    def test_ball_must_stay_inside_cube(self):
        u = line_field(Affine(np.array([1.0])))
        with pytest.raises(ValueError, match="solved cube"):
            oscillation_decay(u, [1.5], DYADIC)

    def test_too_few_points_in_smallest_ball(self):
        u = line_field(Affine(np.array([1.0])), h=1.0 / 4.0)
        with pytest.raises(ValueError, match="fewer than 2 grid points"):
            oscillation_decay(u, [0.0], [1.0, 0.5, 0.25, 0.1])

    def test_homogeneous_two_dim(self):
        u = GridFunction.from_profile(RadialPower(1.0, 0.5), 2.0, 1.0 / 32.0, 2)
        table = oscillation_decay(u, np.zeros(2), DYADIC[:4])
        assert table.fitted_exponent == pytest.approx(0.5, abs=1e-12)


def spike_field(h=1.0 / 128.0, cap=100.0):
    # integrable spike 0.01/|x| capped at the origin
    M = GridFunction.lattice_size(2.0, h)
    x = np.arange(-M, M + 1) * h
    with np.errstate(divide="ignore"):
        vals = np.minimum(0.01 / np.abs(x), cap)
    return GridFunction(vals, h, 2.0, Constant(0.0, 1))


class TestPointEstimate:
    def test_all_empty_superlevels_skip_fit(self):
        u = line_field(Constant(1.0, 1), h=1.0 / 64.0)
        rep = point_estimate_check(u, PARAMS, [2.0, 4.0, 8.0])
        assert rep.fit_skipped
        assert math.isnan(rep.fitted_epsilon)
        assert all(m == 0.0 for m in rep.measures)
        assert rep.normalization == pytest.approx(1.0)

    def test_spike_tails_decay(self):
        rep = point_estimate_check(spike_field(), PARAMS, [0.1, 0.2, 0.4, 0.8, 1.6])
        m = np.array(rep.measures)
        assert np.all(np.diff(m) < 0.0)
        assert rep.fitted_epsilon > 0.5
        assert not rep.fit_skipped

    def test_counting_stable_under_refinement(self):
        t = [0.1, 0.2, 0.4, 0.8]
        coarse = point_estimate_check(spike_field(h=1.0 / 128.0), PARAMS, t)
        fine = point_estimate_check(spike_field(h=1.0 / 256.0), PARAMS, t)
        for a, b in zip(coarse.measures, fine.measures):
            assert abs(a - b) <= 4.0 / 128.0

    def test_rejects_negative_field(self):
        u = line_field(Affine(np.array([1.0])))
        with pytest.raises(RejectedInstance, match="negative"):
            point_estimate_check(u, PARAMS, [1.0])

    def test_rejects_bad_thresholds(self):
        u = line_field(Constant(1.0, 1), h=1.0 / 64.0)
        with pytest.raises(ValueError, match="strictly increasing"):
            point_estimate_check(u, PARAMS, [1.0, 1.0])
        with pytest.raises(ValueError, match="positive"):
            point_estimate_check(u, PARAMS, [-1.0, 2.0])

    def test_support_hypothesis_flag(self):
        u = line_field(Constant(1.0, 1), h=1.0 / 64.0)
        wide = KernelParams(n=1, sigma=1.5, lam=1.0, Lam=2.0, beta=1.0,
                            lower_support=4.0)
        assert point_estimate_check(u, wide, [2.0]).support_hypothesis
        assert not point_estimate_check(u, PARAMS, [2.0]).support_hypothesis

    def test_normalization_includes_source_bound(self):
        u = line_field(Constant(2.0, 1), h=1.0 / 64.0)
        rep = point_estimate_check(u, PARAMS, [3.0], f=Constant(0.7, 1))
        assert rep.normalization == pytest.approx(2.7)


SMOOTH_DICT = OperatorDictionary((LinearOpSpec(fractional(PARAMS)),))
CUT_DICT = OperatorDictionary((LinearOpSpec(extremal_minus(PARAMS)),))


class TestDifferenceQuotients:
    def test_quadratic_gives_exponent_one(self):
        u = line_field(RadialPower(0.5, 2.0))
        table = difference_quotient_regularity(
            u, [1], [1.0 / 128.0, 2.0 / 128.0, 4.0 / 128.0], SMOOTH_DICT
        )
        assert table.fitted_exponent == pytest.approx(1.0, abs=0.05)

    def test_three_halves_gives_exponent_half(self):
        u = line_field(RadialPower(1.0, 1.5))
        table = difference_quotient_regularity(
            u, [1], [1.0 / 128.0, 2.0 / 128.0, 4.0 / 128.0], SMOOTH_DICT
        )
        assert table.fitted_exponent == pytest.approx(0.5, abs=0.05)

    def test_cutoff_kernel_rejected(self):
        u = line_field(RadialPower(0.5, 2.0))
        with pytest.raises(RejectedInstance, match="cutoff"):
            difference_quotient_regularity(u, [1], [1.0 / 128.0], CUT_DICT)

    def test_step_must_be_lattice_multiple(self):
        u = line_field(RadialPower(0.5, 2.0))
        with pytest.raises(ValueError, match="multiple of the spacing"):
            difference_quotient_regularity(u, [1], [0.0101], SMOOTH_DICT)

    def test_direction_must_be_integer_lattice(self):
        u = line_field(RadialPower(0.5, 2.0))
        with pytest.raises(ValueError, match="integer lattice"):
            difference_quotient_regularity(u, [0.5], [1.0 / 128.0], SMOOTH_DICT)

    def test_two_dim_diagonal_direction(self):
        p2 = KernelParams(n=2, sigma=1.5, lam=1.0, Lam=2.0, beta=1.0)
        dic = OperatorDictionary((LinearOpSpec(fractional(p2)),))
        u = GridFunction.from_profile(RadialPower(0.5, 2.0), 2.0, 1.0 / 32.0, 2)
        table = difference_quotient_regularity(
            u, [1, 1], [1.0 / 32.0, 2.0 / 32.0], dic
        )
        assert table.fitted_exponent == pytest.approx(1.0, abs=0.05)

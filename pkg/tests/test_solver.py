import numpy as np
import pytest

from nonlocal_elliptic import (
    Affine,
    ConfigurationError,
    Constant,
    GaussianBumps,
    GridConfig,
    GridFunction,
    KernelParams,
    LinearOpSpec,
    OperatorDictionary,
    RejectedInstance,
    SphericalCap,
    comparison_check,
    default_dictionary,
    discretize,
    eval_linear,
    extremal_minus,
    fractional,
    load_checkpoint,
    residual,
    save_checkpoint,
    shell_tilted,
    solve_dirichlet,
)
from nonlocal_elliptic.kernel_family import KernelSpec

PARAMS = KernelParams(n=2, sigma=1.5, lam=1.0, Lam=2.0, beta=0.5)
GRID = GridConfig(h=1.0 / 8.0, R=3.0)


@pytest.fixture(scope="module")
def scheme():
    return discretize(default_dictionary(PARAMS), GRID, PARAMS)


def grid_const(c, h=GRID.h, R=GRID.R, n=2):
    return GridFunction.from_profile(Constant(c, n), R, h, n)


def test_grid_config_validation():
    with pytest.raises(ConfigurationError):
        GridConfig(h=0.0, R=3.0)
    with pytest.raises(ConfigurationError):
        GridConfig(h=0.5, R=1.2)


def test_spacing_guard_names_the_bound():
    with pytest.raises(ConfigurationError, match="lower_support"):
        discretize(default_dictionary(PARAMS), GridConfig(h=0.25, R=3.0), PARAMS)


def test_order_guard_rejects_coarse_grid_near_two():
    params = KernelParams(n=2, sigma=1.9, lam=1.0, Lam=2.0, beta=0.5)
    with pytest.raises(ConfigurationError, match="2-sigma"):
        discretize(default_dictionary(params), GridConfig(h=1.0 / 8.0, R=3.0), params)


def test_small_lattice_rejected_for_full_support():
    d = OperatorDictionary((LinearOpSpec(fractional(PARAMS, 1.5)),))
    with pytest.raises(ConfigurationError, match="R >= 3"):
        discretize(d, GridConfig(h=1.0 / 8.0, R=2.0), PARAMS)
    # a compact kernel fits inside R - 1 and needs no tail
    d2 = OperatorDictionary((LinearOpSpec(extremal_minus(PARAMS)),))
    sch = discretize(d2, GridConfig(h=1.0 / 8.0, R=2.0), PARAMS)
    assert not sch.tail_flags.any()


def test_inadmissible_member_rejected():
    op = LinearOpSpec(fractional(PARAMS, 1.5), (5.0, 0.0))
    with pytest.raises(ConfigurationError, match="drift load"):
        discretize(OperatorDictionary((op,)), GRID, PARAMS)


def test_even_kernel_weights_symmetric(scheme):
    idx = {tuple(k): i for i, k in enumerate(scheme.offsets)}
    w = scheme.weights[0]  # extremal minus, no drift
    for k, i in idx.items():
        j = idx[tuple(-v for v in k)]
        assert w[i] == pytest.approx(w[j], rel=1e-13, abs=1e-15)


def test_weights_nonnegative_at_order_one():
    params = KernelParams(n=2, sigma=1.0, lam=1.0, Lam=2.0, beta=0.5)
    sch = discretize(default_dictionary(params), GRID, params)
    assert sch.monotone()
    assert np.min(sch.weights) >= 0.0


def test_constants_annihilated(scheme):
    # compact members are exact; full-support tails cancel to quadrature level
    assert residual(scheme, grid_const(1.0), 0.0) < 1e-6
    assert residual(scheme, grid_const(-3.7), 0.0) < 1e-5


def test_affine_reproduces_drift_exactly_for_even_kernel():
    b = (0.2, 0.1)
    d = OperatorDictionary((LinearOpSpec(extremal_minus(PARAMS), b),))
    sch = discretize(d, GridConfig(h=1.0 / 8.0, R=2.0), PARAMS)
    p = np.array([0.7, -0.3])
    u = GridFunction.from_profile(Affine(p), 2.0, 1.0 / 8.0, 2)
    vals = sch.apply(u)
    assert np.max(np.abs(vals - p @ np.array(b))) < 1e-10


def test_affine_reproduces_drift_within_h_for_odd_kernel():
    # compact kernel with an odd tilt reaching the origin: on an affine
    # function the lattice moment cancels everything except the drift
    # term and an O(h) straddle band at the truncation sphere
    spec = KernelSpec("tilted", 2, 1.5, 1.5, 1.0, (0.0, 0.1), 0.0, 1.0)
    op = LinearOpSpec(spec, (0.3, -0.1))
    p = np.array([0.7, -0.3])
    want = float(p @ np.asarray(op.drift))
    errs = []
    for h in (1.0 / 8.0, 1.0 / 16.0):
        sch = discretize(OperatorDictionary((op,)), GridConfig(h=h, R=2.0), PARAMS)
        u = GridFunction.from_profile(Affine(p), 2.0, h, 2)
        errs.append(float(np.max(np.abs(sch.apply(u) - want))))
    assert errs[0] < 0.5 * (1.0 / 8.0)
    assert errs[1] < 0.9 * errs[0]


def test_constant_exterior_is_the_solution(scheme):
    res = solve_dirichlet(scheme, 0.0, Constant(2.5, 2), tol=1e-10)
    got = res.u.values.ravel()[scheme.interior_flat]
    assert np.max(np.abs(got - 2.5)) < 1e-9
    assert res.residual_norm <= 1e-10
    assert res.comparison_certificate


def test_linearity_of_single_kernel_solves():
    d = OperatorDictionary((LinearOpSpec(fractional(PARAMS, 1.5)),))
    sch = discretize(d, GRID, PARAMS)
    g = Constant(1.0, 2)
    f = GaussianBumps.random(np.random.default_rng(3), 2)
    up = solve_dirichlet(sch, f, g, tol=1e-11)
    neg = lambda P: -f.value(P)  # noqa: E731

    class NegF:
        value = staticmethod(neg)

    um = solve_dirichlet(sch, NegF(), g, tol=1e-11)
    u0 = solve_dirichlet(sch, 0.0, g, tol=1e-11)
    gap = up.u.values + um.u.values - 2.0 * u0.u.values
    assert np.max(np.abs(gap)) < 3e-10


def test_discrete_maximum_principle(scheme):
    res = solve_dirichlet(scheme, -1.0, Constant(0.3, 2), tol=1e-10)
    interior = res.u.values.ravel()[scheme.interior_flat]
    assert np.min(interior) >= 0.3 - 1e-9


def test_solution_independent_of_initial_iterate(scheme):
    f = -1.0
    g = Constant(0.0, 2)
    a = solve_dirichlet(scheme, f, g, tol=1e-10, initial=None)
    b = solve_dirichlet(scheme, f, g, tol=1e-10, initial=5.0)
    assert np.max(np.abs(a.u.values - b.u.values)) <= 10.0 * 1e-10


def test_residual_trivial_values(scheme):
    assert residual(scheme, grid_const(0.0), 1.0) == pytest.approx(1.0, abs=1e-9)


def test_residual_grows_linearly_in_perturbation():
    d = OperatorDictionary((LinearOpSpec(fractional(PARAMS, 1.5)),))
    sch = discretize(d, GRID, PARAMS)
    g = Constant(0.0, 2)
    sol = solve_dirichlet(sch, -1.0, g, tol=1e-11)
    bump = SphericalCap(2.0, 2)
    rs = []
    for eps in (1e-3, 2e-3):
        vals = sol.u.values + eps * bump.value(sch.cube_points).reshape(sol.u.values.shape)
        u = GridFunction(vals, GRID.h, GRID.R, g)
        rs.append(residual(sch, u, -1.0))
    assert rs[1] / rs[0] == pytest.approx(2.0, rel=1e-5)


def test_comparison_translation_by_constant(scheme):
    res = solve_dirichlet(scheme, -1.0, Constant(1.0, 2), tol=1e-10)
    v = res.u
    u = GridFunction(v.values + 0.5, GRID.h, GRID.R, Constant(1.5, 2))
    assert comparison_check(scheme, u, v)


def test_comparison_rejects_unordered_residuals(scheme):
    g = Constant(1.0, 2)
    u = solve_dirichlet(scheme, -1.0, g, tol=1e-10).u
    v = solve_dirichlet(scheme, -2.0, g, tol=1e-10).u
    with pytest.raises(RejectedInstance, match="supersolution"):
        comparison_check(scheme, u, v)


def test_comparison_rejects_unordered_exterior(scheme):
    res = solve_dirichlet(scheme, -1.0, Constant(1.0, 2), tol=1e-10)
    v = res.u
    shifted = v.values.copy()
    shifted[scheme.int_map.reshape(shifted.shape) >= 0] += 0.5
    u = GridFunction(shifted, GRID.h, GRID.R, Constant(0.5, 2))
    with pytest.raises(RejectedInstance, match="exterior"):
        comparison_check(scheme, u, v)


def test_sabotaged_scheme_fails_the_guard():
    sch = discretize(default_dictionary(PARAMS), GRID, PARAMS)
    res = solve_dirichlet(sch, -1.0, Constant(1.0, 2), tol=1e-10)
    u = GridFunction(res.u.values + 0.5, GRID.h, GRID.R, Constant(1.5, 2))
    sch.weights[0, 3] = -5.0
    assert not sch.monotone()
    assert comparison_check(sch, u, res.u) is False


def test_difference_of_solutions_sandwiched(scheme):
    g = Constant(0.0, 2)
    u1 = solve_dirichlet(scheme, -2.0, g, tol=1e-10).u
    u2 = solve_dirichlet(scheme, -1.0, g, tol=1e-10).u
    w = GridFunction(u1.values - u2.values, GRID.h, GRID.R, Constant(0.0, 2))
    per_op = scheme.apply_all(w)
    gap = scheme.apply(u1) - scheme.apply(u2)
    assert np.all(per_op.min(axis=0) - 1e-8 <= gap)
    assert np.all(gap <= per_op.max(axis=0) + 1e-8)


def test_checkpoint_roundtrip(tmp_path, scheme):
    res = solve_dirichlet(scheme, -1.0, Constant(0.2, 2), tol=1e-10)
    path = tmp_path / "state.bin"
    save_checkpoint(path, res.u, PARAMS.sigma)
    u2, sigma = load_checkpoint(path, exterior=Constant(0.2, 2))
    assert sigma == PARAMS.sigma
    assert u2.h == res.u.h and u2.R == res.u.R
    assert np.array_equal(u2.values, res.u.values)
    raw = path.read_bytes()
    assert raw.startswith(b"NLSOLVE1\n")
    with open(path, "r+b") as fh:
        fh.write(b"X")
    with pytest.raises(ValueError, match="checkpoint"):
        load_checkpoint(path)


def test_half_laplacian_profile_coarse():
    # 1d, order 1, unit isotropic kernel: the positive cap solves a
    # constant right-hand-side problem; calibrate the constant first
    params = KernelParams(n=1, sigma=1.0, lam=1.0, Lam=1.0, beta=0.0)
    cap = SphericalCap(0.5, 1)
    op = LinearOpSpec(fractional(params, 1.0))
    kaps = [eval_linear(cap, np.array([x]), op).value for x in (0.0, 0.4)]
    assert kaps[0] == pytest.approx(kaps[1], abs=2e-4)
    sch = discretize(OperatorDictionary((op,)), GridConfig(h=1.0 / 64.0, R=3.0), params)
    res = solve_dirichlet(sch, kaps[0], Constant(0.0, 1), tol=1e-11)
    exact = cap.value(sch.interior_points)
    got = res.u.values.ravel()[sch.interior_flat]
    assert np.max(np.abs(got - exact)) < 0.05

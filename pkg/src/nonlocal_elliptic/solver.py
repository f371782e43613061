"""Monotone lattice discretization and a Dirichlet solver for inf-sup operators.

The scheme lives on the cube lattice of a GridFunction: spacing h, lattice
ball radius R, unknowns at the nodes inside the unit ball.  Each linear
operator of a dictionary is discretized in three bands:

* off-center cells up to radius R - 1 carry cell-integrated kernel weights
  w_k = int_{V_k} K (Gauss-Legendre near the origin, midpoint far), applied
  to plain differences u(x + y_k) - u(x);
* the center cell contributes a curvature weight q / (2 h^2) on the 2n axis
  neighbors, with q = (1/n) int_{V_0} |y|^2 K_iso (the odd kernel part
  integrates to zero over the center cell by parity);
* everything beyond R - 1 is absorbed into a per-node affine term from the
  exterior data, gtail(x) - u(x) * mtail, so the lattice never reads the
  unknown outside its own ball.

The gradient compensator of the continuum operator is replaced by the
lattice moment of the weights: the drift actually discretized is
d = b - sum_{|y_k|<1} w_k y_k, applied upwind so every off-center weight
stays nonnegative.  Monotonicity is asserted on every build.

solve_dirichlet runs policy iteration over the dictionary (one direct
sparse solve per policy, lowest index wins ties) and falls back to a damped
explicit iteration when policies cycle or the system is too large for a
direct factorization.  Checkpoints dump the lattice with a fixed
little-endian float64 layout behind a one-line ascii header.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConfigurationError, NumericError, RejectedInstance
from .kernel_family import (
    critical_samples,
    drift_admissibility,
    eval_kernel,
    kernel_bounds_check,
)
from .nonlocal_eval import GridFunction
from .profiles import Constant
from .quadrature import (
    build_panels,
    gauss_panel,
    power_primitive,
    power_tail,
    sphere_rule,
    sphere_surface,
)

_DIRECT_MAX_UNKNOWNS = 5000
_DIRECT_MAX_ENTRIES = 40_000_000


@dataclass(frozen=True)
class GridConfig:
    """Lattice geometry: spacing h and lattice ball radius R."""

    h: float
    R: float

    def __post_init__(self):
        bad = []
        if self.h <= 0.0:
            bad.append(f"grid spacing must be positive, got {self.h}")
        elif self.R < 1.0 + self.h:
            bad.append(
                f"lattice radius {self.R} leaves no exterior collar; need R >= 1 + h"
            )
        if bad:
            raise ConfigurationError(bad)


def _tensor_rule(order, n):
    if order == 1:
        # midpoint rule on [-1, 1]^n
        return np.zeros((1, n)), np.array([2.0**n])
    x, w = np.polynomial.legendre.leggauss(order)
    grids = np.meshgrid(*([x] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w] * n), indexing="ij")
    wts = np.ones(pts.shape[0])
    for ax in range(n):
        wts *= wgrids[ax].ravel()
    return pts, wts


def _cell_weights(spec, centers, h, order, r_cut):
    """Integral of K over each cell, clipped to the ball |y| <= r_cut."""
    n = spec.n
    if centers.shape[0] == 0:
        return np.zeros(0)
    xi, wxi = _tensor_rule(order, n)
    pts = centers[:, None, :] + 0.5 * h * xi[None, :, :]
    flat = pts.reshape(-1, n)
    vals = np.atleast_1d(eval_kernel(spec, flat))
    vals = vals * (np.linalg.norm(flat, axis=1) <= r_cut)
    return (0.5 * h) ** n * vals.reshape(centers.shape[0], -1) @ wxi


def _center_curvature(spec, h):
    """(1/n) int_{V_0} |y|^2 K_iso over the center cell, exact in radius.

    In polar form the (2 - sigma) prefactor cancels against the radial
    primitive, leaving a plain angular average of rho_max^(2-sigma) over
    the cube cell's boundary distance rho_max(theta) = (h/2)/max|theta_i|.
    """
    theta, wt = sphere_rule(spec.n, 256)
    rho_max = 0.5 * h / np.max(np.abs(theta), axis=1)
    return spec.iso_coef / spec.n * float(np.dot(wt, rho_max ** (2.0 - spec.sigma)))


def _tail_mass(spec, r_cut):
    """int_{|y| > r_cut} K(y) dy; the odd part integrates to zero exactly."""
    if spec.iso_cut <= r_cut:
        return 0.0
    surf = sphere_surface(spec.n)
    if math.isinf(spec.iso_cut):
        radial = power_tail(-1.0 - spec.sigma, r_cut)
    else:
        radial = power_primitive(-1.0 - spec.sigma, r_cut, spec.iso_cut)
    return (2.0 - spec.sigma) * spec.iso_coef * surf * radial


@dataclass(eq=False)
class DiscreteScheme:
    """Assembled lattice scheme for one operator dictionary.

    weights[o, k] is the full off-center weight of dictionary member o at
    lattice offset offsets[k] (cell integral plus curvature and upwind
    shares on the axis neighbors); drift[o] is the upwinded net drift
    b - m_h; center_total[o] = sum_k weights[o, k] + mtail[o] is the
    magnitude of the (negative) diagonal.
    """

    params: object
    dictionary: object
    grid: GridConfig
    offsets: np.ndarray
    weights: np.ndarray
    drift: np.ndarray
    mtail: np.ndarray
    tail_flags: np.ndarray

    def __post_init__(self):
        n = self.params.n
        self.M = GridFunction.lattice_size(self.grid.R, self.grid.h)
        self.N = 2 * self.M + 1
        axis = np.arange(-self.M, self.M + 1) * self.grid.h
        grids = np.meshgrid(*([axis] * n), indexing="ij")
        self.cube_points = np.stack([g.ravel() for g in grids], axis=1)
        rr = np.linalg.norm(self.cube_points, axis=1)
        self.interior_flat = np.flatnonzero(rr < 1.0 - 1e-12)
        self.n_interior = len(self.interior_flat)
        self.int_map = np.full(self.N**n, -1, dtype=np.int64)
        self.int_map[self.interior_flat] = np.arange(self.n_interior)
        strides = self.N ** np.arange(n - 1, -1, -1)
        self.offset_flat = self.offsets @ strides

    @property
    def interior_points(self):
        return self.cube_points[self.interior_flat]

    @property
    def center_total(self):
        return self.weights.sum(axis=1) + self.mtail

    def monotone(self):
        """The build-time certificate, re-checkable after any mutation."""
        return bool(np.all(self.weights >= 0.0)) and bool(np.all(self.mtail >= 0.0))

    def _row_blocks(self):
        block = max(1, 4_000_000 // max(1, len(self.offset_flat)))
        for lo in range(0, self.n_interior, block):
            yield slice(lo, min(lo + block, self.n_interior))

    def _check_lattice(self, u):
        if (
            abs(u.h - self.grid.h) > 1e-12
            or abs(u.R - self.grid.R) > 1e-12
            or u.values.shape != (self.N,) * self.params.n
        ):
            raise ValueError("grid function lattice does not match the scheme")

    def tail_values(self, exterior):
        """gtail[o, i] = int_{|y| > R-1} exterior(x_i + y) K_o(y) dy."""
        out = np.zeros((len(self.dictionary.ops), self.n_interior))
        if not np.any(self.tail_flags):
            return out
        n = self.params.n
        r_cut = self.grid.R - 1.0
        pts = self.interior_points
        theta, wt = sphere_rule(n, 32)
        model = exterior.far_model()
        for o, op in enumerate(self.dictionary.ops):
            if not self.tail_flags[o]:
                continue
            spec = op.kernel
            t_out = spec.iso_cut if math.isfinite(spec.iso_cut) else max(8.0 * r_cut, 64.0)
            panels = build_panels(
                r_cut, t_out, 1.8, breakpoints=(spec.odd_lo, spec.odd_hi)
            )
            acc = np.zeros(self.n_interior)
            for a, b, _ in panels:
                rho, wr = gauss_panel(a, b, 8)
                for r, w_r in zip(rho, wr):
                    Y = r * theta
                    kv = np.atleast_1d(eval_kernel(spec, Y))
                    gv = exterior.value((pts[:, None, :] + Y[None, :, :]).reshape(-1, n))
                    acc += w_r * r ** (n - 1.0) * gv.reshape(self.n_interior, -1) @ (wt * kv)
            if math.isinf(spec.iso_cut):
                # beyond the quadrature window only the radial model of the
                # exterior survives (odd kernel part x radial model -> 0);
                # deviations from the model are dropped here
                if model.coef != 0.0 and model.power >= spec.sigma:
                    raise NumericError(
                        f"exterior data grows like r^{model.power:g} with "
                        f"sigma = {spec.sigma:g}; the absorbed tail diverges"
                    )
                radial = model.offset * power_tail(-1.0 - spec.sigma, t_out)
                if model.coef != 0.0:
                    radial += model.coef * power_tail(model.power - 1.0 - spec.sigma, t_out)
                acc += (2.0 - spec.sigma) * spec.iso_coef * sphere_surface(n) * radial
            out[o] = acc
        return out

    def apply_all(self, u):
        """Values of every dictionary member at the interior nodes."""
        self._check_lattice(u)
        gt = self.tail_values(u.exterior)
        return self._apply_cube(u.values.ravel(), gt)

    def _apply_cube(self, uflat, gt):
        n_ops = len(self.dictionary.ops)
        out = np.empty((n_ops, self.n_interior))
        center = self.center_total
        for rows in self._row_blocks():
            tgt = self.interior_flat[rows, None] + self.offset_flat[None, :]
            gathered = uflat[tgt]
            u_here = uflat[self.interior_flat[rows]]
            for o in range(n_ops):
                out[o, rows] = gathered @ self.weights[o] - center[o] * u_here
        return out + gt

    def combine(self, vals):
        """Collapse per-operator values with the dictionary's combinator."""
        if self.dictionary.combinator == "inf":
            return vals.min(axis=0)
        if self.dictionary.combinator == "sup":
            return vals.max(axis=0)
        return np.stack(
            [vals[list(g)].max(axis=0) for g in self.dictionary.groups]
        ).min(axis=0)

    def select(self, vals):
        """Active member per node; ties go to the lowest dictionary index."""
        if self.dictionary.combinator == "inf":
            return np.argmin(vals, axis=0)
        if self.dictionary.combinator == "sup":
            return np.argmax(vals, axis=0)
        cols = np.arange(vals.shape[1])
        members, group_vals = [], []
        for g in self.dictionary.groups:
            sub = vals[list(g)]
            mi = np.argmax(sub, axis=0)
            members.append(np.asarray(g)[mi])
            group_vals.append(sub[mi, cols])
        gi = np.argmin(np.stack(group_vals), axis=0)
        return np.stack(members)[gi, cols]

    def apply(self, u):
        """Combined dictionary value I u at the interior nodes."""
        return self.combine(self.apply_all(u))


def discretize(dictionary, grid, params):
    """Assemble a monotone scheme for the dictionary on the given lattice.

    Every member is re-checked for class membership and drift
    admissibility; the lattice must resolve the kernel scale (h at most an
    eighth of the lower support) and keep the upwind consistency loss
    h^(2-sigma) under 0.8.  Kernels reaching beyond R - 1 additionally
    need R >= 3 so the absorbed tail stays outside the unit ball.
    """
    bad = []
    for idx, op in enumerate(dictionary.ops):
        spec = op.kernel
        if spec.n != params.n or spec.sigma != params.sigma:
            bad.append(f"operator {idx}: kernel dimension or order differs from params")
            continue
        ok, worst = kernel_bounds_check(spec, params, critical_samples(spec, params))
        if not ok:
            bad.append(f"operator {idx}: kernel leaves the class (violation {worst:.3g})")
        ok, ratio = drift_admissibility(op, params.beta)
        if not ok:
            bad.append(f"operator {idx}: drift load ratio {ratio:.3g} exceeds 1")
    h, R = grid.h, grid.R
    h_max = min(1.0, params.lower_support) / 8.0
    if h > h_max + 1e-12:
        bad.append(
            f"grid spacing h = {h:g} violates the stability bound "
            f"h <= min(1, lower_support)/8 = {h_max:g}"
        )
    if h ** (2.0 - params.sigma) > 0.8 + 1e-12:
        bad.append(
            f"h^(2-sigma) = {h ** (2.0 - params.sigma):.3f} exceeds 0.8; the upwind "
            f"drift discretization loses consistency at order sigma = {params.sigma:g}"
        )
    r_cut = R - 1.0
    if R < 3.0 and any(op.kernel.iso_cut > r_cut + 1e-12 for op in dictionary.ops):
        bad.append(
            f"lattice radius R = {R:g} too small: kernels reaching beyond "
            f"R - 1 = {r_cut:g} need R >= 3 so the absorbed tail stays "
            "outside the unit ball"
        )
    if bad:
        raise ConfigurationError(bad)

    n = params.n
    reach = min(r_cut, max(op.kernel.iso_cut for op in dictionary.ops))
    halo = 0.5 * h * math.sqrt(n)
    K = int(math.floor((reach + halo) / h + 1e-9))
    rng = np.arange(-K, K + 1)
    grids = np.meshgrid(*([rng] * n), indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1)
    centers = offsets * h
    rr = np.linalg.norm(centers, axis=1)
    keep = (rr > 0.0) & (rr <= reach + halo)
    offsets, centers, rr = offsets[keep], centers[keep], rr[keep]

    near, mid = rr <= 4.0 * h + 1e-12, rr <= 16.0 * h + 1e-12
    n_ops = len(dictionary.ops)
    weights = np.zeros((n_ops, len(offsets)))
    for o, op in enumerate(dictionary.ops):
        spec = op.kernel
        w = np.empty(len(offsets))
        w[near] = _cell_weights(spec, centers[near], h, 7, r_cut)
        band = mid & ~near
        w[band] = _cell_weights(spec, centers[band], h, 3, r_cut)
        w[~mid] = _cell_weights(spec, centers[~mid], h, 1, r_cut)
        weights[o] = w

    keep = np.any(weights > 0.0, axis=0) | (rr <= 1.5 * h)
    offsets, centers, rr, weights = offsets[keep], centers[keep], rr[keep], weights[:, keep]

    index_of = {tuple(k): i for i, k in enumerate(offsets)}
    drift = np.zeros((n_ops, n))
    mtail = np.zeros(n_ops)
    for o, op in enumerate(dictionary.ops):
        spec = op.kernel
        m_h = weights[o] @ (centers * (rr < 1.0 - 1e-12)[:, None])
        d = np.asarray(op.drift) - m_h
        q = _center_curvature(spec, h)
        for j in range(n):
            up = tuple(int(v) for v in np.eye(n, dtype=int)[j])
            dn = tuple(-v for v in up)
            weights[o, index_of[up]] += 0.5 * q / h**2 + max(d[j], 0.0) / h
            weights[o, index_of[dn]] += 0.5 * q / h**2 + max(-d[j], 0.0) / h
        drift[o] = d
        mtail[o] = _tail_mass(spec, r_cut)

    scheme = DiscreteScheme(
        params=params,
        dictionary=dictionary,
        grid=grid,
        offsets=offsets,
        weights=weights,
        drift=drift,
        mtail=mtail,
        tail_flags=np.array([op.kernel.iso_cut > r_cut + 1e-12 for op in dictionary.ops]),
    )
    if not scheme.monotone():
        raise NumericError("assembled scheme has a negative weight")
    return scheme


@dataclass(frozen=True)
class SolveResult:
    u: GridFunction
    residual_norm: float
    iterations: int
    contraction_estimate: float
    comparison_certificate: bool
    sup_norm_ratio: float


def _values_on(points, f):
    if np.isscalar(f):
        return np.full(len(points), float(f))
    if hasattr(f, "value"):
        return np.atleast_1d(f.value(points))
    arr = np.asarray(f, dtype=float)
    if arr.shape == (len(points),):
        return arr
    raise ValueError(f"cannot read field values from shape {arr.shape}")


def _interior_field(scheme, f):
    arr = np.asarray(f, dtype=float) if not np.isscalar(f) and not hasattr(f, "value") else None
    if arr is not None and arr.shape == (scheme.N,) * scheme.params.n:
        return arr.ravel()[scheme.interior_flat]
    return _values_on(scheme.interior_points, f)


def _policy_system(scheme, pi, f_int, gflat, gt):
    rows_idx, cols_idx, data = [], [], []
    rhs = f_int - gt[pi, np.arange(scheme.n_interior)]
    for rows in scheme._row_blocks():
        tgt = scheme.interior_flat[rows, None] + scheme.offset_flat[None, :]
        tcol = scheme.int_map[tgt]
        W = scheme.weights[pi[rows]]
        inside = tcol >= 0
        rr = np.broadcast_to(np.arange(rows.start, rows.stop)[:, None], tcol.shape)
        rows_idx.append(rr[inside])
        cols_idx.append(tcol[inside])
        data.append(W[inside])
        rhs[rows] -= np.where(inside, 0.0, W * gflat[tgt]).sum(axis=1)
    A = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows_idx), np.concatenate(cols_idx))),
        shape=(scheme.n_interior, scheme.n_interior),
    ).tocsc()
    A -= sparse.diags(scheme.center_total[pi])
    return A, rhs


def solve_dirichlet(scheme, f, g, tol=1e-10, max_policy=60, euler_cap=20000, initial=None):
    """Solve I u = f inside the unit ball with exterior data g.

    Policy iteration: freeze the active member per node, solve the linear
    system directly, re-select.  Linear dictionaries finish in one round;
    if policies cycle, or the system is too large to factor, a damped
    explicit iteration (step 0.9 over the center weight) takes over.
    Raises NumericError with the residual history when neither converges.
    """
    n_int = scheme.n_interior
    f_int = _interior_field(scheme, f)
    gflat = _values_on(scheme.cube_points, g)
    gt = scheme.tail_values(g)

    ucube = gflat.copy()
    if initial is None:
        ucube[scheme.interior_flat] = 0.0
    else:
        ucube[scheme.interior_flat] = _interior_field(scheme, initial)

    direct_ok = (
        n_int <= _DIRECT_MAX_UNKNOWNS
        and n_int * len(scheme.offset_flat) <= _DIRECT_MAX_ENTRIES
    )
    history = []
    iterations = 0
    pi = scheme.select(scheme._apply_cube(ucube, gt))
    converged = False
    if direct_ok:
        for _ in range(max_policy):
            A, rhs = _policy_system(scheme, pi, f_int, gflat, gt)
            ucube[scheme.interior_flat] = splu(A).solve(rhs)
            iterations += 1
            vals = scheme._apply_cube(ucube, gt)
            # the residual is measured on the combined operator, so hitting
            # tol certifies the solve no matter which members stay active
            res = float(np.max(np.abs(scheme.combine(vals) - f_int)))
            history.append(res)
            if res <= tol:
                converged = True
                break
            pi = scheme.select(vals)

    if not converged:
        center = scheme.center_total
        for _ in range(euler_cap):
            vals = scheme._apply_cube(ucube, gt)
            pi = scheme.select(vals)
            resid_vec = scheme.combine(vals) - f_int
            res = float(np.max(np.abs(resid_vec)))
            history.append(res)
            iterations += 1
            if res <= tol:
                converged = True
                break
            if not math.isfinite(res) or res > 1e8 * (1.0 + history[0]):
                err = NumericError(
                    f"explicit iteration diverged (residual {res:.3g}); "
                    f"history tail {[f'{r:.3g}' for r in history[-5:]]}"
                )
                err.residual_history = history
                raise err
            ucube[scheme.interior_flat] += 0.9 / center[pi] * resid_vec
        if not converged:
            err = NumericError(
                f"iteration cap reached at residual {history[-1]:.3g} (tol {tol:g}); "
                f"history tail {[f'{r:.3g}' for r in history[-5:]]}"
            )
            err.residual_history = history
            raise err

    # single-step sup-norm contraction bound of the explicit map under the
    # final policy: interior-coupled mass over total mass, worst node
    contraction = 0.0
    center = scheme.center_total
    for rows in scheme._row_blocks():
        tgt = scheme.interior_flat[rows, None] + scheme.offset_flat[None, :]
        W = scheme.weights[pi[rows]]
        inside_mass = np.where(scheme.int_map[tgt] >= 0, W, 0.0).sum(axis=1)
        contraction = max(contraction, float(np.max(inside_mass / center[pi[rows]])))

    ext = np.setdiff1d(np.arange(scheme.N ** scheme.params.n), scheme.interior_flat)
    gmax = float(np.max(np.abs(gflat[ext]))) if len(ext) else 0.0
    fmax = float(np.max(np.abs(f_int))) if n_int else 0.0
    umax = float(np.max(np.abs(ucube[scheme.interior_flat])))
    ratio = max(0.0, umax - gmax) / fmax if fmax > 1e-300 else 0.0

    u = GridFunction(
        ucube.reshape((scheme.N,) * scheme.params.n),
        scheme.grid.h,
        scheme.grid.R,
        exterior=g,
    )
    return SolveResult(
        u=u,
        residual_norm=history[-1],
        iterations=iterations,
        contraction_estimate=contraction,
        comparison_certificate=scheme.monotone(),
        sup_norm_ratio=ratio,
    )


def residual(scheme, u, f):
    """Max-norm of I u - f over the interior nodes."""
    f_int = _interior_field(scheme, f)
    return float(np.max(np.abs(scheme.apply(u) - f_int)))


def comparison_check(scheme, u, v, tol=1e-8):
    """Does exterior ordering u >= v propagate to the interior?

    Requires the residual ordering I u <= I v (u super-, v subsolution for
    a common right-hand side) and ordered exterior data; returns False
    immediately when the scheme's monotonicity certificate is void.
    """
    if not scheme.monotone():
        return False
    scheme._check_lattice(u)
    scheme._check_lattice(v)
    gap = scheme.apply(u) - scheme.apply(v)
    worst = float(np.max(gap))
    if worst > tol:
        raise RejectedInstance(
            f"residual ordering fails by {worst:.3g}: left input is not a "
            "supersolution relative to the right one"
        )
    ext = np.setdiff1d(np.arange(scheme.N ** scheme.params.n), scheme.interior_flat)
    diff_ext = u.values.ravel()[ext] - v.values.ravel()[ext]
    far = []
    theta, _ = sphere_rule(scheme.params.n, 16)
    for rad in (scheme.grid.R + 1.0, 3.0 * scheme.grid.R, 10.0 * scheme.grid.R):
        P = rad * theta
        far.append(np.min(u.value(P) - v.value(P)))
    if min(float(np.min(diff_ext)), min(far)) < -tol:
        raise RejectedInstance("exterior data are not ordered")
    diff_int = u.values.ravel()[scheme.interior_flat] - v.values.ravel()[scheme.interior_flat]
    return bool(np.min(diff_int) >= -10.0 * tol)


_MAGIC = b"NLSOLVE1\n"


def save_checkpoint(path, u, sigma):
    """Dump a lattice to disk: magic, ascii header 'n h R sigma', then the
    node values as little-endian float64 in C order."""
    header = f"{u.n} {u.h:.17g} {u.R:.17g} {float(sigma):.17g}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header)
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def load_checkpoint(path, exterior=None):
    """Read a checkpoint back; returns (GridFunction, sigma).

    The exterior descriptor is not serialized; pass one, or the loaded
    field falls back to zero outside the lattice ball.
    """
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a solver checkpoint")
        header = fh.readline().decode("ascii").split()
        n, h, R, sigma = int(header[0]), float(header[1]), float(header[2]), float(header[3])
        raw = fh.read()
    values = np.frombuffer(raw, dtype="<f8")
    side = round(len(values) ** (1.0 / n))
    if side**n != len(values):
        raise ValueError(f"{path} holds {len(values)} values, not a cube lattice")
    values = values.reshape((side,) * n).copy()
    return GridFunction(values, h, R, exterior or Constant(0.0, n)), sigma

"""Kernel class and operator specifications.

The operators handled by this package have the form

    L u(x) = PV int [u(x+y) - u(x) - Du(x).y 1_{|y|<1}] K(y) dy + b . Du(x)

with a kernel squeezed between two extremal profiles: below by
lam * (2 - sigma) |y|^(-n-sigma) on a ball of radius lower_support, above by
Lam * (2 - sigma) |y|^(-n-sigma) everywhere.  Kernels here are stored in
a canonical two-part form (an isotropic piece with a support cutoff plus
an odd directional piece on a radial shell) that is closed under the
zoom rescaling K -> r^(n+sigma) K(r .), so renormalization arguments can
be exercised exactly.

Drift vectors are constrained through the scale-invariant ratio
r^(sigma-1) |b + int_{B_1 \\ B_r} y K dy|, which must stay below beta at
every scale; `drift_admissibility` checks this on a dyadic grid and
`rescale_operator` implements the zoom map on whole operators.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .quadrature import power_primitive, sphere_surface


@dataclass(frozen=True)
class KernelParams:
    """Ellipticity data shared by a whole family of operators."""

    n: int
    sigma: float
    lam: float
    Lam: float
    beta: float
    lower_support: float = 1.0

    def __post_init__(self):
        bad = []
        if self.n not in (1, 2, 3):
            bad.append(f"dimension must be 1, 2 or 3, got {self.n}")
        if not 1.0 <= self.sigma < 2.0:
            bad.append(f"order sigma must lie in [1, 2), got {self.sigma}")
        if not 0.0 < self.lam <= self.Lam:
            bad.append(f"need 0 < lam <= Lam, got lam={self.lam}, Lam={self.Lam}")
        if self.beta < 0.0:
            bad.append(f"drift bound beta must be >= 0, got {self.beta}")
        if self.lower_support <= 0.0:
            bad.append(f"lower-bound support radius must be positive, got {self.lower_support}")
        if bad:
            raise ConfigurationError(bad)


@dataclass(frozen=True)
class KernelSpec:
    """Canonical kernel: (2-sigma)|y|^(-n-sigma) [a 1_{|y|<=iso_cut} + (c.yhat) 1_{lo<=|y|<=hi}].

    `kind` records how the kernel was built; evaluation and rescaling use
    only the structural fields.  `odd_vec = None` means no odd part.
    """

    kind: str
    n: int
    sigma: float
    iso_coef: float
    iso_cut: float = math.inf
    odd_vec: tuple = None
    odd_lo: float = 0.0
    odd_hi: float = math.inf

    def __post_init__(self):
        bad = []
        if self.iso_coef <= 0.0:
            bad.append(f"isotropic coefficient must be positive, got {self.iso_coef}")
        if self.iso_cut <= 0.0:
            bad.append("isotropic cutoff must be positive")
        if self.odd_vec is not None:
            c = float(np.linalg.norm(self.odd_vec))
            if len(self.odd_vec) != self.n:
                bad.append("odd direction has wrong dimension")
            if c > self.iso_coef + 1e-15:
                bad.append(
                    f"odd amplitude {c:.6g} exceeds isotropic coefficient "
                    f"{self.iso_coef:.6g}; kernel would go negative"
                )
            if not 0.0 <= self.odd_lo < self.odd_hi:
                bad.append("odd shell radii must satisfy 0 <= lo < hi")
            if self.odd_hi > self.iso_cut:
                bad.append("odd shell must sit inside the isotropic support")
        if bad:
            raise ConfigurationError(bad)

    @property
    def odd(self):
        return self.odd_vec is not None and np.linalg.norm(self.odd_vec) > 0

    def smooth_off_origin(self):
        """True when K has no interior cutoffs (needed for derivative bounds)."""
        full_odd = self.odd_lo == 0.0 and math.isinf(self.odd_hi)
        return math.isinf(self.iso_cut) and (not self.odd or full_odd)


@dataclass(frozen=True)
class LinearOpSpec:
    """One linear operator: a kernel plus a constant drift vector."""

    kernel: KernelSpec
    drift: tuple = None

    def __post_init__(self):
        b = self.drift
        if b is None:
            object.__setattr__(self, "drift", tuple(0.0 for _ in range(self.kernel.n)))
        elif len(b) != self.kernel.n:
            raise ConfigurationError("drift vector has wrong dimension")
        else:
            object.__setattr__(self, "drift", tuple(float(v) for v in b))


def extremal_minus(params):
    """Smallest kernel of the class: iso coefficient lam, support lower_support."""
    return KernelSpec("extremal_minus", params.n, params.sigma, params.lam, params.lower_support)


def extremal_plus(params):
    """Largest kernel of the class: iso coefficient Lam, full support."""
    return KernelSpec("extremal_plus", params.n, params.sigma, params.Lam)


def fractional(params, a=None):
    """Pure isotropic power kernel with coefficient a (defaults to lam)."""
    a = params.lam if a is None else float(a)
    return KernelSpec("fractional", params.n, params.sigma, a)


def tilted(params, a, c):
    """Isotropic part a plus an odd tilt c . yhat active at all radii."""
    return KernelSpec("tilted", params.n, params.sigma, float(a), math.inf, tuple(map(float, c)))


def shell_tilted(params, a, c, inner, outer):
    """Odd tilt confined to the radial shell [inner, outer]."""
    return KernelSpec(
        "shell_tilted",
        params.n,
        params.sigma,
        float(a),
        math.inf,
        tuple(map(float, c)),
        float(inner),
        float(outer),
    )


def eval_kernel(spec, Y):
    """Kernel values at rows of Y ((N, n) or a single point).

    Raises ValueError at the origin, where the kernel is singular.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    r = np.sqrt(np.sum(Y * Y, axis=1))
    if np.any(r == 0.0):
        raise ValueError("kernel evaluated at y = 0")
    base = (2.0 - spec.sigma) * r ** (-spec.n - spec.sigma)
    fac = np.where(r <= spec.iso_cut, spec.iso_coef, 0.0)
    if spec.odd:
        c = np.asarray(spec.odd_vec)
        act = (r >= spec.odd_lo) & (r <= spec.odd_hi)
        fac = fac + np.where(act, (Y @ c) / r, 0.0)
    out = base * fac
    return float(out[0]) if out.shape[0] == 1 else out


def critical_samples(spec, params, n_random=0, rng=None):
    """Sample points that pin down the two-sided kernel bounds.

    Takes every structural radius (support edges, shell edges, the unit
    sphere) slightly inside and outside, crossed with the odd direction
    and its negation plus the coordinate axes.  Optional random points
    pad the set.
    """
    cand = (params.lower_support / 2, params.lower_support, 1.0,
            spec.odd_lo, spec.odd_hi, spec.iso_cut,
            max(1.0, params.lower_support) * 10.0)
    radii = sorted({r * f for r in cand if 0.0 < r < math.inf
                    for f in (0.999, 1.0, 1.001)})
    dirs = [np.eye(spec.n)[j] for j in range(spec.n)]
    dirs.append(-dirs[0])
    if spec.odd:
        chat = np.asarray(spec.odd_vec, dtype=float)
        chat = chat / np.linalg.norm(chat)
        dirs += [chat, -chat]
    pts = [r * d for r in radii for d in dirs]
    if n_random:
        rng = rng if rng is not None else np.random.default_rng(0)
        Y = rng.normal(size=(n_random, spec.n))
        Y *= (rng.uniform(0.01, 3.0, size=n_random)
              / np.linalg.norm(Y, axis=1))[:, None]
        pts += list(Y)
    return np.asarray(pts)


def kernel_bounds_check(spec, params, samples):
    """Verify K- <= K <= K+ at every sample point.

    Returns (ok, worst) where worst is the largest signed violation of
    either bound, positive meaning out of class.  Violations are measured
    in amplitude space, i.e. relative to (2-sigma)|y|^(-n-sigma), so the
    report is not dominated by points near the origin.
    """
    Y = np.atleast_2d(np.asarray(samples, dtype=float))
    if Y.size == 0:
        raise ValueError("sample set must be non-empty")
    rr = np.linalg.norm(Y, axis=1)
    if np.any(rr == 0.0):
        raise ValueError("kernel evaluated at y = 0")
    vals = np.atleast_1d(eval_kernel(spec, Y))
    base = (2.0 - spec.sigma) * rr ** (-spec.n - spec.sigma)
    amp = vals / base
    lo = np.where(rr <= params.lower_support, params.lam, 0.0)
    worst = max(float(np.max(lo - amp)), float(np.max(amp - params.Lam)))
    return worst <= 1e-12, worst


def moment_annulus(spec, r_lo, r_hi):
    """int_{r_lo <= |y| <= r_hi} y K(y) dy, in closed form.

    Only the odd part contributes; the isotropic part integrates to zero
    by symmetry.
    """
    if not spec.odd:
        return np.zeros(spec.n)
    a = max(r_lo, spec.odd_lo)
    b = min(r_hi, spec.odd_hi)
    if b <= a:
        return np.zeros(spec.n)
    radial = power_primitive(-spec.sigma, a, b)
    c = np.asarray(spec.odd_vec)
    return (2.0 - spec.sigma) * (sphere_surface(spec.n) / spec.n) * radial * c


def moment(spec, r):
    """Compensator drift int_{B_1 \\ B_r} y K(y) dy."""
    return moment_annulus(spec, r, 1.0)


def drift_profile(op, r_grid=None):
    """Scale-by-scale drift load q(r) = r^(sigma-1) |b + moment(r)|.

    Returns (radii, q) arrays over a dyadic grid (default 2^0 .. 2^-20).
    """
    spec = op.kernel
    if r_grid is None:
        r_grid = 2.0 ** -np.arange(0, 21, dtype=float)
    r_grid = np.asarray(r_grid, dtype=float)
    b = np.asarray(op.drift)
    q = np.empty(len(r_grid))
    for i, r in enumerate(r_grid):
        eff = b + moment(spec, r)
        q[i] = r ** (spec.sigma - 1.0) * float(np.linalg.norm(eff))
    return r_grid, q


def drift_admissibility(op, beta, r_grid=None):
    """Check sup_r q(r) <= beta.  Returns (ok, worst_ratio).

    worst_ratio is max q / beta, so values above 1 mean the drift grows
    faster under zoom than the class tolerates (the sigma = 1 constant
    tilt is the canonical offender, with logarithmic growth).
    """
    _, q = drift_profile(op, r_grid)
    qmax = float(np.max(q))
    if beta == 0.0:
        return qmax <= 1e-14, math.inf if qmax > 1e-14 else 0.0
    ratio = qmax / beta
    return ratio <= 1.0 + 1e-12, ratio


def rescale_operator(op, r, alpha=None):
    """Zoom by factor r: K -> r^(n+sigma) K(r .), b -> r^(sigma-1)(b + moment(r)).

    The canonical form is closed under this map (cut radii divide by r),
    and composing zooms r1 then r2 equals a single zoom by r1 * r2.  When
    `alpha` is given (growth exponent of the solution normalization, in
    (0, sigma]) the returned pair includes the factor multiplying the
    right-hand side, r^(sigma - alpha).
    """
    if not 0.0 < r <= 1.0:
        raise ConfigurationError(f"zoom factor must lie in (0, 1], got {r}")
    spec = op.kernel
    new_spec = replace(
        spec,
        iso_cut=spec.iso_cut / r,
        odd_lo=spec.odd_lo / r,
        odd_hi=spec.odd_hi / r,
    )
    b = np.asarray(op.drift) + moment(spec, r)
    new_op = LinearOpSpec(new_spec, tuple(r ** (spec.sigma - 1.0) * b))
    if alpha is None:
        return new_op
    if not 0.0 < alpha <= spec.sigma:
        raise ConfigurationError(f"growth exponent must lie in (0, sigma], got {alpha}")
    return new_op, r ** (spec.sigma - alpha)


def compensated_shell(params, c, inner, outer, a=None):
    """Shell-tilted operator whose drift cancels the shell's moment.

    The drift is chosen as b = -int_{shell cap B_1} y K dy, which makes
    q(r) vanish identically for r below the shell: the odd mass seen
    from inside is exactly offset.  |b| <= beta is required so the
    operator is admissible at scale 1.
    """
    spec = shell_tilted(params, params.lam if a is None else a, c, inner, outer)
    b = -moment(spec, 0.0)
    if np.linalg.norm(b) > params.beta + 1e-12:
        raise ConfigurationError(
            f"compensating drift magnitude {np.linalg.norm(b):.6g} exceeds beta={params.beta}"
        )
    return LinearOpSpec(spec, tuple(b))


@dataclass(frozen=True)
class OperatorDictionary:
    """A finite family of linear operators with a min/max recipe.

    combinator 'inf' takes the pointwise minimum over all operators,
    'sup' the maximum, and 'infsup' a minimum over groups of maxima
    (groups listed as index tuples into `ops`).
    """

    ops: tuple
    combinator: str = "inf"
    groups: tuple = None

    def __post_init__(self):
        bad = []
        if self.combinator not in ("inf", "sup", "infsup"):
            bad.append(f"unknown combinator {self.combinator!r}")
        if not self.ops:
            bad.append("operator dictionary is empty")
        dims = {op.kernel.n for op in self.ops}
        if len(dims) > 1:
            bad.append("operators mix dimensions")
        if self.combinator == "infsup":
            if not self.groups:
                bad.append("'infsup' needs a group partition")
            else:
                seen = [i for g in self.groups for i in g]
                if sorted(seen) != list(range(len(self.ops))):
                    bad.append("groups must partition the operator list")
        if bad:
            raise ConfigurationError(bad)
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))

    @property
    def n(self):
        return self.ops[0].kernel.n


def default_dictionary(params, combinator="inf"):
    """A small representative dictionary touching every kernel feature."""
    mid = 0.5 * (params.lam + params.Lam)
    ops = [
        LinearOpSpec(extremal_minus(params)),
        LinearOpSpec(extremal_plus(params)),
    ]
    drift = [0.0] * params.n
    drift[0] = 0.3 * params.beta
    ops.append(LinearOpSpec(fractional(params, mid), tuple(drift)))
    c = [0.0] * params.n
    c[-1] = 0.25 * params.lam
    try:
        ops.append(compensated_shell(params, c, 0.5, 1.0, a=mid))
    except ConfigurationError:
        pass
    if params.sigma > 1.0:
        # constant tilt with no drift: worst load over scales is
        # (2-sigma)(|dB1|/n)|c|/(sigma-1), so cap |c| at 80% of budget
        cap = 0.8 * params.beta * (params.sigma - 1.0) / (
            (2.0 - params.sigma) * sphere_surface(params.n) / params.n
        )
        mag = min(0.25 * params.lam, cap)
        if mag > 1e-12:
            ct = [0.0] * params.n
            ct[-1] = mag
            ops.append(LinearOpSpec(tilted(params, mid, ct)))
    groups = None
    if combinator == "infsup":
        k = len(ops)
        groups = (tuple(range(k // 2)), tuple(range(k // 2, k)))
    return OperatorDictionary(tuple(ops), combinator, groups)

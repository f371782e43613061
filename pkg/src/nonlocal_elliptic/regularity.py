"""Empirical smoothness measurements on solved fields.

Three post-processing probes, all pure functions of node values:

* oscillation tables over shrinking balls, with a log-log exponent fit
  (the measured Holder exponent at a point);

* superlevel-set tails |{u > t}| inside a fixed ball, with a power-law
  fit of the decay in t (the measured point-estimate exponent);

* incremental-quotient tables, the same oscillation fit applied to
  (u(. + s e) - u)/s, which indicates one extra order of smoothness for
  translation-invariant equations whose kernels carry no interior
  cutoffs.

Fits deliberately exclude radii under eight lattice spacings, where
interpolation noise dominates the measurement.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, RejectedInstance
from .nonlocal_eval import GridFunction
from .profiles import Constant
from .solver import _values_on

FIT_LEVELS = 4
MIN_FIT_RADIUS_CELLS = 8.0


@dataclass(frozen=True)
class DecayTable:
    """Oscillations over a shrinking family of balls plus the fitted rate."""

    radii: tuple
    oscillations: tuple
    fitted_exponent: float
    fit_residual: float

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        o = np.asarray(self.oscillations, dtype=float)
        if r.size != o.size:
            raise ValueError("radii and oscillations must have equal length")
        if r.size and not np.all(np.diff(r) < 0.0):
            raise ValueError("radii must be strictly decreasing")
        if np.any(o < -1e-12):
            raise ValueError("oscillations must be nonnegative")
        if o.size and np.any(np.diff(o) > 1e-12 * max(1.0, o.max())):
            raise ValueError("oscillations must be nonincreasing in radius")
        object.__setattr__(self, "radii", tuple(float(x) for x in r))
        object.__setattr__(self, "oscillations", tuple(float(x) for x in o))


@dataclass(frozen=True)
class TailReport:
    """Superlevel-set measures against thresholds plus the fitted decay."""

    thresholds: tuple
    measures: tuple
    fitted_epsilon: float
    normalization: float
    fit_skipped: bool
    support_hypothesis: bool

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        m = np.asarray(self.measures, dtype=float)
        if t.size != m.size:
            raise ValueError("thresholds and measures must have equal length")
        if np.any(np.diff(m) > 1e-12 * max(1.0, m.max(initial=0.0))):
            raise ValueError("measures must be nonincreasing in the threshold")
        object.__setattr__(self, "thresholds", tuple(float(x) for x in t))
        object.__setattr__(self, "measures", tuple(float(x) for x in m))


def _cube_nodes(u):
    grids = np.meshgrid(*([u.coords] * u.n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _loglog_fit(x, y):
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return float(slope), resid


def oscillation_decay(u, x0, radii):
    """Oscillation of `u` over grid balls B_r(x0) with a power-law fit.

    The fit runs on the smallest levels that stay at least eight lattice
    spacings wide.  Oscillations are exactly monotone because smaller
    balls select subsets of nodes; the check before fitting guards the
    table invariant, not the data.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (u.n,):
        raise ValueError(f"probe point must have {u.n} components")
    rad = np.asarray(radii, dtype=float)
    if rad.size < 4:
        raise ValueError("need at least 4 radius levels to fit a decay rate")
    if np.any(rad <= 0.0):
        raise ValueError("radii must be positive")
    rad = np.sort(rad)[::-1]
    if float(np.linalg.norm(x0)) + rad[0] > u.R + 1e-12:
        raise ValueError(
            f"ball of radius {rad[0]:g} at the probe point leaves the "
            f"solved cube of half-width {u.R:g}"
        )

    pts = _cube_nodes(u)
    dist = np.linalg.norm(pts - x0, axis=1)
    vals = np.asarray(u.values, dtype=float).ravel()
    osc = np.empty(rad.size)
    for i, r in enumerate(rad):
        sel = vals[dist <= r + 1e-12]
        if sel.size < 2:
            raise ValueError(
                f"fewer than 2 grid points in the ball of radius {r:g}"
            )
        osc[i] = float(sel.max() - sel.min())
    if np.any(np.diff(osc) > 1e-12 * max(1.0, osc.max())):
        raise NumericError("oscillation is not monotone across the levels")

    reliable = rad >= MIN_FIT_RADIUS_CELLS * u.h
    fit_r = rad[reliable][-FIT_LEVELS:]
    fit_o = osc[reliable][-FIT_LEVELS:]
    pos = fit_o > 0.0
    if not pos.any():
        # flat field: decays faster than any power
        return DecayTable(tuple(rad), tuple(osc), math.inf, 0.0)
    fit_r, fit_o = fit_r[pos], fit_o[pos]
    if fit_r.size < 2:
        raise NumericError(
            "too few reliable levels above the grid floor to fit an exponent"
        )
    exponent, resid = _loglog_fit(fit_r, fit_o)
    return DecayTable(tuple(rad), tuple(osc), exponent, resid)


def point_estimate_check(u, params, t_grid, scheme=None, f=None):
    """Superlevel-set tails of a nonnegative supersolution in B_{1/4}.

    With a scheme the residual is verified before counting; without one
    the caller vouches for the supersolution property.  The report
    normalization is the source bound plus the infimum over B_{1/2},
    the prefactor the tail bound is stated against.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size < 1 or np.any(t <= 0.0) or np.any(np.diff(t) <= 0.0):
        raise ValueError("thresholds must be positive and strictly increasing")
    if u.R < 0.5:
        raise ValueError("solved cube must contain the ball B_{1/2}")
    vals = np.asarray(u.values, dtype=float).ravel()
    if vals.min() < -1e-12:
        raise RejectedInstance(
            f"field is negative on the grid (min {vals.min():.3g}); the tail "
            f"estimate only covers nonnegative supersolutions"
        )

    fplus = 0.0
    if f is not None:
        fv = np.atleast_1d(_values_on(_cube_nodes(u), f))
        fplus = float(np.clip(fv, 0.0, None).max())
    if scheme is not None:
        rhs = f if f is not None else Constant(0.0, u.n)
        f_int = np.atleast_1d(_values_on(scheme.interior_points, rhs))
        gap = float(np.max(scheme.apply(u) - f_int))
        if gap > 1e-6:
            raise RejectedInstance(
                f"not a verified discrete supersolution: residual {gap:.3g}"
            )

    pts = _cube_nodes(u)
    rr = np.linalg.norm(pts, axis=1)
    inner = vals[rr <= 0.25 + 1e-12]
    measures = np.array(
        [float(np.count_nonzero(inner > ti)) * u.h**u.n for ti in t]
    )
    if np.any(np.diff(measures) > 1e-15):
        raise NumericError("tail measures are not monotone in the threshold")
    normalization = fplus + float(vals[rr <= 0.5 + 1e-12].min())

    pos = measures > 0.0
    if np.count_nonzero(pos) < 2:
        return TailReport(
            tuple(t),
            tuple(measures),
            math.nan,
            normalization,
            True,
            params.lower_support >= 4.0,
        )
    slope, _ = _loglog_fit(t[pos], measures[pos])
    return TailReport(
        tuple(t),
        tuple(measures),
        -slope,
        normalization,
        False,
        params.lower_support >= 4.0,
    )


def _lattice_direction(direction, n):
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if d.shape != (n,):
        raise ValueError(f"direction must have {n} components")
    k = np.rint(d).astype(int)
    if np.max(np.abs(d - k)) > 1e-9 or not k.any():
        raise ValueError("direction must be a nonzero integer lattice vector")
    return k


def difference_quotient_regularity(u, direction, steps, dictionary):
    """Oscillation decay of incremental quotients (u(. + s e) - u)/s.

    The one-order-up reading is only justified when every kernel in the
    generating dictionary is smooth away from the origin, so the gate
    rejects dictionaries with interior cutoffs.  The returned table is
    the smallest-step one; its exponent is replaced by the median over
    the steps and its residual by the worst fit.
    """
    if not all(op.kernel.smooth_off_origin() for op in dictionary.ops):
        raise RejectedInstance(
            "a dictionary kernel has interior cutoffs; the derivative bound "
            "behind the quotient reading does not hold"
        )
    k = _lattice_direction(direction, u.n)
    step_list = [float(s) for s in np.atleast_1d(np.asarray(steps, dtype=float))]
    if not step_list:
        raise ValueError("need at least one step size")

    tables = []
    for s in sorted(step_list, reverse=True):
        m = int(round(s / u.h))
        if m < 1 or abs(m * u.h - s) > 1e-9:
            raise ValueError(
                f"step {s:g} is not a positive multiple of the spacing {u.h:g}"
            )
        shift = m * k
        K = u.M - int(np.max(np.abs(shift)))
        if K < 1:
            raise ValueError(f"step {s:g} leaves no interior cube")
        c = u.M
        base = tuple(slice(c - K, c + K + 1) for _ in range(u.n))
        moved = tuple(
            slice(c - K + sh, c + K + 1 + sh) for sh in shift
        )
        denom = m * u.h * float(np.linalg.norm(k))
        q = (u.values[moved] - u.values[base]) / denom
        qf = GridFunction(q, u.h, K * u.h, Constant(0.0, u.n))

        top = K * u.h
        levels = [top * 0.5**j for j in range(6)]
        levels = [r for r in levels if r >= MIN_FIT_RADIUS_CELLS * u.h / 2.0]
        if len(levels) < 4:
            raise ValueError(
                "quotient cube too small for 4 decay levels; refine the grid "
                "or shrink the steps"
            )
        tables.append(oscillation_decay(qf, np.zeros(u.n), levels))

    exponents = [tb.fitted_exponent for tb in tables]
    final = tables[-1]
    return DecayTable(
        final.radii,
        final.oscillations,
        float(np.median(exponents)),
        max(tb.fit_residual for tb in tables),
    )

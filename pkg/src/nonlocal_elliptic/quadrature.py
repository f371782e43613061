"""Polar quadrature machinery for singular radial integrands.

Product rules on R^n: radial Gauss-Legendre panels on a geometric shell
ladder times an antipodally symmetric sphere rule.  The shell ladder is
rebuilt per evaluation point so that cutoff spheres (kernel supports,
gradient-compensator radius, profile kinks) land exactly on panel
boundaries.  Error control is by panel-wise Richardson comparison of a
coarse and a refined pass over the identical panel decomposition, which
keeps node sets deterministic: evaluating u and -u visits the same
points, so exact odd symmetries survive to machine precision.
"""

import math
from functools import lru_cache

import numpy as np

from .errors import NumericError

MAX_PANELS = 400


def sphere_surface(n):
    """Surface measure of the unit sphere in R^n (counting measure for n=1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def ball_volume(n, r=1.0):
    return sphere_surface(n) / n * r**n


@lru_cache(maxsize=None)
def sphere_rule(n, m):
    """Nodes and weights of a sphere rule closed under y -> -y.

    n = 1 is the two-point counting rule, n = 2 uses m equispaced angles
    (m even), n = 3 a Gauss-Legendre (polar) x uniform (azimuth) product
    rule with m azimuthal nodes.  Weights sum to the sphere surface.

    Returns
    -------
    theta : (M, n) array of unit vectors
    w : (M,) array of positive weights
    """
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if m % 2:
        m += 1
    if n == 2:
        ang = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        theta = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        w = np.full(m, 2.0 * np.pi / m)
        return theta, w
    if n == 3:
        kz = max(4, m // 2)
        z, wz = np.polynomial.legendre.leggauss(kz)
        ang = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        s = np.sqrt(1.0 - z**2)
        theta = np.empty((kz * m, 3))
        w = np.empty(kz * m)
        for i in range(kz):
            sl = slice(i * m, (i + 1) * m)
            theta[sl, 0] = s[i] * np.cos(ang)
            theta[sl, 1] = s[i] * np.sin(ang)
            theta[sl, 2] = z[i]
            w[sl] = wz[i] * 2.0 * np.pi / m
        return theta, w
    raise NumericError(f"sphere rules implemented for n <= 3, got n={n}")


@lru_cache(maxsize=None)
def _leggauss(k):
    x, w = np.polynomial.legendre.leggauss(k)
    return x, w


def gauss_panel(a, b, k):
    """Gauss-Legendre nodes/weights on the interval [a, b]."""
    x, w = _leggauss(k)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def build_panels(r_inner, r_outer, growth, breakpoints=(), windows=()):
    """Partition [r_inner, r_outer] into panels of bounded geometric ratio.

    breakpoints: radii that must be panel endpoints (cutoff spheres).
    windows: (lo, hi) radial windows crossed obliquely by some surface of
    reduced smoothness; panels meeting one are flagged for an angular
    refinement multiplier.

    Returns a list of (a, b, rough) triples.
    """
    if not (r_inner > 0 and r_outer > r_inner):
        raise NumericError(f"bad radial range [{r_inner}, {r_outer}]")
    growth = max(float(growth), 1.2)
    pts = {r_inner, r_outer}
    for b in breakpoints:
        if r_inner < b < r_outer and np.isfinite(b):
            pts.add(float(b))
    pts = sorted(pts)
    panels = []
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, int(math.ceil(math.log(b / a) / math.log(growth) - 1e-12)))
        ratio = (b / a) ** (1.0 / k)
        edges = a * ratio ** np.arange(k + 1)
        edges[-1] = b
        for lo, hi in zip(edges[:-1], edges[1:]):
            rough = any(lo < w_hi and hi > w_lo for (w_lo, w_hi) in windows)
            panels.append((lo, hi, rough))
    if len(panels) > MAX_PANELS:
        raise NumericError(
            f"shell ladder needs {len(panels)} panels (> {MAX_PANELS}); "
            "widen shell_growth or reduce the radial range"
        )
    return panels


def integrate_shells(panels, angular_fn, n, radial_order, m_base, rough_mult=4):
    """Integrate f over the union of radial panels in polar form.

    angular_fn(rho, theta, w_theta) must return, for a vector of radii
    rho and one sphere rule (theta, w_theta), the angular integrals
    A(rho_i) = sum_j w_j f(rho_i * theta_j); the radial factor rho^(n-1)
    is applied here.

    Returns (total, per_panel) where per_panel holds each panel's value.
    """
    per_panel = np.empty(len(panels))
    groups = {}
    for idx, (a, b, rough) in enumerate(panels):
        m = m_base * (rough_mult if rough else 1)
        groups.setdefault(m, []).append(idx)
    for m, idxs in groups.items():
        theta, wt = sphere_rule(n, m)
        rho_all = []
        wr_all = []
        for idx in idxs:
            a, b, _ = panels[idx]
            rho, wr = gauss_panel(a, b, radial_order)
            rho_all.append(rho)
            wr_all.append(wr)
        rho_cat = np.concatenate(rho_all)
        ang = angular_fn(rho_cat, theta, wt)
        pos = 0
        for j, idx in enumerate(idxs):
            k = len(rho_all[j])
            sl = slice(pos, pos + k)
            per_panel[idx] = np.dot(
                wr_all[j], ang[sl] * rho_cat[sl] ** (n - 1)
            )
            pos += k
    return float(per_panel.sum()), per_panel


def power_primitive(s, a, b):
    """Integral of rho^s over [a, b], with the logarithmic case s = -1."""
    if abs(s + 1.0) < 1e-14:
        return math.log(b / a)
    return (b ** (s + 1.0) - a ** (s + 1.0)) / (s + 1.0)


def power_tail(s, T):
    """Integral of rho^s over [T, infinity); requires s < -1."""
    if s >= -1.0:
        raise NumericError(f"divergent tail integral: exponent {s} >= -1")
    return -(T ** (s + 1.0)) / (s + 1.0)

"""Closed-form scalar fields on R^n.

These objects serve two roles: exterior descriptors of grid functions
(values beyond the lattice ball) and fully analytic integrands for
quadrature on functions with known formulas (test quadratics, barrier
shapes).  Each profile reports the spheres where its radial regularity
degrades (`kink_spheres`) so integrators can align panel boundaries, and
a far-field power model with a deviation envelope so integral tails can
be closed in radial form with an honest error bound.

Points are passed as (N, n) arrays; `hess` takes one point.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FarModel:
    """u(z) ~ coef * |z|**power + offset for |z| >= valid_radius.

    `exact` means equality; otherwise the deviation is bounded by the
    profile's `far_dev()` envelope C * |z|**q on the same range.
    """

    coef: float
    power: float
    offset: float
    valid_radius: float
    exact: bool


def _norms(P):
    return np.sqrt(np.sum(P * P, axis=1))


class Profile:
    """Base class; subclasses fill in value/grad/hess and the far field."""

    def value(self, P):
        raise NotImplementedError

    def grad(self, P):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def kink_spheres(self):
        return []

    def far_model(self):
        raise NotImplementedError

    def far_dev(self):
        """(C, q): |u - model| <= C |z|^q beyond the model's valid radius."""
        return (0.0, 0.0)

    def shifted(self, z):
        return Shifted(self, np.asarray(z, dtype=float))

    def __call__(self, P):
        return self.value(np.atleast_2d(np.asarray(P, dtype=float)))


class Constant(Profile):
    def __init__(self, c, n):
        self.c = float(c)
        self.n = int(n)

    def value(self, P):
        return np.full(P.shape[0], self.c)

    def grad(self, P):
        return np.zeros_like(P)

    def hess(self, x):
        return np.zeros((self.n, self.n))

    def far_model(self):
        return FarModel(0.0, 0.0, self.c, 0.0, True)


class Affine(Profile):
    """p . x + c"""

    def __init__(self, p, c=0.0):
        self.p = np.asarray(p, dtype=float)
        self.c = float(c)
        self.n = len(self.p)

    def value(self, P):
        return P @ self.p + self.c

    def grad(self, P):
        return np.broadcast_to(self.p, P.shape).copy()

    def hess(self, x):
        n = len(self.p)
        return np.zeros((n, n))

    def far_model(self):
        return FarModel(0.0, 0.0, self.c, 1.0, False)

    def far_dev(self):
        return (float(np.linalg.norm(self.p)), 1.0)


class QuadraticForm(Profile):
    """x^T H x / 2, radially frozen at clip_radius to stay integrable.

    Beyond the clip sphere the field continues 0-homogeneously:
    u(x) = Q(clip * x/|x|).  Gradients and Hessians are served on the
    inner branch only, which is where evaluation centers live.
    """

    def __init__(self, H, clip_radius=None):
        self.H = np.asarray(H, dtype=float)
        self.clip = float(clip_radius) if clip_radius is not None else None
        self.n = self.H.shape[0]

    def _q(self, P):
        return 0.5 * np.einsum("ij,jk,ik->i", P, self.H, P)

    def value(self, P):
        if self.clip is None:
            return self._q(P)
        r = _norms(P)
        scale = np.minimum(r, self.clip) / np.maximum(r, 1e-300)
        return self._q(P * scale[:, None])

    def grad(self, P):
        if self.clip is not None:
            r = _norms(P)
            if np.any(r > self.clip):
                raise ValueError("gradient requested beyond the clip sphere")
        return P @ self.H

    def hess(self, x):
        if self.clip is not None and np.linalg.norm(x) > self.clip:
            raise ValueError("Hessian requested beyond the clip sphere")
        return self.H.copy()

    def kink_spheres(self):
        if self.clip is None:
            return []
        n = self.H.shape[0]
        return [(np.zeros(n), self.clip)]

    def _isotropic(self):
        d = self.H.shape[0]
        return np.allclose(self.H, self.H[0, 0] * np.eye(d), atol=1e-14)

    def far_model(self):
        if self.clip is None:
            # Quadratic growth: no integrable far model; deviation carries it.
            return FarModel(0.0, 0.0, 0.0, 1.0, False)
        if self._isotropic():
            # frozen value is the same in every direction
            return FarModel(0.0, 0.0, 0.5 * self.H[0, 0] * self.clip**2, self.clip, True)
        return FarModel(0.0, 0.0, 0.0, self.clip, False)

    def far_dev(self):
        bound = 0.5 * float(np.max(np.abs(np.linalg.eigvalsh(self.H))))
        if self.clip is None:
            return (bound, 2.0)
        if self._isotropic():
            return (0.0, 0.0)
        return (bound * self.clip**2, 0.0)


class RadialPower(Profile):
    """coef * |x|^power + offset (exterior use; singular at the origin)."""

    def __init__(self, coef, power, offset=0.0, n=None):
        self.coef = float(coef)
        self.power = float(power)
        self.offset = float(offset)
        self.n = int(n) if n is not None else None

    def value(self, P):
        return self.coef * _norms(P) ** self.power + self.offset

    def grad(self, P):
        r = np.maximum(_norms(P), 1e-300)
        return (self.coef * self.power * r ** (self.power - 2.0))[:, None] * P

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        r = max(np.linalg.norm(x), 1e-300)
        n = len(x)
        eye = np.eye(n)
        xh = x / r
        return self.coef * self.power * r ** (self.power - 2.0) * (
            eye + (self.power - 2.0) * np.outer(xh, xh)
        )

    def far_model(self):
        return FarModel(self.coef, self.power, self.offset, 0.0, True)


class BoundaryCone(Profile):
    """((|x| - 1)_+)^alpha: zero on the closed unit ball, cone outside."""

    def __init__(self, alpha, n):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"exponent must lie in (0, 1), got {alpha}")
        self.alpha = float(alpha)
        self.n = int(n)

    def _t(self, P):
        return np.maximum(_norms(P) - 1.0, 0.0)

    def value(self, P):
        return self._t(P) ** self.alpha

    def grad(self, P):
        r = _norms(P)
        t = np.maximum(r - 1.0, 0.0)
        g = np.zeros_like(P)
        out = t > 0
        if np.any(out):
            fac = self.alpha * t[out] ** (self.alpha - 1.0) / r[out]
            g[out] = fac[:, None] * P[out]
        return g

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if r <= 1.0:
            return np.zeros((self.n, self.n))
        t = r - 1.0
        xh = x / r
        a = self.alpha
        rad = a * (a - 1.0) * t ** (a - 2.0)
        tang = a * t ** (a - 1.0) / r
        eye = np.eye(self.n)
        return tang * (eye - np.outer(xh, xh)) + rad * np.outer(xh, xh)

    def kink_spheres(self):
        return [(np.zeros(self.n), 1.0)]

    def far_model(self):
        return FarModel(1.0, self.alpha, 0.0, 4.0, False)

    def far_dev(self):
        # |z|^a - (|z|-1)^a <= a (|z|-1)^(a-1) <= 2 a |z|^(a-1) for |z| >= 4
        return (2.0 * self.alpha, self.alpha - 1.0)


class LocalizedWell(Profile):
    """(((|x| - rho0)_+ / 2)^alpha - 1) on B_2, zero outside.

    Convex and negative inside B_2, jumps to 0 across |x| = 2.
    """

    def __init__(self, alpha, rho0, n):
        if alpha <= 1.0:
            raise ValueError(f"exponent must exceed 1, got {alpha}")
        if not 0.0 < rho0 < 1.0:
            raise ValueError(f"well radius must lie in (0, 1), got {rho0}")
        self.alpha = float(alpha)
        self.rho0 = float(rho0)
        self.n = int(n)

    def value(self, P):
        r = _norms(P)
        t = np.maximum(r - self.rho0, 0.0) / 2.0
        return np.where(r < 2.0, t**self.alpha - 1.0, 0.0)

    def grad(self, P):
        r = _norms(P)
        g = np.zeros_like(P)
        act = (r > self.rho0) & (r < 2.0)
        if np.any(act):
            t = (r[act] - self.rho0) / 2.0
            fac = 0.5 * self.alpha * t ** (self.alpha - 1.0) / r[act]
            g[act] = fac[:, None] * P[act]
        return g

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if not self.rho0 < r < 2.0:
            return np.zeros((self.n, self.n))
        t = (r - self.rho0) / 2.0
        a = self.alpha
        rad = 0.25 * a * (a - 1.0) * t ** (a - 2.0)
        tang = 0.5 * a * t ** (a - 1.0) / r
        xh = x / r
        eye = np.eye(self.n)
        return tang * (eye - np.outer(xh, xh)) + rad * np.outer(xh, xh)

    def kink_spheres(self):
        z = np.zeros(self.n)
        return [(z, self.rho0), (z, 2.0)]

    def far_model(self):
        return FarModel(0.0, 0.0, 0.0, 2.0, True)


class InverseCap(Profile):
    """min(|x|^-p, r0^-p): a capped inverse power, constant on B_r0."""

    def __init__(self, p, r0, n):
        if p <= 0 or r0 <= 0:
            raise ValueError("p and r0 must be positive")
        self.p = float(p)
        self.r0 = float(r0)
        self.n = int(n)

    def value(self, P):
        r = np.maximum(_norms(P), 1e-300)
        return np.minimum(r**-self.p, self.r0**-self.p)

    def grad(self, P):
        r = _norms(P)
        g = np.zeros_like(P)
        out = r > self.r0
        if np.any(out):
            fac = -self.p * r[out] ** (-self.p - 2.0)
            g[out] = fac[:, None] * P[out]
        return g

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if r <= self.r0:
            return np.zeros((self.n, self.n))
        xh = x / r
        eye = np.eye(self.n)
        p = self.p
        return p * r ** (-p - 2.0) * ((p + 2.0) * np.outer(xh, xh) - eye)

    def kink_spheres(self):
        return [(np.zeros(self.n), self.r0)]

    def far_model(self):
        return FarModel(1.0, -self.p, 0.0, self.r0, True)


class SphericalCap(Profile):
    """((1 - |x|^2)_+)^s: positive cap over the unit ball, zero outside."""

    def __init__(self, s, n):
        if s <= 0:
            raise ValueError("exponent must be positive")
        self.s = float(s)
        self.n = int(n)

    def value(self, P):
        t = np.maximum(1.0 - np.sum(P * P, axis=1), 0.0)
        return t**self.s

    def grad(self, P):
        t = np.maximum(1.0 - np.sum(P * P, axis=1), 0.0)
        g = np.zeros_like(P)
        act = t > 0
        if np.any(act):
            g[act] = (-2.0 * self.s * t[act] ** (self.s - 1.0))[:, None] * P[act]
        return g

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        t = 1.0 - float(x @ x)
        if t <= 0:
            return np.zeros((self.n, self.n))
        s = self.s
        eye = np.eye(self.n)
        return -2.0 * s * t ** (s - 1.0) * eye + 4.0 * s * (s - 1.0) * t ** (s - 2.0) * np.outer(
            x, x
        )

    def kink_spheres(self):
        return [(np.zeros(self.n), 1.0)]

    def far_model(self):
        return FarModel(0.0, 0.0, 0.0, 1.0, True)


class OutsideIndicator(Profile):
    """Indicator of the exterior of the closed unit ball."""

    def __init__(self, n):
        self.n = int(n)

    def value(self, P):
        r2 = np.sum(P * P, axis=1)
        return np.where(r2 > 1.0, 1.0, 0.0)

    def grad(self, P):
        return np.zeros_like(P)

    def hess(self, x):
        return np.zeros((self.n, self.n))

    def kink_spheres(self):
        return [(np.zeros(self.n), 1.0)]

    def far_model(self):
        return FarModel(0.0, 0.0, 1.0, 1.0, True)


class GaussianBumps(Profile):
    """Sum of Gaussian bumps; smooth, rapidly decaying test field."""

    def __init__(self, centers, widths, amps):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.widths = np.asarray(widths, dtype=float)
        self.amps = np.asarray(amps, dtype=float)
        self.n = self.centers.shape[1]

    @classmethod
    def random(cls, rng, n, k=4, box=1.0):
        centers = rng.uniform(-box / 2, box / 2, size=(k, n))
        widths = rng.uniform(0.15, 0.45, size=k)
        amps = rng.uniform(-1.0, 1.0, size=k)
        return cls(centers, widths, amps)

    def value(self, P):
        out = np.zeros(P.shape[0])
        for c, s, a in zip(self.centers, self.widths, self.amps):
            d2 = np.sum((P - c) ** 2, axis=1)
            out += a * np.exp(-0.5 * d2 / s**2)
        return out

    def grad(self, P):
        out = np.zeros_like(P)
        for c, s, a in zip(self.centers, self.widths, self.amps):
            diff = P - c
            e = a * np.exp(-0.5 * np.sum(diff**2, axis=1) / s**2)
            out += -(e / s**2)[:, None] * diff
        return out

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.n, self.n))
        eye = np.eye(self.n)
        for c, s, a in zip(self.centers, self.widths, self.amps):
            diff = x - c
            e = a * math.exp(-0.5 * float(diff @ diff) / s**2)
            out += e * (np.outer(diff, diff) / s**4 - eye / s**2)
        return out

    def far_model(self):
        reach = float(np.max(_norms(self.centers) + 6.0 * self.widths))
        return FarModel(0.0, 0.0, 0.0, max(reach, 1.0), False)

    def far_dev(self):
        T = self.far_model().valid_radius
        bound = 0.0
        for c, s, a in zip(self.centers, self.widths, self.amps):
            d = max(T - float(np.linalg.norm(c)), 0.0)
            bound += abs(a) * math.exp(-0.5 * d**2 / s**2)
        # exp decay folded into a crude |z|^-2 envelope anchored at T
        return (bound * T**2, -2.0)


class Shifted(Profile):
    """base(x - z)"""

    def __init__(self, base, z):
        self.base = base
        self.z = np.asarray(z, dtype=float)
        self.n = getattr(base, "n", len(self.z))

    def value(self, P):
        return self.base.value(P - self.z)

    def grad(self, P):
        return self.base.grad(P - self.z)

    def hess(self, x):
        return self.base.hess(np.asarray(x, dtype=float) - self.z)

    def kink_spheres(self):
        return [(c + self.z, r) for c, r in self.base.kink_spheres()]

    def far_model(self):
        m = self.base.far_model()
        return FarModel(
            m.coef, m.power, m.offset, m.valid_radius + float(np.linalg.norm(self.z)) + 1.0, False
        )

    def far_dev(self):
        C, q = self.base.far_dev()
        m = self.base.far_model()
        shift = float(np.linalg.norm(self.z))
        # displacement of the radial model by |z|
        extra = abs(m.coef) * (abs(m.power) + 1.0) * shift
        return (C * (1.0 + shift) ** max(q, 0.0) + extra, max(q, m.power - 1.0))

    def shifted(self, z):
        return Shifted(self.base, self.z + np.asarray(z, dtype=float))

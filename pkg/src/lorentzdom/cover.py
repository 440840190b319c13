"""Universal cover of SU(1,1) and its action on the Lorentzian cone.

The group SU(1,1) consists of complex matrices [[w, z], [zbar, wbar]] with
|w|^2 - |z|^2 = 1.  Its universal cover is parametrized by a pair (z, alpha)
where alpha is a continuous argument lift of w; the modulus |w| is recovered
as sqrt(1 + |z|^2), so it is never stored.

The same coordinates (z, alpha) together with a radius r > |z| parametrize
points of the cone L~, the universal cover of the positive light cone
{ <p, p> = 0, w != 0 } in E^{2,2}.  Points of E^{2,2} are pairs of complex
numbers (z, w) with the quadratic form <p, p> = |z|^2 - |w|^2, and the group
acts by p |-> g1 p g2^{-1} through the matrix identification.  Both the group
law and the two-sided action share one multiplication kernel `_mul` below.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

# Argument of the central generator: z_c = (0, -pi) covers -I in SU(1,1).
CENTER_ARG = -math.pi

# Default tolerance for approximate comparisons of group elements.
EPSILON = 1e-9


@dataclass(frozen=True)
class UElement:
    """Element of the universal cover: z together with a lifted argument of w."""

    z: complex
    alpha: float

    @property
    def r(self) -> float:
        return math.hypot(1.0, abs(self.z))

    @property
    def v(self) -> complex:
        """The downstairs diagonal entry w = r * exp(i alpha)."""
        return self.r * cmath.exp(1j * self.alpha)

    def matrix(self) -> np.ndarray:
        """Image in SU(1,1) as a 2x2 complex matrix."""
        v = self.v
        return np.array([[v.conjugate(), self.z], [self.z.conjugate(), v]])


@dataclass(frozen=True)
class PseudoVector:
    """Point of E^{2,2} in complex coordinates (z, w)."""

    z: complex
    w: complex

    def matrix(self) -> np.ndarray:
        return np.array([[self.w.conjugate(), self.z], [self.z.conjugate(), self.w]])


@dataclass(frozen=True)
class ConePoint:
    """Point of the cover L~ of the punctured light cone: |z| < r, w = r e^{i alpha}."""

    z: complex
    alpha: float
    r: float

    def __post_init__(self):
        if not abs(self.z) < self.r:
            raise ValueError(f"cone point needs |z| < r, got |z|={abs(self.z)}, r={self.r}")


IDENTITY = UElement(0j, 0.0)


def pairing(p: PseudoVector, q: PseudoVector) -> float:
    """Signature (2,2) bilinear form in the (z, w) coordinates."""
    return (p.z * q.z.conjugate()).real - (p.w * q.w.conjugate()).real


def project_pi(a: ConePoint) -> PseudoVector:
    """Covering projection L~ -> L, forgetting the argument winding."""
    return PseudoVector(a.z, a.r * cmath.exp(1j * a.alpha))


def project_theta(a: ConePoint) -> ConePoint:
    """Radial projection onto the unit-determinant sheet r^2 - |z|^2 = 1."""
    lam = math.sqrt((a.r - abs(a.z)) * (a.r + abs(a.z)))
    return ConePoint(a.z / lam, a.alpha, a.r / lam)


def scale(s: float, a: ConePoint) -> ConePoint:
    if s <= 0:
        raise ValueError("scale factor must be positive")
    return ConePoint(s * a.z, a.alpha, s * a.r)


def _mul(z1: complex, v1: complex, a1: float, z2: complex, v2: complex, a2: float):
    """Shared multiplication kernel for group law and cone action.

    Returns (z, v, alpha) of the product, with alpha the continuous lift
    a1 + a2 + arg(1 + c) where c = conj(z1) z2 / (v1 v2).  |c| < 1 whenever
    both factors satisfy |z| < |v|, so the correction stays in (-pi/2, pi/2).
    """
    z = v1.conjugate() * z2 + z1 * v2
    c = (z1.conjugate() * z2) / (v1 * v2)
    if abs(c) >= 1.0:
        raise ArithmeticError(f"argument lift undefined: |c| = {abs(c)} >= 1")
    v = v1 * v2 * (1 + c)
    alpha = a1 + a2 + cmath.phase(1 + c)
    return z, v, alpha


def mul(g1: UElement, g2: UElement) -> UElement:
    z, _, alpha = _mul(g1.z, g1.v, g1.alpha, g2.z, g2.v, g2.alpha)
    return UElement(z, alpha)


def inv(g: UElement) -> UElement:
    return UElement(-g.z, -g.alpha)


def mul_many(*gs: UElement) -> UElement:
    out = IDENTITY
    for g in gs:
        out = mul(out, g)
    return out


def power(g: UElement, n: int) -> UElement:
    if n < 0:
        return power(inv(g), -n)
    out = IDENTITY
    for _ in range(n):
        out = mul(out, g)
    return out


def center(j: int = 1) -> UElement:
    """j-th power of the central generator covering -I."""
    return UElement(0j, CENTER_ARG * j)


def act(g1: UElement, g2: UElement, a: ConePoint) -> ConePoint:
    """Two-sided action (g1, g2) . a = g1 a g2^{-1} on the cone cover."""
    h2 = inv(g2)
    z, v, alpha = _mul(g1.z, g1.v, g1.alpha, a.z, a.r * cmath.exp(1j * a.alpha), a.alpha)
    z, v, alpha = _mul(z, v, alpha, h2.z, h2.v, h2.alpha)
    return ConePoint(z, alpha, abs(v))


def act_left(g: UElement, a: ConePoint) -> ConePoint:
    return act(g, IDENTITY, a)


def lift_vector(p: PseudoVector) -> ConePoint:
    """Lift of a light-cone point with argument taken in (-pi, pi]."""
    r = abs(p.w)
    if not abs(p.z) < r:
        raise ValueError("not inside the light cone: need |z| < |w|")
    return ConePoint(p.z, cmath.phase(p.w), r)


def disc_action(g: UElement, x: complex) -> complex:
    """Moebius action of the underlying SU(1,1) element on the unit disc."""
    v = g.v
    return (v.conjugate() * x + g.z) / (g.z.conjugate() * x + v)


def translation_to(x: complex) -> UElement:
    """Positive hyperbolic translation taking 0 to x (identity at x = 0)."""
    ax = abs(x)
    if ax >= 1.0:
        raise ValueError("target must lie in the open unit disc")
    s = 1.0 / math.sqrt(1.0 - ax * ax)
    return UElement(s * x, 0.0)


def rotation_lift(x: complex, t: float) -> UElement:
    """Lift of the rotation by angle t about the disc point x.

    Continuous in t with rotation_lift(x, 0) = identity; a full turn
    (t = 2 pi) lands on the central generator (0, -pi) for every x.
    """
    ax = abs(x)
    if ax >= 1.0:
        raise ValueError("rotation centre must lie in the open unit disc")
    s2 = 1.0 / (1.0 - ax * ax)
    n = round(t / (2 * math.pi))
    t0 = t - 2 * math.pi * n
    z = -2j * s2 * x * math.sin(t / 2)
    alpha = -math.atan2((1 + ax * ax) * math.sin(t0 / 2), (1 - ax * ax) * math.cos(t0 / 2))
    return UElement(z, alpha - math.pi * n)


def is_central(g: UElement, tol: float = EPSILON) -> bool:
    """Whether g lies on the centre (z = 0, alpha a multiple of pi)."""
    if abs(g.z) > tol:
        return False
    j = round(g.alpha / CENTER_ARG)
    return abs(g.alpha - CENTER_ARG * j) <= tol


def central_index(g: UElement, tol: float = EPSILON):
    """Integer j with g = center(j), or None if g is not central."""
    if abs(g.z) > tol:
        return None
    j = round(g.alpha / CENTER_ARG)
    if abs(g.alpha - CENTER_ARG * j) <= tol:
        return j
    return None


def elements_close(g: UElement, h: UElement, tol: float = EPSILON) -> bool:
    return abs(g.z - h.z) <= tol and abs(g.alpha - h.alpha) <= tol


def points_close(a: ConePoint, b: ConePoint, tol: float = EPSILON) -> bool:
    return abs(a.z - b.z) <= tol and abs(a.alpha - b.alpha) <= tol and abs(a.r - b.r) <= tol


def distance(g: UElement, h: UElement) -> float:
    """Coordinate distance used by snapping and dedup logic."""
    return max(abs(g.z - h.z), abs(g.alpha - h.alpha))


def hyperbolic_distance(x: complex, y: complex) -> float:
    """Poincare metric on the unit disc."""
    num = abs(x - y)
    den = abs(1 - x.conjugate() * y)
    return 2.0 * math.atanh(num / den)

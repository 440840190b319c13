"""Triangle groups, level-k kernels, and the star configuration at a vertex.

A hyperbolic triangle group with orders (p1, p2, p3) is realized concretely
in the unit disc: one vertex at the origin, the second on the positive real
axis, the third in the upper half plane.  Generators are the lifted
counterclockwise rotations about the vertices; their product is central in
the universal cover and its winding number is the measure of the group.

For a level k coprime to the orders, the weight homomorphism sends the i-th
rotation lift to beta_i = p_i^{-1} mod k and the central generator to 1.
Its kernel Gamma_1 is the subgroup the carving stage tiles by, paired with
the cyclic lift Gamma_2 of a rotation of order q about the chosen vertex.
"""

from __future__ import annotations

import cmath
import math
from collections import deque
from dataclasses import dataclass

from .cover import (
    IDENTITY,
    UElement,
    center,
    central_index,
    disc_action,
    hyperbolic_distance,
    inv,
    mul,
    power,
    rotation_lift,
    translation_to,
)

# Two snapped disc points closer than this are treated as the same orbit point.
ORBIT_SNAP = 1e-6

# Numerical slack for structural identities checked during construction.
STRUCT_TOL = 1e-10


@dataclass(frozen=True)
class TriangleGroup:
    """Rotation subgroup of a hyperbolic triangle group, lifted to the cover."""

    orders: tuple[int, int, int]
    vertices: tuple[complex, complex, complex]
    generators: tuple[UElement, UElement, UElement]
    sigma: int
    measure: int


def _side_length(pa: float, pb: float, pc: float) -> float:
    """Hyperbolic law of cosines: side between the angle-pa and angle-pb corners."""
    c = (math.cos(pa) * math.cos(pb) + math.cos(pc)) / (math.sin(pa) * math.sin(pb))
    return math.acosh(c)


def triangle_group(p1: int, p2: int, p3: int) -> TriangleGroup:
    """Build the (p1, p2, p3) rotation group with vertex 1 at the origin."""
    orders = (p1, p2, p3)
    for p in orders:
        if p < 2:
            raise ValueError("triangle orders must be at least 2")
    if p2 * p3 + p1 * p3 + p1 * p2 >= p1 * p2 * p3:
        raise ValueError(f"signature {orders} is not hyperbolic")

    a1, a2, a3 = (math.pi / p for p in orders)
    rho12 = _side_length(a1, a2, a3)
    rho13 = _side_length(a1, a3, a2)
    v1 = 0j
    v2 = complex(math.tanh(rho12 / 2), 0.0)
    v3 = math.tanh(rho13 / 2) * cmath.exp(1j * a1)
    vertices = (v1, v2, v3)

    # The counterclockwise lifts should multiply to a central element; the
    # opposite chirality is tried as a fallback so a reordered vertex layout
    # still produces a valid group rather than a silent error.
    for sigma in (1, -1):
        gens = tuple(
            rotation_lift(v, sigma * 2 * math.pi / p) for v, p in zip(vertices, orders)
        )
        prod = mul(mul(gens[0], gens[1]), gens[2])
        m = central_index(prod, tol=STRUCT_TOL * 10)
        if m is not None:
            return TriangleGroup(orders, vertices, gens, sigma, m)
    raise ArithmeticError(f"generator product is not central for signature {orders}")


def level_weights(orders: tuple[int, int, int], measure: int, k: int) -> tuple[int, int, int]:
    """Weights beta_i of the level-k homomorphism, or raise if no lift exists."""
    if k < 1:
        raise ValueError("level must be a positive integer")
    betas = []
    for p in orders:
        if math.gcd(p, k) != 1:
            raise ValueError(f"no level-{k} lift: gcd({p}, {k}) != 1")
        betas.append(pow(p, -1, k))
    if (sum(betas) - measure) % k != 0:
        raise ValueError(
            f"no level-{k} lift: weights {tuple(betas)} sum to "
            f"{sum(betas) % k}, need {measure % k} (mod {k})"
        )
    return tuple(betas)


def canonical_rep(el: UElement, weight: int, k: int) -> UElement:
    """Central correction moving an element of weight class `weight` into the kernel."""
    return mul(center((k - weight % k) % k), el)


def cyclic_lift(q: int, k: int) -> UElement:
    """Generator of Gamma_2: the lift (0, -pi k / q) of a rotation of order q."""
    if q < 2:
        raise ValueError("rotation order must be at least 2")
    if math.gcd(q, k) != 1:
        raise ValueError(f"no level-{k} lift of a rotation of order {q}")
    return UElement(0j, -math.pi * k / q)


@dataclass(frozen=True)
class StarSetup:
    """Star configuration at a distinguished cone vertex, moved to the origin.

    The group data is conjugated so the chosen vertex u sits at 0.  The
    elliptic elements d, d1, d2 all rotate about the origin: d1 generates the
    stabilizer of u in the kernel Gamma_1, d2 generates Gamma_2, and d
    generates the group the two span together, with d1 = d^A and d2 = d^B.
    """

    signature: tuple[int, int, int]
    k: int
    u_index: int
    q: int
    p1u: int
    p: int
    theta: float
    weights: tuple[int, int, int]
    measure: int
    generators: tuple[UElement, UElement, UElement]
    vertices: tuple[complex, complex, complex]
    d: UElement
    d1: UElement
    d2: UElement
    A: int
    B: int


def star_setup(signature: tuple[int, int, int], k: int, u_index: int = 0, q: int = 3) -> StarSetup:
    group = triangle_group(*signature)
    weights = level_weights(signature, group.measure, k)
    if not 0 <= u_index <= 2:
        raise ValueError("u_index must select one of the three vertices")
    if math.gcd(q, k) != 1:
        raise ValueError(f"no level-{k} lift of a rotation of order {q}")
    if q < 2:
        raise ValueError("rotation order q must be at least 2")

    p1u = signature[u_index]
    p = math.lcm(p1u, q)
    if p <= k:
        raise ValueError(
            f"star condition violated: lcm({p1u}, {q}) = {p} must exceed the level {k}"
        )

    # Move the distinguished vertex to the origin by conjugating everything.
    T = translation_to(group.vertices[u_index])
    Ti = inv(T)
    gens = tuple(mul(mul(Ti, g), T) for g in group.generators)
    verts = tuple(disc_action(Ti, v) for v in group.vertices)
    verts = tuple(0j if i == u_index else v for i, v in enumerate(verts))

    theta = math.pi * k / p
    d = UElement(0j, -theta)
    d1 = UElement(0j, -math.pi * k / p1u)
    d2 = cyclic_lift(q, k)
    A = p // p1u
    B = p // q

    # Structural identities tying the elliptic generators together.
    _require_close(power(d, A), d1, "d^A = d1")
    _require_close(power(d, B), d2, "d^B = d2")
    _require_close(power(gens[u_index], group.sigma * k), d1, "rotation^k = d1")
    _require_close(power(gens[u_index], group.sigma * p1u), center(), "rotation^p = center")

    return StarSetup(
        signature=tuple(signature),
        k=k,
        u_index=u_index,
        q=q,
        p1u=p1u,
        p=p,
        theta=theta,
        weights=weights,
        measure=group.measure,
        generators=gens,
        vertices=verts,
        d=d,
        d1=d1,
        d2=d2,
        A=A,
        B=B,
    )


def _require_close(a: UElement, b: UElement, label: str) -> None:
    err = max(abs(a.z - b.z), abs(a.alpha - b.alpha))
    if err > STRUCT_TOL:
        raise ArithmeticError(f"structural identity {label} fails by {err}")


class _SnapDict:
    """Hash map on disc points, tolerant to ORBIT_SNAP-sized perturbations."""

    def __init__(self, cell: float = ORBIT_SNAP):
        self.cell = cell
        self._data: dict[tuple[int, int], complex] = {}

    def _key(self, x: complex) -> tuple[int, int]:
        return (round(x.real / self.cell), round(x.imag / self.cell))

    def probe(self, x: complex) -> bool:
        kx, ky = self._key(x)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                y = self._data.get((kx + dx, ky + dy))
                if y is not None and abs(x - y) <= self.cell:
                    return True
        return False

    def add(self, x: complex) -> None:
        self._data[self._key(x)] = x


@dataclass(frozen=True)
class OrbitPoint:
    """Orbit point of the origin together with a kernel element reaching it."""

    point: complex
    element: UElement
    word_length: int


def enumerate_orbit(setup: StarSetup, radius: float, max_word: int = 40) -> list[OrbitPoint]:
    """All orbit points of the origin with |x| <= radius, one kernel element each.

    The search explores a larger disc than requested: group elements are built
    as generator words, and a point near the requested radius may only be
    reachable through intermediate points that lie somewhat further out.  The
    exploration cushion is derived from the triangle diameter.
    """
    if not 0 <= radius < 1:
        raise ValueError("radius must lie in [0, 1)")
    diam = max(
        hyperbolic_distance(a, b) for a in setup.vertices for b in setup.vertices
    )
    explore = math.tanh((2 * math.atanh(radius) + 2 * diam + 1.0) / 2)

    k = setup.k
    steps = []
    for g, beta in zip(setup.generators, setup.weights):
        steps.append((g, beta % k))
        steps.append((inv(g), (k - beta) % k))

    seen = _SnapDict()
    seen.add(0j)
    frontier = deque([(IDENTITY, 0, 0)])
    found = [OrbitPoint(0j, IDENTITY, 0)]
    while frontier:
        el, weight, depth = frontier.popleft()
        for g, beta in steps:
            new_el = mul(g, el)
            x = disc_action(new_el, 0j)
            if abs(x) > explore or seen.probe(x):
                continue
            if depth + 1 > max_word:
                raise RuntimeError("orbit enumeration exceeded the word-length cap")
            seen.add(x)
            w = (weight + beta) % k
            frontier.append((new_el, w, depth + 1))
            if abs(x) <= radius:
                found.append(OrbitPoint(x, canonical_rep(new_el, w, k), depth + 1))
    found.sort(key=lambda o: (abs(o.point), cmath.phase(o.point)))
    return found


def group_level(elements, tol: float = 1e-9):
    """Smallest positive central winding among the given elements, if any."""
    best = None
    for el in elements:
        j = central_index(el, tol)
        if j is not None and j > 0 and (best is None or j < best):
            best = j
    return best

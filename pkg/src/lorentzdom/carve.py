"""Carving the fundamental polyhedron out of prism constraints.

Everything happens in chart coordinates (x1, x2, x3) <-> (z, w) with
z = x1 + i x2 and w = 1 + i x3: the affine slice Re w = 1 of the solid cone
|z| < |w|, which meets every ray once.  Over the distinguished vertex u = 0
sits a scalloped prism Q_u whose gauge is

    t(b) = |w_b| cos(alpha_b - theta * round(alpha_b / theta)),

cut out by the planes t = 1; translated prisms Q_x = ghat Q_u cover the rest
of the cone.  Chart points of the domain are exactly the points interior to
no prism: each translate contributes affine wall planes, and splitting a box
by all candidate walls yields the domain as a union of convex cells.

A finite enumeration radius R leaves a thin uncovered shell near the light
cone (points covered only by prisms further out).  Components of kept cells
are therefore certified: a component is accepted when its certified minimum
of g = |w| - |z| clears the far-prism bound f(R), and discarded as shell
junk when its maximum of g stays under that bound.  The carve succeeds when
every component is exactly one of the two and exactly one is accepted.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from shapely import set_precision
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .cells import ConvexCell, box_cell, cell_edges, min_norm2d_on_polygon, split_cell
from .cover import ConePoint, IDENTITY, UElement, act, inv, mul, scale
from .groups import OrbitPoint, StarSetup, enumerate_orbit

# Geometric classification tolerance, relative to the local scale.
EPS_GEOM = 1e-7
# Margin added around the slab and the light cone when sizing the box.
BOX_MARGIN = 1e-3
# Extra width of the wall-index window, in radians.
WINDOW_MARGIN = 0.2
# Grid used to deduplicate oriented wall planes.
PLANE_DEDUP = 1e-9
# Enumeration radius schedule.
R_INITIAL = 0.7
R_GROWTH = 1.15
MAX_ROUNDS = 12
# Vertex and facet matching tolerance for the extracted polyhedron.
MATCH_TOL = 1e-6
# Vertex merge radius for the extracted polyhedron.  Overlay coordinates are
# exact to ~1e-9, but a vertex shared by two nearly tangent planes scatters by
# roughly noise / sin(dihedral), which reaches a few 1e-7.  Merging at 1e-6
# stays far under real feature separations (>= 1e-4) and the refinement step
# puts merged vertices back onto the exact plane intersections.
MERGE_TOL = 1e-6
# Cells are discarded as certainly covered when |w_b| stays under 1 by this.
COVER_DELTA = 1e-6


def chart_to_cone(x) -> ConePoint:
    """Lift of a chart point strictly inside the cone."""
    z = complex(x[0], x[1])
    return ConePoint(z, math.atan(float(x[2])), math.hypot(1.0, float(x[2])))


def cone_to_chart(a: ConePoint) -> np.ndarray:
    """Chart coordinates of the ray through a; needs |alpha| < pi/2."""
    if not abs(a.alpha) < math.pi / 2:
        raise ValueError("point is not on a chart ray")
    zeta = a.z / (a.r * math.cos(a.alpha))
    return np.array([zeta.real, zeta.imag, math.tan(a.alpha)])


def chart_gap(x) -> float:
    """g = |w| - |z| at a chart point: positive inside the cone."""
    return math.hypot(1.0, float(x[2])) - math.hypot(float(x[0]), float(x[1]))


def gauge_arrays(theta: float, ghat: UElement, z_a, w_a, alpha_a):
    """Vectorized prism gauge of b = ghat^{-1} a over chart-style arrays.

    Returns (t, w_b) where t < 1 marks the interior of the translated prism.
    The argument is lifted exactly: the product formula adds a correction of
    magnitude under pi/2, valid because |z| < |w| on both factors.
    """
    zg, vg, ag = ghat.z, ghat.v, ghat.alpha
    c = (-zg.conjugate() * z_a) / (vg.conjugate() * w_a)
    w_b = vg.conjugate() * w_a - zg.conjugate() * z_a
    alpha_b = -ag + alpha_a + np.angle(1 + c)
    t = np.abs(w_b) * np.cos(alpha_b - theta * np.round(alpha_b / theta))
    return t, w_b


def prism_gauge(theta: float, ghat: UElement, a: ConePoint) -> float:
    t, _ = gauge_arrays(
        theta, ghat, np.array(a.z), np.array(a.r * cmath.exp(1j * a.alpha)), np.array(a.alpha)
    )
    return float(t)


def prism_classify(theta: float, ghat: UElement, a: ConePoint, eps: float = EPS_GEOM) -> int:
    """-1 inside the translated prism, +1 outside, 0 on its boundary."""
    t, w_b = gauge_arrays(
        theta, ghat, np.array(a.z), np.array(a.r * cmath.exp(1j * a.alpha)), np.array(a.alpha)
    )
    slack = eps * float(np.abs(w_b))
    t = float(t)
    if t < 1.0 - slack:
        return -1
    if t > 1.0 + slack:
        return 1
    return 0


def far_prism_bound(theta: float, radius: float) -> float:
    """Upper bound on g = |w| - |z| inside any prism based at |x| >= radius."""
    if not 0 <= radius < 1:
        raise ValueError("radius must lie in [0, 1)")
    return math.sqrt(1.0 - radius * radius) / math.cos(theta / 2)


def required_radius(theta: float, mu: float) -> float:
    """Smallest enumeration radius whose far-prism bound drops under mu."""
    if mu <= 0:
        return 1.0
    return math.sqrt(max(0.0, 1.0 - mu * mu * math.cos(theta / 2) ** 2))


def wall_element(ghat: UElement, m: int, theta: float) -> UElement:
    """h = ghat d^m, computed in closed form (exact alpha shift)."""
    return UElement(ghat.z * cmath.exp(-1j * m * theta), ghat.alpha - m * theta)


def wall_plane(h: UElement):
    """Oriented wall plane of h = ghat d^m in chart coordinates.

    The piece value Re(w_{h^{-1} a}) is affine in the chart point a and the
    wall is where it equals 1; with the returned (n, c), the side n.x <= c
    has piece value >= 1 (outside this piece's cover).  Degenerate central
    walls return None.
    """
    v = h.v
    n = np.array([h.z.real, h.z.imag, -v.imag])
    c = v.real - 1.0
    norm = float(np.linalg.norm(n))
    if norm < 1e-12:
        return None
    return n / norm, c / norm


@dataclass(frozen=True)
class WallTag:
    ghat: UElement
    m: int
    h: UElement
    point: complex


@dataclass
class Constraint:
    normal: np.ndarray
    offset: float
    tags: list


def _box_dims(theta: float) -> tuple:
    half_xy = math.sqrt(1.0 + BOX_MARGIN) / math.cos(theta / 2)
    half_z = math.tan(theta / 2) + BOX_MARGIN
    return half_xy, half_z


def candidate_constraints(
    setup: StarSetup, orbit: list[OrbitPoint], margin: float = WINDOW_MARGIN
) -> list[Constraint]:
    """Deduplicated oriented wall planes from all orbit points in range.

    For each translate, wall indices m are restricted to |alpha(ghat) - m theta|
    within pi/2 + theta/2 + margin: beyond that window the wall's half-space
    cannot meet the slab, since the gauge needs |alpha_b - m theta| < pi/2 to
    reach 1 from below.  Planes missing the carve box entirely are dropped.
    """
    theta = setup.theta
    window = math.pi / 2 + theta / 2 + margin
    half_xy, half_z = _box_dims(theta)
    out: dict[tuple, Constraint] = {}
    for o in orbit:
        g = o.element
        lo = math.ceil((g.alpha - window) / theta)
        hi = math.floor((g.alpha + window) / theta)
        for m in range(lo, hi + 1):
            h = wall_element(g, m, theta)
            if abs(h.z) <= 1e-12 and abs(h.alpha) <= 1e-12:
                continue  # h = identity: own sheet, not a wall
            plane = wall_plane(h)
            if plane is None:
                continue
            n, c = plane
            # Canonical orientation: seam planes between two prisms arise once
            # per prism with opposite normals; flipping onto one representative
            # merges their tag lists under a single plane id.
            for comp_ in n:
                if abs(comp_) > 1e-12:
                    if comp_ < 0:
                        n, c = -n, -c
                    break
            if abs(c) > (abs(n[0]) + abs(n[1])) * half_xy + abs(n[2]) * half_z:
                continue  # plane misses the box
            key = (
                round(n[0] / PLANE_DEDUP),
                round(n[1] / PLANE_DEDUP),
                round(n[2] / PLANE_DEDUP),
                round(c / PLANE_DEDUP),
            )
            tag = WallTag(g, m, h, o.point)
            if key in out:
                out[key].tags.append(tag)
            else:
                out[key] = Constraint(n, c, [tag])

    def is_slab(con: Constraint) -> bool:
        return abs(con.normal[0]) < 1e-12 and abs(con.normal[1]) < 1e-12

    cons = list(out.values())
    cons.sort(
        key=lambda con: (
            not is_slab(con),
            round(abs(con.offset), 12),
            round(con.normal[0], 12),
            round(con.normal[1], 12),
            round(con.normal[2], 12),
            round(con.offset, 12),
        )
    )
    return cons


@dataclass
class CarveComponent:
    cell_ids: list
    mu_cert: float
    mu_vertex: float
    max_g: float


@dataclass
class CarveResult:
    setup: StarSetup
    radius: float
    orbit: list
    constraints: list
    cells: list
    components: list
    accepted: list
    junk: list
    success: bool
    far_bound: float


def _edge_min_g(p: np.ndarray, q: np.ndarray) -> float:
    """Certified minimum of g = sqrt(1+x3^2) - |z| along a segment.

    Interior stationary points satisfy a quartic obtained by squaring the
    derivative balance; endpoint values are always included, which also covers
    the degenerate identically-balanced case.
    """
    u0, du = p[2], q[2] - p[2]
    z0 = complex(p[0], p[1])
    dz = complex(q[0] - p[0], q[1] - p[1])

    def g(t: float) -> float:
        u = u0 + t * du
        zz = z0 + t * dz
        return math.hypot(1.0, u) - abs(zz)

    best = min(g(0.0), g(1.0))
    # Stationary points balance u u' / sqrt(A) = L / sqrt(B) with
    # A(t) = 1 + u(t)^2, B(t) = |z(t)|^2, L(t) = Re(conj(z) dz); squaring
    # gives du^2 u(t)^2 B = L^2 A.
    A = np.array([du * du, 2 * u0 * du, 1 + u0 * u0])
    B = np.array([abs(dz) ** 2, 2 * (z0.conjugate() * dz).real, abs(z0) ** 2])
    U2 = (du * du) * np.array([du * du, 2 * u0 * du, u0 * u0])
    L = np.array([abs(dz) ** 2, (z0.conjugate() * dz).real])
    P = np.polysub(np.polymul(U2, B), np.polymul(np.polymul(L, L), A))
    P = np.trim_zeros(P, "f")
    if P.size > 1 and np.max(np.abs(P)) > 0:
        scalep = np.max(np.abs(P))
        roots = np.roots(P / scalep)
        for r in roots:
            if abs(r.imag) < 1e-9 and -1e-12 <= r.real <= 1 + 1e-12:
                best = min(best, g(min(max(r.real, 0.0), 1.0)))
    return best


def _edges_min_g_batch(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Vectorized edge-minimum of g over N segments given as (N,3) arrays.

    Same quartic as _edge_min_g, but the stationary-point polynomials are
    built by explicit convolution and all companion matrices are fed to one
    stacked eigenvalue call. Rows with a vanishing leading coefficient get it
    clamped to a tiny value; the spurious far-away root this creates falls
    outside the [0,1] window and the genuine roots move by a negligible
    amount that only perturbs where g is evaluated, never below its true
    minimum by more than solver roundoff.
    """
    u0, du = p[:, 2], q[:, 2] - p[:, 2]
    z0 = p[:, 0] + 1j * p[:, 1]
    dz = (q[:, 0] - p[:, 0]) + 1j * (q[:, 1] - p[:, 1])

    def g_at(s: np.ndarray) -> np.ndarray:
        return np.hypot(1.0, u0 + s * du) - np.abs(z0 + s * dz)

    best = np.minimum(g_at(np.zeros_like(u0)), g_at(np.ones_like(u0)))

    a2, a1, a0 = du * du, 2 * u0 * du, 1 + u0 * u0
    b2 = np.abs(dz) ** 2
    rb = (np.conj(z0) * dz).real
    b1, b0 = 2 * rb, np.abs(z0) ** 2
    du2 = du * du
    u2_, u1_, u0_ = du2 * du2, du2 * 2 * u0 * du, du2 * u0 * u0
    l1, l0 = b2, rb
    m2, m1, m0 = l1 * l1, 2 * l1 * l0, l0 * l0
    P = np.stack(
        [
            u2_ * b2 - m2 * a2,
            u2_ * b1 + u1_ * b2 - (m2 * a1 + m1 * a2),
            u2_ * b0 + u1_ * b1 + u0_ * b2 - (m2 * a0 + m1 * a1 + m0 * a2),
            u1_ * b0 + u0_ * b1 - (m1 * a0 + m0 * a1),
            u0_ * b0 - m0 * a0,
        ],
        axis=1,
    )
    scale = np.max(np.abs(P), axis=1)
    live = scale > 0.0
    if not np.any(live):
        return best
    Pl = P[live] / scale[live, None]
    lead = Pl[:, 0].copy()
    tiny = np.abs(lead) < 1e-14
    lead[tiny] = np.where(lead[tiny] < 0, -1e-14, 1e-14)
    comp = np.zeros((len(Pl), 4, 4))
    comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
    comp[:, 0, :] = -Pl[:, 1:] / lead[:, None]
    roots = np.linalg.eigvals(comp)
    ok = (np.abs(roots.imag) < 1e-9) & (roots.real > -1e-12) & (roots.real < 1 + 1e-12)
    s = np.clip(roots.real, 0.0, 1.0)
    idx = np.nonzero(live)[0]
    for k in range(4):
        sel = ok[:, k]
        if np.any(sel):
            rows = idx[sel]
            vals = np.hypot(1.0, u0[rows] + s[sel, k] * du[rows]) - np.abs(
                z0[rows] + s[sel, k] * dz[rows]
            )
            np.minimum.at(best, rows, vals)
    return best


def _cells_min_g(cells: list) -> float:
    """Certified minimum of g over a cell list via the batched edge solver."""
    P, Q = [], []
    for cell in cells:
        v = cell.verts
        for i, j in cell_edges(cell):
            P.append(v[i])
            Q.append(v[j])
    if not P:
        return math.inf
    return float(np.min(_edges_min_g_batch(np.array(P), np.array(Q))))


def _cell_min_g(cell: ConvexCell) -> float:
    v = cell.verts
    best = math.inf
    for i, j in cell_edges(cell):
        best = min(best, _edge_min_g(v[i], v[j]))
    return best


def _cell_vertex_min_g(cell: ConvexCell) -> float:
    v = cell.verts
    return float(np.min(np.hypot(1.0, v[:, 2]) - np.hypot(v[:, 0], v[:, 1])))


def _cell_max_g(cell: ConvexCell, threshold: float | None = None, budget: int = 200) -> float:
    """Sound upper bound for max of g over the cell.

    Pairing the largest |w| with the smallest |z| over the whole cell is valid
    but can be very loose for cells slanting along the cone.  When a threshold
    is given, slabs are bisected along x3 worst-first until every piece clears
    the threshold or the node budget runs out; the result is an upper bound
    either way, merely looser when the budget stops the descent.
    """

    def bound_of(c: ConvexCell) -> float:
        v = c.verts
        w_max = float(np.max(np.hypot(1.0, v[:, 2])))
        return w_max - min_norm2d_on_polygon(_hull2d(v[:, :2]))

    first = bound_of(cell)
    if threshold is None or first <= threshold:
        return first
    plane = np.array([0.0, 0.0, 1.0])
    settled = -math.inf
    active = [(first, cell)]
    while active and budget > 0:
        active.sort(key=lambda pair: pair[0])
        b, c = active.pop()
        if b <= threshold:
            settled = max(settled, b)
            continue
        lo = float(c.verts[:, 2].min())
        hi = float(c.verts[:, 2].max())
        if hi - lo < 1e-9:
            settled = max(settled, b)
            continue
        budget -= 1
        neg, pos = split_cell(c, plane, 0.5 * (lo + hi), -7)
        parts = [p for p in (neg, pos) if p is not None]
        if len(parts) != 2:
            settled = max(settled, b)
            continue
        active.extend((bound_of(p), p) for p in parts)
    for b, _ in active:
        settled = max(settled, b)
    return settled


def _plane_basis(n: np.ndarray):
    a = np.array([1.0, 0.0, 0.0])
    if abs(n[0]) > 0.9 * np.linalg.norm(n):
        a = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    e2 /= np.linalg.norm(e2)
    return e1, e2


def _covered_mask(cells: list, ghats: list) -> np.ndarray:
    """True for cells whose every vertex has |w_b| < 1 - delta for some translate.

    |w_b| is the modulus of an affine complex function of the chart point, so
    it is convex and its maximum over a cell sits at a vertex; a cell-wide
    bound under 1 certifies the cell is covered by that prism regardless of
    the argument lift, since the gauge never exceeds |w_b|.
    """
    covered = np.zeros(len(cells), dtype=bool)
    if not cells or not ghats:
        return covered
    counts = np.array([len(c.verts) for c in cells])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    allv = np.concatenate([c.verts for c in cells])
    z_a = allv[:, 0] + 1j * allv[:, 1]
    w_a = 1.0 + 1j * allv[:, 2]
    for g in ghats:
        w_b = np.abs(g.v.conjugate() * w_a - g.z.conjugate() * z_a)
        covered |= np.maximum.reduceat(w_b, starts) < 1.0 - COVER_DELTA
    return covered


def _outside_cone_mask(mins: np.ndarray, maxs: np.ndarray) -> np.ndarray:
    """True for cells provably outside the padded cone, from boxes alone.

    The distance from the x3-axis to the cell is at least the distance to
    its bounding rectangle, so the test never drops a cell touching the cone.
    """
    dx = np.maximum(0.0, np.maximum(mins[:, 0], -maxs[:, 0]))
    dy = np.maximum(0.0, np.maximum(mins[:, 1], -maxs[:, 1]))
    x3max2 = np.maximum(mins[:, 2] ** 2, maxs[:, 2] ** 2)
    return dx * dx + dy * dy > (1.0 + x3max2) * (1.0 + BOX_MARGIN)


def _classify_centroids(theta: float, cells: list, ghats: list):
    """Interior flags for in-cone centroids against every listed translate."""
    cents = np.array([c.centroid for c in cells])
    if len(cells) == 0:
        return np.zeros(0, dtype=bool)
    in_cone = np.hypot(cents[:, 0], cents[:, 1]) < np.hypot(1.0, cents[:, 2])
    interior = np.zeros(len(cells), dtype=bool)
    idx = np.nonzero(in_cone)[0]
    if idx.size == 0:
        return interior
    z_a = cents[idx, 0] + 1j * cents[idx, 1]
    w_a = 1.0 + 1j * cents[idx, 2]
    alpha_a = np.arctan(cents[idx, 2])
    for g in ghats:
        t, w_b = gauge_arrays(theta, g, z_a, w_a, alpha_a)
        hit = t < 1.0 - EPS_GEOM * np.abs(w_b)
        interior[idx[hit]] = True
    return interior


def _face_key(pid: int, pts: np.ndarray) -> tuple:
    # Key on the full sorted vertex set: twin faces of one split event carry
    # bit-identical coordinates, while distinct symmetric faces can share a
    # centroid (common around the x3-axis) and must not collide.
    q = (np.round(pts / 1e-7)).astype(np.int64)
    return (pid, tuple(sorted(map(tuple, q.tolist()))))


def _ring_area2d(q) -> float:
    area = 0.0
    m = len(q)
    for i in range(m):
        x1, y1 = q[i]
        x2, y2 = q[(i + 1) % m]
        area += x1 * y2 - x2 * y1
    return area / 2.0


def _convex_overlap_area(qa, qb) -> float:
    """Area of the intersection of two convex 2D rings (any orientation)."""
    subject = [tuple(p) for p in qa]
    clip = [tuple(p) for p in qb]
    if _ring_area2d(clip) < 0:
        clip = clip[::-1]
    m = len(clip)
    for i in range(m):
        if not subject:
            return 0.0
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        out = []
        prev = subject[-1]
        dprev = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in subject:
            dcur = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if dcur >= 0:
                if dprev < 0:
                    t = dprev / (dprev - dcur)
                    out.append(
                        (prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1]))
                    )
                out.append(cur)
            elif dprev >= 0:
                t = dprev / (dprev - dcur)
                out.append(
                    (prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1]))
                )
            prev, dprev = cur, dcur
        subject = out
    if len(subject) < 3:
        return 0.0
    return abs(_ring_area2d(subject))


def _connected_components(cells: list, constraints: list) -> list:
    """Union-find over cells, joining pairs that share boundary area.

    Twin faces created by the same split are equal polygons, so an exact key
    (plane id plus rounded vertex set) matches them directly. A split skipped
    on one side of a face but applied on the other leaves one large face
    opposite several smaller ones; the leftovers are matched per plane by
    actual polygon overlap.
    """
    parent = list(range(len(cells)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj

    twins: dict[tuple, tuple] = {}
    for ci, cell in enumerate(cells):
        for pid, ring in cell.faces:
            key = _face_key(pid, cell.verts[ring])
            hit = twins.pop(key, None)
            if hit is None:
                twins[key] = (ci, pid, ring)
            else:
                union(ci, hit[0])

    by_pid: dict[int, list] = {}
    for ci, pid, ring in twins.values():
        if pid >= 0:
            by_pid.setdefault(pid, []).append((ci, ring))
    for pid, faces in by_pid.items():
        if len(faces) < 2:
            continue
        n, c = constraints[pid].normal, constraints[pid].offset
        e1, e2 = _plane_basis(n)
        origin = n * c
        sides: dict[float, list] = {1.0: [], -1.0: []}
        for ci, ring in faces:
            pts = cells[ci].verts[ring]
            side = 1.0 if float(n @ cells[ci].centroid) - c > 0 else -1.0
            q = np.stack([(pts - origin) @ e1, (pts - origin) @ e2], axis=1)
            bbox = (q[:, 0].min(), q[:, 1].min(), q[:, 0].max(), q[:, 1].max())
            sides[side].append((ci, q, bbox))
        for ci, qa, ba in sides[1.0]:
            for cj, qb, bb in sides[-1.0]:
                if (
                    ba[2] < bb[0] - 1e-9
                    or bb[2] < ba[0] - 1e-9
                    or ba[3] < bb[1] - 1e-9
                    or bb[3] < ba[1] - 1e-9
                ):
                    continue
                if _convex_overlap_area(qa, qb) > 1e-12:
                    union(ci, cj)

    groups: dict[int, list] = {}
    for i in range(len(cells)):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def carve_domain(setup: StarSetup, radius: float, orbit=None) -> CarveResult:
    theta = setup.theta
    if orbit is None:
        orbit = enumerate_orbit(setup, radius)
    constraints = candidate_constraints(setup, orbit)
    ghats = [o.element for o in orbit if abs(o.point) > 0]

    half_xy, half_z = _box_dims(theta)
    slab = math.tan(theta / 2)
    cells = [box_cell(half_xy, half_z)]
    mins = cells[0].verts.min(axis=0)[None, :]
    maxs = cells[0].verts.max(axis=0)[None, :]

    fresh = np.ones(1, dtype=bool)  # not yet swept against the full orbit

    def filter_alive(keep: np.ndarray):
        nonlocal cells, mins, maxs, fresh
        if not np.all(keep):
            cells = [c_ for c_, k in zip(cells, keep) if k]
            mins, maxs = mins[keep], maxs[keep]
            fresh = fresh[keep]

    def sweep():
        # Coverage and cone membership never change for an existing cell, so
        # only cells created since the previous sweep need testing.
        nonlocal fresh
        if not np.any(fresh):
            return
        fi = np.nonzero(fresh)[0]
        drop = _outside_cone_mask(mins[fi], maxs[fi])
        drop |= _covered_mask([cells[i] for i in fi], ghats)
        fresh[fi] = False
        if np.any(drop):
            keep = np.ones(len(cells), dtype=bool)
            keep[fi[drop]] = False
            filter_alive(keep)

    window = math.pi / 2 + theta / 2 + WINDOW_MARGIN
    piece_cache: dict[tuple, tuple] = {}

    def piece_table(g):
        """Stacked affine forms of all gauge pieces of one translate.

        Returns (Q, q0) so that piece m at chart point x is x @ Q[m] + q0[m];
        pieces are affine, so cell minima sit at cell vertices.
        """
        key = (round(g.z.real, 12), round(g.z.imag, 12), round(g.alpha, 12))
        tab = piece_cache.get(key)
        if tab is None:
            lo_m = math.ceil((g.alpha - window) / theta)
            hi_m = math.floor((g.alpha + window) / theta)
            rows, offs = [], []
            for m in range(lo_m, hi_m + 1):
                h = wall_element(g, m, theta)
                rows.append([-h.z.real, -h.z.imag, h.v.imag])
                offs.append(h.v.real)
            tab = (np.array(rows), np.array(offs))
            piece_cache[key] = tab
        return tab

    n_slab = 0
    for pid, con in enumerate(constraints):
        n, c = con.normal, con.offset
        # Extremes of n.x over each cell's bounding box: cells whose whole
        # box sits on one side cannot be split and pass through untouched.
        pos_n = np.maximum(n, 0.0)
        neg_n = np.minimum(n, 0.0)
        lo = mins @ pos_n + maxs @ neg_n
        hi = maxs @ pos_n + mins @ neg_n
        straddle = (lo < c - 1e-12) & (hi > c + 1e-12)
        if np.any(straddle):
            # A cell strictly separated from every prism tagged on this plane
            # keeps a sibling piece of that prism at 1 + delta or more across
            # the whole cell, so the prism's closure misses the cell and no
            # facet of it can land there: the split would be pure dicing.
            # Separation is monotone under subdivision, so skipping stays
            # valid for all descendants.  Pieces are affine, so the cell
            # minimum of a piece is its minimum over the cell vertices.
            idx = np.nonzero(straddle)[0]
            must_split = np.zeros(idx.size, dtype=bool)
            central = any(abs(tag.ghat.z) <= 1e-12 for tag in con.tags)
            if central:
                must_split[:] = True  # own-sheet walls bound the slab
            else:
                sub = [cells[i] for i in idx]
                counts = np.array([len(c_.verts) for c_ in sub])
                starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
                allv = np.concatenate([c_.verts for c_ in sub])
                for tag in con.tags:
                    Q, q0 = piece_table(tag.ghat)
                    pieces = allv @ Q.T + q0[None, :]
                    cell_min = np.minimum.reduceat(pieces, starts, axis=0)
                    must_split |= ~np.any(cell_min >= 1.0 + COVER_DELTA, axis=1)
                    if bool(np.all(must_split)):
                        break
            straddle[idx[~must_split]] = False
        if np.any(straddle):
            keep = ~straddle
            children, cb_min, cb_max = [], [], []
            for i in np.nonzero(straddle)[0]:
                cell = cells[i]
                halves = split_cell(cell, n, c, pid)
                for ch in halves:
                    if ch is None:
                        continue
                    if ch is cell:
                        keep[i] = True
                        continue
                    children.append(ch)
                    cb_min.append(ch.verts.min(axis=0))
                    cb_max.append(ch.verts.max(axis=0))
            if children:
                cmins, cmaxs = np.array(cb_min), np.array(cb_max)
                # Children deep inside this plane's own prisms, or provably
                # outside the cone, are dropped before later planes dice them.
                drop = _outside_cone_mask(cmins, cmaxs)
                tag_ghats = [
                    t.ghat
                    for t in con.tags
                    if abs(t.ghat.z) > 1e-12 or abs(t.ghat.alpha) > 1e-12
                ]
                if tag_ghats:
                    drop |= _covered_mask(children, tag_ghats)
                ckeep = ~drop
                if not np.all(ckeep):
                    children = [ch for ch, k in zip(children, ckeep) if k]
                    cmins, cmaxs = cmins[ckeep], cmaxs[ckeep]
                cells = [c_ for c_, k in zip(cells, keep) if k] + children
                mins = np.concatenate([mins[keep], cmins])
                maxs = np.concatenate([maxs[keep], cmaxs])
                fresh = np.concatenate([fresh[keep], np.ones(len(children), dtype=bool)])
            else:
                filter_alive(keep)
        if abs(n[0]) < 1e-12 and abs(n[1]) < 1e-12:
            n_slab += 1
            if n_slab == 2:
                # Both slab planes processed: drop the margin shells outside.
                keep = np.array([abs(float(c_.centroid[2])) < slab for c_ in cells])
                filter_alive(keep)
        if pid % 16 == 15:
            sweep()

    sweep()
    interior = _classify_centroids(theta, cells, ghats)
    kept = [c for c, covered in zip(cells, interior) if not covered]
    kmins, kmaxs = mins[~interior], maxs[~interior]

    comps_ids = _connected_components(kept, constraints)
    f_R = far_prism_bound(theta, radius)
    components = []
    if kept:
        counts = np.array([len(c.verts) for c in kept])
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        allv = np.concatenate([c.verts for c in kept])
        gv = np.hypot(1.0, allv[:, 2]) - np.hypot(allv[:, 0], allv[:, 1])
        cell_mu_vertex = np.minimum.reduceat(gv, starts)
        # Loose per-cell upper bound on g from the bounding box: w at the
        # largest |x3|, |z| at the rectangle's nearest point to the axis.
        dx = np.maximum(0.0, np.maximum(kmins[:, 0], -kmaxs[:, 0]))
        dy = np.maximum(0.0, np.maximum(kmins[:, 1], -kmaxs[:, 1]))
        x3max2 = np.maximum(kmins[:, 2] ** 2, kmaxs[:, 2] ** 2)
        cell_loose_max = np.sqrt(1.0 + x3max2) - np.hypot(dx, dy)
    for ids in comps_ids:
        ida = np.array(ids)
        mu_vertex = float(cell_mu_vertex[ida].min())
        max_g = float(cell_loose_max[ida].max())
        if mu_vertex >= f_R:
            # Acceptance candidate: certify the true minimum along edges.
            mu_cert = _cells_min_g([kept[i] for i in ids])
        else:
            mu_cert = mu_vertex  # upper bound only; cannot be accepted anyway
        if max_g > f_R and mu_cert < f_R:
            # Neither clearly junk by the loose bound nor accepted: tighten
            # the bound cell by cell before giving up on the junk label.
            over = ida[cell_loose_max[ida] > f_R]
            under = ida[cell_loose_max[ida] <= f_R]
            max_g = max(_cell_max_g(kept[i], threshold=f_R) for i in over)
            if len(under):
                max_g = max(max_g, float(cell_loose_max[under].max()))
        components.append(CarveComponent(ids, mu_cert, mu_vertex, max_g))

    accepted = [i for i, comp in enumerate(components) if comp.mu_cert >= f_R]
    junk = [i for i, comp in enumerate(components) if comp.max_g <= f_R and i not in accepted]
    clean = (
        len(accepted) == 1
        and all(i in accepted or i in junk for i in range(len(components)))
    )
    return CarveResult(
        setup=setup,
        radius=radius,
        orbit=orbit,
        constraints=constraints,
        cells=kept,
        components=components,
        accepted=accepted,
        junk=junk,
        success=clean,
        far_bound=f_R,
    )


def _hull2d(pts: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns hull vertices in order."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    sorted_pts = pts[order]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(sorted_pts)
    upper = half(sorted_pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


@dataclass
class Facet:
    ring: list
    normal: np.ndarray
    offset: float
    tag: WallTag
    plane_id: int


@dataclass
class Polyhedron:
    vertices: np.ndarray
    facets: list
    cells: list
    setup: StarSetup
    certificate: dict
    volume: float
    mu_vertex: float
    mu_cert: float
    constraints: list = field(default_factory=list)
    orbit: list = field(default_factory=list)

    def contains_chart(self, x, tol: float = 1e-9) -> bool:
        return any(cell.contains(x, tol) for cell in self.cells)

    def facet_polygon(self, i: int) -> np.ndarray:
        return self.vertices[self.facets[i].ring]


def _canon_values(vals: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Collapse values that agree within tol onto one representative.

    Face corners computed along different split histories disagree at
    roundoff scale; grid rounding can still send such twins to different
    cells, so clustering along the sorted axis is used instead.
    """
    order = np.argsort(vals, kind="stable")
    out = np.empty_like(vals)
    canon = 0.0
    prev = None
    for i in order:
        v = vals[i]
        if prev is None or v - prev > tol:
            canon = v
        out[i] = canon
        prev = v
    return out


def _poly_pieces(geom) -> list:
    """Positive-area polygon members of any shapely geometry."""
    if geom.is_empty:
        return []
    if geom.geom_type == "Polygon":
        return [geom]
    if geom.geom_type in ("MultiPolygon", "GeometryCollection"):
        out = []
        for g in geom.geoms:
            out.extend(_poly_pieces(g))
        return out
    return []


class _Snap3:
    """Snap 3D points onto representatives within MERGE_TOL."""

    def __init__(self, tol: float = MERGE_TOL):
        self.tol = tol
        self._data: dict[tuple, int] = {}
        self.points: list[np.ndarray] = []

    def _keys(self, x):
        base = [round(float(v) / self.tol) for v in x]
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    yield (base[0] + dx, base[1] + dy, base[2] + dz)

    def index(self, x) -> int:
        for key in self._keys(x):
            i = self._data.get(key)
            if i is not None and np.max(np.abs(self.points[i] - x)) <= self.tol:
                return i
        i = len(self.points)
        self.points.append(np.asarray(x, dtype=float))
        self._data[(round(x[0] / self.tol), round(x[1] / self.tol), round(x[2] / self.tol))] = i
        return i


def extract_polyhedron(result: CarveResult) -> Polyhedron:
    if not result.success or len(result.accepted) != 1:
        raise ValueError("carve result does not certify a single accepted component")
    setup = result.setup
    theta = setup.theta
    comp = result.components[result.accepted[0]]
    cells = [result.cells[i] for i in comp.cell_ids]

    planes: dict[int, tuple] = {}
    for pid, con in enumerate(result.constraints):
        planes[pid] = (con.normal, con.offset)

    # Boundary faces: exact twins (same plane, same rounded centroid) are
    # interior pairs and drop out directly.  A split skipped on one side of
    # a seam leaves one large face opposite several smaller ones, so the
    # leftovers are resolved per plane by polygon overlay: whatever area of
    # one side is not covered by the opposite side is genuine boundary.
    entries = []
    seen: dict[tuple, int] = {}
    for cell in cells:
        for pid, ring in cell.faces:
            pts = cell.verts[ring]
            if pid < 0:
                raise ArithmeticError("accepted component touches the bounding box")
            n, c = planes[pid]
            side = 1 if float(n @ cell.centroid) - c > 0 else -1
            key = _face_key(pid, pts)
            entries.append((key, pid, side, pts))
            seen[key] = seen.get(key, 0) + 1
    leftover: dict[int, dict] = {}
    for key, pid, side, pts in entries:
        if seen[key] == 1:
            leftover.setdefault(pid, {1: [], -1: []})[side].append(pts)

    snap = _Snap3()
    raw_facets = []
    for pid in sorted(leftover):
        n, c = planes[pid]
        e1, e2 = _plane_basis(n)
        origin = n * c  # a point on the plane (n is unit)
        # Canonicalize in-plane coordinates across both sides at once: shared
        # edges become bit-identical, which keeps the overlay exact (raw
        # floats can shed valid area or leave hairline gaps in the union).
        sizes = {side: [len(p) for p in leftover[pid][side]] for side in (1, -1)}
        stacked = [pts for side in (1, -1) for pts in leftover[pid][side]]
        rel = np.concatenate(stacked) - origin
        xy_all = np.stack([rel @ e1, rel @ e2], axis=1)
        xy_all[:, 0] = _canon_values(xy_all[:, 0])
        xy_all[:, 1] = _canon_values(xy_all[:, 1])
        face_xy = {}
        at = 0
        for side in (1, -1):
            rows = []
            for m in sizes[side]:
                rows.append(xy_all[at : at + m])
                at += m
            face_xy[side] = rows
        unions = {}
        for side in (1, -1):
            if not face_xy[side]:
                unions[side] = None
                continue
            shapes = []
            total_area = 0.0
            for xy in face_xy[side]:
                # Fixed-precision shapes force snap-rounded overlay: with twin
                # coordinates already bit-identical, union and difference stay
                # robust and zero-width slits at hanging vertices get welded.
                shape = set_precision(Polygon(xy), 1e-9)
                total_area += shape.area
                shapes.append(shape)
            merged = unary_union(shapes)
            # Guard against the union silently dropping a face; tiny overlaps
            # between inputs (canonicalization moves points by ~1e-9) are fine.
            lost = max(shape.difference(merged).area for shape in shapes)
            if lost > 1e-8 * max(total_area, 1.0):
                raise ArithmeticError("facet merge lost area: union dropped part of a face")
            unions[side] = merged
        for side in (1, -1):
            u = unions[side]
            if u is None:
                continue
            region = u if unions[-side] is None else u.difference(unions[-side])
            pieces = _poly_pieces(region)
            if sum(1 for p in pieces if p.area > 1e-10) > 1:
                # A hanging vertex sitting on another face's edge can pinch the
                # overlay into pieces joined only at shared points.  A mitre
                # out-in buffer welds the zero-width slit; keep the result only
                # if it did not add area (genuinely separate pieces stay apart).
                healed = region.buffer(1e-8, join_style=2, mitre_limit=5.0)
                healed = healed.buffer(-1e-8, join_style=2, mitre_limit=5.0)
                if abs(healed.area - region.area) <= 1e-9 * max(region.area, 1.0):
                    pieces = _poly_pieces(healed)
            dust = 0.0
            for piece in pieces:
                if piece.area <= 1e-9:
                    dust += piece.area
                    continue
                if piece.interiors:
                    # Snap rounding leaves needle-thin holes along welded
                    # seams; fill those.  A substantive hole means the facet
                    # genuinely is an annulus, which the carve cannot emit.
                    if any(Polygon(h).area > 1e-8 for h in piece.interiors):
                        raise ArithmeticError("facet with a hole: carve produced a ring facet")
                    piece = Polygon(piece.exterior)
                xy = np.array(piece.exterior.coords[:-1])
                ring3 = [origin + uu * e1 + vv * e2 for uu, vv in xy]
                ring = [snap.index(p) for p in ring3]
                # The slit weld can leave a zero-width spur, and two sub-faces
                # meeting at a single point come out as one ring through the
                # pinch vertex twice.  Emit each simple loop as its own facet,
                # resolving the wall tag per loop.
                for loop in _simple_loops(ring):
                    pts = np.array([snap.points[i] for i in loop])
                    sub = Polygon(np.stack([(pts - origin) @ e1, (pts - origin) @ e2], axis=1))
                    if sub.area <= 1e-9:
                        dust += sub.area
                        continue
                    rep = sub.representative_point()
                    rep3 = origin + rep.x * e1 + rep.y * e2
                    tag = _resolve_tag(setup, result.constraints[pid], rep3)
                    raw_facets.append((pid, side, loop, tag))
            if dust > 1e-7:
                raise ArithmeticError("facet area lost to slivers during overlay")

    verts = np.array(snap.points)
    raw_facets = _insert_tjunctions(verts, raw_facets)
    raw_facets = _drop_nonessential(verts, raw_facets)

    # Re-index used vertices.
    used = sorted({i for _, _, ring, _ in raw_facets for i in ring})
    remap = {old: new for new, old in enumerate(used)}
    verts = verts[used]
    raw_facets = [(pid, side, [remap[i] for i in ring], tag) for pid, side, ring, tag in raw_facets]

    facets = []
    for pid, side, ring, tag in raw_facets:
        n, c = planes[pid]
        outward = -side * n
        ring = _orient_ring(verts, ring, outward)
        facets.append(Facet(ring=ring, normal=outward, offset=-side * c, tag=tag, plane_id=pid))

    euler = _check_manifold(facets, len(verts))
    verts = _refine_vertices(verts, facets, planes)
    volume = _oriented_volume(verts, facets)
    if volume <= 0:
        raise ArithmeticError("extracted polyhedron has non-positive volume")

    cert = {
        "radius": result.radius,
        "far_bound": result.far_bound,
        "mu_cert": comp.mu_cert,
        "mu_vertex": comp.mu_vertex,
        "required_radius": required_radius(theta, comp.mu_cert),
        "components": len(result.components),
        "junk_components": len(result.junk),
        "orbit_points": len(result.orbit),
        "constraints": len(result.constraints),
        "euler": euler,
    }
    return Polyhedron(
        vertices=verts,
        facets=facets,
        cells=cells,
        setup=setup,
        certificate=cert,
        volume=volume,
        mu_vertex=comp.mu_vertex,
        mu_cert=comp.mu_cert,
        constraints=result.constraints,
        orbit=result.orbit,
    )


def _simple_loops(ring: list) -> list:
    """Split a snapped ring into simple loops.

    Healed overlay exteriors may backtrack along a zero-width spur or pass
    through a pinch vertex twice.  Spurs are excised, then the ring is split
    at every repeated vertex; loops too short to bound area are dropped.
    """
    ring = [r for i, r in enumerate(ring) if r != ring[i - 1]]
    changed = True
    while changed and len(ring) >= 3:
        changed = False
        n = len(ring)
        for i in range(n):
            if ring[i - 2] == ring[i]:
                for j in sorted({(i - 1) % n, i}, reverse=True):
                    ring.pop(j)
                ring = [r for k, r in enumerate(ring) if r != ring[k - 1]]
                changed = True
                break
    if len(ring) < 3:
        return []
    seen: dict[int, int] = {}
    for idx, v in enumerate(ring):
        if v in seen:
            i, j = seen[v], idx
            return _simple_loops(ring[i:j]) + _simple_loops(ring[j:] + ring[:i])
        seen[v] = idx
    return [ring]


def _insert_tjunctions(verts: np.ndarray, raw_facets: list) -> list:
    out = []
    for pid, side, ring, tag in raw_facets:
        new_ring = []
        m = len(ring)
        for a in range(m):
            i, j = ring[a], ring[(a + 1) % m]
            new_ring.append(i)
            p, q = verts[i], verts[j]
            d = q - p
            L = float(np.linalg.norm(d))
            if L < 1e-12:
                continue
            inserts = []
            for v in range(len(verts)):
                if v == i or v == j:
                    continue
                rel = verts[v] - p
                t = float(rel @ d) / (L * L)
                if 1e-9 < t < 1 - 1e-9:
                    # A hanging vertex can sit up to its own merge displacement
                    # off the neighbouring edge.
                    dist = np.linalg.norm(rel - t * d)
                    if dist <= 2 * MERGE_TOL:
                        inserts.append((t, v))
            for _, v in sorted(inserts):
                new_ring.append(v)
        out.append((pid, side, new_ring, tag))
    return out


def _drop_nonessential(verts: np.ndarray, raw_facets: list) -> list:
    """Drop vertices that are collinear passthroughs in every incident facet."""
    essential = set()
    for pid, side, ring, tag in raw_facets:
        m = len(ring)
        for a in range(m):
            i = ring[a]
            p, q, r = verts[ring[a - 1]], verts[i], verts[ring[(a + 1) % m]]
            chord = r - p
            span = float(np.linalg.norm(chord))
            if span < 1e-12:
                essential.add(i)
                continue
            # Distance from the chord, not a relative cross test: snapped
            # passthrough vertices deviate by at most ~2*MERGE_TOL while
            # genuine corners deviate by >= 1e-4.
            dist = float(np.linalg.norm(np.cross(chord, q - p))) / span
            if dist > 1e-5:
                essential.add(i)
    out = []
    for pid, side, ring, tag in raw_facets:
        ring2 = [i for i in ring if i in essential]
        ring2 = [r for i, r in enumerate(ring2) if r != ring2[i - 1]]
        if len(ring2) < 3:
            raise ArithmeticError("facet degenerated during canonicalization")
        out.append((pid, side, ring2, tag))
    return out


def _orient_ring(verts: np.ndarray, ring: list, outward: np.ndarray) -> list:
    pts = verts[ring]
    nw = np.cross(pts, np.roll(pts, -1, axis=0)).sum(axis=0)
    if float(nw @ outward) < 0:
        return ring[::-1]
    return ring


def _resolve_tag(setup: StarSetup, constraint: Constraint, point3: np.ndarray) -> WallTag:
    theta = setup.theta
    a = chart_to_cone(point3)
    for tag in constraint.tags:
        t, w_b = gauge_arrays(
            theta,
            tag.ghat,
            np.array(a.z),
            np.array(a.r * cmath.exp(1j * a.alpha)),
            np.array(a.alpha),
        )
        # The facet must sit on this prism's boundary, on the tagged piece.
        if abs(float(t) - 1.0) > 1e-6 * max(1.0, float(np.abs(w_b))):
            continue
        zg, vg, ag = tag.ghat.z, tag.ghat.v, tag.ghat.alpha
        c = (-zg.conjugate() * a.z) / (vg.conjugate() * (a.r * cmath.exp(1j * a.alpha)))
        alpha_b = -ag + a.alpha + cmath.phase(1 + c)
        # Piece m of the gauge is Re(w_b e^{i m theta}); it achieves the max
        # exactly when the lifted phase lands in the window around -m*theta.
        if abs(alpha_b + tag.m * theta) <= theta / 2 + 1e-6:
            return tag
    raise ArithmeticError("no wall tag matches the facet")


def _check_manifold(facets: list, n_verts: int) -> int:
    """Verify a closed, consistently oriented surface; return its Euler number.

    Every undirected edge must be shared by exactly two facets and traversed
    once in each direction, which certifies a closed oriented 2-manifold.  The
    Euler characteristic is reported, not constrained: the domain is compact
    but nothing forces it to be a ball, and pinched setups do produce boundary
    surfaces of higher genus.
    """
    edge_count: dict[tuple, int] = {}
    directed: set = set()
    for f in facets:
        m = len(f.ring)
        for a in range(m):
            i, j = f.ring[a], f.ring[(a + 1) % m]
            if (i, j) in directed:
                raise ArithmeticError("inconsistent orientation: directed edge repeated")
            directed.add((i, j))
            key = (i, j) if i < j else (j, i)
            edge_count[key] = edge_count.get(key, 0) + 1
    bad = [e for e, k in edge_count.items() if k != 2]
    if bad:
        raise ArithmeticError(f"non-manifold boundary: {len(bad)} edges not shared twice")
    return n_verts - len(edge_count) + len(facets)


def _refine_vertices(verts: np.ndarray, facets: list, planes: dict) -> np.ndarray:
    incident: dict[int, list] = {}
    for f in facets:
        for i in f.ring:
            incident.setdefault(i, []).append((f.normal, f.offset))
    out = verts.copy()
    for i, eqs in incident.items():
        if len(eqs) < 3:
            continue
        A = np.array([n for n, _ in eqs])
        b = np.array([c for _, c in eqs])
        sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank == 3 and np.linalg.norm(sol - verts[i]) < 1e-5:
            out[i] = sol
    return out


def _oriented_volume(verts: np.ndarray, facets: list) -> float:
    total = 0.0
    for f in facets:
        pts = verts[f.ring]
        v0 = pts[0]
        for a in range(1, len(pts) - 1):
            total += float(np.dot(v0, np.cross(pts[a], pts[a + 1]))) / 6.0
    return total


def build_fundamental_domain(
    setup: StarSetup,
    r_initial: float = R_INITIAL,
    growth: float = R_GROWTH,
    max_rounds: int = MAX_ROUNDS,
) -> Polyhedron:
    """Grow the enumeration radius until the carve certifies and stabilizes."""
    R = r_initial
    for _ in range(max_rounds):
        result = carve_domain(setup, R)
        poly = _try_extract(result)
        if poly is not None:
            R2 = _next_radius(R, result, growth)
            result2 = carve_domain(setup, R2)
            poly2 = _try_extract(result2)
            if poly2 is not None and _same_polyhedron(poly, poly2):
                poly2.certificate["stability_radius"] = R2
                poly2.certificate["stable"] = True
                return poly2
            R = R2
            continue
        R = _next_radius(R, result, growth)
    raise RuntimeError(f"carving did not stabilize within {max_rounds} rounds")


def _try_extract(result: CarveResult):
    """Extract if certified; geometric failures mean the radius is too small.

    A certified component can still fail extraction honestly: regions whose g
    stays under f(R) are discarded as shell junk, and at a marginal radius the
    cut between junk and the certified body can leave a degenerate or mistagged
    sliver on the seam.  Growing the radius shrinks f(R) and moves the seam
    away, so extraction errors are treated like an uncertified round.
    """
    if not result.success:
        return None
    try:
        return extract_polyhedron(result)
    except ArithmeticError:
        return None


def _next_radius(R: float, result: CarveResult, growth: float) -> float:
    ceiling = (1.0 + R) / 2.0
    base = min(R * growth, ceiling)
    best_mu = max((c.mu_cert for c in result.components), default=0.0)
    if best_mu > 0:
        target = required_radius(result.setup.theta, best_mu) * 1.02
        base = max(base, min(target, ceiling))
    return base


def _same_polyhedron(a: Polyhedron, b: Polyhedron, tol: float = MATCH_TOL) -> bool:
    if len(a.facets) != len(b.facets) or len(a.vertices) != len(b.vertices):
        return False
    used = [False] * len(b.facets)
    for i in range(len(a.facets)):
        pa = a.facet_polygon(i)
        hit = False
        for j in range(len(b.facets)):
            if used[j]:
                continue
            pb = b.facet_polygon(j)
            if len(pa) != len(pb):
                continue
            if _rings_match(pa, pb, tol):
                used[j] = True
                hit = True
                break
        if not hit:
            return False
    return True


def _rings_match(pa: np.ndarray, pb: np.ndarray, tol: float) -> bool:
    m = len(pa)
    for shift in range(m):
        rolled = np.roll(pb, shift, axis=0)
        if np.max(np.abs(pa - rolled)) <= tol:
            return True
        if np.max(np.abs(pa - rolled[::-1])) <= tol:
            return True
    return False


def section_scale(poly: Polyhedron, a: ConePoint) -> float:
    """Scale putting a onto the outermost enumerated prism boundary.

    Within the certified region the minimizing gauge is the identity sheet,
    so the scaled point lies on the chart of the polyhedron itself.
    """
    theta = poly.setup.theta
    t_min = a.r * math.cos(a.alpha - theta * round(a.alpha / theta))
    for o in poly.orbit:
        if abs(o.point) == 0:
            continue
        t_min = min(t_min, prism_gauge(theta, o.element, a))
    if t_min <= 0:
        raise ValueError("point has no positive section scale")
    return 1.0 / t_min


def sample_boundary(poly: Polyhedron, n: int = 1000, seed: int = 0) -> dict:
    """Sample the section over random chart rays and validate it against the carve.

    Emitted points whose minimizing gauge is the identity sheet must project
    into the polyhedron, except inside the junk guard band g < mu_cert where
    the finite enumeration leaves the section to further-out prisms.
    """
    rng = np.random.default_rng(seed)
    theta = poly.setup.theta
    slab = math.tan(theta / 2)
    b_cyl = 1.0 / math.cos(theta / 2)
    stats = {"samples": 0, "on_sheet": 0, "in_poly": 0, "guard_band": 0, "failures": 0}
    emitted = []
    while stats["samples"] < n:
        x1, x2 = rng.uniform(-b_cyl, b_cyl, size=2)
        x3 = rng.uniform(-slab, slab)
        if math.hypot(x1, x2) >= math.hypot(1.0, x3) - 1e-9:
            continue  # outside the cone: not a section ray
        stats["samples"] += 1
        c = np.array([x1, x2, x3])
        a = chart_to_cone(c)
        s = section_scale(poly, a)
        b = scale(s, a)
        emitted.append(b)
        if s > 1.0 + 1e-9:
            continue  # the ray exits through a translated sheet
        stats["on_sheet"] += 1
        if chart_gap(c) < poly.mu_cert - 1e-9:
            stats["guard_band"] += 1
            continue
        if poly.contains_chart(c, tol=MATCH_TOL):
            stats["in_poly"] += 1
        else:
            stats["failures"] += 1
    stats["points"] = emitted
    return stats


@dataclass
class Match:
    gamma1: UElement
    gamma2: UElement
    chart: np.ndarray
    h: UElement
    margin: float


def _membership_candidates(poly: Polyhedron, y_abs: float, alpha_span: float):
    """Kernel-side candidates ghat d1^j paired with the two-sided windows."""
    setup = poly.setup
    shadow = poly.certificate.get("shadow")
    if shadow is None:
        shadow = 0.0
        for cell in poly.cells:
            for v in cell.verts:
                disc = complex(v[0], v[1]) / complex(1.0, v[2])
                shadow = max(shadow, 2.0 * math.atanh(min(abs(disc), 0.999999)))
        shadow += 1e-6
        poly.certificate["shadow"] = shadow
    need = math.tanh((shadow + 2.0 * math.atanh(min(y_abs, 0.999999)) + 0.05) / 2.0)
    orbit = poly.orbit
    if need > poly.certificate["radius"] + 1e-12:
        orbit = enumerate_orbit(setup, need)
    out = []
    for o in orbit:
        g = o.element
        lever = 2.0 * math.atanh(abs(o.point))
        if lever > shadow + 2.0 * math.atanh(min(y_abs, 0.999999)) + 1e-9:
            continue
        out.append(g)
    return out, shadow


def membership_translate(poly: Polyhedron, a: ConePoint, tol: float = 1e-9) -> list:
    """All translate classes (gamma1, gamma2) putting a into the domain chart.

    gamma1 runs over kernel representatives times stabilizer powers d1^j;
    gamma2 over powers of d2.  Matches are grouped by the invariant product
    h = gamma1 gamma2^{-1}: pairs sharing it differ by the joint stabilizer.
    """
    setup = poly.setup
    theta = setup.theta
    th1 = math.pi * setup.k / setup.p1u
    th2 = math.pi * setup.k / setup.q
    w = a.r * cmath.exp(1j * a.alpha)
    y = a.z / w
    cands, _ = _membership_candidates(poly, abs(y), a.alpha)
    matches: list[Match] = []
    seen_classes: dict[tuple, Match] = {}
    for g in cands:
        # j window: land alpha within reach of the slab after d2 rounding.
        spread = theta / 2 + th2 / 2 + math.pi / 2 + WINDOW_MARGIN
        lo = math.ceil((g.alpha + a.alpha - spread) / th1)
        hi = math.floor((g.alpha + a.alpha + spread) / th1)
        for j in range(lo, hi + 1):
            g1 = UElement(g.z * cmath.exp(-1j * j * th1), g.alpha - j * th1)
            im1 = act(g1, IDENTITY, a)
            m2c = round(-im1.alpha / th2)
            for m2 in (m2c - 1, m2c, m2c + 1):
                beta = m2 * th2
                alpha_f = im1.alpha + beta
                if abs(alpha_f) > theta / 2 + 1e-6:
                    continue
                z_f = im1.z * cmath.exp(1j * beta)
                b = ConePoint(z_f, alpha_f, im1.r)
                x = cone_to_chart(b)
                margin = _chart_margin(poly, x)
                if margin < -tol:
                    continue
                g2 = UElement(0j, -m2 * th2)
                h = mul(g1, inv(g2))
                key = (round(h.z.real / 1e-6), round(h.z.imag / 1e-6), round(h.alpha / 1e-6))
                m = Match(gamma1=g1, gamma2=g2, chart=x, h=h, margin=margin)
                if key not in seen_classes or margin > seen_classes[key].margin:
                    seen_classes[key] = m
    matches = sorted(seen_classes.values(), key=lambda m: -m.margin)
    return matches


def _chart_margin(poly: Polyhedron, x) -> float:
    """Greatest over cells of the least halfspace slack: >=0 means inside."""
    best = -math.inf
    for cell in poly.cells:
        m = math.inf
        for n, c in cell.halfspaces:
            m = min(m, c - float(n[0] * x[0] + n[1] * x[1] + n[2] * x[2]))
            if m <= best:
                break
        best = max(best, m)
    return best

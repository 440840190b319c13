"""Tests for the chart geometry, wall planes, and the carving pipeline."""

import cmath
import math

import numpy as np
import pytest

from lorentzdom.cells import box_cell, split_cell
from lorentzdom.carve import (
    MATCH_TOL,
    candidate_constraints,
    carve_domain,
    chart_gap,
    chart_to_cone,
    cone_to_chart,
    extract_polyhedron,
    far_prism_bound,
    gauge_arrays,
    membership_translate,
    prism_gauge,
    required_radius,
    sample_boundary,
    section_scale,
    wall_element,
    wall_plane,
    _cell_max_g,
    _covered_mask,
    _edge_min_g,
    _edges_min_g_batch,
    _simple_loops,
)
from lorentzdom.cover import (
    IDENTITY,
    ConePoint,
    UElement,
    act,
    act_left,
    inv,
    mul,
    power,
    scale,
)
from lorentzdom.groups import enumerate_orbit, star_setup


@pytest.fixture(scope="module")
def setup533():
    return star_setup((5, 3, 3), k=2, u_index=0, q=3)


@pytest.fixture(scope="module")
def carve533(setup533):
    result = carve_domain(setup533, 0.95125)
    assert result.success
    return result


@pytest.fixture(scope="module")
def poly533(carve533):
    return extract_polyhedron(carve533)


def _random_chart(rng, n, slab=0.4, rad=0.8):
    pts = []
    while len(pts) < n:
        x = rng.uniform([-rad, -rad, -slab], [rad, rad, slab])
        if math.hypot(x[0], x[1]) < math.hypot(1.0, x[2]) - 1e-6:
            pts.append(x)
    return np.array(pts)


def test_chart_roundtrip():
    rng = np.random.default_rng(1)
    for x in _random_chart(rng, 200):
        a = chart_to_cone(x)
        assert abs(a.z) < a.r
        back = cone_to_chart(a)
        assert np.max(np.abs(back - x)) < 1e-12
        # The chart is constant along the ray through a.
        for s in (0.25, 3.0):
            assert np.max(np.abs(cone_to_chart(scale(s, a)) - x)) < 1e-12


def test_chart_ray_outside_chart_raises():
    a = ConePoint(0.1 + 0j, 2.0, 3.0)
    with pytest.raises(ValueError):
        cone_to_chart(a)


def test_chart_gap_sign():
    assert chart_gap((0.0, 0.0, 0.0)) == 1.0
    assert chart_gap((2.0, 0.0, 0.0)) < 0
    x = (0.3, -0.4, 0.7)
    assert abs(chart_gap(x) - (math.hypot(1, 0.7) - 0.5)) < 1e-15


def test_gauge_matches_group_action(setup533):
    """The vectorized gauge agrees with moving the point by the group action."""
    theta = setup533.theta
    rng = np.random.default_rng(7)
    orbit = enumerate_orbit(setup533, 0.9)
    ghats = [o.element for o in orbit if abs(o.point) > 0][:12]
    for x in _random_chart(rng, 40, slab=math.tan(theta / 2) * 0.95):
        a = chart_to_cone(x)
        for g in ghats:
            b = act_left(inv(g), a)
            t_ref = b.r * math.cos(b.alpha - theta * round(b.alpha / theta))
            t = prism_gauge(theta, g, a)
            assert abs(t - t_ref) < 1e-12
            # w_b agrees with the moved point as well.
            _, w_b = gauge_arrays(
                theta, g, np.array(a.z), np.array(a.r * cmath.exp(1j * a.alpha)), np.array(a.alpha)
            )
            assert abs(complex(w_b) - b.r * cmath.exp(1j * b.alpha)) < 1e-12


def test_wall_element_is_group_product(setup533):
    theta = setup533.theta
    d = setup533.d
    orbit = enumerate_orbit(setup533, 0.9)
    for o in orbit[:20]:
        g = o.element
        for m in (-3, -1, 0, 1, 2, 5):
            h = wall_element(g, m, theta)
            ref = mul(g, power(d, m))
            assert abs(h.z - ref.z) < 1e-12
            assert abs(h.alpha - ref.alpha) < 1e-12


def test_wall_plane_is_piece_level_set(setup533):
    """n.x = c is where the piece value Re(w_{h^{-1}a}) crosses 1."""
    theta = setup533.theta
    rng = np.random.default_rng(3)
    orbit = enumerate_orbit(setup533, 0.9)
    walls = []
    for o in orbit:
        if abs(o.point) == 0:
            continue
        walls.append(wall_element(o.element, 1, theta))
        walls.append(wall_element(o.element, -2, theta))
    for h in walls[:10]:
        plane = wall_plane(h)
        assert plane is not None
        n, c = plane
        assert abs(np.linalg.norm(n) - 1.0) < 1e-12
        for x in _random_chart(rng, 20):
            w_b = h.v.conjugate() * complex(1.0, x[2]) - h.z.conjugate() * complex(x[0], x[1])
            lhs = w_b.real - 1.0
            rhs = c - float(n @ x)
            # Proportional with a fixed positive factor (the normal's length
            # before normalization), so signs and zeros coincide.
            assert lhs * rhs >= -1e-12
            if abs(rhs) > 1e-9:
                ratio = lhs / rhs
                assert ratio > 0
                n0 = np.array([h.z.real, h.z.imag, -h.v.imag])
                assert abs(ratio - np.linalg.norm(n0)) < 1e-9


def test_central_walls_bound_slab(setup533):
    theta = setup533.theta
    orbit = enumerate_orbit(setup533, 0.9)
    cons = candidate_constraints(setup533, orbit)
    slabs = [con for con in cons if abs(con.normal[0]) < 1e-12 and abs(con.normal[1]) < 1e-12]
    assert len(slabs) == 2
    offs = sorted(con.offset for con in slabs)
    assert abs(offs[0] + math.tan(theta / 2)) < 1e-12
    assert abs(offs[1] - math.tan(theta / 2)) < 1e-12
    for con in slabs:
        assert any(abs(tag.ghat.z) < 1e-12 and tag.m in (-1, 1) for tag in con.tags)


def test_constraint_planes_deduplicated(setup533):
    orbit = enumerate_orbit(setup533, 0.95125)
    cons = candidate_constraints(setup533, orbit)
    seen = set()
    for con in cons:
        key = tuple(np.round(con.normal, 6)) + (round(con.offset, 6),)
        assert key not in seen
        seen.add(key)
        # Every tag's wall lies on the constraint plane, up to orientation.
        for tag in con.tags:
            plane = wall_plane(tag.h)
            assert plane is not None
            n, c = plane
            same = np.allclose(n, con.normal, atol=1e-9) and abs(c - con.offset) < 1e-9
            flipped = np.allclose(-n, con.normal, atol=1e-9) and abs(c + con.offset) < 1e-9
            assert same or flipped


def test_far_prism_bound_on_samples(setup533):
    """Points inside a translate's prism have small chart gap."""
    theta = setup533.theta
    rng = np.random.default_rng(11)
    orbit = [o for o in enumerate_orbit(setup533, 0.95) if abs(o.point) > 0]
    hits = 0
    for x in _random_chart(rng, 400, slab=math.tan(theta / 2)):
        a = chart_to_cone(x)
        for o in orbit:
            if prism_gauge(theta, o.element, a) < 1.0:
                assert chart_gap(x) <= far_prism_bound(theta, abs(o.point)) + 1e-9
                hits += 1
    assert hits > 100


def test_required_radius_inverts_far_bound():
    for theta in (2 * math.pi / 15, 2 * math.pi / 9, 2 * math.pi / 3):
        for mu in (0.05, 0.2, 0.4712, 0.9):
            R = required_radius(theta, mu)
            assert 0 <= R < 1
            assert abs(far_prism_bound(theta, R) - mu) < 1e-12
    assert required_radius(0.3, 0.0) == 1.0
    assert required_radius(0.3, -1.0) == 1.0


def test_far_prism_bound_rejects_bad_radius():
    with pytest.raises(ValueError):
        far_prism_bound(0.5, 1.0)
    with pytest.raises(ValueError):
        far_prism_bound(0.5, -0.1)


def _dense_min_g(p, q, n=20001):
    ts = np.linspace(0.0, 1.0, n)
    pts = p[None, :] + ts[:, None] * (q - p)[None, :]
    return float(np.min(np.hypot(1.0, pts[:, 2]) - np.hypot(pts[:, 0], pts[:, 1])))


def test_edge_min_g_matches_dense_sampling():
    rng = np.random.default_rng(23)
    for _ in range(60):
        p = rng.uniform([-1.5, -1.5, -0.8], [1.5, 1.5, 0.8])
        q = rng.uniform([-1.5, -1.5, -0.8], [1.5, 1.5, 0.8])
        got = _edge_min_g(p, q)
        ref = _dense_min_g(p, q)
        assert got <= ref + 1e-12
        assert got >= ref - 1e-7


def test_edge_min_g_degenerate_cases():
    p = np.array([0.3, 0.0, 0.2])
    assert abs(_edge_min_g(p, p) - chart_gap(p)) < 1e-12
    # Radial segment through the axis: minimum sits at the axis crossing.
    a = np.array([-0.5, 0.0, 0.0])
    b = np.array([0.5, 0.0, 0.0])
    assert abs(_edge_min_g(a, b) - 0.5) < 1e-12


def test_edges_min_g_batch_matches_scalar():
    rng = np.random.default_rng(29)
    P = rng.uniform([-1.2, -1.2, -0.7], [1.2, 1.2, 0.7], size=(300, 3))
    Q = rng.uniform([-1.2, -1.2, -0.7], [1.2, 1.2, 0.7], size=(300, 3))
    batch = _edges_min_g_batch(P, Q)
    for i in range(len(P)):
        assert abs(batch[i] - _edge_min_g(P[i], Q[i])) < 1e-9


def test_cell_max_g_is_upper_bound():
    rng = np.random.default_rng(31)
    cells = [box_cell(0.9, 0.5)]
    for pid in range(8):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        out = []
        for cell in cells:
            for part in split_cell(cell, n, rng.uniform(-0.3, 0.3), pid):
                if part is not None:
                    out.append(part)
        cells = out
    for cell in cells[:25]:
        true_max = max(
            chart_gap(v) for v in cell.verts
        )
        # Interior rejection samples push the dense estimate up.
        lo, hi = cell.verts.min(axis=0), cell.verts.max(axis=0)
        pts = rng.uniform(lo, hi, size=(400, 3))
        inside = [x for x in pts if cell.contains(x, tol=1e-12)]
        for x in inside:
            true_max = max(true_max, chart_gap(x))
        loose = _cell_max_g(cell)
        assert loose >= true_max - 1e-12
        if loose > true_max + 1e-9:
            # An achievable threshold makes the bisection tighten the bound;
            # it must stay above the true maximum.
            tight = _cell_max_g(cell, threshold=0.5 * (true_max + loose))
            assert true_max - 1e-12 <= tight <= loose + 1e-12


def test_covered_mask_only_certifies_covered(setup533):
    theta = setup533.theta
    ghats = [o.element for o in enumerate_orbit(setup533, 0.95) if abs(o.point) > 0]
    rng = np.random.default_rng(37)
    cells = []
    while len(cells) < 60:
        c = rng.uniform([-0.9, -0.9, -0.25], [0.7, 0.7, 0.2])
        half = rng.uniform(0.01, 0.08)
        cell = box_cell(half, half)
        verts = cell.verts + c
        # Keep the verification below on valid cone points.
        if np.any(np.hypot(verts[:, 0], verts[:, 1]) >= np.hypot(1.0, verts[:, 2]) - 1e-3):
            continue
        cells.append(
            type(cell)(
                verts=verts,
                faces=cell.faces,
                halfspaces=[(n, off + float(n @ c)) for n, off in cell.halfspaces],
            )
        )
    mask = _covered_mask(cells, ghats)
    assert mask.any()
    for cell, covered in zip(cells, mask):
        if not covered:
            continue
        # Some single translate's gauge stays under 1 on every vertex.
        ok = False
        for g in ghats:
            t = [prism_gauge(theta, g, chart_to_cone(v)) for v in cell.verts]
            if max(t) < 1.0:
                ok = True
                break
        assert ok


def test_simple_loops_passthrough_and_spur():
    assert _simple_loops([1, 2, 3]) == [[1, 2, 3]]
    assert _simple_loops([4, 5, 6, 7]) == [[4, 5, 6, 7]]
    # Zero-width spur: out to 9 and straight back.
    assert _simple_loops([1, 2, 3, 9, 3]) == [[1, 2, 3]]
    assert _simple_loops([7, 1, 2, 3, 7, 9]) != [[7, 1, 2, 3, 7, 9]]
    # Pinch: two loops sharing vertex 1.
    loops = _simple_loops([1, 2, 3, 1, 4, 5])
    assert sorted(len(l) for l in loops) == [3, 3]
    assert {frozenset(l) for l in loops} == {frozenset({1, 2, 3}), frozenset({1, 4, 5})}
    # Degenerate rings vanish.
    assert _simple_loops([1, 2, 1]) == []
    assert _simple_loops([1, 1, 1]) == []


def test_carve_533_structure(carve533):
    assert carve533.success
    assert len(carve533.accepted) == 1
    comp = carve533.components[carve533.accepted[0]]
    assert comp.mu_cert >= carve533.far_bound
    assert comp.mu_cert <= comp.mu_vertex + 1e-12
    # Certified minimum of the frozen flagship setup.
    assert abs(comp.mu_cert - 0.47106448783223254) < 1e-9


def test_extract_533_polyhedron(poly533):
    assert len(poly533.vertices) == 20
    assert len(poly533.facets) == 22
    sides = sorted(len(f.ring) for f in poly533.facets)
    assert sides == [3] * 20 + [10, 10]
    assert abs(poly533.volume - 0.338711778031156) < 1e-9
    assert poly533.certificate["euler"] == 2
    cellvol = sum(c.volume() for c in poly533.cells)
    assert abs(cellvol - poly533.volume) < 1e-9


def test_extract_533_facet_planes(poly533):
    theta = poly533.setup.theta
    for f in poly533.facets:
        pts = poly533.vertices[f.ring]
        res = np.abs(pts @ f.normal - f.offset)
        assert float(res.max()) <= 1e-7
        # The tag is consistent: h = ghat d^m and the facet lies on its wall.
        h_ref = wall_element(f.tag.ghat, f.tag.m, theta)
        assert abs(h_ref.z - f.tag.h.z) < 1e-12
        assert abs(h_ref.alpha - f.tag.h.alpha) < 1e-12
        centroid = pts.mean(axis=0)
        t = prism_gauge(theta, f.tag.ghat, chart_to_cone(centroid))
        assert abs(t - 1.0) < 1e-7


def test_extract_533_vertices_uncovered(poly533):
    """No enumerated translate strictly covers any vertex of the domain."""
    theta = poly533.setup.theta
    for v in poly533.vertices:
        a = chart_to_cone(v)
        for o in poly533.orbit:
            if abs(o.point) == 0:
                continue
            assert prism_gauge(theta, o.element, a) >= 1.0 - 1e-7


def test_section_scale_puts_points_on_boundary(poly533):
    rng = np.random.default_rng(41)
    theta = poly533.setup.theta
    for x in _random_chart(rng, 25, slab=math.tan(theta / 2) * 0.9, rad=0.5):
        a = chart_to_cone(x)
        s = section_scale(poly533, a)
        b = scale(s, a)
        t_min = b.r * math.cos(b.alpha - theta * round(b.alpha / theta))
        for o in poly533.orbit:
            if abs(o.point) == 0:
                continue
            t_min = min(t_min, prism_gauge(theta, o.element, b))
        assert abs(t_min - 1.0) < 1e-9


def test_sample_boundary_validates(poly533):
    stats = sample_boundary(poly533, n=200, seed=5)
    assert stats["samples"] == 200
    assert stats["failures"] == 0
    assert stats["on_sheet"] > 0
    assert len(stats["points"]) == 200


def test_membership_unique_near_identity(poly533):
    rng = np.random.default_rng(43)
    theta = poly533.setup.theta
    hits = []
    for x in _random_chart(rng, 30, slab=math.tan(theta / 2) * 0.5, rad=0.25):
        a = chart_to_cone(x)
        matches = membership_translate(poly533, a)
        interior = [m for m in matches if m.margin > 1e-7]
        hits.append(len(interior))
        # The found translate really maps the point into the domain chart.
        for m in matches:
            b = act(inv(m.gamma1), inv(m.gamma2), a)
            assert np.max(np.abs(cone_to_chart(b) - m.chart)) < 1e-9
            assert poly533.contains_chart(m.chart, tol=MATCH_TOL)
    assert all(h == 1 for h in hits)


def test_membership_translate_identity_class(poly533):
    a = chart_to_cone((0.01, -0.02, 0.005))
    matches = membership_translate(poly533, a)
    assert len(matches) == 1
    h = matches[0].h
    assert abs(h.z) < 1e-9 and abs(h.alpha) < 1e-9

"""Convex cells for incremental plane-arrangement carving.

A cell is a bounded convex polytope kept as explicit vertices plus faces,
where each face remembers the id of the plane it lies on.  Cells also carry
the exact list of half-spaces that produced them, so membership tests do not
depend on any reconstruction from the vertex set.  Cells are treated as
immutable: splitting returns fresh objects and may return the input itself
when the plane misses it.
"""

from __future__ import annotations

import math

import numpy as np

# Vertices closer than this to a cutting plane count as lying on it.
SPLIT_TOL = 1e-9


class ConvexCell:
    __slots__ = ("verts", "faces", "halfspaces")

    def __init__(self, verts: np.ndarray, faces: list, halfspaces: list):
        self.verts = verts
        self.faces = faces
        self.halfspaces = halfspaces

    @property
    def centroid(self) -> np.ndarray:
        return self.verts.mean(axis=0)

    def contains(self, x, tol: float = SPLIT_TOL) -> bool:
        for n, c in self.halfspaces:
            if n[0] * x[0] + n[1] * x[1] + n[2] * x[2] > c + tol:
                return False
        return True

    def volume(self) -> float:
        """Pyramid decomposition from the centroid; valid for convex cells."""
        c = self.centroid
        total = 0.0
        for _, ring in self.faces:
            pts = self.verts[ring]
            n = _newell(pts)
            total += abs(float(np.dot(n, pts[0] - c))) / 6.0
        return total


def _newell(pts: np.ndarray) -> np.ndarray:
    """Newell area vector of a planar polygon; |result| = 2 * area."""
    shifted = np.roll(pts, -1, axis=0)
    return np.cross(pts, shifted).sum(axis=0)


# Box face plane ids; negative so they never collide with arrangement indices.
BOX_PLANE_IDS = (-1, -2, -3, -4, -5, -6)


def box_cell(half_x: float, half_z: float) -> ConvexCell:
    """Axis-aligned box [-half_x, half_x]^2 x [-half_z, half_z]."""
    b, h = float(half_x), float(half_z)
    verts = np.array(
        [
            [-b, -b, -h],
            [b, -b, -h],
            [b, b, -h],
            [-b, b, -h],
            [-b, -b, h],
            [b, -b, h],
            [b, b, h],
            [-b, b, h],
        ]
    )
    faces = [
        (-1, [0, 1, 2, 3]),  # z = -h
        (-2, [4, 5, 6, 7]),  # z = +h
        (-3, [0, 1, 5, 4]),  # y = -b
        (-4, [2, 3, 7, 6]),  # y = +b
        (-5, [0, 3, 7, 4]),  # x = -b
        (-6, [1, 2, 6, 5]),  # x = +b
    ]
    halfspaces = [
        (np.array([0.0, 0.0, -1.0]), h),
        (np.array([0.0, 0.0, 1.0]), h),
        (np.array([0.0, -1.0, 0.0]), b),
        (np.array([0.0, 1.0, 0.0]), b),
        (np.array([-1.0, 0.0, 0.0]), b),
        (np.array([1.0, 0.0, 0.0]), b),
    ]
    return ConvexCell(verts, faces, halfspaces)


def split_cell(cell: ConvexCell, n: np.ndarray, c: float, pid: int, tol: float = SPLIT_TOL):
    """Split a cell by the plane n.x = c.

    Returns (neg, pos) where neg is the part with n.x <= c; either side may be
    None when the plane misses the cell.  The cutting plane gets face id `pid`
    in both children.
    """
    s = cell.verts @ n - c
    if s.max() <= tol:
        return cell, None
    if s.min() >= -tol:
        return None, cell

    # In-plane basis for ordering section rings, shared by both children.
    nx, ny, nz = float(n[0]), float(n[1]), float(n[2])
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    if abs(nx) > 0.9 * nn:
        e1 = np.array([-nz, 0.0, nx])
    else:
        e1 = np.array([0.0, nz, -ny])
    e1 /= math.sqrt(float(e1 @ e1))
    e2 = np.array(
        [
            ny * e1[2] - nz * e1[1],
            nz * e1[0] - nx * e1[2],
            nx * e1[1] - ny * e1[0],
        ]
    )
    e2 /= math.sqrt(float(e2 @ e2))

    crossings: dict[tuple[int, int], np.ndarray] = {}

    def crossing(i: int, j: int) -> tuple:
        key = (i, j) if i < j else (j, i)
        if key not in crossings:
            t = s[i] / (s[i] - s[j])
            crossings[key] = cell.verts[i] + t * (cell.verts[j] - cell.verts[i])
        return ("x",) + key

    def build(sign: float):
        new_pts: list[np.ndarray] = []
        index_of: dict[tuple, int] = {}

        def emit(tag: tuple) -> int:
            if tag not in index_of:
                index_of[tag] = len(new_pts)
                new_pts.append(cell.verts[tag[1]] if tag[0] == "v" else crossings[tag[1:]])
            return index_of[tag]

        faces = []
        section: dict[tuple, int] = {}
        for pid0, ring in cell.faces:
            out_tags: list[tuple] = []
            m = len(ring)
            for a in range(m):
                i, j = ring[a], ring[(a + 1) % m]
                if sign * s[i] <= tol:
                    out_tags.append(("v", i))
                if (s[i] > tol and s[j] < -tol) or (s[i] < -tol and s[j] > tol):
                    out_tags.append(crossing(i, j))
            if len(out_tags) >= 2:
                out_tags = [
                    t for a, t in enumerate(out_tags) if t != out_tags[a - 1]
                ]
            if len(out_tags) < 3:
                continue
            idxs = [emit(t) for t in out_tags]
            faces.append((pid0, idxs))
            for t, ix in zip(out_tags, idxs):
                if t[0] == "x" or abs(s[t[1]]) <= tol:
                    section[ix] = new_pts[ix]

        if len(section) >= 3:
            ring = _order_on_plane(section, e1, e2)
            faces.append((pid, ring))
        if len(faces) < 4 or len(new_pts) < 4:
            return None
        hs = list(cell.halfspaces)
        hs.append((sign * n, sign * c))
        return ConvexCell(np.array(new_pts), faces, hs)

    return build(1.0), build(-1.0)


def _order_on_plane(section: dict[int, np.ndarray], e1: np.ndarray, e2: np.ndarray) -> list[int]:
    """Order section points into a convex ring using an in-plane basis."""
    idxs = list(section.keys())
    pts = np.array([section[i] for i in idxs])
    rel = pts - pts.mean(axis=0)
    ang = np.arctan2(rel @ e2, rel @ e1)
    order = np.argsort(ang)
    return [idxs[o] for o in order]


def face_polygon(cell: ConvexCell, face_index: int) -> np.ndarray:
    pid, ring = cell.faces[face_index]
    return cell.verts[ring]


def cell_edges(cell: ConvexCell):
    """Unique vertex-index pairs appearing consecutively in some face ring."""
    seen = set()
    for _, ring in cell.faces:
        m = len(ring)
        for a in range(m):
            i, j = ring[a], ring[(a + 1) % m]
            key = (i, j) if i < j else (j, i)
            if key not in seen:
                seen.add(key)
                yield key


def min_norm2d_on_polygon(pts2d: np.ndarray) -> float:
    """Distance from the origin to a convex 2D polygon (0 if inside)."""
    m = len(pts2d)
    if m == 0:
        return math.inf
    best = math.inf
    signs = []
    for a in range(m):
        p, q = pts2d[a], pts2d[(a + 1) % m]
        d = q - p
        L2 = float(d @ d)
        t = 0.0 if L2 == 0 else float(np.clip(-(p @ d) / L2, 0.0, 1.0))
        best = min(best, float(np.hypot(*(p + t * d))))
        # Sign of the edge against the origin; all alike means origin inside.
        signs.append(p[0] * q[1] - p[1] * q[0])
    if all(sg >= 0 for sg in signs) or all(sg <= 0 for sg in signs):
        return 0.0
    return best

"""Multi-radius Ball Pivoting surface reconstruction.

The geometric inner loops (seed search, pivot first-hit search, empty-ball
test) are numba kernels; front and edge bookkeeping stays in Python.

Orientation convention: every triangle is stored counter-clockwise about its
outward normal, and a front edge ``(i, j, o)`` is the directed edge i->j of
triangle (i, j, o).  Pivoting across it produces triangle (j, i, k).
"""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from tega.errors import MissingNormals, NoTriangles
from tega.geometry.cloud import PointCloud, TriangleMesh, deduplicate

# relative slack for "strictly inside the ball"; co-spherical points (grids) sit on it
_EMPTY_TOL = 1e-9
# seed triangles are only formed from the nearest unused neighbours
_SEED_CANDIDATES = 32


@njit(cache=True)
def _ball_center(p0, p1, p2, radius):
    """Center of the radius-ball through p0,p1,p2 on the side of (p1-p0)x(p2-p0)."""
    ab = p1 - p0
    ac = p2 - p0
    n = np.cross(ab, ac)
    n2 = n @ n
    if n2 < 1e-24:
        return False, np.zeros(3)
    cc = p0 + (np.cross(n, ab) * (ac @ ac) + np.cross(ac, n) * (ab @ ab)) / (2.0 * n2)
    d = cc - p0
    h2 = radius * radius - d @ d
    if h2 < 0.0:
        return False, np.zeros(3)
    return True, cc + n / np.sqrt(n2) * np.sqrt(h2)


@njit(cache=True)
def _ball_is_empty(pts, indptr, indices, anchor, center, radius, a, b, c):
    lim = radius * radius * (1.0 - _EMPTY_TOL)
    for t in range(indptr[anchor], indptr[anchor + 1]):
        q = indices[t]
        if q == a or q == b or q == c:
            continue
        d = pts[q] - center
        if d @ d < lim:
            return False
    return True


@njit(cache=True)
def _normals_agree(nrm, tri_n, a, b, c):
    return (tri_n @ nrm[a]) > 0.0 and (tri_n @ nrm[b]) > 0.0 and (tri_n @ nrm[c]) > 0.0


@njit(cache=True)
def _find_seed(pts, nrm, indptr, indices, used, s, radius):
    """First empty-ball triangle (s, a, b) over unused neighbours, nearest pairs first."""
    lo = indptr[s]
    hi = indptr[s + 1]
    cand = np.empty(hi - lo, dtype=np.int64)
    dist = np.empty(hi - lo)
    m = 0
    for t in range(lo, hi):
        q = indices[t]
        if q == s or used[q]:
            continue
        d = pts[q] - pts[s]
        cand[m] = q
        dist[m] = d @ d
        m += 1
    order = np.argsort(dist[:m], kind="mergesort")
    m = min(m, _SEED_CANDIDATES)
    lim = 4.0 * radius * radius
    for ia in range(m):
        a = cand[order[ia]]
        for ib in range(ia + 1, m):
            b = cand[order[ib]]
            dab = pts[b] - pts[a]
            if dab @ dab > lim:
                continue
            n = np.cross(pts[a] - pts[s], pts[b] - pts[s])
            nn = np.sqrt(n @ n)
            if nn < 1e-12:
                continue
            x, y = a, b
            if n @ nrm[s] < 0.0:
                x, y = b, a
                n = -n
            n = n / nn
            if not _normals_agree(nrm, n, s, x, y):
                continue
            ok, center = _ball_center(pts[s], pts[x], pts[y], radius)
            if not ok:
                continue
            if _ball_is_empty(pts, indptr, indices, s, center, radius, s, x, y):
                return x, y
    return -1, -1


@njit(cache=True)
def _pivot(pts, nrm, indptr, indices, i, j, o, radius):
    """Roll the ball of triangle (i, j, o) over edge i->j; return the first point hit.

    Candidates whose oriented triangle (j, i, k) disagrees with the vertex
    normals are skipped.  Returns -1 when nothing is hit or when the
    first-hit ball is not empty.
    """
    ok, c0 = _ball_center(pts[i], pts[j], pts[o], radius)
    if not ok:
        return -1
    m = 0.5 * (pts[i] + pts[j])
    e = pts[j] - pts[i]
    e = e / np.sqrt(e @ e)
    u0 = c0 - m
    u0 = u0 - (u0 @ e) * e
    w = pts[o] - m
    w = w - (w @ e) * e
    axis = e
    if np.cross(e, u0) @ w > 0.0:
        axis = -e
    lim = 4.0 * radius * radius
    two_pi = 2.0 * np.pi
    best_k = -1
    best_angle = np.inf
    best_d = np.inf
    best_c = np.zeros(3)
    for t in range(indptr[i], indptr[i + 1]):
        k = indices[t]
        if k == i or k == j or k == o:
            continue
        dj = pts[k] - pts[j]
        if dj @ dj > lim:
            continue
        n = np.cross(pts[i] - pts[j], pts[k] - pts[j])
        nn = np.sqrt(n @ n)
        if nn < 1e-12:
            continue
        if not _normals_agree(nrm, n / nn, j, i, k):
            continue
        ok, c = _ball_center(pts[j], pts[i], pts[k], radius)
        if not ok:
            continue
        u = c - m
        u = u - (u @ e) * e
        ang = np.arctan2(np.cross(u0, u) @ axis, u0 @ u)
        if ang < 0.0:
            ang += two_pi
        if ang > two_pi - 1e-7:
            ang = 0.0
        dm = pts[k] - m
        dk = dm @ dm
        if ang < best_angle - 1e-12 or (abs(ang - best_angle) <= 1e-12 and (dk < best_d or (dk == best_d and k < best_k))):
            best_angle = ang
            best_k = k
            best_d = dk
            best_c = c
    if best_k < 0:
        return -1
    if not _ball_is_empty(pts, indptr, indices, i, best_c, radius, i, j, best_k):
        return -1
    return best_k


def _neighbor_csr(tree: cKDTree, pts: np.ndarray, reach: float) -> tuple[np.ndarray, np.ndarray]:
    lists = tree.query_ball_point(pts, reach, return_sorted=True)
    lengths = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    indptr = np.zeros(len(lists) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    if indptr[-1]:
        indices = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists])
    else:
        indices = np.zeros(0, dtype=np.int64)
    return indptr, indices


class _Front:
    """Edge table plus per-vertex open-edge counts for one reconstruction."""

    def __init__(self, n: int):
        self.edges: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        self.used = np.zeros(n, dtype=np.bool_)
        self.open = np.zeros(n, dtype=np.int64)
        self.triangles: list[tuple[int, int, int]] = []
        self.tri_radius: list[int] = []
        self.queue: deque[tuple[int, int, int]] = deque()
        self.boundary: list[tuple[int, int, int]] = []

    def count(self, a: int, b: int) -> int:
        return len(self.edges.get((a, b) if a < b else (b, a), ()))

    def _edge_ok(self, a: int, b: int) -> bool:
        """Directed edge a->b may be added: absent, or present once as b->a."""
        entries = self.edges.get((a, b) if a < b else (b, a))
        if not entries:
            return True
        if len(entries) >= 2:
            return False
        x, y, _ = entries[0]
        return x == b and y == a

    def can_add(self, a: int, b: int, c: int) -> bool:
        return self._edge_ok(a, b) and self._edge_ok(b, c) and self._edge_ok(c, a)

    def add(self, a: int, b: int, c: int, radius_index: int) -> None:
        self.triangles.append((a, b, c))
        self.tri_radius.append(radius_index)
        for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
            key = (x, y) if x < y else (y, x)
            entries = self.edges.setdefault(key, [])
            entries.append((x, y, z))
            if len(entries) == 1:
                self.open[x] += 1
                self.open[y] += 1
                self.queue.append((x, y, z))
            else:
                self.open[x] -= 1
                self.open[y] -= 1
        self.used[[a, b, c]] = True


def ball_pivot_mesh(pc: PointCloud, radii: Sequence[float]) -> TriangleMesh:
    """Reconstruct a triangle mesh from an oriented point cloud.

    Radii are processed in ascending order; before each later pass the
    boundary edges left by the previous pass are pivoted again with the
    larger ball, then fresh seeds are searched.  Exact duplicate points are
    collapsed onto their first occurrence; output vertices are ``pc.points``.
    """
    if pc.normals is None:
        raise MissingNormals("ball pivoting needs oriented normals")
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be non-empty, positive and strictly ascending")

    keep, _ = deduplicate(pc.points)
    pts = np.ascontiguousarray(pc.points[keep])
    nrm = np.ascontiguousarray(pc.normals[keep])
    n = len(pts)
    front = _Front(n)
    tree = cKDTree(pts) if n else None

    for r_idx, rho in enumerate(radii):
        if n < 3:
            break
        indptr, indices = _neighbor_csr(tree, pts, 2.0 * rho)
        for edge in front.boundary:
            if front.count(edge[0], edge[1]) == 1:
                front.queue.append(edge)
        front.boundary = []
        _expand(front, pts, nrm, indptr, indices, rho, r_idx)
        for s in range(n):
            if front.used[s]:
                continue
            a, b = _find_seed(pts, nrm, indptr, indices, front.used, s, rho)
            if a < 0:
                continue
            front.add(s, int(a), int(b), r_idx)
            _expand(front, pts, nrm, indptr, indices, rho, r_idx)

    if not front.triangles:
        raise NoTriangles("no seed triangle found for any radius", stage="meshing")
    tris = keep[np.asarray(front.triangles, dtype=np.int64)]
    return TriangleMesh(
        pc.points, tris, pc.normals, triangle_radius=np.asarray(front.tri_radius, dtype=np.int64)
    )


def _expand(front: _Front, pts, nrm, indptr, indices, rho: float, r_idx: int) -> None:
    while front.queue:
        i, j, o = front.queue.popleft()
        if front.count(i, j) != 1:
            continue
        k = int(_pivot(pts, nrm, indptr, indices, i, j, o, rho))
        if k < 0 or (front.used[k] and front.open[k] == 0) or not front.can_add(j, i, k):
            front.boundary.append((i, j, o))
            continue
        front.add(j, i, k, r_idx)


def default_radii(mean_nn: float) -> list[float]:
    return [1.5 * mean_nn, 3.0 * mean_nn, 6.0 * mean_nn]

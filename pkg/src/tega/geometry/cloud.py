"""Point cloud / triangle mesh containers and the preprocessing used before meshing."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from tega.errors import (
    DegenerateCloud,
    EmptyCloud,
    FormatError,
    InvalidGeometry,
    TooFewPoints,
)

PC_MAGIC = b"TEGAPC1\0"


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidGeometry("non-finite coordinate in point cloud")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise InvalidGeometry(f"{len(nrm)} normals for {len(pts)} points")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise InvalidGeometry("normals must be unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    @property
    def point_count(self) -> int:
        return len(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def with_normals(self, normals: np.ndarray | None) -> PointCloud:
        return PointCloud(self.points, normals)

    def quantized(self) -> PointCloud:
        """Round-trip coordinates (and normals) through float32, the on-disk precision."""
        pts = self.points.astype("<f4").astype(np.float64)
        nrm = None
        if self.normals is not None:
            nrm = self.normals.astype("<f4").astype(np.float64)
        return PointCloud(pts, nrm)

    def to_bytes(self) -> bytes:
        n = len(self.points)
        flag = 0 if self.normals is None else 1
        parts = [PC_MAGIC, struct.pack("<IB", n, flag), self.points.astype("<f4").tobytes()]
        if flag:
            parts.append(self.normals.astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> PointCloud:
        if len(data) < 13 or data[:8] != PC_MAGIC:
            raise FormatError("bad point-cloud magic")
        n, flag = struct.unpack_from("<IB", data, 8)
        if flag not in (0, 1):
            raise FormatError(f"bad normals flag {flag}")
        expected = 13 + n * 12 * (1 + flag)
        if len(data) != expected:
            raise FormatError(f"expected {expected} bytes, got {len(data)}")
        pts = np.frombuffer(data, dtype="<f4", count=n * 3, offset=13).reshape(n, 3)
        nrm = None
        if flag:
            # stored as written; float32 drift (~1e-7) is inside the unit-length tolerance
            nrm = np.frombuffer(data, dtype="<f4", count=n * 3, offset=13 + n * 12).reshape(n, 3).astype(np.float64)
        try:
            return cls(pts.astype(np.float64), nrm)
        except InvalidGeometry as exc:
            raise FormatError(str(exc)) from exc


def write_point_cloud(path: str | Path, pc: PointCloud) -> None:
    Path(path).write_bytes(pc.to_bytes())


def read_point_cloud(path: str | Path) -> PointCloud:
    return PointCloud.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray | None = None
    # radius index that accepted each triangle (Ball Pivoting bookkeeping)
    triangle_radius: np.ndarray | None = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t):
            if t.min() < 0 or t.max() >= len(v):
                raise InvalidGeometry("triangle index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise InvalidGeometry("degenerate triangle")
            if edge_use_counts(t).max() > 2:
                raise InvalidGeometry("edge shared by more than two triangles")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.vertex_normals is not None:
            object.__setattr__(
                self, "vertex_normals", np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
            )

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0 or len(self.vertices) == 0

    def used_vertices(self) -> np.ndarray:
        return np.unique(self.triangles)

    def transformed(self, rotation: np.ndarray) -> TriangleMesh:
        nrm = None if self.vertex_normals is None else self.vertex_normals @ rotation.T
        return TriangleMesh(self.vertices @ rotation.T, self.triangles, nrm, self.triangle_radius)


def undirected_edges(triangles: np.ndarray) -> np.ndarray:
    """All triangle edges as sorted (a, b) rows, one row per triangle side."""
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    return np.sort(e, axis=1)


def edge_use_counts(triangles: np.ndarray) -> np.ndarray:
    e = undirected_edges(triangles)
    if len(e) == 0:
        return np.zeros(0, dtype=np.int64)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def normalize_point_cloud(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point sits at radius 1."""
    if len(pc) == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    pts = pc.points
    centered = pts - pts.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius <= 1e-12:
        raise DegenerateCloud("all points coincide")
    out = centered / radius
    # second pass removes the residual float drift so repeated calls are stable
    out -= out.mean(axis=0)
    out /= np.linalg.norm(out, axis=1).max()
    return PointCloud(out, pc.normals)


def mean_nn_distance(pc: PointCloud) -> float:
    if len(pc) < 2:
        raise TooFewPoints("need at least two points")
    dist, _ = cKDTree(pc.points).query(pc.points, k=2)
    return float(dist[:, 1].mean())


def estimate_normals(pc: PointCloud, k: int = 10) -> PointCloud:
    """PCA normals over k neighbours, flipped outward, then propagated along an MST.

    Propagation follows the minimum spanning tree of the k-NN graph weighted by
    ``1 - |n_i . n_j|``; each component is rooted at the point whose normal is
    most confidently outward (largest |cos| against the centroid direction).
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    n = len(pc)
    if n <= k:
        raise TooFewPoints(f"{n} points is not enough for k={k}")
    pts = pc.points
    _, idx = cKDTree(pts).query(pts, k=k + 1)
    nbr = pts[idx]
    centered = nbr - nbr.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    radial = pts - pts.mean(axis=0)
    rnorm = np.linalg.norm(radial, axis=1)
    cosines = np.einsum("ij,ij->i", normals, radial) / np.maximum(rnorm, 1e-12)
    normals[cosines < 0] *= -1
    confidence = np.abs(cosines)

    rows = np.repeat(np.arange(n), k)
    cols = idx[:, 1:].reshape(-1)
    w = 1.0 - np.abs(np.einsum("ij,ij->i", normals[rows], normals[cols])) + 1e-6
    graph = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)
    mst = minimum_spanning_tree(graph)
    mst = mst + mst.T
    n_comp, labels = connected_components(mst, directed=False)
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        root = members[np.argmax(confidence[members])]
        order, parents = breadth_first_order(mst, root, directed=False)
        for node in order[1:]:
            if normals[node] @ normals[parents[node]] < 0:
                normals[node] *= -1
    return PointCloud(pts, normals)


def deduplicate(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of first occurrences of each distinct point, and a map point -> kept index."""
    _, first, inverse = np.unique(points, axis=0, return_index=True, return_inverse=True)
    keep = np.sort(first)
    canonical = first[inverse.reshape(-1)]
    return keep, canonical

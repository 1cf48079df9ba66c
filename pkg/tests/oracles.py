"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code: each function recomputes
its quantity from the definition with plain loops or brute force.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


def brute_force_loss(h, tau: float, pairs) -> float:
    """Symmetric tri-modal contrastive loss from the definition.

    ``h`` maps modality letter to an (N, d) array of unit rows.  Every pair
    contributes the log-softmax of row i against all rows of the other
    modality, in both directions; the total is divided by 2N.
    """
    n = len(next(iter(h.values())))
    total = 0.0
    for a, b in pairs:
        for src, dst in ((a, b), (b, a)):
            for i in range(n):
                logits = [float(np.dot(h[src][i], h[dst][j])) / tau for j in range(n)]
                top = max(logits)
                log_z = top + math.log(sum(math.exp(x - top) for x in logits))
                total -= logits[i] - log_z
    return total / (2 * n)


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Mean nearest-neighbour distance a->b plus b->a, all pairs."""
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def mean_nn_brute(points: np.ndarray) -> float:
    n = len(points)
    best = []
    for i in range(n):
        d = math.inf
        for j in range(n):
            if i != j:
                d = min(d, math.dist(points[i], points[j]))
        best.append(d)
    return sum(best) / n


def euler_characteristic_largest(triangles: np.ndarray) -> tuple[int, int]:
    """(V - E + F, V) of the largest edge-connected triangle component."""
    tris = [tuple(int(v) for v in t) for t in triangles]
    parent = list(range(len(tris)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    by_edge = defaultdict(list)
    for k, (a, b, c) in enumerate(tris):
        for e in ((a, b), (b, c), (c, a)):
            by_edge[tuple(sorted(e))].append(k)
    for owners in by_edge.values():
        for k in owners[1:]:
            parent[find(k)] = find(owners[0])
    groups = defaultdict(list)
    for k in range(len(tris)):
        groups[find(k)].append(tris[k])
    comp = max(groups.values(), key=len)
    verts = {v for t in comp for v in t}
    edges = {tuple(sorted(e)) for a, b, c in comp for e in ((a, b), (b, c), (c, a))}
    return len(verts) - len(edges) + len(comp), len(verts)


def ball_centers(p0, p1, p2, radius: float):
    """Both centres of the spheres of ``radius`` through three points (None if impossible)."""
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    a, b = p1 - p0, p2 - p0
    n = np.cross(a, b)
    nn = n @ n
    if nn < 1e-30:
        return None
    circ = p0 + (np.cross(n, a) * (b @ b) + np.cross(b, n) * (a @ a)) / (2 * nn)
    r2 = (circ - p0) @ (circ - p0)
    h2 = radius * radius - r2
    if h2 < 0:
        return None
    off = math.sqrt(h2) * n / math.sqrt(nn)
    return circ + off, circ - off


def empty_ball_exists(points: np.ndarray, tri, radius: float, tol: float = 1e-7) -> bool:
    """Some sphere of ``radius`` through the triangle's vertices has no other point inside."""
    centers = ball_centers(*points[list(tri)], radius)
    if centers is None:
        return False
    others = np.delete(points, list(tri), axis=0)
    for c in centers:
        if len(others) == 0 or np.min(np.linalg.norm(others - c, axis=1)) >= radius - tol:
            return True
    return False


def metrics_oracle(labels, rankings, n_classes: int) -> dict:
    """Top-k, confusion and per-class accuracy by recounting every sample."""
    conf = [[0] * n_classes for _ in range(n_classes)]
    hits = {1: 0, 3: 0, 5: 0}
    per_total = [0] * n_classes
    per_hit = [0] * n_classes
    for y, rank in zip(labels, rankings):
        rank = list(rank)
        conf[y][rank[0]] += 1
        per_total[y] += 1
        per_hit[y] += int(rank[0] == y)
        for k in hits:
            hits[k] += int(y in rank[:k])
    n = len(labels)
    present = [c for c in range(n_classes) if per_total[c]]
    return {
        "confusion": np.array(conf),
        "top1": hits[1] / n,
        "top3": hits[3] / n,
        "top5": hits[5] / n,
        "macro": sum(per_hit[c] / per_total[c] for c in present) / len(present),
    }


def disc_mask(resolution: int, diameter_px: float) -> np.ndarray:
    """Pixels whose centre lies inside a centred disc."""
    c = resolution / 2.0
    yy, xx = np.mgrid[0:resolution, 0:resolution] + 0.5
    return (xx - c) ** 2 + (yy - c) ** 2 <= (diameter_px / 2.0) ** 2


def sphere_mesh(subdivisions: int = 3):
    """Icosphere vertices/triangles on the unit sphere with outward winding."""
    t = (1 + 5**0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)], axis=1)


def central_differences(params, loss_fn, step: float = 1e-4):
    """Per-tensor relative error of autograd against central differences.

    ``params`` is [(name, tensor)] with ``.grad`` already populated for
    ``loss_fn()``.  Coordinates whose forward and backward slopes disagree sit
    on a ReLU or max-pool switch and are left out.  Returns ({name: error},
    skipped, total).
    """
    import torch

    base = float(loss_fn())
    errors, skipped, total = {}, 0, 0
    for name, p in params:
        analytic = p.grad.detach().clone().ravel()
        numeric = torch.zeros_like(analytic)
        smooth = torch.ones_like(analytic, dtype=torch.bool)
        flat = p.data.view(-1)
        for j in range(flat.numel()):
            old = flat[j].item()
            with torch.no_grad():
                flat[j] = old + step
                up = float(loss_fn())
                flat[j] = old - step
                down = float(loss_fn())
                flat[j] = old
            numeric[j] = (up - down) / (2 * step)
            fwd, bwd = (up - base) / step, (base - down) / step
            smooth[j] = abs(fwd - bwd) <= 1e-2 * max(abs(fwd), abs(bwd), 1e-3)
        total += flat.numel()
        skipped += int((~smooth).sum())
        a, g = analytic[smooth], numeric[smooth]
        scale = max(a.norm().item(), g.norm().item(), 1e-8)
        errors[name] = (a - g).norm().item() / scale
    return errors, skipped, total

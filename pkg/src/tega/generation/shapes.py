"""Parametric surface models for the procedural generator.

Each class is a union of primitives (boxes, cylinders, frusta, ellipsoids,
tori).  Points are allocated to primitives by surface area and sampled
uniformly on each primitive surface.  Shapes are y-up and roughly fill
[-1, 1]^3 before normalisation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class Primitive:
    area: float
    sample: Sampler


def box(center, half) -> Primitive:
    c = np.asarray(center, float)
    h = np.asarray(half, float)
    faces = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]]) * 4

    def sample(rng, n):
        face = rng.choice(6, size=n, p=faces / faces.sum())
        uv = rng.uniform(-1, 1, size=(n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        uv[np.arange(n), axis] = sign
        return c + uv * h

    return Primitive(float(faces.sum()), sample)


def _axis_frame(axis: str):
    # maps local (u, v, w) with w along the cylinder axis to world xyz
    return {"x": [1, 2, 0], "y": [0, 2, 1], "z": [0, 1, 2]}[axis]


def frustum(center, r0, r1, height, axis="y", cap0=True, cap1=True) -> Primitive:
    """Open or capped truncated cone; r0 at the -axis end, r1 at the +axis end."""
    c = np.asarray(center, float)
    slant = np.hypot(height, r1 - r0)
    side = np.pi * (r0 + r1) * slant
    caps = [np.pi * r0**2 if cap0 else 0.0, np.pi * r1**2 if cap1 else 0.0]
    parts = np.array([side, caps[0], caps[1]])
    order = _axis_frame(axis)

    def sample(rng, n):
        which = rng.choice(3, size=n, p=parts / parts.sum())
        theta = rng.uniform(0, 2 * np.pi, n)
        out = np.empty((n, 3))
        # side: sample height with density proportional to local radius
        t = rng.uniform(0, 1, n)
        if abs(r1 - r0) > 1e-9:
            s = (np.sqrt(r0**2 + t * (r1**2 - r0**2)) - r0) / (r1 - r0)
        else:
            s = t
        rad = r0 + s * (r1 - r0)
        w = -height / 2 + s * height
        disk = np.sqrt(rng.uniform(0, 1, n))
        rad = np.where(which == 1, r0 * disk, np.where(which == 2, r1 * disk, rad))
        w = np.where(which == 1, -height / 2, np.where(which == 2, height / 2, w))
        local = np.stack([rad * np.cos(theta), rad * np.sin(theta), w], axis=1)
        out[:, order] = local
        return c + out

    return Primitive(float(parts.sum()), sample)


def cylinder(center, radius, height, axis="y", capped=True) -> Primitive:
    return frustum(center, radius, radius, height, axis, capped, capped)


def ellipsoid(center, radii, lower_only=False) -> Primitive:
    c = np.asarray(center, float)
    r = np.asarray(radii, float)
    p = 1.6075
    area = 4 * np.pi * (((r[0] * r[1]) ** p + (r[0] * r[2]) ** p + (r[1] * r[2]) ** p) / 3) ** (1 / p)
    if lower_only:
        area /= 2

    def sample(rng, n):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        if lower_only:
            d[:, 1] = -np.abs(d[:, 1])
        return c + d * r

    return Primitive(float(area), sample)


def torus(center, major, minor, axis="z", arc=2 * np.pi, start=0.0) -> Primitive:
    c = np.asarray(center, float)
    area = 4 * np.pi**2 * major * minor * arc / (2 * np.pi)
    order = _axis_frame(axis)

    def sample(rng, n):
        u = start + rng.uniform(0, arc, n)
        v = rng.uniform(0, 2 * np.pi, n)
        rad = major + minor * np.cos(v)
        local = np.stack([rad * np.cos(u), rad * np.sin(u), minor * np.sin(v)], axis=1)
        out = np.empty((n, 3))
        out[:, order] = local
        return c + out

    return Primitive(float(area), sample)


def sample_union(prims: list[Primitive], n: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        return np.zeros((0, 3))
    areas = np.array([p.area for p in prims])
    counts = rng.multinomial(n, areas / areas.sum())
    chunks = [p.sample(rng, k) for p, k in zip(prims, counts) if k]
    return np.concatenate(chunks)[rng.permutation(n)]


# -- class models ---------------------------------------------------------
# every builder takes a jitter function j(x) returning x scaled by a random factor


def chair(j) -> list[Primitive]:
    w, d, seat_h, back_h = j(0.45), j(0.45), j(0.45), j(0.55)
    leg = j(0.035)
    prims = [box([0, seat_h, 0], [w, 0.04, d]), box([0, seat_h + back_h, -d + 0.03], [w, back_h, 0.03])]
    for sx in (-1, 1):
        for sz in (-1, 1):
            prims.append(box([sx * (w - leg), seat_h / 2, sz * (d - leg)], [leg, seat_h / 2, leg]))
    return prims


def table(j) -> list[Primitive]:
    w, d, h = j(0.9), j(0.55), j(0.6)
    leg = j(0.04)
    prims = [box([0, h, 0], [w, 0.04, d])]
    for sx in (-1, 1):
        for sz in (-1, 1):
            prims.append(box([sx * (w - 2 * leg), h / 2, sz * (d - 2 * leg)], [leg, h / 2, leg]))
    return prims


def airplane(j) -> list[Primitive]:
    length, span = j(0.95), j(0.9)
    body = j(0.11)
    return [
        ellipsoid([0, 0, 0], [body, body, length]),
        box([0, 0, j(0.05)], [span, 0.02, j(0.16)]),
        box([0, 0.05, -length + 0.1], [j(0.3), 0.015, 0.07]),
        box([0, j(0.2), -length + 0.1], [0.015, j(0.18), 0.08]),
    ]


def lamp(j) -> list[Primitive]:
    h = j(0.85)
    return [
        cylinder([0, -h, 0], j(0.32), 0.05),
        cylinder([0, -0.15, 0], j(0.025), 2 * h - 0.3, capped=False),
        frustum([0, h - 0.2, 0], j(0.5), j(0.22), j(0.4), cap0=False, cap1=False),
    ]


def bottle(j) -> list[Primitive]:
    r, h = j(0.33), j(0.85)
    neck = j(0.1)
    return [
        cylinder([0, -0.5, 0], r, h, capped=True),
        frustum([0, 0.05, 0], r, neck, 0.25, cap0=False, cap1=False),
        cylinder([0, 0.35, 0], neck, j(0.35), capped=True),
    ]


def sofa(j) -> list[Primitive]:
    w, d, seat_h = j(0.95), j(0.4), j(0.2)
    arm = j(0.1)
    back = j(0.3)
    return [
        box([0, 0, 0], [w, seat_h, d]),
        box([0, seat_h + back, -d + 0.08], [w, back, 0.08]),
        box([-w + arm, seat_h + 0.12, 0], [arm, 0.12, d]),
        box([w - arm, seat_h + 0.12, 0], [arm, 0.12, d]),
    ]


def car(j) -> list[Primitive]:
    length, width, h = j(0.95), j(0.42), j(0.17)
    wheel = j(0.15)
    prims = [
        box([0, 0, 0], [width, h, length]),
        box([0, h + j(0.13), -0.1], [width * 0.85, j(0.13), length * 0.5]),
    ]
    for sx in (-1, 1):
        for sz in (-1, 1):
            prims.append(cylinder([sx * (width + 0.03), -h, sz * length * 0.65], wheel, 0.08, axis="x"))
    return prims


def mug(j) -> list[Primitive]:
    r, h = j(0.45), j(0.75)
    return [
        frustum([-0.15, 0, 0], r, r, h, cap0=True, cap1=False),
        torus([-0.15 + r + 0.05, 0, 0], j(0.26), 0.06, axis="z", arc=np.pi, start=-np.pi / 2),
    ]


def guitar(j) -> list[Primitive]:
    lower, upper = j(0.38), j(0.27)
    neck_len = j(0.6)
    return [
        cylinder([0, -0.5, 0], lower, 0.14, axis="z"),
        cylinder([0, -0.1, 0], upper, 0.14, axis="z"),
        box([0, 0.2 + neck_len / 2, 0], [0.045, neck_len / 2 + 0.05, 0.025]),
        box([0, 0.3 + neck_len, 0], [0.09, 0.1, 0.025]),
    ]


def bowl(j) -> list[Primitive]:
    r = j(0.95)
    depth = j(0.5)
    return [
        ellipsoid([0, 0.2, 0], [r, depth, r], lower_only=True),
        cylinder([0, 0.2 - depth - 0.03, 0], j(0.3), 0.06, capped=True),
    ]


CLASS_BUILDERS = {
    "chair": chair,
    "table": table,
    "airplane": airplane,
    "lamp": lamp,
    "bottle": bottle,
    "sofa": sofa,
    "car": car,
    "mug": mug,
    "guitar": guitar,
    "bowl": bowl,
}

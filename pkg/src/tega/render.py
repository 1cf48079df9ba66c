"""Turntable cameras and a small z-buffered software rasterizer.

Coordinates are y-up.  Azimuth rotates about +y, taking +z toward +x; the
turntable walks in negative azimuth steps, i.e. clockwise seen from above.
Projected vertices are snapped to a 1/256-pixel fixed-point grid and
coverage uses integer edge functions with a top-left fill rule, so output
bytes do not depend on float noise below the snapping resolution.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numba import njit

from tega.errors import EmptyMesh, FormatError, InvalidCount, RenderFailed
from tega.geometry.cloud import TriangleMesh

RESOLUTION = 224
TURNTABLE_VIEWS = 20
TURNTABLE_STEP_DEG = 18.0
ELEVATION_DEG = 30.0
CAMERA_DISTANCE = 3.0
FILL_FRACTION = 0.8
WHITE = 255


@dataclass(frozen=True)
class CameraPose:
    azimuth_deg: float
    elevation_deg: float
    distance: float
    focal: float | None = None
    view_index: int = 0

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("camera distance must be positive")
        if self.focal is not None and self.focal <= 0:
            raise ValueError("focal length must be positive")

    @property
    def position(self) -> np.ndarray:
        a = np.radians(self.azimuth_deg)
        e = np.radians(self.elevation_deg)
        return self.distance * np.array([np.cos(e) * np.sin(a), np.sin(e), np.cos(e) * np.cos(a)])

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, up, forward) unit vectors; the camera looks at the origin."""
        pos = self.position
        fwd = -pos / np.linalg.norm(pos)
        right = np.cross(fwd, [0.0, 1.0, 0.0])
        if np.linalg.norm(right) < 1e-12:
            right = np.array([1.0, 0.0, 0.0])
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd


@dataclass(frozen=True, eq=False)
class RenderedView:
    pixels: np.ndarray  # (height, width, 3) uint8, row-major RGB
    camera: CameraPose | None = None

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def view_index(self) -> int | None:
        return None if self.camera is None else self.camera.view_index

    def foreground(self) -> np.ndarray:
        return np.any(self.pixels != WHITE, axis=2)

    def to_ppm(self) -> bytes:
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.pixels.tobytes()

    @classmethod
    def from_ppm(cls, data: bytes, camera: CameraPose | None = None) -> RenderedView:
        m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
        if m is None:
            raise FormatError("not a binary P6 pixmap")
        w, h, maxval = (int(g) for g in m.groups())
        if maxval != 255:
            raise FormatError(f"unsupported maxval {maxval}")
        body = data[m.end():]
        if len(body) != w * h * 3:
            raise FormatError(f"expected {w * h * 3} pixel bytes, got {len(body)}")
        return cls(np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3), camera)


@dataclass(frozen=True)
class RenderOptions:
    resolution: int = RESOLUTION
    ambient: float = 0.15
    diffuse: float = 0.75
    subpixel: int = 256
    fill_fraction: float = FILL_FRACTION
    elevation_deg: float = ELEVATION_DEG
    distance: float = CAMERA_DISTANCE


def view_filename(sample_id: str, k: int) -> str:
    return f"{sample_id}_view{k:02d}.ppm"


def write_ppm(path: str | Path, view: RenderedView) -> None:
    Path(path).write_bytes(view.to_ppm())


def read_ppm(path: str | Path, camera: CameraPose | None = None) -> RenderedView:
    return RenderedView.from_ppm(Path(path).read_bytes(), camera)


def make_turntable_cameras(
    count: int = TURNTABLE_VIEWS,
    step_deg: float = TURNTABLE_STEP_DEG,
    elevation_deg: float = ELEVATION_DEG,
    distance: float = CAMERA_DISTANCE,
) -> list[CameraPose]:
    if count < 1:
        raise InvalidCount(f"need at least one camera, got {count}")
    if step_deg <= 0:
        raise ValueError("step_deg must be positive")
    cams = []
    for k in range(count):
        cams.append(CameraPose(-k * step_deg, elevation_deg, distance, None, k))
    return cams


def bounding_radius(mesh: TriangleMesh) -> float:
    """Radius of the origin-centred sphere enclosing every referenced vertex."""
    if mesh.is_empty:
        raise EmptyMesh("mesh has no triangles")
    used = mesh.vertices[mesh.used_vertices()]
    return float(np.linalg.norm(used, axis=1).max())


def fit_focal(
    camera: CameraPose,
    mesh: TriangleMesh,
    fill_fraction: float = FILL_FRACTION,
    resolution: int = RESOLUTION,
) -> CameraPose:
    """Focal length making the bounding sphere span ``fill_fraction`` of the width.

    The sphere's diameter is projected at the depth of its centre (pinhole
    similar triangles: diameter_px = 2 * f * r / distance).
    """
    if not 0 < fill_fraction <= 1:
        raise ValueError("fill_fraction must be in (0, 1]")
    r = bounding_radius(mesh)
    if r <= 0:
        raise EmptyMesh("mesh has zero extent")
    focal = fill_fraction * resolution * camera.distance / (2.0 * r)
    return replace(camera, focal=focal)


def projected_diameter(camera: CameraPose, mesh: TriangleMesh) -> float:
    return 2.0 * camera.focal * bounding_radius(mesh) / camera.distance


def project(points: np.ndarray, camera: CameraPose, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (x right, y down; pixel centres at +0.5) and camera depth."""
    right, up, fwd = camera.frame()
    rel = np.asarray(points, dtype=np.float64) - camera.position
    xc = rel @ right
    yc = rel @ up
    zc = rel @ fwd
    half = resolution / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        px = half + camera.focal * xc / zc
        py = half - camera.focal * yc / zc
    return np.stack([px, py], axis=1), zc


@njit(cache=True)
def _rasterize(X, Y, invz, tris, colors, width, height, sub, image, zbuf):
    half = sub // 2
    for t in range(tris.shape[0]):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        if invz[a] <= 0.0 or invz[b] <= 0.0 or invz[c] <= 0.0:
            continue
        ax, ay, bx, by, cx, cy = X[a], Y[a], X[b], Y[b], X[c], Y[c]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0:
            continue
        za, zb, zc = invz[a], invz[b], invz[c]
        if area < 0:
            bx, by, cx, cy = cx, cy, bx, by
            zb, zc = zc, zb
            area = -area
        x0 = max(0, (min(ax, bx, cx) - half) // sub)
        x1 = min(width - 1, (max(ax, bx, cx) - half) // sub + 1)
        y0 = max(0, (min(ay, by, cy) - half) // sub)
        y1 = min(height - 1, (max(ay, by, cy) - half) // sub + 1)
        # top-left rule in a y-down frame with positive (clockwise-on-screen) area
        tl0 = (cy == by and cx < bx) or (cy < by)
        tl1 = (ay == cy and ax < cx) or (ay < cy)
        tl2 = (by == ay and bx < ax) or (by < ay)
        for py in range(y0, y1 + 1):
            sy = py * sub + half
            for px in range(x0, x1 + 1):
                sx = px * sub + half
                w0 = (cx - bx) * (sy - by) - (cy - by) * (sx - bx)
                w1 = (ax - cx) * (sy - cy) - (ay - cy) * (sx - cx)
                w2 = (bx - ax) * (sy - ay) - (by - ay) * (sx - ax)
                if w0 < 0 or w1 < 0 or w2 < 0:
                    continue
                if (w0 == 0 and not tl0) or (w1 == 0 and not tl1) or (w2 == 0 and not tl2):
                    continue
                z = (w0 * za + w1 * zb + w2 * zc) / area
                if z > zbuf[py, px]:
                    zbuf[py, px] = z
                    image[py, px, 0] = colors[t, 0]
                    image[py, px, 1] = colors[t, 1]
                    image[py, px, 2] = colors[t, 2]


def _shade(mesh: TriangleMesh, light: np.ndarray, options: RenderOptions) -> np.ndarray:
    tri = mesh.triangles
    v = mesh.vertices
    if mesh.vertex_normals is not None:
        n = mesh.vertex_normals[tri].sum(axis=1)
    else:
        n = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    lam = np.abs(n @ light)
    level = np.rint(255.0 * (options.ambient + options.diffuse * lam))
    level = np.clip(level, 0, 254).astype(np.uint8)
    return np.repeat(level[:, None], 3, axis=1)


def render_view(mesh: TriangleMesh, camera: CameraPose, options: RenderOptions = RenderOptions()) -> RenderedView:
    """Flat-shaded Lambertian render on a white background.

    The light is directional, shining from the camera position toward the
    origin; shading uses the summed vertex normals of each triangle (two-sided).
    """
    if mesh.is_empty:
        raise EmptyMesh("cannot render an empty mesh")
    if camera.focal is None:
        raise ValueError("camera focal is unset; call fit_focal first")
    res = options.resolution
    xy, zc = project(mesh.vertices, camera, res)
    sub = options.subpixel
    with np.errstate(invalid="ignore"):
        fixed = np.rint(np.nan_to_num(xy, nan=0.0, posinf=1e9, neginf=-1e9) * sub)
    fixed = np.clip(fixed, -(2**40), 2**40).astype(np.int64)
    invz = np.where(zc > 1e-9, 1.0 / np.where(zc > 1e-9, zc, 1.0), -1.0)
    light = camera.position / np.linalg.norm(camera.position)
    colors = _shade(mesh, light, options)
    image = np.full((res, res, 3), WHITE, dtype=np.uint8)
    zbuf = np.full((res, res), -np.inf)
    _rasterize(
        np.ascontiguousarray(fixed[:, 0]),
        np.ascontiguousarray(fixed[:, 1]),
        invz,
        np.ascontiguousarray(mesh.triangles),
        colors,
        res,
        res,
        sub,
        image,
        zbuf,
    )
    return RenderedView(image, camera)


def render_all_views(mesh: TriangleMesh, options: RenderOptions = RenderOptions()) -> list[RenderedView]:
    cams = make_turntable_cameras(TURNTABLE_VIEWS, TURNTABLE_STEP_DEG, options.elevation_deg, options.distance)
    views = []
    for cam in cams:
        try:
            cam = fit_focal(cam, mesh, options.fill_fraction, options.resolution)
            views.append(render_view(mesh, cam, options))
        except (EmptyMesh, ValueError) as exc:
            raise RenderFailed(f"view {cam.view_index}: {exc}", view_index=cam.view_index) from exc
    return views


def rotate_about_vertical(points: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate by ``degrees`` in the azimuth convention (about +y, +z toward +x)."""
    return np.asarray(points) @ vertical_rotation(degrees).T


def vertical_rotation(degrees: float) -> np.ndarray:
    a = np.radians(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])

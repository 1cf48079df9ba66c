"""Generator contract, the procedural stand-in backend and the Chamfer class oracle."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.spatial import cKDTree

from tega.errors import GenerationFailed, UnknownPrompt
from tega.generation.shapes import CLASS_BUILDERS, sample_union
from tega.geometry.cloud import PointCloud, normalize_point_cloud

DEFAULT_GUIDANCE = 3.0
DEFAULT_POINTS = 4096
DEFAULT_STEPS = 50
SHAPE_JITTER = 0.12
TEMPLATE_POINTS = 2048


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    guidance_scale: float = DEFAULT_GUIDANCE
    num_points: int = DEFAULT_POINTS
    seed: int = 0
    steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if not self.prompt or not self.prompt.strip():
            raise ValueError("prompt must be non-empty")
        if self.num_points < 4:
            raise ValueError("num_points must be at least 4")
        if not self.guidance_scale >= 0:
            raise ValueError("guidance_scale must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@runtime_checkable
class Generator(Protocol):
    identity: str

    def generate(self, request: GenerationRequest) -> PointCloud: ...


def generate(request: GenerationRequest, backend: Generator) -> PointCloud:
    """Run a backend and enforce the output contract (exact size, finite coordinates)."""
    cloud = backend.generate(request)
    if len(cloud) != request.num_points:
        raise GenerationFailed(f"backend returned {len(cloud)} points, expected {request.num_points}")
    return cloud


def text_adherence(guidance_scale: float) -> float:
    """Blend weight w = omega / (omega + 1); infinite guidance gives 1."""
    if np.isinf(guidance_scale):
        return 1.0
    return guidance_scale / (guidance_scale + 1.0)


def stable_hash(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def normalize_prompt(prompt: str) -> str:
    return " ".join(prompt.lower().split())


def _jitter(rng: np.random.Generator, amount: float):
    def j(x):
        return x * (1.0 + amount * rng.uniform(-1.0, 1.0))

    return j


def class_surface(name: str, n: int, rng: np.random.Generator, jitter: float) -> np.ndarray:
    prims = CLASS_BUILDERS[name](_jitter(rng, jitter))
    return sample_union(prims, n, rng)


class ProceduralGenerator:
    """Desk-scale text-to-3D stand-in over a fixed vocabulary of parametric classes.

    A fraction w(omega) of the points is drawn from the prompted class and
    the rest from a distractor class picked by the seed.  Shape parameters,
    the distractor and the sampling streams depend only on (prompt, seed),
    so changing omega only moves points between the two surfaces.
    """

    identity = "procedural/1"

    def __init__(self, jitter: float = SHAPE_JITTER):
        self.jitter = jitter
        self.vocabulary = tuple(CLASS_BUILDERS)

    def generate(self, request: GenerationRequest) -> PointCloud:
        name = normalize_prompt(request.prompt)
        if name not in CLASS_BUILDERS:
            raise UnknownPrompt(f"procedural backend has no class {request.prompt!r}")
        seq = np.random.SeedSequence([request.seed & 0xFFFFFFFFFFFFFFFF, stable_hash(name)])
        shape_seq, distractor_seq, pick_seq = seq.spawn(3)
        others = [c for c in self.vocabulary if c != name]
        distractor = others[np.random.default_rng(pick_seq).integers(len(others))]

        w = text_adherence(request.guidance_scale)
        n_main = int(round(w * request.num_points))
        n_main = min(max(n_main, 0), request.num_points)
        main = class_surface(name, n_main, np.random.default_rng(shape_seq), self.jitter)
        rest = class_surface(distractor, request.num_points - n_main, np.random.default_rng(distractor_seq), self.jitter)
        return PointCloud(np.concatenate([main, rest]))


@lru_cache(maxsize=None)
def canonical_template(name: str, n: int = TEMPLATE_POINTS) -> PointCloud:
    """Un-jittered class surface, normalised; the reference shape for the oracle."""
    rng = np.random.default_rng(stable_hash("template", name))
    return normalize_point_cloud(PointCloud(class_surface(name, n, rng, 0.0)))


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbour distance."""
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(da.mean() + db.mean())


def rms_normalize(points: np.ndarray) -> np.ndarray:
    """Centroid / RMS-radius normalisation; less sensitive to a few outliers than max-radius."""
    centered = points - points.mean(axis=0)
    return centered / np.sqrt((centered**2).sum(axis=1).mean())


@lru_cache(maxsize=None)
def _oracle_template(name: str) -> np.ndarray:
    return rms_normalize(canonical_template(name).points)


def chamfer_oracle(cloud: PointCloud, vocabulary=None) -> str:
    """Class whose canonical template is nearest in Chamfer distance.

    Both sides are RMS-normalised first, so the stray distractor points of a
    low-guidance sample do not rescale the whole cloud.
    """
    vocabulary = tuple(vocabulary or CLASS_BUILDERS)
    pts = rms_normalize(np.asarray(cloud.points))
    scores = [chamfer_distance(pts, _oracle_template(c)) for c in vocabulary]
    return vocabulary[int(np.argmin(scores))]

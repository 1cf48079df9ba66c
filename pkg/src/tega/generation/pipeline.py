"""Sample synthesis: generate -> normalize -> normals -> ball pivoting -> 20 renders."""

from __future__ import annotations

import logging
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from tega.errors import BackendUnreachable, DegenerateCloud, EmptyCloud, NoTriangles, TegaError, TooFewPoints
from tega.generation.core import DEFAULT_POINTS, GenerationRequest, Generator, generate, stable_hash
from tega.geometry import ball_pivot_mesh, default_radii, estimate_normals, mean_nn_distance, normalize_point_cloud
from tega.geometry.cloud import PointCloud, TriangleMesh
from tega.render import RenderedView, RenderOptions, render_all_views

log = logging.getLogger(__name__)

NORMAL_NEIGHBORS = 10


@dataclass
class TripletSample:
    sample_id: str
    text: str
    point_cloud: PointCloud
    views: Sequence[RenderedView]
    source: str = "synthetic"
    class_label: int | None = None
    generation: GenerationRequest | None = None

    def __post_init__(self):
        if self.source not in ("real", "synthetic"):
            raise ValueError(f"source must be real or synthetic, not {self.source!r}")
        if self.source == "synthetic" and self.generation is None:
            raise ValueError("synthetic samples carry their generation request")
        if self.source == "real" and self.generation is not None:
            raise ValueError("real samples have no generation request")

    @property
    def view_count(self) -> int:
        return len(self.views)


@dataclass
class SampleFailure:
    seed: int
    prompt: str
    stage: str
    message: str


@dataclass
class PipelineReport:
    attempted: int = 0
    success: int = 0
    failures: list[SampleFailure] = field(default_factory=list)

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    def failures_by_stage(self) -> dict[str, int]:
        return dict(sorted(Counter(f.stage for f in self.failures).items()))

    def to_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "success": self.success,
            "failures": self.failure_count,
            "failures_by_stage": self.failures_by_stage(),
            "failed": [vars(f) for f in self.failures],
        }


def make_sample_id(prompt: str, guidance: float, seed: int, backend_identity: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", prompt.lower()).strip("-") or "x"
    digest = stable_hash(prompt, float(guidance), int(seed), backend_identity) & 0xFFFFFFFF
    return f"syn-{slug}-{seed:06d}-{digest:08x}"


def mesh_cloud(cloud: PointCloud) -> tuple[PointCloud, TriangleMesh]:
    """Normalise (at float32 storage precision), estimate normals, ball-pivot.

    Every geometric failure is reported as a meshing failure.
    """
    try:
        pc = normalize_point_cloud(cloud).quantized()
        k = min(NORMAL_NEIGHBORS, len(pc) - 1)
        if k < 3:
            raise NoTriangles(f"{len(pc)} points cannot seed a pivot", stage="meshing")
        pc = estimate_normals(pc, k).quantized()
        mesh = ball_pivot_mesh(pc, default_radii(mean_nn_distance(pc)))
    except (EmptyCloud, DegenerateCloud, TooFewPoints) as exc:
        raise NoTriangles(str(exc), stage="meshing") from exc
    except ValueError as exc:
        raise NoTriangles(str(exc), stage="meshing") from exc
    return pc, mesh


def synthesize_sample(
    prompt: str,
    guidance: float,
    seed: int,
    backend: Generator,
    *,
    num_points: int = DEFAULT_POINTS,
    options: RenderOptions = RenderOptions(),
) -> TripletSample:
    request = GenerationRequest(prompt, guidance, num_points, seed)
    cloud = generate(request, backend)
    pc, mesh = mesh_cloud(cloud)
    views = render_all_views(mesh, options)
    return TripletSample(
        sample_id=make_sample_id(prompt, guidance, seed, backend.identity),
        text=prompt,
        point_cloud=pc,
        views=views,
        source="synthetic",
        generation=request,
    )


def _run_one(args):
    prompt, guidance, seed, backend, num_points, options = args
    try:
        return seed, synthesize_sample(prompt, guidance, seed, backend, num_points=num_points, options=options), None
    except BackendUnreachable:
        raise
    except TegaError as exc:
        return seed, None, SampleFailure(seed, prompt, exc.stage or "unknown", str(exc))


def plan_batch(prompts: Sequence[tuple[str, int]], base_seed: int) -> list[tuple[str, int]]:
    """(prompt, seed) jobs; seeds are base_seed + running index over all requested samples."""
    jobs = []
    for text, count in prompts:
        if count < 0:
            raise ValueError(f"negative count for {text!r}")
        for _ in range(count):
            jobs.append((text, base_seed + len(jobs)))
    return jobs


def generate_batch(
    prompts: Sequence[tuple[str, int]],
    guidance: float,
    base_seed: int,
    backend: Generator,
    *,
    num_points: int = DEFAULT_POINTS,
    options: RenderOptions = RenderOptions(),
    jobs: int = 1,
    sink: Callable[[TripletSample], object] | None = None,
    skip: Callable[[str, int], object] | None = None,
    on_failure: Callable[[SampleFailure], None] | None = None,
) -> tuple[list, PipelineReport]:
    """Synthesise every requested sample, never aborting on per-sample failures.

    ``sink`` receives each finished sample (e.g. to persist it) and returns
    the object to keep in the output list.  For resumed runs ``skip`` may
    return the stored result for a (prompt, seed): a kept object, or a
    SampleFailure to count it as failed again without rerunning it.
    Output is sorted by seed.  Only BackendUnreachable aborts the batch.
    """
    planned = plan_batch(prompts, base_seed)
    report = PipelineReport(attempted=len(planned))
    done: dict[int, TripletSample] = {}
    todo = []
    for text, seed in planned:
        prior = skip(text, seed) if skip is not None else None
        if isinstance(prior, SampleFailure):
            report.failures.append(prior)
        elif prior is not None:
            done[seed] = prior
        else:
            todo.append((text, guidance, seed, backend, num_points, options))

    def consume(seed, sample, failure):
        if failure is not None:
            log.info("sample seed=%d failed at %s: %s", seed, failure.stage, failure.message)
            report.failures.append(failure)
            if on_failure is not None:
                on_failure(failure)
            return
        done[seed] = sink(sample) if sink is not None else sample

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for seed, sample, failure in pool.map(_run_one, todo, chunksize=4):
                consume(seed, sample, failure)
    else:
        for job in todo:
            consume(*_run_one(job))
    report.failures.sort(key=lambda f: f.seed)
    report.success = len(done)
    return [done[s] for s in sorted(done)], report

"""Writing sample payloads to a run directory and ingesting external clouds."""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from tega.datasetio.manifest import DatasetManifest, ManifestRecord
from tega.errors import FormatError, ParseError, TegaError
from tega.generation.pipeline import TripletSample, mesh_cloud
from tega.generation.core import normalize_prompt
from tega.geometry.cloud import PointCloud, normalize_point_cloud, read_point_cloud, write_point_cloud
from tega.render import TURNTABLE_VIEWS, RenderOptions, read_ppm, render_all_views, view_filename, write_ppm

CLOUD_DIR = "clouds"
VIEW_DIR = "views"
CLOUD_SUFFIX = ".pc"


def cloud_path(root: str | Path, sample_id: str) -> Path:
    return Path(root) / CLOUD_DIR / f"{sample_id}{CLOUD_SUFFIX}"


def view_paths(root: str | Path, sample_id: str, count: int = TURNTABLE_VIEWS) -> list[Path]:
    return [Path(root) / VIEW_DIR / view_filename(sample_id, k) for k in range(count)]


def save_sample(sample: TripletSample, root: str | Path, vocabulary: Sequence[str]) -> ManifestRecord:
    """Write cloud and views under ``root``; return the manifest record."""
    name = normalize_prompt(sample.text)
    if name not in vocabulary:
        raise ValueError(f"{sample.text!r} is not in the class vocabulary")
    pc_file = cloud_path(root, sample.sample_id)
    pc_file.parent.mkdir(parents=True, exist_ok=True)
    write_point_cloud(pc_file, sample.point_cloud)
    vfiles = view_paths(root, sample.sample_id, len(sample.views))
    (Path(root) / VIEW_DIR).mkdir(parents=True, exist_ok=True)
    for path, view in zip(vfiles, sample.views):
        write_ppm(path, view)
    gen = None
    if sample.generation is not None:
        g = sample.generation
        gen = {"prompt": g.prompt, "guidance_scale": float(g.guidance_scale), "seed": int(g.seed)}
    return ManifestRecord(
        sample_id=sample.sample_id,
        class_text=name,
        class_label=list(vocabulary).index(name),
        source=sample.source,
        pc_path=str(pc_file.resolve()),
        view_paths=tuple(str(p.resolve()) for p in vfiles),
        generation=gen,
    )


# -- ingestion ------------------------------------------------------------


@dataclass(frozen=True)
class IngestItem:
    path: str
    class_text: str
    view_paths: tuple[str, ...] | None = None


@dataclass(frozen=True)
class IngestError:
    path: str
    stage: str
    message: str


def read_cloud_file(path: str | Path) -> PointCloud:
    """TEGAPC1 binary, ``.npy`` (N, 3+) array, or whitespace/comma text with xyz in the first columns."""
    path = Path(path)
    try:
        suffix = path.suffix.lower()
        if suffix == ".npy":
            arr = np.load(path, allow_pickle=False)
        elif suffix in (".xyz", ".txt", ".pts", ".csv"):
            text = path.read_text(encoding="utf-8").replace(",", " ")
            arr = np.loadtxt(text.splitlines(), ndmin=2)
        else:
            return read_point_cloud(path)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] < 3 or len(arr) == 0:
            raise ValueError(f"expected an (N, >=3) array, got shape {arr.shape}")
        return PointCloud(arr[:, :3])
    except (OSError, ValueError, FormatError, TegaError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "x"


def real_sample_id(path: str | Path, payload: bytes) -> str:
    return f"real-{_slug(Path(path).stem)}-{hashlib.sha256(payload).hexdigest()[:8]}"


def _ingest_one(args):
    item, root, options = args
    path = Path(item.path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        return None, IngestError(str(path), "parse", str(exc))
    try:
        cloud = normalize_point_cloud(read_cloud_file(path)).quantized()
    except TegaError as exc:
        return None, IngestError(str(path), "parse", str(exc))
    sample_id = real_sample_id(path, raw)
    try:
        if item.view_paths:
            if len(item.view_paths) < TURNTABLE_VIEWS:
                raise ParseError(f"{len(item.view_paths)} views supplied, need {TURNTABLE_VIEWS}")
            for v in item.view_paths:
                read_ppm(v)
            vfiles = [str(Path(v).resolve()) for v in item.view_paths]
        else:
            _, mesh = mesh_cloud(cloud)
            views = render_all_views(mesh, options)
            out = view_paths(root, sample_id)
            (Path(root) / VIEW_DIR).mkdir(parents=True, exist_ok=True)
            for p, view in zip(out, views):
                write_ppm(p, view)
            vfiles = [str(p.resolve()) for p in out]
    except TegaError as exc:
        return None, IngestError(str(path), exc.stage or "views", str(exc))
    pc_file = cloud_path(root, sample_id)
    pc_file.parent.mkdir(parents=True, exist_ok=True)
    write_point_cloud(pc_file, cloud)
    return (sample_id, normalize_prompt(item.class_text), str(pc_file.resolve()), tuple(vfiles)), None


def ingest_real(
    items: Sequence[IngestItem],
    root: str | Path,
    *,
    name: str = "real",
    vocabulary: Sequence[str] | None = None,
    split: str = "train",
    options: RenderOptions = RenderOptions(),
    jobs: int = 1,
) -> tuple[DatasetManifest, list[IngestError]]:
    """Load external clouds as real records, rendering views where none are given.

    Per-file failures are collected, not raised.  Records are ordered by
    sample_id; the vocabulary defaults to the sorted distinct class texts.
    """
    for item in items:
        if not item.class_text or not item.class_text.strip():
            raise ValueError(f"{item.path}: class text is required")
    work = [(item, str(root), options) for item in items]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ingest_one, work))
    else:
        results = [_ingest_one(w) for w in work]
    errors = [e for _, e in results if e is not None]
    found = [r for r, _ in results if r is not None]
    vocab = list(vocabulary) if vocabulary is not None else sorted({r[1] for r in found})
    records, seen = [], set()
    for sample_id, text, pc_file, vfiles in sorted(found):
        if sample_id in seen:
            errors.append(IngestError(pc_file, "parse", f"duplicate payload for {sample_id}"))
            continue
        if text not in vocab:
            errors.append(IngestError(pc_file, "parse", f"class {text!r} not in the vocabulary"))
            continue
        seen.add(sample_id)
        records.append(ManifestRecord(sample_id, text, vocab.index(text), "real", pc_file, vfiles))
    return DatasetManifest(name, records, vocab, split), errors


def read_ingest_index(path: str | Path) -> list[IngestItem]:
    """JSONL lines ``{path, class_text, view_paths?}``; relative paths are against the index file."""
    path = Path(path)
    base = path.parent
    items = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            views = obj.get("view_paths")
            items.append(
                IngestItem(
                    str(base / obj["path"]),
                    obj["class_text"],
                    tuple(str(base / v) for v in views) if views else None,
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return items

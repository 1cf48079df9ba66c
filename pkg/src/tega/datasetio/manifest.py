"""Line-delimited JSON dataset manifests.

Line 1 is a header object (schema, name, split, vocabulary, provenance
counts); every further line is one record.  Payload paths are stored
relative to the manifest's directory and resolved to absolute paths on
read, so a run directory can be moved or replayed elsewhere.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

from tega.errors import FormatError, SchemaViolation
from tega.generation.core import GenerationRequest
from tega.generation.pipeline import TripletSample
from tega.geometry.cloud import read_point_cloud
from tega.render import make_turntable_cameras, read_ppm

SCHEMA = "tega-manifest/1"
SOURCES = ("real", "synthetic")
SPLITS = ("train", "eval")
FILTER_KEYS = ("s_text", "s_sem", "total", "verdict")
GENERATION_KEYS = ("prompt", "guidance_scale", "seed")


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    class_text: str
    class_label: int
    source: str
    pc_path: str
    view_paths: tuple[str, ...]
    filter: dict | None = None
    generation: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "view_paths", tuple(self.view_paths))

    def to_json(self, base: Path | None = None) -> dict:
        out = {
            "sample_id": self.sample_id,
            "class_text": self.class_text,
            "class_label": self.class_label,
            "source": self.source,
            "pc_path": _relative(self.pc_path, base),
            "view_paths": [_relative(p, base) for p in self.view_paths],
        }
        if self.filter is not None:
            out["filter"] = dict(self.filter)
        if self.generation is not None:
            out["generation"] = dict(self.generation)
        return out


def _relative(path: str, base: Path | None) -> str:
    if base is None:
        return str(path)
    return Path(os.path.relpath(os.path.abspath(path), base)).as_posix()


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[ManifestRecord, ...]
    class_vocabulary: tuple[str, ...]
    split: str = "train"
    provenance_counts: dict = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_vocabulary", tuple(self.class_vocabulary))
        validate(self)
        counts = Counter(r.source for r in self.records)
        actual = {s: counts.get(s, 0) for s in SOURCES}
        if self.provenance_counts is None:
            object.__setattr__(self, "provenance_counts", actual)
        elif dict(self.provenance_counts) != actual:
            raise SchemaViolation(f"declared {self.provenance_counts}, records give {actual}", path="provenance_counts")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sample_ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    def labels(self) -> list[int]:
        return [r.class_label for r in self.records]

    def with_records(self, records, name: str | None = None, split: str | None = None) -> DatasetManifest:
        return DatasetManifest(name or self.name, tuple(records), self.class_vocabulary, split or self.split)

    def with_split(self, split: str) -> DatasetManifest:
        return replace(self, split=split)


def validate(m: DatasetManifest) -> None:
    if m.split not in SPLITS:
        raise SchemaViolation(f"split must be one of {SPLITS}, got {m.split!r}", path="split")
    if len(set(m.class_vocabulary)) != len(m.class_vocabulary):
        raise SchemaViolation("class names must be unique", path="class_vocabulary")
    seen = set()
    for i, r in enumerate(m.records):
        where = f"records[{i}]"
        if not isinstance(r.sample_id, str) or not r.sample_id:
            raise SchemaViolation("empty sample_id", path=f"{where}.sample_id")
        if r.sample_id in seen:
            raise SchemaViolation(f"duplicate sample_id {r.sample_id!r}", path=f"{where}.sample_id")
        seen.add(r.sample_id)
        if isinstance(r.class_label, bool) or not isinstance(r.class_label, int):
            raise SchemaViolation("class_label must be an integer", path=f"{where}.class_label")
        if not 0 <= r.class_label < len(m.class_vocabulary):
            raise SchemaViolation(
                f"class_label {r.class_label} outside vocabulary of {len(m.class_vocabulary)}",
                path=f"{where}.class_label",
            )
        if r.source not in SOURCES:
            raise SchemaViolation(f"source must be real or synthetic, got {r.source!r}", path=f"{where}.source")
        if r.source == "synthetic" and r.generation is None:
            raise SchemaViolation("synthetic records carry generation parameters", path=f"{where}.generation")
        if r.source == "real" and r.generation is not None:
            raise SchemaViolation("real records have no generation parameters", path=f"{where}.generation")
        if not isinstance(r.class_text, str) or not r.class_text:
            raise SchemaViolation("empty class_text", path=f"{where}.class_text")


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    header = {
        "schema": SCHEMA,
        "name": manifest.name,
        "split": manifest.split,
        "class_vocabulary": list(manifest.class_vocabulary),
        "provenance_counts": dict(manifest.provenance_counts),
    }
    lines = [json.dumps(header, sort_keys=True, ensure_ascii=False)]
    lines += [json.dumps(r.to_json(base), sort_keys=True, ensure_ascii=False) for r in manifest.records]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def _need(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaViolation("missing field", path=f"{where}.{key}" if where else key)
    value = obj[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SchemaViolation(f"expected {getattr(kind, '__name__', kind)}", path=f"{where}.{key}" if where else key)
    return value


def _parse_record(obj, i: int, base: Path) -> ManifestRecord:
    where = f"records[{i}]"
    if not isinstance(obj, dict):
        raise SchemaViolation("record is not an object", path=where)
    views = _need(obj, "view_paths", list, where)
    if not all(isinstance(v, str) for v in views):
        raise SchemaViolation("view paths must be strings", path=f"{where}.view_paths")
    filt = obj.get("filter")
    if filt is not None:
        if not isinstance(filt, dict) or any(k not in filt for k in FILTER_KEYS):
            raise SchemaViolation(f"filter needs {FILTER_KEYS}", path=f"{where}.filter")
    gen = obj.get("generation")
    if gen is not None:
        if not isinstance(gen, dict) or any(k not in gen for k in GENERATION_KEYS):
            raise SchemaViolation(f"generation needs {GENERATION_KEYS}", path=f"{where}.generation")
    return ManifestRecord(
        sample_id=_need(obj, "sample_id", str, where),
        class_text=_need(obj, "class_text", str, where),
        class_label=_need(obj, "class_label", int, where),
        source=_need(obj, "source", str, where),
        pc_path=os.path.normpath(base / _need(obj, "pc_path", str, where)),
        view_paths=tuple(os.path.normpath(base / v) for v in views),
        filter=filt,
        generation=gen,
    )


def record_from_json(obj: dict, base: str | Path) -> ManifestRecord:
    """Parse one record object; relative payload paths resolve against ``base``."""
    return _parse_record(obj, 0, Path(base).resolve())


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    base = path.parent.resolve()
    try:
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    except FileNotFoundError as exc:
        raise SchemaViolation(f"no manifest at {path}", path="") from exc
    if not lines:
        raise SchemaViolation("empty manifest", path="header")
    try:
        objs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"line {exc.lineno}: {exc.msg}", path="") from exc
    header = objs[0]
    if not isinstance(header, dict) or header.get("schema") != SCHEMA:
        raise SchemaViolation(f"expected schema {SCHEMA!r}", path="schema")
    vocab = _need(header, "class_vocabulary", list, "")
    if not all(isinstance(v, str) for v in vocab):
        raise SchemaViolation("class names must be strings", path="class_vocabulary")
    counts = _need(header, "provenance_counts", dict, "")
    records = tuple(_parse_record(o, i, base) for i, o in enumerate(objs[1:]))
    return DatasetManifest(
        name=_need(header, "name", str, ""),
        records=records,
        class_vocabulary=tuple(vocab),
        split=_need(header, "split", str, ""),
        provenance_counts=counts,
    )


class LazyViews(Sequence):
    """Turntable views loaded from PPM files on access."""

    def __init__(self, paths: Sequence[str]):
        self.paths = tuple(paths)
        self._cams = make_turntable_cameras(max(len(self.paths), 1)) if self.paths else []

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        return read_ppm(self.paths[k], camera=self._cams[k])


def load_sample(record: ManifestRecord) -> TripletSample:
    """TripletSample view of a record; views stay on disk until indexed."""
    try:
        cloud = read_point_cloud(record.pc_path)
    except (OSError, FormatError) as exc:
        raise FormatError(f"{record.sample_id}: {exc}") from exc
    gen = None
    if record.generation is not None:
        g = record.generation
        gen = GenerationRequest(g["prompt"], float(g["guidance_scale"]), len(cloud), int(g["seed"]))
    return TripletSample(
        sample_id=record.sample_id,
        text=record.class_text,
        point_cloud=cloud,
        views=LazyViews(record.view_paths),
        source=record.source,
        class_label=record.class_label,
        generation=gen,
    )


__all__ = [
    "SCHEMA",
    "DatasetManifest",
    "LazyViews",
    "ManifestRecord",
    "load_sample",
    "read_manifest",
    "validate",
    "write_manifest",
]

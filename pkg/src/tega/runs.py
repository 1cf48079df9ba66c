"""Run-directory plumbing shared by the CLI and the sweep harness.

A run directory has a fixed layout (clouds/, views/, manifests/, reports/,
checkpoints/).  Generation and filtering append one JSONL line per finished
sample to a ledger so an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from tega.datasetio import DatasetManifest, ManifestRecord, load_sample, record_from_json, save_sample, write_manifest
from tega.datasetio.mixing import allocate
from tega.errors import SchemaViolation
from tega.filtering import ConsistencyReport, FilterBackends, FilterSummary, consistency_filter, write_filter_report
from tega.generation import Generator, PipelineReport, SampleFailure, generate_batch
from tega.generation.core import DEFAULT_POINTS
from tega.render import RenderOptions

log = logging.getLogger(__name__)

LAYOUT = ("clouds", "views", "manifests", "reports", "checkpoints")


@dataclass(frozen=True)
class Workspace:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root).resolve())

    def create(self) -> Workspace:
        for d in LAYOUT:
            (self.root / d).mkdir(parents=True, exist_ok=True)
        return self

    def manifest(self, name: str) -> Path:
        return self.root / "manifests" / f"{name}.manifest"

    def report(self, filename: str) -> Path:
        return self.root / "reports" / filename

    def checkpoint(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.ckpt"


class Ledger:
    """Append-only JSONL.  Line 1 pins the run parameters; a mismatch is refused."""

    def __init__(self, path: Path, kind: str, params: dict):
        self.path = Path(path)
        self.head = {"ledger": kind, "params": params}
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        if self.path.exists():
            lines = [json.loads(ln) for ln in self.path.read_text(encoding="utf-8").splitlines() if ln.strip()]
            if lines and lines[0] != json.loads(json.dumps(self.head)):
                raise SchemaViolation(f"{self.path} belongs to a run with different parameters", path="ledger")
            self.entries = lines[1:]
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._write(self.head)

    def _write(self, obj: dict) -> None:
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            fh.flush()

    def append(self, obj: dict) -> None:
        with self._lock:
            self.entries.append(obj)
            self._write(obj)


def class_plan(classes: Sequence[str], per_class: int | None = None, *, weights=None, total=None):
    """[(class, count)]: uniform ``per_class`` or ``total`` split proportionally to ``weights``."""
    if per_class is not None:
        if per_class < 0:
            raise ValueError("per_class must be non-negative")
        return [(c, per_class) for c in classes]
    if weights is None or total is None:
        raise ValueError("give per_class, or weights and total")
    return list(zip(classes, allocate(list(weights), total)))


def generate_manifest(
    ws: Workspace,
    plan: Sequence[tuple[str, int]],
    guidance: float,
    seed: int,
    backend: Generator,
    *,
    name: str,
    split: str = "train",
    num_points: int = DEFAULT_POINTS,
    options: RenderOptions = RenderOptions(),
    jobs: int = 1,
    resume: bool = True,
) -> tuple[DatasetManifest, PipelineReport]:
    """Synthesise ``plan`` into ``ws`` and write ``manifests/<name>.manifest``."""
    vocab = [c for c, _ in plan]
    ledger = None
    done: dict[tuple[str, int], object] = {}
    if resume:
        params = {
            "plan": [[c, n] for c, n in plan],
            "guidance": float(guidance),
            "seed": int(seed),
            "backend": backend.identity,
            "num_points": int(num_points),
        }
        ledger = Ledger(ws.report(f"generate-{name}.ledger.jsonl"), "generate", params)
        for e in ledger.entries:
            key = (e["prompt"], e["seed"])
            if "failure" in e:
                done[key] = SampleFailure(e["seed"], e["prompt"], e["failure"]["stage"], e["failure"]["message"])
            else:
                rec = record_from_json(e["record"], ws.root)
                if Path(rec.pc_path).exists() and all(Path(v).exists() for v in rec.view_paths):
                    done[key] = rec

    def sink(sample):
        rec = save_sample(sample, ws.root, vocab)
        if ledger is not None:
            ledger.append({"prompt": sample.text, "seed": sample.generation.seed, "record": rec.to_json(ws.root)})
        return rec

    def on_failure(f: SampleFailure):
        if ledger is not None:
            ledger.append({"prompt": f.prompt, "seed": f.seed, "failure": {"stage": f.stage, "message": f.message}})

    records, report = generate_batch(
        plan,
        guidance,
        seed,
        backend,
        num_points=num_points,
        options=options,
        jobs=jobs,
        sink=sink,
        skip=lambda text, s: done.get((text, s)),
        on_failure=on_failure,
    )
    manifest = DatasetManifest(name, records, vocab, split)
    write_manifest(manifest, ws.manifest(name))
    return manifest, report


def filter_manifest(
    ws: Workspace,
    manifest: DatasetManifest,
    backends: FilterBackends,
    threshold: float,
    *,
    name: str,
    jobs: int = 1,
    resume: bool = True,
) -> tuple[DatasetManifest, DatasetManifest, FilterSummary, list[ConsistencyReport]]:
    """Score every record; write kept/rejected manifests, the JSONL report and the pass-rate table."""
    ledger = None
    prior: dict[str, ConsistencyReport] = {}
    if resume:
        params = {
            "input": manifest.name,
            "samples": [[r.sample_id, r.class_text] for r in manifest.records],
            "backends": [getattr(b, "identity", type(b).__name__) for b in vars(backends).values()],
        }
        ledger = Ledger(ws.report(f"filter-{name}.ledger.jsonl"), "filter", params)
        for e in ledger.entries:
            prior[e["sample_id"]] = ConsistencyReport(
                e["sample_id"], e["merged_caption"], e["s_text"], e["s_sem"], threshold, e.get("stage_failure")
            )

    def score(record: ManifestRecord) -> ConsistencyReport:
        if record.sample_id in prior:
            return replace(prior[record.sample_id], threshold=threshold)
        rep = consistency_filter(load_sample(record), backends, threshold)
        if ledger is not None:
            entry = {
                "sample_id": rep.sample_id,
                "merged_caption": rep.merged_caption,
                "s_text": rep.s_text,
                "s_sem": rep.s_sem,
            }
            if rep.stage_failure:
                entry["stage_failure"] = rep.stage_failure
            ledger.append(entry)
        return rep

    records = list(manifest.records)
    if jobs > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(score, records))
    else:
        reports = [score(r) for r in records]

    kept, rejected = [], []
    summary = FilterSummary()
    for rec, rep in zip(records, reports):
        scored = replace(rec, filter={"s_text": rep.s_text, "s_sem": rep.s_sem, "total": rep.total, "verdict": rep.verdict})
        (kept if rep.passed else rejected).append(scored)
        summary.add(rec.class_text, rep.passed, rep.stage_failure)
    kept_m = manifest.with_records(kept, name=f"{name}-kept")
    rej_m = manifest.with_records(rejected, name=f"{name}-rejected")
    write_manifest(kept_m, ws.manifest(kept_m.name))
    write_manifest(rej_m, ws.manifest(rej_m.name))
    write_filter_report(ws.report(f"filter-{name}.jsonl"), reports)
    ws.report(f"filter-{name}-passrate.csv").write_text(summary.to_csv(), encoding="utf-8", newline="\n")
    return kept_m, rej_m, summary, reports

"""Consistency filter: caption front/back views, merge, score, threshold."""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from tega.errors import JudgeProtocolError, MergeFailed, MissingViews, TegaError
from tega.filtering.backends import FilterBackends, Merger, finish_caption
from tega.filtering.text import TEXT_MISS, score_text
from tega.render import RenderedView, TURNTABLE_VIEWS

DEFAULT_THRESHOLD = 3.5
FRONT_VIEW = 0
BACK_VIEW = 10
SEMANTIC_FLOOR = 1


@dataclass(frozen=True)
class ConsistencyReport:
    sample_id: str
    merged_caption: str
    s_text: int
    s_sem: int
    threshold: float = DEFAULT_THRESHOLD
    stage_failure: str | None = None

    def __post_init__(self):
        if self.s_text not in (1, 5):
            raise ValueError(f"s_text must be 1 or 5, got {self.s_text}")
        if not 1 <= self.s_sem <= 5:
            raise ValueError(f"s_sem must lie in 1..5, got {self.s_sem}")

    @property
    def total(self) -> int:
        return self.s_text + self.s_sem

    @property
    def verdict(self) -> str:
        return "pass" if self.stage_failure is None and self.total > self.threshold else "reject"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def record(self) -> dict:
        """The filter-report line for this sample."""
        out = {
            "sample_id": self.sample_id,
            "s_text": self.s_text,
            "s_sem": self.s_sem,
            "total": self.total,
            "verdict": self.verdict,
        }
        if self.stage_failure is not None:
            out["stage_failure"] = self.stage_failure
        return out


def select_filter_views(sample) -> tuple[RenderedView, RenderedView]:
    views = sample.views
    if len(views) < TURNTABLE_VIEWS:
        raise MissingViews(f"{sample.sample_id}: {len(views)} views, need {TURNTABLE_VIEWS}")
    picked = []
    for k in (FRONT_VIEW, BACK_VIEW):
        v = views[k]
        if v.view_index is not None and v.camera is not None and v.view_index != k:
            raise MissingViews(f"{sample.sample_id}: view slot {k} holds view {v.view_index}")
        picked.append(v)
    return picked[0], picked[1]


def merge_captions(front: str, back: str, merger: Merger) -> str:
    if not front or not back:
        raise MergeFailed("both captions must be non-empty")
    merged = merger.merge([front, back])
    if not isinstance(merged, str) or not merged.strip():
        raise MergeFailed("merger returned an empty caption")
    return merged


def score_semantic(caption: str, prompt: str, judge) -> int:
    value = judge.score(caption, prompt)
    if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 5:
        raise JudgeProtocolError(f"judge score {value!r} outside 1..5")
    return value


def consistency_filter(sample, backends: FilterBackends, threshold: float = DEFAULT_THRESHOLD) -> ConsistencyReport:
    """Score one sample.  Backend failures reject it and name the failed stage.

    Scores for stages that never ran are reported at their floor (1).
    """
    prompt = sample.text
    try:
        front, back = select_filter_views(sample)
        cloud = getattr(sample, "point_cloud", None)
        captions = [finish_caption(backends.captioner.caption(v, cloud)) for v in (front, back)]
    except TegaError:
        return ConsistencyReport(sample.sample_id, "", TEXT_MISS, SEMANTIC_FLOOR, threshold, "caption")
    try:
        merged = merge_captions(captions[0], captions[1], backends.merger)
    except TegaError:
        return ConsistencyReport(sample.sample_id, "", TEXT_MISS, SEMANTIC_FLOOR, threshold, "merge")
    s_text = score_text(merged, prompt)
    try:
        s_sem = score_semantic(merged, prompt, backends.judge)
    except TegaError:
        return ConsistencyReport(sample.sample_id, merged, s_text, SEMANTIC_FLOOR, threshold, "judge")
    return ConsistencyReport(sample.sample_id, merged, s_text, s_sem, threshold)


@dataclass
class ClassPassRate:
    name: str
    kept: int = 0
    generated: int = 0

    @property
    def rate(self) -> float:
        return self.kept / self.generated if self.generated else 0.0

    @property
    def count_text(self) -> str:
        return f"{self.kept}/{self.generated}"

    @property
    def percent_text(self) -> str:
        return f"{100.0 * self.rate:.2f}%"


@dataclass
class FilterSummary:
    classes: dict[str, ClassPassRate] = field(default_factory=dict)
    stage_failures: Counter = field(default_factory=Counter)

    def add(self, name: str, passed: bool, stage_failure: str | None = None) -> None:
        row = self.classes.setdefault(name, ClassPassRate(name))
        row.generated += 1
        row.kept += int(passed)
        if stage_failure:
            self.stage_failures[stage_failure] += 1

    @property
    def kept(self) -> int:
        return sum(r.kept for r in self.classes.values())

    @property
    def generated(self) -> int:
        return sum(r.generated for r in self.classes.values())

    def table(self) -> list[dict]:
        return [
            {"class": r.name, "count": r.count_text, "percent": r.percent_text, "kept": r.kept, "generated": r.generated}
            for r in self.classes.values()
        ]

    def to_csv(self) -> str:
        lines = ["class,count,percent"]
        lines += [f"{r.name},{r.count_text},{r.percent_text}" for r in self.classes.values()]
        return "\n".join(lines) + "\n"


def filter_dataset(
    samples: Sequence,
    backends: FilterBackends,
    threshold: float = DEFAULT_THRESHOLD,
    *,
    jobs: int = 1,
    class_of=None,
) -> tuple[list, list, FilterSummary, list[ConsistencyReport]]:
    """Partition samples into (kept, rejected); input order is preserved in both."""
    class_of = class_of or (lambda s: s.text)
    if jobs > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(lambda s: consistency_filter(s, backends, threshold), samples))
    else:
        reports = [consistency_filter(s, backends, threshold) for s in samples]
    kept, rejected = [], []
    summary = FilterSummary()
    for sample, rep in zip(samples, reports):
        (kept if rep.passed else rejected).append(sample)
        summary.add(class_of(sample), rep.passed, rep.stage_failure)
    return kept, rejected, summary, reports


def write_filter_report(path: str | Path, reports: Iterable[ConsistencyReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.record(), sort_keys=True) + "\n")


def read_filter_report(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

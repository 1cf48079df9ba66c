"""Ablation sweeps: one pipeline run per axis value, everything else fixed."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from tega.datasetio import DatasetManifest, merge_expand, read_manifest, replace_mix
from tega.errors import TegaError
from tega.evaluation.metrics import REPORT_HEADER, EvalReport, evaluate, write_confusion_csv
from tega.filtering import DEFAULT_THRESHOLD, FilterBackends
from tega.generation import DEFAULT_GUIDANCE, DEFAULT_POINTS, Generator
from tega.generation.shapes import CLASS_BUILDERS
from tega.runs import Workspace, class_plan, filter_manifest, generate_manifest
from tega.trainer import TrainConfig, fit, save_checkpoint
from tega.trainer.model import pair_set_label, parse_pair_set

log = logging.getLogger(__name__)

AXES = {
    "guidance": (0.3, 3.0, 30.0),
    "pe_sn": (0, 25, 50, 100),
    "scale": (0.1, 1.0, 2.0),
    "filtering": ("on", "off"),
    "pairs": ("IT,PI,PT", "PI,PT", "IT,PT", "PT"),
}
EVAL_SEED_OFFSET = 1_000_000
TABLE_HEADER = ["axis", "value", "status"] + REPORT_HEADER + ["error"]


def parse_axis_value(axis: str, text) -> object:
    """Validated value for ``axis``; raises ValueError."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; choose from {sorted(AXES)}")
    raw = str(text).strip()
    if axis == "guidance":
        v = float(raw)
        if not v >= 0:
            raise ValueError("guidance must be non-negative")
        return v
    if axis == "pe_sn":
        v = int(raw)
        if not 0 <= v <= 100:
            raise ValueError("pe_sn must lie in 0..100")
        return v
    if axis == "scale":
        v = float(raw)
        if not v >= 0:
            raise ValueError("scale must be non-negative")
        return v
    if axis == "filtering":
        if raw not in ("on", "off"):
            raise ValueError("filtering takes on or off")
        return raw
    return pair_set_label(parse_pair_set(raw))


def value_label(value) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", f"{value:g}" if isinstance(value, float) else str(value))


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    values: tuple = ()
    classes: tuple[str, ...] = tuple(CLASS_BUILDERS)
    per_class: int = 80
    eval_per_class: int = 20
    guidance: float = DEFAULT_GUIDANCE
    eval_guidance: float = DEFAULT_GUIDANCE
    num_points: int = DEFAULT_POINTS
    filtering: bool = True
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    real: str | None = None
    synthetic: str | None = None
    eval: str | None = None
    template: str | None = None

    def __post_init__(self):
        values = self.values or AXES.get(self.axis, ())
        object.__setattr__(self, "values", tuple(parse_axis_value(self.axis, v) for v in values))
        if self.axis in ("pe_sn", "scale") and (self.real is None or self.synthetic is None):
            raise ValueError(f"the {self.axis} axis needs a real and a synthetic manifest")


@dataclass
class SweepRow:
    axis: str
    value: object
    report: EvalReport | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None

    def csv_row(self) -> list[str]:
        head = [self.axis, value_label(self.value), "ok" if self.ok else "failed"]
        body = self.report.csv_row() if self.ok else [""] * len(REPORT_HEADER)
        return head + body + [self.error or ""]


def sweep_table_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


class _Pipeline:
    def __init__(self, cfg: SweepConfig, ws: Workspace, name: str, generator: Generator, backends: FilterBackends, jobs):
        self.cfg, self.ws, self.name = cfg, ws, name
        self.generator, self.backends, self.jobs = generator, backends, jobs
        self._train_sets: dict[tuple[float, bool], DatasetManifest] = {}

    def eval_set(self) -> DatasetManifest:
        cfg = self.cfg
        if cfg.eval is not None:
            return read_manifest(cfg.eval)
        manifest, _ = generate_manifest(
            self.ws,
            class_plan(cfg.classes, cfg.eval_per_class),
            cfg.eval_guidance,
            cfg.seed + EVAL_SEED_OFFSET,
            self.generator,
            name=f"sweep-{self.name}-eval",
            split="eval",
            num_points=cfg.num_points,
            jobs=self.jobs,
        )
        return manifest

    def synthetic(self, guidance: float, filtering: bool) -> DatasetManifest:
        key = (guidance, filtering)
        if key not in self._train_sets:
            cfg = self.cfg
            tag = f"sweep-{self.name}-w{value_label(float(guidance))}"
            manifest, _ = generate_manifest(
                self.ws,
                class_plan(cfg.classes, cfg.per_class),
                guidance,
                cfg.seed,
                self.generator,
                name=tag,
                num_points=cfg.num_points,
                jobs=self.jobs,
            )
            if filtering:
                manifest, *_ = filter_manifest(
                    self.ws, manifest, self.backends, cfg.threshold, name=tag, jobs=self.jobs
                )
            self._train_sets[key] = manifest
        return self._train_sets[key]

    def train_set(self, value) -> tuple[DatasetManifest, TrainConfig]:
        cfg, axis = self.cfg, self.cfg.axis
        if axis == "guidance":
            return self.synthetic(value, cfg.filtering), cfg.train
        if axis == "filtering":
            return self.synthetic(cfg.guidance, value == "on"), cfg.train
        if axis == "pairs":
            return self.synthetic(cfg.guidance, cfg.filtering), replace(cfg.train, pair_set=value)
        real, syn = read_manifest(cfg.real), read_manifest(cfg.synthetic)
        if axis == "pe_sn":
            return replace_mix(real, syn, value, cfg.seed), cfg.train
        return merge_expand(real, syn, value, cfg.seed), cfg.train

    def row(self, value, eval_set: DatasetManifest) -> SweepRow:
        label = f"sweep-{self.name}-{self.cfg.axis}-{value_label(value)}"
        try:
            train, tcfg = self.train_set(value)
            stack, trace = fit(train, tcfg)
            save_checkpoint(self.ws.checkpoint(label), stack, tcfg)
            trace.write(self.ws.report(f"{label}-loss.csv"))
            report = evaluate(eval_set, stack, name=label, template=self.cfg.template)
            write_confusion_csv(report, self.ws.report(f"{label}-confusion.csv"))
            return SweepRow(self.cfg.axis, value, report)
        except (TegaError, ValueError) as exc:
            log.warning("sweep row %s=%s failed: %s", self.cfg.axis, value, exc)
            return SweepRow(self.cfg.axis, value, error=f"{type(exc).__name__}: {exc}")


def run_sweep(
    cfg: SweepConfig,
    out: str | Path,
    generator: Generator,
    backends: FilterBackends,
    *,
    name: str = "sweep",
    jobs: int = 1,
) -> list[SweepRow]:
    """Run every row and write ``reports/sweep-<name>.csv`` plus one confusion CSV per good row.

    A failing row is marked failed and the sweep continues.
    """
    ws = Workspace(out).create()
    pipe = _Pipeline(cfg, ws, name, generator, backends, jobs)
    eval_set = pipe.eval_set()
    rows = [pipe.row(v, eval_set) for v in cfg.values]
    ws.report(f"sweep-{name}.csv").write_text(sweep_table_csv(rows), encoding="utf-8", newline="\n")
    return rows

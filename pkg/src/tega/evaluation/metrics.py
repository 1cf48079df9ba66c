"""Zero-shot classification and ranking metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from tega.errors import EmptyDataset, EmptyVocabulary, SchemaViolation
from tega.trainer.fit import _as_samples, point_embeddings
from tega.trainer.model import EncoderStack

TOP_K = (1, 3, 5)


def class_prompts(class_names: Sequence[str], template: str | None = None) -> list[str]:
    return [template.format(c) if template else c for c in class_names]


def rank_classes(similarity: np.ndarray) -> np.ndarray:
    """Class indices by descending similarity per row; ties keep ascending class index."""
    sim = np.atleast_2d(np.asarray(similarity))
    return np.argsort(-sim, axis=1, kind="stable")


@torch.no_grad()
def class_embeddings(class_names: Sequence[str], stack: EncoderStack, template: str | None = None) -> np.ndarray:
    if not class_names:
        raise EmptyVocabulary("no class names to rank")
    return stack.embed_texts(class_prompts(class_names, template)).cpu().numpy()


def zero_shot_classify(cloud, class_names: Sequence[str], stack: EncoderStack, template: str | None = None):
    """[(class, cosine similarity)] in ranked order."""
    text = class_embeddings(class_names, stack, template)
    h_p = point_embeddings([cloud], stack)[0]
    sim = text @ h_p
    return [(class_names[j], float(sim[j])) for j in rank_classes(sim)[0]]


@dataclass
class EvalReport:
    dataset: str
    class_names: tuple[str, ...]
    confusion: np.ndarray
    topk: dict[int, float]
    per_class_accuracy: dict[str, float] = field(default_factory=dict)

    @property
    def sample_count(self) -> int:
        return int(self.confusion.sum())

    @property
    def top1(self) -> float:
        return self.topk[1]

    @property
    def top3(self) -> float:
        return self.topk[3]

    @property
    def top5(self) -> float:
        return self.topk[5]

    @property
    def top1_per_class_macro(self) -> float:
        vals = list(self.per_class_accuracy.values())
        return float(np.mean(vals)) if vals else 0.0

    def csv_row(self) -> list[str]:
        return [
            self.dataset,
            f"{self.top1:.6f}",
            f"{self.top1_per_class_macro:.6f}",
            f"{self.top3:.6f}",
            f"{self.top5:.6f}",
            str(self.sample_count),
        ]

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.class_names))
        for name, row in zip(self.class_names, self.confusion):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "top1": self.top1,
            "top1_c": self.top1_per_class_macro,
            "top3": self.top3,
            "top5": self.top5,
            "n": self.sample_count,
            "per_class_accuracy": dict(self.per_class_accuracy),
        }


REPORT_HEADER = ["dataset", "top1", "top1_c", "top3", "top5", "n"]


def report_from_rankings(
    dataset: str, labels: Sequence[int], rankings: np.ndarray, class_names: Sequence[str]
) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    rankings = np.atleast_2d(np.asarray(rankings))
    n, c = len(labels), len(class_names)
    if n == 0:
        raise EmptyDataset(f"{dataset}: nothing to evaluate")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"{dataset}: labels outside the {c}-class vocabulary")
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, rankings[:, 0]), 1)
    position = np.argmax(rankings == labels[:, None], axis=1)
    topk = {k: float(np.mean(position < k)) for k in TOP_K}
    per_class = {}
    for j, name in enumerate(class_names):
        total = confusion[j].sum()
        if total:
            per_class[name] = float(confusion[j, j] / total)
    return EvalReport(dataset, tuple(class_names), confusion, topk, per_class)


def evaluate(
    data,
    stack: EncoderStack,
    class_names: Sequence[str] | None = None,
    *,
    name: str | None = None,
    template: str | None = None,
) -> EvalReport:
    """Zero-shot report over an eval manifest (or a list of labelled samples)."""
    from tega.datasetio.manifest import DatasetManifest

    if isinstance(data, DatasetManifest):
        if data.split != "eval":
            raise SchemaViolation(f"expected an eval manifest, got split {data.split!r}", path="split")
        class_names = class_names or data.class_vocabulary
        name = name or data.name
    samples = _as_samples(data)
    if not samples:
        raise EmptyDataset(f"{name or 'eval'}: no samples")
    if not class_names:
        raise EmptyVocabulary("no class names to rank")
    text = class_embeddings(class_names, stack, template)
    h_p = point_embeddings([s.point_cloud for s in samples], stack)
    rankings = rank_classes(h_p @ text.T)
    labels = [s.class_label for s in samples]
    return report_from_rankings(name or "eval", labels, rankings, class_names)


def reports_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def write_report_csv(reports: Sequence[EvalReport], path: str | Path) -> None:
    Path(path).write_text(reports_csv(reports), encoding="utf-8", newline="\n")


def write_confusion_csv(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(report.confusion_csv(), encoding="utf-8", newline="\n")

"""Real/synthetic mixing: expansion by a scale factor and fixed-size replacement."""

from __future__ import annotations

import math
from dataclasses import replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from tega.datasetio.manifest import DatasetManifest, ManifestRecord
from tega.errors import InsufficientSynthetic, VocabularyMismatch


def allocate(weights: Sequence[int], total: int, rate: Fraction | None = None) -> list[int]:
    """Split ``total`` proportionally to ``weights``: floors, then largest remainders.

    Each share targets ``total * w / sum(weights)``, or ``rate * w`` when a rate
    is given (``total`` must then be floor(rate * sum(weights))).  Ties in the
    remainder go to the lower index.  Every share is within one unit of its
    target.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    w_sum = sum(weights)
    if w_sum == 0:
        if total:
            raise ValueError("cannot allocate a positive total over zero weights")
        return [0] * len(weights)
    if rate is None:
        exact = [Fraction(total * w, w_sum) for w in weights]
    else:
        exact = [rate * w for w in weights]
        if math.floor(sum(exact)) != total:
            raise ValueError(f"total {total} is not floor({rate} * {w_sum})")
    shares = [math.floor(q) for q in exact]
    left = total - sum(shares)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - shares[i]), i))
    for i in order[:left]:
        shares[i] += 1
    return shares


def _exact_floor(ratio, n: int) -> int:
    return math.floor(Fraction(str(ratio)) * n)


def _aligned_synthetic(real: DatasetManifest, synthetic: DatasetManifest) -> list[ManifestRecord]:
    """Synthetic records relabelled into the real vocabulary."""
    index = {name: i for i, name in enumerate(real.class_vocabulary)}
    missing = [c for c in synthetic.class_vocabulary if c not in index]
    if missing:
        raise VocabularyMismatch(f"synthetic classes not in the real vocabulary: {missing}")
    out = []
    for r in synthetic.records:
        label = index[synthetic.class_vocabulary[r.class_label]]
        out.append(r if label == r.class_label else replace(r, class_label=label))
    return out


def _by_class(records: Sequence[ManifestRecord], n_classes: int) -> list[list[int]]:
    groups: list[list[int]] = [[] for _ in range(n_classes)]
    for i, r in enumerate(records):
        groups[r.class_label].append(i)
    return groups


def draw_stratified(
    records: Sequence[ManifestRecord], wanted: Sequence[int], rng: np.random.Generator
) -> list[int]:
    """Indices of ``wanted[c]`` records per class without replacement.

    A class whose pool runs short is topped up from the global remainder.
    Returned indices are sorted.
    """
    need = sum(wanted)
    if need > len(records):
        raise InsufficientSynthetic(f"need {need} synthetic records, pool has {len(records)}")
    groups = _by_class(records, len(wanted))
    chosen: list[int] = []
    shortfall = 0
    for c, k in enumerate(wanted):
        pool = groups[c]
        take = min(k, len(pool))
        shortfall += k - take
        if take:
            chosen.extend(np.asarray(pool)[rng.permutation(len(pool))[:take]].tolist())
    if shortfall:
        taken = set(chosen)
        rest = [i for i in range(len(records)) if i not in taken]
        chosen.extend(np.asarray(rest)[rng.permutation(len(rest))[:shortfall]].tolist())
    return sorted(chosen)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def merge_expand(
    real: DatasetManifest, synthetic: DatasetManifest, scale_factor: float, seed: int, name: str | None = None
) -> DatasetManifest:
    """All real records plus floor(scale * |real|) synthetic ones, class-stratified."""
    if scale_factor < 0:
        raise ValueError("scale_factor must be non-negative")
    syn = _aligned_synthetic(real, synthetic)
    rate = Fraction(str(scale_factor))
    n_add = math.floor(rate * len(real))
    if n_add > len(syn):
        raise InsufficientSynthetic(f"scale {scale_factor} needs {n_add} synthetic records, pool has {len(syn)}")
    real_counts = [len(g) for g in _by_class(real.records, len(real.class_vocabulary))]
    wanted = allocate(real_counts, n_add, rate)
    _, syn_rng = _streams(seed)
    picked = draw_stratified(syn, wanted, syn_rng)
    records = list(real.records) + [syn[i] for i in picked]
    return DatasetManifest(name or f"{real.name}+x{scale_factor:g}", records, real.class_vocabulary, real.split)


def replace_mix(
    real: DatasetManifest, synthetic: DatasetManifest, pe_sn_percent: int, seed: int, name: str | None = None
) -> DatasetManifest:
    """Same size as ``real`` with floor(p/100 * |real|) records swapped for synthetic ones."""
    if isinstance(pe_sn_percent, bool) or not isinstance(pe_sn_percent, (int, np.integer)):
        raise ValueError("pe_sn_percent must be an integer")
    if not 0 <= pe_sn_percent <= 100:
        raise ValueError("pe_sn_percent must lie in 0..100")
    syn = _aligned_synthetic(real, synthetic)
    n = len(real)
    n_syn = int(pe_sn_percent) * n // 100
    if n_syn > len(syn):
        raise InsufficientSynthetic(f"{pe_sn_percent}% of {n} needs {n_syn} synthetic records, pool has {len(syn)}")
    groups = _by_class(real.records, len(real.class_vocabulary))
    quota = allocate([len(g) for g in groups], n_syn, Fraction(int(pe_sn_percent), 100))
    real_rng, syn_rng = _streams(seed)
    dropped: set[int] = set()
    for members, k in zip(groups, quota):
        if k:
            dropped.update(np.asarray(members)[real_rng.permutation(len(members))[:k]].tolist())
    kept = [r for i, r in enumerate(real.records) if i not in dropped]
    picked = draw_stratified(syn, quota, syn_rng)
    records = kept + [syn[i] for i in picked]
    return DatasetManifest(name or f"{real.name}~pe{pe_sn_percent}", records, real.class_vocabulary, real.split)


def corrupt_labels(
    manifest: DatasetManifest, fraction: float, seed: int, name: str | None = None
) -> tuple[DatasetManifest, list[str]]:
    """Relabel floor(fraction * n) random records with a different random class.

    Only class_text and class_label change; payloads and generation
    parameters keep describing the true shape.  Returns the corrupted
    manifest and the affected sample_ids.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    vocab = manifest.class_vocabulary
    if len(vocab) < 2 and fraction > 0:
        raise VocabularyMismatch("relabelling needs at least two classes")
    count = _exact_floor(fraction, len(manifest))
    rng = np.random.default_rng(seed)
    picked = sorted(rng.permutation(len(manifest))[:count].tolist())
    records = list(manifest.records)
    for i in picked:
        r = records[i]
        new = int(rng.integers(len(vocab) - 1))
        new += new >= r.class_label
        records[i] = replace(r, class_label=new, class_text=vocab[new])
    out = DatasetManifest(name or f"{manifest.name}-corrupt", records, vocab, manifest.split)
    return out, [records[i].sample_id for i in picked]

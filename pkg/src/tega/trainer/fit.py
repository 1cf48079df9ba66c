"""Training loop, learning-rate schedule, loss trace, checkpoints, embedding export."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from tega.errors import CheckpointMismatch, EmptyDataset, FormatError
from tega.trainer.model import FULL_PAIR_SET, EncoderStack, StackConfig, contrastive_loss, parse_pair_set, stack_clouds

LR_REFERENCE_BATCH = 256
CKPT_MAGIC = b"TEGACK1\0"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    pair_set: tuple = FULL_PAIR_SET
    epochs: int = 200
    warmup_epochs: int = 10
    batch_size: int = 1024
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    seed: int = 0
    tau_init: float = 0.07
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pair_set", parse_pair_set(self.pair_set))
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 1 or self.warmup_epochs < 0:
            raise ValueError("epochs must be >= 1 and warmup_epochs >= 0")
        if self.base_lr <= 0 or self.weight_decay < 0:
            raise ValueError("base_lr must be positive and weight_decay non-negative")
        if self.tau_init <= 0:
            raise ValueError("tau_init must be positive")

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.batch_size / LR_REFERENCE_BATCH

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pair_set"] = ["".join(p) for p in self.pair_set]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


def effective_lr(base_lr: float, batch_size: int) -> float:
    return base_lr * batch_size / LR_REFERENCE_BATCH


def lr_at(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warmup to ``peak`` over ``warmup_steps``, then cosine decay to 0 at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    lr: float
    mean_loss: float
    tau: float


@dataclass
class LossTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "lr", "mean_loss", "tau"])
        for r in self.rows:
            w.writerow([r.epoch, f"{r.lr:.9g}", f"{r.mean_loss:.9g}", f"{r.tau:.9g}"])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="\n")


def build_stack(config: StackConfig, seed: int) -> EncoderStack:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return EncoderStack(config)


def _as_samples(data) -> list:
    from tega.datasetio.manifest import DatasetManifest, load_sample

    if isinstance(data, DatasetManifest):
        return [load_sample(r) for r in data.records]
    return list(data)


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i : i + size] for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


class _ImageCache:
    """Frozen image features per (sample, view), computed on first use."""

    def __init__(self, samples, provider):
        self.samples = samples
        self.provider = provider
        self.cache: dict[tuple[int, int], np.ndarray] = {}

    def get(self, i: int, k: int) -> np.ndarray:
        key = (i, k)
        if key not in self.cache:
            self.cache[key] = self.provider([self.samples[i].views[k]])[0]
        return self.cache[key]


def fit(
    train, config: TrainConfig, stack: EncoderStack | None = None, *, stack_config: StackConfig | None = None
) -> tuple[EncoderStack, LossTrace]:
    """AdamW on the tri-modal loss; the stack is trained in place and returned.

    Each epoch reshuffles samples and draws one view per sample from a
    generator seeded by (seed, epoch).  The schedule is stepped per batch.
    """
    samples = _as_samples(train)
    if not samples:
        raise EmptyDataset("no training samples")
    torch.set_num_threads(config.threads)
    if stack is None:
        base = stack_config or StackConfig()
        stack = build_stack(StackConfig(**{**base.to_dict(), "tau_init": config.tau_init}), config.seed)
    n = len(samples)
    text_feats = stack.text_features([s.text for s in samples])
    points = torch.from_numpy(stack_clouds([s.point_cloud for s in samples])).to(stack.dtype)
    view_counts = np.array([len(s.views) for s in samples])
    if (view_counts < 1).any():
        raise EmptyDataset("every training sample needs at least one view")
    images = _ImageCache(samples, stack.image_features)

    decay, no_decay = [], []
    for name, p in stack.named_parameters():
        (decay if p.ndim >= 2 else no_decay).append(p)
    opt = torch.optim.AdamW(
        [{"params": decay, "weight_decay": config.weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=config.effective_lr,
    )
    steps_per_epoch = len(_batches(np.arange(n), config.batch_size))
    total = steps_per_epoch * config.epochs
    warm = steps_per_epoch * config.warmup_epochs
    trace = LossTrace()
    step = 0
    stack.train()
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        views = rng.integers(0, view_counts)
        loss_sum = 0.0
        lr = config.effective_lr
        for idx in _batches(order, config.batch_size):
            lr = lr_at(step, total, warm, config.effective_lr)
            for g in opt.param_groups:
                g["lr"] = lr
            h_t = stack.project_text(text_feats[idx])
            h_i = stack.project_image(np.stack([images.get(int(i), int(views[i])) for i in idx]))
            h_p = stack.project_points(points[torch.from_numpy(idx)])
            loss = contrastive_loss(h_t, h_i, h_p, stack.tau, config.pair_set)
            opt.zero_grad()
            loss.backward()
            opt.step()
            stack.clamp_tau()
            loss_sum += loss.detach().item() * len(idx)
            step += 1
        trace.rows.append(TraceRow(epoch + 1, lr, loss_sum / n, float(stack.tau.detach())))
    stack.eval()
    return stack, trace


# -- embeddings -----------------------------------------------------------


@torch.no_grad()
def point_embeddings(clouds, stack: EncoderStack, batch: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(clouds), batch):
        out.append(stack.project_points(stack_clouds(clouds[i : i + batch])).cpu().numpy())
    if not out:
        return np.zeros((0, stack.config.embed_dim))
    return np.concatenate(out)


def export_embeddings(data, stack: EncoderStack) -> list[dict]:
    """Rows of (sample_id, class_label, source, h^P)."""
    samples = _as_samples(data)
    emb = point_embeddings([s.point_cloud for s in samples], stack)
    return [
        {"sample_id": s.sample_id, "class_label": s.class_label, "source": s.source, "embedding": emb[i].tolist()}
        for i, s in enumerate(samples)
    ]


def write_embeddings_csv(rows: Sequence[dict], path: str | Path) -> None:
    dim = len(rows[0]["embedding"]) if rows else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "class_label", "source"] + [f"h{j}" for j in range(dim)])
        for r in rows:
            w.writerow([r["sample_id"], r["class_label"], r["source"]] + [f"{v:.9g}" for v in r["embedding"]])


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(path: str | Path, stack: EncoderStack, train_config: TrainConfig | None = None) -> None:
    """Magic, u32 header length, JSON header, then every tensor as float32 little-endian."""
    state = {k: v.detach().cpu().to(torch.float32).contiguous() for k, v in stack.state_dict().items()}
    names = sorted(state)
    header = {
        "version": CKPT_VERSION,
        "stack": stack.config.to_dict(),
        "train": train_config.to_dict() if train_config is not None else None,
        "tensors": [{"name": k, "shape": list(state[k].shape)} for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(state[k].numpy().astype("<f4").tobytes())


def read_checkpoint_header(path: str | Path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC) or len(data) < len(CKPT_MAGIC) + 4:
        raise FormatError(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack_from("<I", data, len(CKPT_MAGIC))
    start = len(CKPT_MAGIC) + 4
    try:
        header = json.loads(data[start : start + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header") from exc
    if header.get("version") != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header, data[start + hlen :]


def load_checkpoint(path: str | Path, stack: EncoderStack | None = None) -> tuple[EncoderStack, dict]:
    """Restore trainable tensors; a stack with different dimensions is rejected."""
    header, payload = read_checkpoint_header(path)
    if stack is None:
        stack = EncoderStack(StackConfig(**header["stack"]))
    expected = {k: list(v.shape) for k, v in stack.state_dict().items()}
    stored = {t["name"]: t["shape"] for t in header["tensors"]}
    if expected != stored:
        raise CheckpointMismatch(f"checkpoint tensors {stored} do not match stack {expected}")
    if stack.config.provider_seed != header["stack"]["provider_seed"]:
        raise CheckpointMismatch("checkpoint was trained against different frozen providers")
    tensors, offset = {}, 0
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        chunk = payload[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise FormatError(f"{path}: truncated tensor {t['name']}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(t["shape"])
        tensors[t["name"]] = torch.from_numpy(arr.copy()).to(stack.dtype)
        offset += 4 * count
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing bytes")
    stack.load_state_dict(tensors)
    stack.eval()
    return stack, header

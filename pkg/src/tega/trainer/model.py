"""Trainable point encoder, projection heads, temperature and the tri-modal loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from tega.errors import NonPositiveTemperature
from tega.trainer.providers import FEATURE_DIM, ConvImageFeatures, HashedTextFeatures

EMBED_DIM = 32
POINT_HIDDEN = 64
TAU_INIT = 0.07
TAU_MIN = 1e-3
TAU_MAX = 10.0

MODALITIES = ("T", "I", "P")
FULL_PAIR_SET = (("I", "T"), ("P", "I"), ("P", "T"))


def parse_pair_set(spec: str | Iterable) -> tuple[tuple[str, str], ...]:
    """Accepts "IT,PI,PT" or an iterable of 2-tuples; returns canonical pairs."""
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    pairs = []
    for item in items:
        pair = tuple(item.strip().upper()) if isinstance(item, str) else tuple(item)
        if len(pair) != 2:
            raise ValueError(f"bad modality pair {item!r}")
        a, b = pair
        if a not in MODALITIES or b not in MODALITIES or a == b:
            raise ValueError(f"bad modality pair {item!r}")
        key = next((p for p in FULL_PAIR_SET if set(p) == {a, b}), None)
        if key is None:
            raise ValueError(f"bad modality pair {item!r}")
        if key not in pairs:
            pairs.append(key)
    if not pairs:
        raise ValueError("pair set must be non-empty")
    return tuple(p for p in FULL_PAIR_SET if p in pairs)


def pair_set_label(pairs) -> str:
    return ",".join(a + b for a, b in pairs)


@dataclass(frozen=True)
class StackConfig:
    feature_dim: int = FEATURE_DIM
    embed_dim: int = EMBED_DIM
    point_hidden: int = POINT_HIDDEN
    tau_init: float = TAU_INIT
    provider_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class PointEncoder(nn.Module):
    """Shared per-point MLP (3 -> h -> h), max pool over points, one hidden layer."""

    def __init__(self, hidden: int = POINT_HIDDEN, out_dim: int = FEATURE_DIM):
        super().__init__()
        self.point_mlp = nn.Sequential(nn.Linear(3, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU())
        self.head = nn.Sequential(nn.Linear(hidden, out_dim), nn.ReLU())

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        # points: (B, P, 3)
        return self.head(self.point_mlp(points).amax(dim=1))


class EncoderStack(nn.Module):
    """Frozen providers f_T, f_I; trainable f_P, heads g_T, g_I, g_P and log-temperature."""

    def __init__(self, config: StackConfig = StackConfig(), text_features=None, image_features=None):
        super().__init__()
        if config.tau_init <= 0:
            raise NonPositiveTemperature(f"tau_init must be positive, got {config.tau_init}")
        self.config = config
        self.text_features = text_features or HashedTextFeatures(config.feature_dim, config.provider_seed)
        self.image_features = image_features or ConvImageFeatures(config.feature_dim, config.provider_seed)
        self.point_encoder = PointEncoder(config.point_hidden, config.feature_dim)
        self.proj_T = nn.Linear(config.feature_dim, config.embed_dim)
        self.proj_I = nn.Linear(config.feature_dim, config.embed_dim)
        self.proj_P = nn.Linear(config.feature_dim, config.embed_dim)
        self.log_tau = nn.Parameter(torch.tensor(math.log(config.tau_init)))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp()

    def clamp_tau(self) -> None:
        with torch.no_grad():
            self.log_tau.clamp_(math.log(TAU_MIN), math.log(TAU_MAX))

    @property
    def dtype(self) -> torch.dtype:
        return self.log_tau.dtype

    def _tensor(self, arr) -> torch.Tensor:
        return torch.tensor(np.asarray(arr), dtype=self.dtype)

    def project_text(self, feats) -> torch.Tensor:
        return F.normalize(self.proj_T(self._tensor(feats)), dim=-1)

    def project_image(self, feats) -> torch.Tensor:
        return F.normalize(self.proj_I(self._tensor(feats)), dim=-1)

    def project_points(self, points) -> torch.Tensor:
        pts = points if isinstance(points, torch.Tensor) else self._tensor(points)
        return F.normalize(self.proj_P(self.point_encoder(pts.to(self.dtype))), dim=-1)

    def embed_texts(self, texts: Sequence[str]) -> torch.Tensor:
        return self.project_text(self.text_features(list(texts)))

    def embed(self, texts: Sequence[str], images, clouds) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Unit-norm h^T, h^I, h^P; ``images`` holds one view per sample."""
        h_t = self.embed_texts(texts)
        h_i = self.project_image(self.image_features(list(images)))
        h_p = self.project_points(stack_clouds(clouds))
        return h_t, h_i, h_p


def stack_clouds(clouds) -> np.ndarray:
    """(B, P, 3) array; smaller clouds are padded by cycling their own points (max pool ignores repeats)."""
    arrays = [np.asarray(getattr(c, "points", c), dtype=np.float32) for c in clouds]
    if not arrays:
        return np.zeros((0, 1, 3), dtype=np.float32)
    size = max(len(a) for a in arrays)
    out = np.empty((len(arrays), size, 3), dtype=np.float32)
    for i, a in enumerate(arrays):
        out[i] = a[np.arange(size) % len(a)]
    return out


def contrastive_loss(h_t, h_i, h_p, tau, pair_set=FULL_PAIR_SET) -> torch.Tensor:
    """Symmetric InfoNCE summed over modality pairs, normalised by 2N.

    For each pair (A, B) both the A->B and B->A row-softmax log-likelihoods
    of the matching index are summed over the batch.
    """
    tau_t = tau if isinstance(tau, torch.Tensor) else torch.tensor(float(tau), dtype=h_t.dtype)
    if not bool(tau_t > 0):
        raise NonPositiveTemperature(f"temperature must be positive, got {float(tau_t)}")
    emb = {"T": h_t, "I": h_i, "P": h_p}
    n = h_t.shape[0]
    if any(m.shape[0] != n for m in emb.values()):
        raise ValueError("modality matrices must have the same row count")
    target = torch.arange(n)
    total = h_t.new_zeros(())
    for a, b in pair_set:
        logits = emb[a] @ emb[b].T / tau_t
        total = total + F.cross_entropy(logits, target, reduction="sum")
        total = total + F.cross_entropy(logits.T, target, reduction="sum")
    return total / (2 * n)

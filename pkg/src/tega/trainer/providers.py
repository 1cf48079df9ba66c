"""Frozen text and image feature providers.

Both are fixed functions of their seed: nothing here is trainable and
outputs are float32 numpy arrays, so training can never move them.
"""

from __future__ import annotations

import base64
import hashlib
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tega.filtering.text import tokens
from tega.remote import JsonClient
from tega.render import RenderedView

FEATURE_DIM = 64
TEXT_BUCKETS = 1024
IMAGE_GRID = 28
CONV_CHANNELS = (8, 16)


def _seeded_rng(seed: int, tag: str) -> np.random.Generator:
    digest = hashlib.blake2b(tag.encode(), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little")])


class HashedTextFeatures:
    """Bag of hashed tokens (signed buckets) through a fixed Gaussian projection."""

    def __init__(self, dim: int = FEATURE_DIM, seed: int = 0, buckets: int = TEXT_BUCKETS):
        self.dim = dim
        self.seed = seed
        self.buckets = buckets
        self.projection = _seeded_rng(seed, "text").standard_normal((buckets, dim)) / np.sqrt(dim)

    def bag(self, text: str) -> np.ndarray:
        vec = np.zeros(self.buckets)
        for tok in tokens(text):
            h = int.from_bytes(hashlib.blake2b(f"{self.seed}:{tok}".encode(), digest_size=8).digest(), "little")
            vec[h % self.buckets] += 1.0 if (h >> 63) & 1 else -1.0
        return vec

    def __call__(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        bags = np.stack([self.bag(t) for t in texts])
        return (bags @ self.projection).astype(np.float32)


def _conv_relu_pool(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """3x3 'same' convolution, ReLU, 2x2 average pool.  x: (C, H, W); kernels: (O, C, 3, 3)."""
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (C, H, W, 3, 3)
    y = np.maximum(np.tensordot(kernels, win, axes=([1, 2, 3], [0, 3, 4])), 0.0)  # (O, H, W)
    o, h, w = y.shape
    return y[:, : h - h % 2, : w - w % 2].reshape(o, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


class ConvImageFeatures:
    """Darkness map pooled to 28x28, two fixed random conv layers, then a fixed projection."""

    def __init__(self, dim: int = FEATURE_DIM, seed: int = 0, grid: int = IMAGE_GRID):
        self.dim = dim
        self.seed = seed
        self.grid = grid
        rng = _seeded_rng(seed, "image")
        c_in = 1
        self.kernels = []
        for c_out in CONV_CHANNELS:
            self.kernels.append(rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(9 * c_in))
            c_in = c_out
        side = grid // 2 ** len(CONV_CHANNELS)
        self.projection = rng.standard_normal((c_in * side * side, dim)) / np.sqrt(c_in * side * side)

    def one(self, pixels: np.ndarray) -> np.ndarray:
        px = np.asarray(pixels)
        h, w, _ = px.shape
        if h % self.grid or w % self.grid:
            raise ValueError(f"image {w}x{h} does not pool evenly to {self.grid}x{self.grid}")
        bh, bw = h // self.grid, w // self.grid
        sums = px.reshape(self.grid, bh, self.grid, bw, 3).sum(axis=(1, 3, 4), dtype=np.int64)
        x = (1.0 - sums / (255.0 * 3 * bh * bw))[None]
        for k in self.kernels:
            x = _conv_relu_pool(x, k)
        return x.reshape(-1) @ self.projection

    def __call__(self, images: Sequence[RenderedView]) -> np.ndarray:
        if not images:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.one(im.pixels) for im in images]).astype(np.float32)


class RemoteTextFeatures:
    """``POST /embed_text {texts} -> {vectors}``, cached on disk."""

    def __init__(self, endpoint: str, dim: int, cache_dir=None, **client_kw):
        self.client = JsonClient(endpoint, cache_dir=cache_dir, **client_kw)
        self.dim = dim

    def __call__(self, texts: Sequence[str]) -> np.ndarray:
        reply = self.client.post("/embed_text", {"texts": list(texts)})
        return _vectors(reply, len(texts), self.dim)


class RemoteImageFeatures:
    """``POST /embed_image {images: [base64 PPM]} -> {vectors}``, cached on disk."""

    def __init__(self, endpoint: str, dim: int, cache_dir=None, **client_kw):
        self.client = JsonClient(endpoint, cache_dir=cache_dir, **client_kw)
        self.dim = dim

    def __call__(self, images: Sequence[RenderedView]) -> np.ndarray:
        body = {"images": [base64.b64encode(im.to_ppm()).decode("ascii") for im in images]}
        return _vectors(self.client.post("/embed_image", body), len(images), self.dim)


def _vectors(reply, n: int, dim: int) -> np.ndarray:
    try:
        arr = np.asarray(reply["vectors"], dtype=np.float32)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed embedding reply: {exc}") from exc
    if arr.shape != (n, dim):
        raise ValueError(f"expected {n}x{dim} vectors, got {arr.shape}")
    return arr

from __future__ import annotations

import base64
from pathlib import Path

import numpy as np

from tega.errors import GenerationFailed, InvalidGeometry
from tega.generation.core import GenerationRequest
from tega.geometry.cloud import PointCloud
from tega.remote import JsonClient


def encode_points(points: np.ndarray) -> str:
    return base64.b64encode(np.asarray(points, dtype="<f4").tobytes()).decode("ascii")


def decode_points(blob: str) -> np.ndarray:
    raw = base64.b64decode(blob, validate=True)
    if len(raw) % 12:
        raise ValueError(f"{len(raw)} bytes is not a whole number of xyz float32 triples")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(np.float64)


class RemoteGenerator:
    """Client for ``POST /generate``; responses are cached on disk to stay deterministic."""

    def __init__(self, endpoint: str, cache_dir: str | Path | None = None, **client_kw):
        self.client = JsonClient(endpoint, cache_dir=cache_dir, **client_kw)
        self.identity = f"remote/{self.client.endpoint}"

    def generate(self, request: GenerationRequest) -> PointCloud:
        body = {
            "prompt": request.prompt,
            "guidance_scale": float(request.guidance_scale),
            "num_points": int(request.num_points),
            "steps": int(request.steps),
            "seed": int(request.seed),
        }
        reply = self.client.post("/generate", body)
        if "error" in reply:
            raise GenerationFailed(str(reply["error"]))
        try:
            return PointCloud(decode_points(reply["points"]))
        except (KeyError, TypeError, ValueError, InvalidGeometry) as exc:
            raise GenerationFailed(f"malformed /generate response: {exc}") from exc

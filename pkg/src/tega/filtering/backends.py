"""Captioner, merger and judge backends: offline stubs and HTTP clients."""

from __future__ import annotations

import base64
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from tega.errors import BackendUnreachable, CaptionFailed, JudgeFailed, JudgeProtocolError, MergeFailed
from tega.filtering.text import normalize_text, stub_semantic_score
from tega.generation.core import canonical_template, chamfer_oracle
from tega.generation.shapes import CLASS_BUILDERS
from tega.geometry.cloud import PointCloud
from tega.remote import JsonClient
from tega.render import (
    CAMERA_DISTANCE,
    ELEVATION_DEG,
    FILL_FRACTION,
    RESOLUTION,
    CameraPose,
    RenderedView,
    fit_focal,
    render_view,
)

JUDGE_SYSTEM_PROMPT = (
    "You are an assessment expert responsible for prompt-prediction pairs. Your task is to score the "
    "prediction according to the following requirements: 1. Evaluate the recall, or how well the "
    "prediction covers the information in the prompt. If the prediction contains information that does "
    "not appear in the prompt, it should not be considered as bad. 2. Assign a score between 1 and 5, "
    "with 5 being the highest. Do not provide a complete answer; give the score in the format: 3 3. add "
    "points if the prediction and prompt are conceptually close (e.g. similar in appearance). (e.g., bike "
    "and bycicle and table and chair are close) 4. since the prompt is at the word level, it is "
    "inevitable that some detailed information is missing, so exclude it from the point deduction."
)
JUDGE_USER_TEMPLATE = "prompt: {prompt}\nprediction: {caption}"

EMPTY_IMAGE_CAPTION = "an empty white image"
CAPTION_TEMPLATE = "a 3d rendering of a {}"
SEGMENT_SEPARATOR = "; "

_SILHOUETTE_SAMPLES = 1500


class Captioner(Protocol):
    def caption(self, image: RenderedView, cloud: PointCloud | None = None) -> str: ...


class Merger(Protocol):
    def merge(self, captions: Sequence[str]) -> str: ...


class Judge(Protocol):
    def score(self, caption: str, prompt: str) -> int: ...


def judge_request(caption: str, prompt: str) -> dict:
    return {"system_prompt": JUDGE_SYSTEM_PROMPT, "user_prompt": JUDGE_USER_TEMPLATE.format(prompt=prompt, caption=caption)}


def parse_judge_score(reply) -> int:
    """Integer 1..5 from a judge reply; anything else is a protocol error."""
    if not isinstance(reply, dict) or "score" not in reply:
        raise JudgeProtocolError(f"judge reply has no score: {reply!r}")
    value = reply["score"]
    if isinstance(value, bool):
        raise JudgeProtocolError(f"judge score is not an integer: {value!r}")
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(-?\d+)\s*", value)
        if m is None:
            raise JudgeProtocolError(f"judge score is not an integer: {value!r}")
        value = int(m.group(1))
    elif isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, int):
        raise JudgeProtocolError(f"judge score is not an integer: {value!r}")
    if not 1 <= value <= 5:
        raise JudgeProtocolError(f"judge score {value} outside 1..5")
    return value


def finish_caption(text: str) -> str:
    out = " ".join(str(text).lower().split())
    if not out:
        raise CaptionFailed("captioner returned an empty caption")
    return out


# -- stubs ----------------------------------------------------------------


def _view_camera(image: RenderedView) -> CameraPose:
    if image.camera is not None:
        return image.camera
    return CameraPose(0.0, ELEVATION_DEG, CAMERA_DISTANCE)


def _mask_points(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    stride = max(1, len(xs) // _SILHOUETTE_SAMPLES)
    xy = np.stack([xs[::stride], ys[::stride]], axis=1) + 0.5
    c = xy - xy.mean(axis=0)
    return c / np.sqrt((c**2).sum(axis=1).mean())


@lru_cache(maxsize=None)
def _template_silhouette(name: str, azimuth: float, elevation: float, distance: float) -> np.ndarray:
    from tega.generation.pipeline import mesh_cloud

    _, mesh = mesh_cloud(canonical_template(name))
    camera = fit_focal(CameraPose(azimuth, elevation, distance), mesh, FILL_FRACTION, RESOLUTION)
    return _mask_points(render_view(mesh, camera).foreground())


class OracleCaptioner:
    """Offline captioner returning a template caption for a class guess.

    With the sample's point cloud at hand the guess is the 3D Chamfer
    oracle.  Image-only calls match the foreground mask against rendered
    class templates from the same camera (centred, RMS-scaled, 2D Chamfer).
    Blank images get a fixed caption.
    """

    identity = "stub-oracle/1"

    def __init__(self, vocabulary: Sequence[str] | None = None):
        self.vocabulary = tuple(vocabulary or CLASS_BUILDERS)

    def guess_from_image(self, image: RenderedView) -> str | None:
        mask = image.foreground()
        if mask.sum() < 3:
            return None
        pix = _mask_points(mask)
        tree = cKDTree(pix)
        cam = _view_camera(image)
        scores = []
        for name in self.vocabulary:
            tmpl = _template_silhouette(name, float(cam.azimuth_deg), float(cam.elevation_deg), float(cam.distance))
            scores.append(tree.query(tmpl)[0].mean() + cKDTree(tmpl).query(pix)[0].mean())
        return self.vocabulary[int(np.argmin(scores))]

    def caption(self, image: RenderedView, cloud: PointCloud | None = None) -> str:
        if not image.foreground().any():
            return EMPTY_IMAGE_CAPTION
        if cloud is not None:
            name = chamfer_oracle(cloud, self.vocabulary)
        else:
            name = self.guess_from_image(image)
        return CAPTION_TEMPLATE.format(name)


class FallbackMerger:
    """Joins captions with "; ", dropping repeated segments (first occurrence wins)."""

    identity = "fallback-merge/1"

    def merge(self, captions: Sequence[str]) -> str:
        seen: list[str] = []
        for c in captions:
            c = " ".join(c.split())
            if c and c not in seen:
                seen.append(c)
        if not seen:
            raise MergeFailed("nothing to merge")
        return SEGMENT_SEPARATOR.join(seen)


class StubJudge:
    identity = "stub-judge/1"

    def score(self, caption: str, prompt: str) -> int:
        return stub_semantic_score(caption, prompt)


@dataclass
class FixedJudge:
    """Returns a preset score; for replaying recorded judge answers."""

    value: int
    identity: str = "fixed-judge"

    def score(self, caption: str, prompt: str) -> int:
        return parse_judge_score({"score": self.value})


# -- remote ---------------------------------------------------------------


class RemoteJudge:
    def __init__(self, endpoint: str, token: str | None = None, cache_dir=None, **client_kw):
        self.client = JsonClient(endpoint, token=token, cache_dir=cache_dir, **client_kw)
        self.identity = f"remote-judge/{self.client.endpoint}"

    def score(self, caption: str, prompt: str) -> int:
        try:
            reply = self.client.post("/judge", judge_request(caption, prompt))
        except BackendUnreachable as exc:
            raise JudgeFailed(str(exc)) from exc
        return parse_judge_score(reply)


class RemoteMerger:
    def __init__(self, endpoint: str, token: str | None = None, cache_dir=None, **client_kw):
        self.client = JsonClient(endpoint, token=token, cache_dir=cache_dir, **client_kw)
        self.identity = f"remote-merge/{self.client.endpoint}"

    def merge(self, captions: Sequence[str]) -> str:
        try:
            reply = self.client.post("/merge", {"captions": list(captions)})
        except BackendUnreachable as exc:
            raise MergeFailed(str(exc)) from exc
        text = reply.get("caption") if isinstance(reply, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise MergeFailed(f"malformed /merge reply: {reply!r}")
        return text


class RemoteCaptioner:
    """``POST /caption {image: base64 PPM} -> {caption}``."""

    def __init__(self, endpoint: str, token: str | None = None, cache_dir=None, **client_kw):
        self.client = JsonClient(endpoint, token=token, cache_dir=cache_dir, **client_kw)
        self.identity = f"remote-caption/{self.client.endpoint}"

    def caption(self, image: RenderedView, cloud: PointCloud | None = None) -> str:
        body = {"image": base64.b64encode(image.to_ppm()).decode("ascii")}
        try:
            reply = self.client.post("/caption", body)
        except BackendUnreachable as exc:
            raise CaptionFailed(str(exc)) from exc
        text = reply.get("caption") if isinstance(reply, dict) else None
        if not isinstance(text, str):
            raise CaptionFailed(f"malformed /caption reply: {reply!r}")
        return finish_caption(text)


@dataclass
class FilterBackends:
    captioner: Captioner
    merger: Merger
    judge: Judge

    @classmethod
    def stub(cls, vocabulary: Sequence[str] | None = None) -> FilterBackends:
        return cls(OracleCaptioner(vocabulary), FallbackMerger(), StubJudge())


__all__ = [
    "CAPTION_TEMPLATE",
    "EMPTY_IMAGE_CAPTION",
    "JUDGE_SYSTEM_PROMPT",
    "JUDGE_USER_TEMPLATE",
    "FallbackMerger",
    "FilterBackends",
    "FixedJudge",
    "RemoteCaptioner",
    "RemoteJudge",
    "RemoteMerger",
    "OracleCaptioner",
    "StubJudge",
    "finish_caption",
    "judge_request",
    "normalize_text",
    "parse_judge_score",
]

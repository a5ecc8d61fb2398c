"""Semantic failure filter over an external vision-language endpoint.

A flagged frame is packaged as (task description, reference frame at the
aligned timestep, current frame, heatmap overlay) and sent to a chat
endpoint that must answer with FALSE_POSITIVE or FAILURE.  Every failure
mode of the endpoint (timeout, transport error, unparseable reply) maps
through a fallback policy to a Verdict — the filter never raises into
the monitoring loop.
"""

from __future__ import annotations

import base64
import io
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .errors import ParameterError, ValidationError

PROMPT_ASSET = "failure_filter_v1.txt"
OVERLAY_ALPHA = 0.45
_TOKEN_RE = re.compile(r"FALSE_POSITIVE|FAILURE", re.IGNORECASE)


class VerdictKind(Enum):
    NOMINAL = "Nominal"
    BENIGN_ANOMALY = "BenignAnomaly"
    FAILURE = "Failure"
    FILTER_UNAVAILABLE = "FilterUnavailable"


class FallbackPolicy(Enum):
    """What a flagged anomaly becomes when the filter cannot answer."""

    FAIL_OPEN = "fail-open"          # assume benign, keep running
    FAIL_CLOSED = "fail-closed"      # assume failure, stop (default)
    UNAVAILABLE = "unavailable"      # report the outage as such

    @property
    def verdict_kind(self) -> VerdictKind:
        return {
            FallbackPolicy.FAIL_OPEN: VerdictKind.BENIGN_ANOMALY,
            FallbackPolicy.FAIL_CLOSED: VerdictKind.FAILURE,
            FallbackPolicy.UNAVAILABLE: VerdictKind.FILTER_UNAVAILABLE,
        }[self]


@dataclass(frozen=True)
class FilterRequest:
    """Inputs for one semantic-filter call; images are encoded bytes."""

    task_description: str
    reference_image: bytes
    current_image: bytes
    heatmap_image: bytes
    t_min: int

    def __post_init__(self) -> None:
        for name in ("reference_image", "current_image", "heatmap_image"):
            if not getattr(self, name):
                raise ValidationError(f"{name} must be non-empty image bytes")


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    rationale: str
    raw_response: str
    fallback_reason: str | None = None  # set when the policy decided, not the model


class VlmClient(Protocol):
    def complete(self, prompt: str, images: Sequence[bytes]) -> str: ...


@dataclass(frozen=True)
class StaticVlmClient:
    """Deterministic playback client for tests and scripted monitor runs."""

    reply: str

    def complete(self, prompt: str, images: Sequence[bytes]) -> str:
        return self.reply


@dataclass(frozen=True)
class VlmEndpointConfig:
    url: str
    model: str
    api_key_env: str = "VLM_API_KEY"
    timeout_s: float = 10.0


@dataclass(frozen=True)
class HttpVlmClient:
    """Generic multimodal chat-completions client (base64 image parts)."""

    config: VlmEndpointConfig

    def complete(self, prompt: str, images: Sequence[bytes]) -> str:
        import os

        import requests

        parts: list[dict] = [{"type": "text", "text": prompt}]
        for blob in images:
            encoded = base64.b64encode(blob).decode("ascii")
            parts.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encoded}"}})
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        response = requests.post(
            self.config.url,
            headers=headers,
            data=json.dumps({"model": self.config.model, "messages": [{"role": "user", "content": parts}]}),
            timeout=self.config.timeout_s,
        )
        response.raise_for_status()
        return response.json()["choices"][0]["message"]["content"]


def build_prompt(task_description: str) -> str:
    """Instantiate the versioned prompt template for one task."""
    template = resources.files("failmon").joinpath(f"prompts/{PROMPT_ASSET}").read_text(encoding="utf-8")
    return template.format(task=task_description.strip())


def _parse_reply(raw: str) -> Verdict | None:
    """First FALSE_POSITIVE/FAILURE token wins (case-insensitive)."""
    match = _TOKEN_RE.search(raw)
    if match is None:
        return None
    kind = VerdictKind.BENIGN_ANOMALY if match.group(0).upper() == "FALSE_POSITIVE" else VerdictKind.FAILURE
    rationale = raw[match.end() :].lstrip(" \t\r\n:;,.—–-")
    return Verdict(kind=kind, rationale=rationale.strip() or raw.strip(), raw_response=raw)


def semantic_filter(
    request: FilterRequest,
    client: VlmClient,
    policy: FallbackPolicy = FallbackPolicy.FAIL_CLOSED,
) -> Verdict:
    """Ask the endpoint whether a flagged anomaly is a failure.

    Images are sent in the documented order (reference, current,
    heatmap).  Any endpoint misbehavior yields the policy's verdict
    with `fallback_reason` set; this function never raises for endpoint
    behavior.
    """
    prompt = build_prompt(request.task_description)
    try:
        raw = client.complete(prompt, [request.reference_image, request.current_image, request.heatmap_image])
    except Exception as exc:  # noqa: BLE001 - every transport failure maps to the policy
        return Verdict(
            kind=policy.verdict_kind,
            rationale=f"semantic filter unavailable: {exc}",
            raw_response="",
            fallback_reason="transport-error",
        )
    verdict = _parse_reply(raw)
    if verdict is None:
        return Verdict(
            kind=policy.verdict_kind,
            rationale="semantic filter reply carried no FALSE_POSITIVE/FAILURE token",
            raw_response=raw,
            fallback_reason="unparseable-reply",
        )
    return verdict


def render_heatmap_overlay(frame: bytes, heatmap: np.ndarray, grid: tuple[int, int]) -> bytes:
    """Blend a min-max normalized heatmap over a frame as red intensity.

    The patch grid is upsampled nearest-neighbor to the frame size and
    blended with per-pixel alpha `0.45 * normalized value`, so constant
    heatmaps leave the frame untouched and scaling the heatmap by any
    positive factor renders identically.
    """
    rows, cols = grid
    values = np.asarray(heatmap, dtype=np.float64).ravel()
    if rows < 1 or cols < 1 or rows * cols != values.size:
        raise ParameterError(f"grid {grid} does not tile a heatmap of length {values.size}")
    image = Image.open(io.BytesIO(frame)).convert("RGB")
    pixels = np.asarray(image, dtype=np.float64)
    height, width = pixels.shape[:2]
    lo, hi = values.min(), values.max()
    cells = np.zeros((rows, cols)) if hi <= lo else ((values - lo) / (hi - lo)).reshape(rows, cols)
    row_of = (np.arange(height) * rows) // height
    col_of = (np.arange(width) * cols) // width
    alpha = (OVERLAY_ALPHA * cells[row_of[:, None], col_of[None, :]])[:, :, None]
    red = np.array([255.0, 0.0, 0.0])
    blended = np.round((1.0 - alpha) * pixels + alpha * red).astype(np.uint8)
    out = io.BytesIO()
    Image.fromarray(blended, mode="RGB").save(out, format="PNG")
    return out.getvalue()


def blank_frame(width: int = 256, height: int = 256, shade: int = 128) -> bytes:
    """Flat placeholder PNG for headless monitors without a camera feed."""
    out = io.BytesIO()
    Image.new("RGB", (width, height), (shade, shade, shade)).save(out, format="PNG")
    return out.getvalue()

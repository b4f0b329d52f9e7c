"""Evaluation metrics and score aggregation.

Region similarities compare embeddings of per-frame regions against a
reference embedding; the region source is pluggable (ground-truth tracks or
color matching on generated frames), as is the embedder (sprite descriptor
by default). The total score is the arithmetic mean of whichever metrics are
present.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import torch

from .errors import DomainError, EmptyRegionError, ShapeError
from .latents import VideoClip
from .sprites import COLOR_RGB, color_region, sprite_descriptor

Embedder = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]

METRIC_KEYS = ("id_sim", "subj_sim", "bg_sim", "aesthetic", "motion", "gme")
_COSINE_KEYS = {"id_sim", "subj_sim", "bg_sim"}


class RegionProvider(Protocol):
    """Per-frame subject masks for a video being evaluated."""

    def subject_masks(self, index: int, frame: torch.Tensor) -> list[torch.Tensor]: ...


class GroundTruthRegions:
    """Masks straight from a scene's ground-truth tracks."""

    def __init__(self, tracks: list[torch.Tensor]):
        self.tracks = tracks

    def subject_masks(self, index: int, frame: torch.Tensor) -> list[torch.Tensor]:
        return [track[index] for track in self.tracks]


class ColorRegions:
    """Masks found by color matching on the frame itself; a subject with
    fewer than `min_pixels` matching pixels yields an empty mask."""

    def __init__(self, colors: list[str], tol: float = 0.3, min_pixels: int = 32):
        self.colors = colors
        self.tol = tol
        self.min_pixels = min_pixels

    def subject_masks(self, index: int, frame: torch.Tensor) -> list[torch.Tensor]:
        masks = []
        for color in self.colors:
            mask = color_region(frame, COLOR_RGB[color], self.tol)
            if mask.sum().item() < self.min_pixels:
                mask = torch.zeros_like(mask)
            masks.append(mask)
        return masks


def cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    value = float(torch.dot(a.flatten(), b.flatten())
                  / (a.norm() * b.norm()).clamp_min(1e-12))
    return min(max(value, -1.0), 1.0)


def sampled_indices(total_frames: int, stride: int) -> list[int]:
    return list(range(0, total_frames, stride))


def region_similarity(video: VideoClip, reference_image: torch.Tensor,
                      reference_mask: torch.Tensor, mode: str,
                      embedder: Embedder, regions: RegionProvider,
                      stride: int = 16, subject_index: int = 0) -> float:
    """Mean cosine similarity between sampled-frame region embeddings and the
    reference embedding.

    mode 'identity'/'subject' evaluates the provider's mask for
    `subject_index`; 'background' evaluates the complement of all subject
    masks. Frames whose region comes back empty are skipped; if every sampled
    frame is skipped the metric is undefined and raises.
    """
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}",
                          module="metrics", op="region_similarity")
    if mode not in ("identity", "subject", "background"):
        raise DomainError(f"unknown mode {mode!r}", module="metrics", op="region_similarity")
    if reference_mask.sum().item() == 0:
        raise EmptyRegionError("reference mask is empty",
                               module="metrics", op="region_similarity")
    ref_embedding = embedder(reference_image, reference_mask)

    values = []
    for index in sampled_indices(video.frames, stride):
        frame = video.data[index]
        masks = regions.subject_masks(index, frame)
        if mode == "background":
            union = torch.zeros_like(frame[0])
            for m in masks:
                union = torch.maximum(union, m)
            region = 1.0 - union
        else:
            if subject_index >= len(masks):
                raise ShapeError(f"provider returned {len(masks)} masks, "
                                 f"subject {subject_index} requested",
                                 module="metrics", op="region_similarity")
            region = masks[subject_index]
        if region.sum().item() == 0:
            continue
        values.append(cosine(embedder(frame, region), ref_embedding))
    if not values:
        raise EmptyRegionError("every sampled frame had an empty region",
                               module="metrics", op="region_similarity")
    return sum(values) / len(values)


def frame_mean_score(video: VideoClip, predictor: Callable[[torch.Tensor], float]) -> float:
    """Arithmetic mean of per-frame predictor outputs."""
    return sum(float(predictor(video.data[t])) for t in range(video.frames)) / video.frames


def motion_smoothness(video: VideoClip, eps: float = 1e-8) -> float:
    """Second-difference acceleration penalty in [0, 1].

    Each pixel's |x[t+1] - 2x[t] + x[t-1]| is normalized by the global mean
    first difference (plus eps), clamped to [0, 1], and averaged; smoothness
    is one minus that. A static video scores 1 (zero differences by
    convention); frame-rate flicker scores 0.
    """
    if video.frames < 3:
        raise DomainError(f"motion smoothness needs >= 3 frames, got {video.frames}",
                          module="metrics", op="motion_smoothness")
    x = video.data
    first = (x[1:] - x[:-1]).abs()
    second = (x[2:] - 2 * x[1:-1] + x[:-2]).abs()
    scale = float(first.mean()) + eps
    penalty = (second / scale).clamp(0.0, 1.0).mean()
    return 1.0 - float(penalty)


def colorfulness(frame: torch.Tensor) -> float:
    """Cheap stand-in for a learned frame-quality predictor."""
    return float(frame.std())


def total_score(scores: Iterable[float]) -> float:
    values = [float(s) for s in scores]
    if not values:
        raise DomainError("cannot aggregate an empty report",
                          module="metrics", op="total_score")
    return sum(values) / len(values)


@dataclass
class MetricReport:
    scores: dict[str, float]
    total: float
    provenance: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"scores": self.scores, "total": self.total,
                           "provenance": self.provenance}, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        payload = json.loads(Path(path).read_text())
        return cls(scores=payload["scores"], total=payload["total"],
                   provenance=payload.get("provenance", {}))


def make_report(scores: dict[str, float], provenance: dict[str, object] | None = None
                ) -> MetricReport:
    for key, value in scores.items():
        if not torch.isfinite(torch.tensor(value)):
            raise DomainError(f"score {key} is not finite", module="metrics", op="make_report")
        if key in _COSINE_KEYS and not -1.0 <= value <= 1.0:
            raise DomainError(f"cosine score {key}={value} outside [-1, 1]",
                              module="metrics", op="make_report")
    return MetricReport(scores=dict(scores), total=total_score(scores.values()),
                        provenance=provenance or {})


def format_table(report: MetricReport) -> str:
    lines = [f"{'metric':<12}{'score':>8}"]
    for key in METRIC_KEYS:
        if key in report.scores:
            lines.append(f"{key:<12}{report.scores[key]:>8.3f}")
    for key in sorted(report.scores):
        if key not in METRIC_KEYS:
            lines.append(f"{key:<12}{report.scores[key]:>8.3f}")
    lines.append(f"{'total':<12}{report.total:>8.3f}")
    return "\n".join(lines)


def parse_caption(caption: str) -> tuple[list[tuple[str, str, str]], str | None]:
    """Caption template -> ([(color, shape, direction), ...], background word)."""
    from .denoiser import BACKGROUND_WORDS, DIRECTIONS, SHAPES, SUBJECT_COLORS

    words = caption.lower().split()
    subjects = []
    for i, word in enumerate(words):
        if (word == "the" and i + 4 < len(words) and words[i + 1] in SUBJECT_COLORS
                and words[i + 2] in SHAPES and words[i + 3] == "moves"
                and words[i + 4] in DIRECTIONS):
            subjects.append((words[i + 1], words[i + 2], words[i + 4]))
    background = None
    for i, word in enumerate(words):
        if word == "background" and i >= 1 and words[i - 1] in BACKGROUND_WORDS:
            background = words[i - 1]
    return subjects, background


def caption_match_score(video: VideoClip, caption: str) -> float:
    """Text-video alignment oracle: the fraction of caption attributes
    (per-subject color, shape, direction; background color) that the rendered
    frames actually exhibit."""
    from .backends import classify_background, classify_direction, classify_shape

    subjects, background = parse_caption(caption)
    checks = 0
    matched = 0
    frame0 = video.data[0]
    for color, shape, direction in subjects:
        mask = color_region(frame0, COLOR_RGB[color])
        present = mask.sum().item() >= 12
        checks += 3
        if present:
            matched += 1
            if classify_shape(mask) == shape:
                matched += 1
            if video.frames >= 2 and classify_direction(video, color) == direction:
                matched += 1
    if background is not None:
        checks += 1
        if classify_background(frame0) == background:
            matched += 1
    if checks == 0:
        return 0.0
    return matched / checks

"""Four-stage curation pipeline.

Stage 1 splits raw videos at scene changes, gates on quality, and captions
the survivors. Stage 2 grounds and segments caption-derived object labels,
refines the masks, and filters by size and face overlap. Stage 3 clusters,
pose-filters, scores, and samples faces per identity. Stage 4 builds the
final record with augmented counterparts of every reference.

All external model roles are abstract callables (BackendSuite); deterministic
mocks ship in refvid.backends.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
from torch.nn import functional as F

from . import mten
from .errors import BackendError, DomainError, ShapeError
from .latents import VideoClip

Rect = tuple[int, int, int, int]  # x, y, w, h


@dataclass
class FaceDetection:
    box: Rect
    embedding: torch.Tensor
    confidence: float
    yaw: float
    pitch: float
    roll: float
    frame: int = 0


@dataclass
class BackendSuite:
    """The six external model roles, all deterministic under a fixed seed."""

    captioner: Callable[[VideoClip], str]
    grounder: Callable[[torch.Tensor, str], Rect | None]
    segmenter: Callable[[torch.Tensor, Rect], torch.Tensor]
    face_analyzer: Callable[[torch.Tensor, int], list[FaceDetection]]
    augmenter: Callable[[torch.Tensor], torch.Tensor]
    quality_scorer: Callable[[VideoClip], dict[str, float]]


@dataclass(frozen=True)
class PipelineConfig:
    min_area: int = 16                 # minimum object mask area, pixels
    iou_face_threshold: float = 0.25   # strictly above -> object removed
    faces_per_identity: int = 10
    yaw_limit: float = 45.0            # degrees; strictly beyond -> face dropped
    pitch_limit: float = 45.0
    roll_limit: float = 30.0
    identity_cosine: float = 0.7
    morphology_radius: int = 1
    min_aesthetic: float = 0.05
    min_motion: float = 0.002
    scene_cut_threshold: float = 0.25  # mean abs frame difference

    def validate(self) -> None:
        if not 0.0 < self.iou_face_threshold < 1.0:
            raise DomainError("iou_face_threshold must lie in (0, 1)",
                              module="datapipe", op="PipelineConfig")
        if self.min_area <= 0 or self.faces_per_identity <= 0 or self.morphology_radius < 1:
            raise DomainError("thresholds must be positive",
                              module="datapipe", op="PipelineConfig")


@dataclass
class ObjectCandidate:
    label: str
    mask: torch.Tensor  # [H, W] binary


@dataclass
class RefPair:
    label: str
    original: torch.Tensor
    augmented: torch.Tensor


@dataclass
class TrainingRecord:
    video_id: str
    caption: str
    face_pair: RefPair | None
    object_pairs: list[RefPair]
    background: torch.Tensor


def iou(mask_a: torch.Tensor, mask_b: torch.Tensor) -> float:
    """Intersection over union of two binary masks; 0 when both are empty."""
    if mask_a.shape != mask_b.shape:
        raise ShapeError(f"mask shapes differ: {tuple(mask_a.shape)} vs {tuple(mask_b.shape)}",
                         module="datapipe", op="iou")
    a = mask_a > 0
    b = mask_b > 0
    union = (a | b).sum().item()
    if union == 0:
        return 0.0
    return float((a & b).sum().item()) / float(union)


def refine_mask(mask: torch.Tensor, radius: int = 1) -> torch.Tensor:
    """Morphological opening (erosion then dilation) with a square element of
    side 2*radius + 1. Removes components smaller than the element; idempotent."""
    if radius < 1:
        raise DomainError(f"radius must be >= 1, got {radius}",
                          module="datapipe", op="refine_mask")
    k = 2 * radius + 1
    kernel = torch.ones(1, 1, k, k)
    binary = (mask > 0).float().unsqueeze(0).unsqueeze(0)
    eroded = (F.conv2d(binary, kernel, padding=radius) >= k * k - 0.5).float()
    dilated = (F.conv2d(eroded, kernel, padding=radius) > 0.5).float()
    return dilated.squeeze(0).squeeze(0)


def filter_objects(objects: list[ObjectCandidate], face_masks: list[torch.Tensor],
                   config: PipelineConfig) -> list[ObjectCandidate]:
    """Drop too-small objects and objects overlapping any face beyond the IoU
    threshold (strict inequality: exactly-at-threshold survives). Order kept."""
    kept = []
    for obj in objects:
        if obj.mask.sum().item() < config.min_area:
            continue
        if any(iou(obj.mask, fm) > config.iou_face_threshold for fm in face_masks):
            continue
        kept.append(obj)
    return kept


def pose_quality(yaw: float, pitch: float, roll: float) -> float:
    q = (math.cos(math.radians(yaw)) * math.cos(math.radians(pitch))
         * math.cos(math.radians(roll)))
    return min(max(q, 0.0), 1.0)


def _cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = float(a.norm() * b.norm())
    if denom == 0.0:
        return 0.0
    return float(torch.dot(a, b)) / denom


def select_faces(detections: list[FaceDetection], config: PipelineConfig,
                 rng: torch.Generator) -> list[list[FaceDetection]]:
    """Per-identity face selection.

    Faces outside the pose limits are discarded; the rest are greedily
    clustered by embedding cosine against each cluster's first member; within
    a cluster, faces are ranked by confidence * pose_quality and read at
    evenly strided indices (seeded fractional start), returning
    min(faces_per_identity, available) faces spanning the quality range.
    """
    valid = [d for d in detections
             if abs(d.yaw) <= config.yaw_limit and abs(d.pitch) <= config.pitch_limit
             and abs(d.roll) <= config.roll_limit]
    clusters: list[list[tuple[int, FaceDetection]]] = []
    for i, det in enumerate(valid):
        for cluster in clusters:
            if _cosine(det.embedding, cluster[0][1].embedding) >= config.identity_cosine:
                cluster.append((i, det))
                break
        else:
            clusters.append([(i, det)])

    selected: list[list[FaceDetection]] = []
    for cluster in clusters:
        ranked = sorted(cluster,
                        key=lambda pair: (-pair[1].confidence
                                          * pose_quality(pair[1].yaw, pair[1].pitch,
                                                         pair[1].roll), pair[0]))
        n = len(ranked)
        k = min(config.faces_per_identity, n)
        stride = n / k
        start = float(torch.rand((), generator=rng).item()) * stride
        indices = [int(start + i * stride) for i in range(k)]
        selected.append([ranked[i][1] for i in indices])
    return selected


def scene_split(video: VideoClip, threshold: float) -> list[VideoClip]:
    """Mock scene-change detection: cut where the mean absolute difference
    between consecutive frames exceeds the threshold."""
    data = video.data
    cuts = [0]
    for t in range(1, data.shape[0]):
        if float((data[t] - data[t - 1]).abs().mean()) > threshold:
            cuts.append(t)
    cuts.append(data.shape[0])
    return [VideoClip(data[a:b], fps=video.fps) for a, b in zip(cuts, cuts[1:]) if b > a]


def extract_labels(caption: str) -> list[str]:
    """Subject labels from the templated caption: the color word of each
    'the <color> <shape>' noun phrase, in order, deduplicated."""
    from .denoiser import SHAPES, SUBJECT_COLORS

    words = caption.lower().split()
    labels = []
    for i, word in enumerate(words[:-2]):
        if word == "the" and words[i + 1] in SUBJECT_COLORS and words[i + 2] in SHAPES:
            if words[i + 1] not in labels:
                labels.append(words[i + 1])
    return labels


def box_mask(box: Rect, height: int, width: int) -> torch.Tensor:
    x, y, w, h = box
    mask = torch.zeros(height, width)
    mask[max(y, 0):y + h, max(x, 0):x + w] = 1.0
    return mask


def masked_crop(frame: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mask out everything but the region, cropped to the mask bounding box."""
    ys, xs = torch.nonzero(mask > 0, as_tuple=True)
    if len(ys) == 0:
        raise ShapeError("cannot crop an empty mask", module="datapipe", op="masked_crop")
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    return (frame * mask.unsqueeze(0))[:, y0:y1, x0:x1]


def _call(stage: str, clip_id: str, fn: Callable, *args):
    try:
        return fn(*args)
    except Exception as exc:  # noqa: BLE001 - backend faults become BackendError
        raise BackendError(f"{stage} backend failed for clip {clip_id}: {exc}") from exc


def curate(videos: list[tuple[str, VideoClip]], backends: BackendSuite,
           config: PipelineConfig, rng: torch.Generator) -> list[TrainingRecord]:
    """Run all four stages over the input videos, in input order."""
    config.validate()
    records: list[TrainingRecord] = []
    for video_id, video in videos:
        for clip_index, clip in enumerate(scene_split(video, config.scene_cut_threshold)):
            clip_id = f"{video_id}/{clip_index}"
            quality = _call("stage1-quality", clip_id, backends.quality_scorer, clip)
            if (quality["aesthetic"] < config.min_aesthetic
                    or quality["motion_amplitude"] < config.min_motion):
                continue
            caption = _call("stage1-caption", clip_id, backends.captioner, clip)

            frame0 = clip.data[0]
            height, width = frame0.shape[1:]
            objects = []
            for label in extract_labels(caption):
                box = _call("stage2-ground", clip_id, backends.grounder, frame0, label)
                if box is None:
                    continue
                mask = _call("stage2-segment", clip_id, backends.segmenter, frame0, box)
                objects.append(ObjectCandidate(label=label,
                                               mask=refine_mask(mask, config.morphology_radius)))

            detections: list[FaceDetection] = []
            for t in range(clip.data.shape[0]):
                detections.extend(_call("stage3-face", clip_id, backends.face_analyzer,
                                        clip.data[t], t))
            face_masks = [box_mask(d.box, height, width) for d in detections]
            kept = filter_objects(objects, face_masks, config)
            identities = select_faces(detections, config, rng)

            face_pair = None
            if identities:
                best = max(identities,
                           key=lambda faces: faces[0].confidence
                           * pose_quality(faces[0].yaw, faces[0].pitch, faces[0].roll))
                top = best[0]
                crop = masked_crop(clip.data[top.frame], box_mask(top.box, height, width))
                face_pair = RefPair(label="face", original=crop,
                                    augmented=_call("stage4-augment", clip_id,
                                                    backends.augmenter, crop))

            object_pairs = []
            for obj in kept:
                crop = masked_crop(frame0, obj.mask)
                object_pairs.append(RefPair(label=obj.label, original=crop,
                                            augmented=_call("stage4-augment", clip_id,
                                                            backends.augmenter, crop)))

            subject_union = torch.zeros(height, width)
            for obj in kept:
                subject_union = torch.maximum(subject_union, obj.mask)
            for fm in face_masks:
                subject_union = torch.maximum(subject_union, fm)
            background = frame0 * (1.0 - subject_union.unsqueeze(0))

            records.append(TrainingRecord(video_id=clip_id, caption=caption,
                                          face_pair=face_pair, object_pairs=object_pairs,
                                          background=background))
    return records


def _pair_entry(pair: RefPair, directory: Path, stem: str) -> dict:
    orig = f"{stem}_orig.mten"
    aug = f"{stem}_aug.mten"
    mten.write_tensor(directory / orig, pair.original)
    mten.write_tensor(directory / aug, pair.augmented)
    return {"label": pair.label, "original": orig, "augmented": aug}


def write_manifest(records: list[TrainingRecord], directory: str | Path) -> Path:
    """Write reference images plus one JSON record per line; the manifest file
    appears atomically via write-then-rename."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, record in enumerate(records):
        slug = f"r{i:05d}"
        entry: dict = {"video_id": record.video_id, "caption": record.caption}
        entry["face"] = (_pair_entry(record.face_pair, directory, f"{slug}_face")
                         if record.face_pair else None)
        entry["objects"] = [_pair_entry(pair, directory, f"{slug}_obj{j}")
                            for j, pair in enumerate(record.object_pairs)]
        bg = f"{slug}_bg.mten"
        mten.write_tensor(directory / bg, record.background)
        entry["background"] = bg
        lines.append(json.dumps(entry, sort_keys=True))
    manifest = directory / "manifest.jsonl"
    tmp = directory / "manifest.jsonl.tmp"
    tmp.write_text("".join(line + "\n" for line in lines))
    os.replace(tmp, manifest)
    return manifest


def read_manifest(manifest: str | Path) -> list[TrainingRecord]:
    manifest = Path(manifest)
    directory = manifest.parent
    records = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)

        def load_pair(item: dict | None) -> RefPair | None:
            if item is None:
                return None
            return RefPair(label=item["label"],
                           original=mten.read_tensor(directory / item["original"]),
                           augmented=mten.read_tensor(directory / item["augmented"]))

        records.append(TrainingRecord(
            video_id=entry["video_id"], caption=entry["caption"],
            face_pair=load_pair(entry["face"]),
            object_pairs=[load_pair(o) for o in entry["objects"]],
            background=mten.read_tensor(directory / entry["background"])))
    return records

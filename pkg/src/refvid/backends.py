"""Deterministic mock backends for the curation pipeline.

The sprite suite reconstructs captions, boxes, and masks from pixels alone
(color matching plus simple shape statistics), so it can stand in for the
captioner / grounding / segmentation / face / augmentation / quality roles
without any learned model while remaining an honest function of the clip.
"""

from __future__ import annotations

import torch

from .datapipe import BackendSuite, FaceDetection, Rect
from .denoiser import BACKGROUND_WORDS, SUBJECT_COLORS
from .latents import VideoClip
from .sprites import BACKGROUND_COLORS, COLOR_RGB, color_region

MIN_SUBJECT_PIXELS = 12


def detect_subject_colors(frame: torch.Tensor) -> list[str]:
    """Subject palette colors present in the frame, palette order."""
    found = []
    for color in SUBJECT_COLORS:
        if color_region(frame, COLOR_RGB[color]).sum().item() >= MIN_SUBJECT_PIXELS:
            found.append(color)
    return found


def classify_shape(mask: torch.Tensor) -> str:
    """Shape from bbox fill ratio: square ~1.0, circle ~pi/4, triangle ~0.5."""
    ys, xs = torch.nonzero(mask > 0, as_tuple=True)
    if len(ys) == 0:
        return "square"
    bbox_area = float((ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1))
    fill = float(len(ys)) / bbox_area
    if fill > 0.92:
        return "square"
    if fill > 0.65:
        return "circle"
    return "triangle"


def _centroid(mask: torch.Tensor) -> tuple[float, float]:
    ys, xs = torch.nonzero(mask > 0, as_tuple=True)
    return float(xs.float().mean()), float(ys.float().mean())


def classify_direction(clip: VideoClip, color: str) -> str:
    first = color_region(clip.data[0], COLOR_RGB[color])
    last = color_region(clip.data[-1], COLOR_RGB[color])
    if first.sum() == 0 or last.sum() == 0:
        return "right"
    x0, y0 = _centroid(first)
    x1, y1 = _centroid(last)
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) >= abs(dy):
        return "right" if dx >= 0 else "left"
    return "down" if dy >= 0 else "up"


def classify_background(frame: torch.Tensor) -> str:
    """Nearest background-palette color of each vertical half (majority over
    non-subject column pixels); a mismatched pair reads as two-tone."""
    h, w = frame.shape[1:]
    subject = torch.zeros(h, w)
    for color in SUBJECT_COLORS:
        subject = torch.maximum(subject, color_region(frame, COLOR_RGB[color]))

    def nearest(column: int) -> str:
        free = subject[:, column] == 0
        pixels = frame[:, free.nonzero().squeeze(1), column] if free.any() else frame[:, :, column]
        votes = {c: 0 for c in BACKGROUND_COLORS}
        for i in range(pixels.shape[1]):
            dists = {c: float(((pixels[:, i] - torch.tensor(COLOR_RGB[c])) ** 2).sum())
                     for c in BACKGROUND_COLORS}
            votes[min(dists, key=dists.get)] += 1
        return max(votes, key=votes.get)

    left, right = nearest(0), nearest(w - 1)
    if left == right:
        return left
    pair = sorted([left, right], key=BACKGROUND_COLORS.index)
    word = "-".join(pair)
    return word if word in BACKGROUND_WORDS else left


def sprite_captioner(clip: VideoClip) -> str:
    frame0 = clip.data[0]
    phrases = []
    for color in detect_subject_colors(frame0):
        mask = color_region(frame0, COLOR_RGB[color])
        shape = classify_shape(mask)
        direction = classify_direction(clip, color)
        phrases.append(f"the {color} {shape} moves {direction}")
    background = classify_background(frame0)
    if not phrases:
        return f"a {background} background"
    return " and ".join(phrases) + f" over a {background} background"


def sprite_grounder(frame: torch.Tensor, label: str) -> Rect | None:
    if label not in COLOR_RGB:
        return None
    mask = color_region(frame, COLOR_RGB[label])
    ys, xs = torch.nonzero(mask > 0, as_tuple=True)
    if len(ys) == 0:
        return None
    x0, y0 = int(xs.min()), int(ys.min())
    return (x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)


def sprite_segmenter(frame: torch.Tensor, box: Rect) -> torch.Tensor:
    """Inside the box, keep pixels of the box's dominant subject color."""
    x, y, w, h = box
    window = torch.zeros_like(frame[0])
    window[y:y + h, x:x + w] = 1.0
    best, best_count = None, 0
    for color in SUBJECT_COLORS:
        count = (color_region(frame, COLOR_RGB[color]) * window).sum().item()
        if count > best_count:
            best, best_count = color, count
    if best is None:
        return torch.zeros_like(frame[0])
    return color_region(frame, COLOR_RGB[best]) * window


def no_face_analyzer(frame: torch.Tensor, index: int) -> list[FaceDetection]:
    return []


def _content_seed(image: torch.Tensor, seed: int) -> int:
    payload = int((image * 255).round().long().sum().item())
    return (seed * 1000003 + payload * 7919 + image.numel()) % (2**62)


class SeededAugmenter:
    """Deterministic color jitter + optional horizontal flip. Parameters are
    derived from (seed, image content), so results are call-order independent.

    Nonzero pixels are scaled per channel by a factor in
    [1 - jitter, 1 - jitter/4], so an augmented counterpart always differs
    from its original and never leaves [0, 1]."""

    def __init__(self, seed: int, jitter: float = 0.2):
        self.seed = seed
        self.jitter = jitter

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        rng = torch.Generator().manual_seed(_content_seed(image, self.seed))
        u = 0.25 + 0.75 * torch.rand(image.shape[0], 1, 1, generator=rng)
        factors = 1.0 - self.jitter * u
        out = (image * factors).clamp(0.0, 1.0)
        if torch.rand((), generator=rng).item() < 0.5:
            out = torch.flip(out, dims=[2])
        return out


def sprite_quality_scorer(clip: VideoClip) -> dict[str, float]:
    data = clip.data
    aesthetic = float(data.std())
    if data.shape[0] < 2:
        motion = 0.0
    else:
        motion = float((data[1:] - data[:-1]).abs().mean())
    return {"aesthetic": aesthetic, "motion_amplitude": motion}


def sprite_backend_suite(seed: int = 0) -> BackendSuite:
    return BackendSuite(
        captioner=sprite_captioner,
        grounder=sprite_grounder,
        segmenter=sprite_segmenter,
        face_analyzer=no_face_analyzer,
        augmenter=SeededAugmenter(seed),
        quality_scorer=sprite_quality_scorer,
    )

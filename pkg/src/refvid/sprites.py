"""Synthetic sprite-world scenes.

Solid-colored shapes translate on linear integer-pixel trajectories over a
solid (or two-tone) background, with ground-truth masks, templated captions,
and per-subject identity keys. Everything is a deterministic function of the
generator, which makes the scenes usable both as a training corpus and as an
oracle for curation and evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import mten
from .denoiser import BACKGROUND_WORDS, DIRECTIONS, SHAPES, SUBJECT_COLORS
from .errors import ConfigError, EmptyRegionError, ShapeError
from .latents import VideoClip
from .masking import ReferenceImage

COLOR_RGB: dict[str, tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
    "gray": (0.5, 0.5, 0.5),
}
BACKGROUND_COLORS = ("white", "black", "gray")

DIRECTION_STEPS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}


@dataclass(frozen=True)
class SpriteConfig:
    height: int = 64
    width: int = 64
    frames: int = 8
    fps: float = 8.0
    min_subjects: int = 1
    max_subjects: int = 2
    speed_min: float = 1.0
    speed_max: float = 3.0
    sprite_min: int = 12
    sprite_max: int = 20
    start_jitter: int = 64   # max offset from the canonical start, in pixels
    two_tone_prob: float = 0.0

    def validate(self) -> None:
        if not 1 <= self.min_subjects <= self.max_subjects <= 3:
            raise ConfigError(f"subject count range {self.min_subjects}..{self.max_subjects} "
                              "must lie within 1..3", op="SpriteConfig")
        if self.sprite_max >= min(self.height, self.width):
            raise ConfigError("sprites must be smaller than the frame", op="SpriteConfig")
        if self.sprite_min < 4 or self.sprite_min > self.sprite_max:
            raise ConfigError("invalid sprite size range", op="SpriteConfig")


@dataclass
class SpriteSubject:
    shape: str
    color: str
    direction: str
    speed: float
    size: int
    start: tuple[int, int]  # x, y of the stencil's top-left at frame 0

    @property
    def identity(self) -> tuple[str, str]:
        return (self.shape, self.color)


@dataclass
class SpriteScene:
    video: VideoClip
    references: list[ReferenceImage]          # one per subject, label = color word
    background_ref: ReferenceImage
    caption: str
    gt_masks: list[torch.Tensor]              # per subject, [T, H, W] in {0,1}
    subjects: list[SpriteSubject]
    background: str                           # background word (may be two-tone pair)

    @property
    def identities(self) -> list[tuple[str, str]]:
        return [s.identity for s in self.subjects]


def shape_stencil(shape: str, size: int) -> torch.Tensor:
    """Binary [size, size] raster of the shape; stamped at integer offsets so
    the sprite's pixel pattern is identical in references and frames."""
    ys, xs = torch.meshgrid(torch.arange(size), torch.arange(size), indexing="ij")
    c = (size - 1) / 2.0
    if shape == "square":
        return torch.ones(size, size)
    if shape == "circle":
        r = size / 2.0
        return (((xs - c) ** 2 + (ys - c) ** 2) <= r * r).float()
    if shape == "triangle":
        # upward triangle: row y spans columns [c - y/2 .. c + y/2]
        half = ys.float() / 2.0
        return ((xs.float() >= c - half) & (xs.float() <= c + half)).float()
    raise ConfigError(f"unknown shape {shape!r}", module="sprites", op="shape_stencil")


def _render_background(config: SpriteConfig, colors: list[str]) -> torch.Tensor:
    frame = torch.empty(3, config.height, config.width)
    primary = torch.tensor(COLOR_RGB[colors[0]]).view(3, 1, 1)
    frame[:] = primary
    if len(colors) == 2:
        second = torch.tensor(COLOR_RGB[colors[1]]).view(3, 1, 1)
        frame[:, :, config.width // 2:] = second
    return frame


def _subject_positions(subject: SpriteSubject, frames: int) -> list[tuple[int, int]]:
    dx, dy = DIRECTION_STEPS[subject.direction]
    x0, y0 = subject.start
    return [(x0 + round(dx * subject.speed * t), y0 + round(dy * subject.speed * t))
            for t in range(frames)]


def _start_bounds(config: SpriteConfig, size: int, direction: str,
                  speed: float) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """Admissible start interval per axis plus the canonical start (the end of
    the interval opposite to the motion, so the sprite traverses the frame)."""
    dx, dy = DIRECTION_STEPS[direction]
    travel = round(speed * (config.frames - 1))
    x_lo = max(0, -dx * travel)
    x_hi = min(config.width - size, config.width - size - dx * travel)
    y_lo = max(0, -dy * travel)
    y_hi = min(config.height - size, config.height - size - dy * travel)
    if x_lo > x_hi or y_lo > y_hi:
        raise ConfigError("trajectory does not fit in the frame", module="sprites",
                          op="generate_sample")
    cx = x_hi if dx < 0 else x_lo if dx > 0 else (x_lo + x_hi) // 2
    cy = y_hi if dy < 0 else y_lo if dy > 0 else (y_lo + y_hi) // 2
    return (x_lo, x_hi), (y_lo, y_hi), (cx, cy)


def _randint(rng: torch.Generator, lo: int, hi: int) -> int:
    """Inclusive uniform integer."""
    if hi <= lo:
        return lo
    return int(torch.randint(lo, hi + 1, (1,), generator=rng).item())


def _choice(rng: torch.Generator, items: tuple[str, ...]) -> str:
    return items[_randint(rng, 0, len(items) - 1)]


def generate_sample(config: SpriteConfig, rng: torch.Generator) -> SpriteScene:
    """Deterministically generate one scene from the generator state."""
    config.validate()
    n = _randint(rng, config.min_subjects, config.max_subjects)
    colors = list(SUBJECT_COLORS)
    picked_colors = []
    for _ in range(n):
        picked_colors.append(colors.pop(_randint(rng, 0, len(colors) - 1)))

    bg_colors = [_choice(rng, BACKGROUND_COLORS)]
    if config.two_tone_prob > 0 and torch.rand((), generator=rng).item() < config.two_tone_prob:
        other = [c for c in BACKGROUND_COLORS if c != bg_colors[0]]
        bg_colors.append(_choice(rng, tuple(other)))
        bg_colors.sort(key=BACKGROUND_COLORS.index)
    bg_word = "-".join(bg_colors)
    assert bg_word in BACKGROUND_WORDS

    for _attempt in range(100):
        subjects = []
        for color in picked_colors:
            shape = _choice(rng, SHAPES)
            direction = _choice(rng, DIRECTIONS)
            speed = config.speed_min + (config.speed_max - config.speed_min) * float(
                torch.rand((), generator=rng).item())
            size = _randint(rng, config.sprite_min, config.sprite_max)
            (x_lo, x_hi), (y_lo, y_hi), (cx, cy) = _start_bounds(config, size, direction, speed)
            j = config.start_jitter
            x0 = min(max(cx + _randint(rng, -j, j), x_lo), x_hi)
            y0 = min(max(cy + _randint(rng, -j, j), y_lo), y_hi)
            subjects.append(SpriteSubject(shape=shape, color=color, direction=direction,
                                          speed=speed, size=size, start=(x0, y0)))
        tracks = [_mask_track(config, s) for s in subjects]
        if _disjoint(tracks):
            break
    else:
        raise ConfigError("could not place non-colliding trajectories in 100 attempts",
                          module="sprites", op="generate_sample")

    background = _render_background(config, bg_colors)
    frames = background.unsqueeze(0).repeat(config.frames, 1, 1, 1)
    for subject, track in zip(subjects, tracks):
        rgb = torch.tensor(COLOR_RGB[subject.color]).view(1, 3, 1, 1)
        frames = frames * (1 - track.unsqueeze(1)) + rgb * track.unsqueeze(1)

    references = []
    for subject in subjects:
        stencil = shape_stencil(subject.shape, subject.size)
        tile = stencil.unsqueeze(0) * torch.tensor(COLOR_RGB[subject.color]).view(3, 1, 1)
        references.append(ReferenceImage(pixels=tile, kind="object", label=subject.color))
    background_ref = ReferenceImage(pixels=background.clone(), kind="background", label=bg_word)

    phrases = [f"the {s.color} {s.shape} moves {s.direction}" for s in subjects]
    caption = " and ".join(phrases) + f" over a {bg_word} background"

    return SpriteScene(video=VideoClip(frames.clamp(0, 1), fps=config.fps),
                       references=references, background_ref=background_ref,
                       caption=caption, gt_masks=tracks, subjects=subjects,
                       background=bg_word)


def _mask_track(config: SpriteConfig, subject: SpriteSubject) -> torch.Tensor:
    stencil = shape_stencil(subject.shape, subject.size)
    track = torch.zeros(config.frames, config.height, config.width)
    for t, (x, y) in enumerate(_subject_positions(subject, config.frames)):
        track[t, y:y + subject.size, x:x + subject.size] = stencil
    return track


def _disjoint(tracks: list[torch.Tensor]) -> bool:
    for i in range(len(tracks)):
        for j in range(i + 1, len(tracks)):
            if (tracks[i] * tracks[j]).any():
                return False
    return True


def sprite_descriptor(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Deterministic region embedding: 8-bin-per-channel color histogram over
    masked pixels plus 4 shape statistics (bbox area fraction, bbox aspect,
    centroid-normalized second moments), L2-normalized.

    The shape block is computed relative to the mask's bounding box, so the
    embedding is invariant to translation and to how tightly the region is
    cropped, and it is invariant to pixels outside the mask. The block is
    scaled by 1/2 so color, not silhouette, dominates the similarity.
    """
    if image.dim() != 3 or mask.dim() != 2 or image.shape[1:] != mask.shape:
        raise ShapeError(f"image {tuple(image.shape)} / mask {tuple(mask.shape)} mismatch",
                         module="sprites", op="sprite_descriptor")
    inside = mask > 0
    count = int(inside.sum().item())
    if count == 0:
        raise EmptyRegionError("descriptor needs a nonempty mask",
                               module="sprites", op="sprite_descriptor")
    pixels = image[:, inside]  # [C, n]
    bins = (pixels.clamp(0.0, 1.0) * 8).long().clamp(max=7)
    hist = torch.zeros(image.shape[0], 8)
    for c in range(image.shape[0]):
        hist[c] = torch.bincount(bins[c], minlength=8).float() / count

    ys, xs = torch.nonzero(inside, as_tuple=True)
    ys = ys.double()
    xs = xs.double()
    bbox_w = float(xs.max() - xs.min() + 1)
    bbox_h = float(ys.max() - ys.min() + 1)
    fill = count / (bbox_w * bbox_h)
    aspect = bbox_w / (bbox_w + bbox_h)
    sigma_x = float(((xs - xs.mean()) ** 2).mean() ** 0.5) / bbox_w
    sigma_y = float(((ys - ys.mean()) ** 2).mean() ** 0.5) / bbox_h
    moments = 0.5 * torch.tensor([fill, aspect, sigma_x, sigma_y], dtype=torch.float32)

    descriptor = torch.cat([hist.reshape(-1), moments])
    return descriptor / descriptor.norm()


def color_region(frame: torch.Tensor, color_rgb: tuple[float, float, float],
                 tol: float = 0.35) -> torch.Tensor:
    """Binary mask of pixels within L2 distance `tol` of the color."""
    target = torch.tensor(color_rgb).view(3, 1, 1)
    dist = ((frame - target) ** 2).sum(dim=0).sqrt()
    return (dist <= tol).float()


def save_scene(scene: SpriteScene, directory: str | Path) -> Path:
    """Export video + masks as MTEN and a JSON sidecar with the metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mten.write_tensor(directory / "video.mten", scene.video.data)
    mask_files = []
    for k, track in enumerate(scene.gt_masks):
        name = f"mask_{k}.mten"
        mten.write_tensor(directory / name, track)
        mask_files.append(name)
    ref_files = []
    for k, ref in enumerate(scene.references):
        name = f"ref_{k}.mten"
        mten.write_tensor(directory / name, ref.pixels)
        ref_files.append(name)
    mten.write_tensor(directory / "background.mten", scene.background_ref.pixels)
    sidecar = {
        "caption": scene.caption,
        "fps": scene.video.fps,
        "background": scene.background,
        "labels": [r.label for r in scene.references],
        "identities": [list(i) for i in scene.identities],
        "subjects": [
            {"shape": s.shape, "color": s.color, "direction": s.direction,
             "speed": s.speed, "size": s.size, "start": list(s.start)}
            for s in scene.subjects
        ],
        "masks": mask_files,
        "references": ref_files,
    }
    (directory / "scene.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return directory


def load_scene(directory: str | Path) -> SpriteScene:
    directory = Path(directory)
    sidecar = json.loads((directory / "scene.json").read_text())
    video = VideoClip(mten.read_tensor(directory / "video.mten"), fps=sidecar["fps"])
    subjects = [SpriteSubject(shape=s["shape"], color=s["color"], direction=s["direction"],
                              speed=s["speed"], size=s["size"], start=tuple(s["start"]))
                for s in sidecar["subjects"]]
    references = [
        ReferenceImage(pixels=mten.read_tensor(directory / name), kind="object", label=label)
        for name, label in zip(sidecar["references"], sidecar["labels"])
    ]
    background_ref = ReferenceImage(pixels=mten.read_tensor(directory / "background.mten"),
                                    kind="background", label=sidecar["background"])
    gt_masks = [mten.read_tensor(directory / name) for name in sidecar["masks"]]
    return SpriteScene(video=video, references=references, background_ref=background_ref,
                       caption=sidecar["caption"], gt_masks=gt_masks, subjects=subjects,
                       background=sidecar["background"])

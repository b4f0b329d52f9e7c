"""Reference canvas composition and region masks.

References are placed at pairwise-disjoint rectangles on a blank (zero)
canvas; the union mask and the per-subject masks are exact indicators of
those rectangles. Placement never overlaps: the layout engine raises instead
of blending.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import PackingError, ShapeError

Rect = tuple[int, int, int, int]  # x, y, w, h


@dataclass
class ReferenceImage:
    """Pixel tile [C, h, w] in [0,1] with its subject word label."""

    pixels: torch.Tensor
    kind: str  # face | object | background
    label: str

    def __post_init__(self) -> None:
        if self.pixels.dim() != 3:
            raise ShapeError(f"reference must be [C, h, w], got {tuple(self.pixels.shape)}",
                             module="masking", op="ReferenceImage")
        if self.kind not in ("face", "object", "background"):
            raise ShapeError(f"unknown reference kind {self.kind!r}",
                             module="masking", op="ReferenceImage")
        if not self.label:
            raise ShapeError("reference label must be non-empty",
                             module="masking", op="ReferenceImage")

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]  # h, w


def _rects_overlap(a: Rect, b: Rect) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


@dataclass
class CanvasLayout:
    """Disjoint in-bounds placements, one rectangle per reference, in order."""

    canvas: tuple[int, int]  # H, W
    placements: list[Rect]

    def __post_init__(self) -> None:
        h, w = self.canvas
        for i, (x, y, rw, rh) in enumerate(self.placements):
            if x < 0 or y < 0 or x + rw > w or y + rh > h:
                raise ShapeError(f"placement {i} {(x, y, rw, rh)} leaves the {h}x{w} canvas",
                                 module="masking", op="CanvasLayout")
        for i in range(len(self.placements)):
            for j in range(i + 1, len(self.placements)):
                if _rects_overlap(self.placements[i], self.placements[j]):
                    raise ShapeError(f"placements {i} and {j} overlap",
                                     module="masking", op="CanvasLayout")

    def to_text(self) -> str:
        return "".join(f"{k} {x} {y} {w} {h}\n"
                       for k, (x, y, w, h) in enumerate(self.placements))

    @classmethod
    def from_text(cls, text: str, canvas: tuple[int, int]) -> "CanvasLayout":
        rects: list[Rect] = []
        for line in text.splitlines():
            if not line.strip():
                continue
            _, x, y, w, h = (int(v) for v in line.split())
            rects.append((x, y, w, h))
        return cls(canvas=canvas, placements=rects)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


@dataclass
class RegionMaskSet:
    """Union mask [H, W] plus one binary mask per subject, all {0,1} float."""

    union: torch.Tensor
    per_subject: list[torch.Tensor]


def layout_references(
    refs: list[ReferenceImage],
    canvas: tuple[int, int],
    rng: torch.Generator | None = None,
    shuffle: bool = False,
    max_attempts: int = 200,
) -> CanvasLayout:
    """Place references on the canvas without overlap.

    shuffle=False packs left-to-right, top-to-bottom (row height = tallest
    reference in the row). shuffle=True draws positions uniformly over the
    in-bounds range and rejects overlapping draws; after `max_attempts`
    whole-layout restarts it raises PackingError rather than overlap.
    """
    ch, cw = canvas
    for ref in refs:
        rh, rw = ref.size
        if rh > ch or rw > cw:
            raise PackingError(f"reference {ref.label!r} ({rh}x{rw}) exceeds canvas {ch}x{cw}")
    if sum(r.size[0] * r.size[1] for r in refs) > ch * cw:
        raise PackingError("total reference area exceeds canvas area")

    if not shuffle:
        placements: list[Rect] = []
        x = y = row_h = 0
        for ref in refs:
            rh, rw = ref.size
            if x + rw > cw:
                x = 0
                y += row_h
                row_h = 0
            if y + rh > ch:
                raise PackingError("row packing ran out of canvas space")
            placements.append((x, y, rw, rh))
            x += rw
            row_h = max(row_h, rh)
        return CanvasLayout(canvas=canvas, placements=placements)

    if rng is None:
        raise PackingError("shuffled layout requires a seeded generator")
    for _ in range(max_attempts):
        placements = []
        ok = True
        for ref in refs:
            rh, rw = ref.size
            placed = False
            for _ in range(50):
                x = int(torch.randint(0, cw - rw + 1, (1,), generator=rng).item())
                y = int(torch.randint(0, ch - rh + 1, (1,), generator=rng).item())
                rect = (x, y, rw, rh)
                if all(not _rects_overlap(rect, p) for p in placements):
                    placements.append(rect)
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if ok:
            return CanvasLayout(canvas=canvas, placements=placements)
    raise PackingError(f"no disjoint placement found in {max_attempts} restarts")


def compose_canvas(refs: list[ReferenceImage], layout: CanvasLayout,
                   channels: int = 3) -> torch.Tensor:
    """Paste each reference at its rectangle on a zero canvas -> [C, H, W]."""
    if len(refs) != len(layout.placements):
        raise ShapeError(f"{len(refs)} references but {len(layout.placements)} placements",
                         module="masking", op="compose_canvas")
    h, w = layout.canvas
    if refs:
        channels = refs[0].pixels.shape[0]
    canvas = torch.zeros(channels, h, w)
    for ref, (x, y, rw, rh) in zip(refs, layout.placements):
        if ref.size != (rh, rw):
            raise ShapeError(f"reference {ref.label!r} size {ref.size} != placement {(rh, rw)}",
                             module="masking", op="compose_canvas")
        canvas[:, y:y + rh, x:x + rw] = ref.pixels
    return canvas


def build_masks(layout: CanvasLayout) -> RegionMaskSet:
    h, w = layout.canvas
    per_subject = []
    union = torch.zeros(h, w)
    for x, y, rw, rh in layout.placements:
        mask = torch.zeros(h, w)
        mask[y:y + rh, x:x + rw] = 1.0
        per_subject.append(mask)
        union = torch.maximum(union, mask)
    return RegionMaskSet(union=union, per_subject=per_subject)


def spatial_downsample(mask: torch.Tensor, spatial_factor: int) -> torch.Tensor:
    """Any-coverage reduction [H, W] -> [H/s, W/s]: a cell is 1 if any of its
    s x s pixels is 1."""
    h, w = mask.shape
    s = spatial_factor
    if h % s != 0 or w % s != 0:
        raise ShapeError(f"mask size {h}x{w} not divisible by spatial factor {s}",
                         module="masking", op="downsample_mask")
    return mask.reshape(h // s, s, w // s, s).amax(dim=(1, 3))


def downsample_mask(mask: torch.Tensor, spatial_factor: int,
                    latent_frames: int, mask_channels: int) -> torch.Tensor:
    """Mask channels for conditioning: any-coverage spatial reduction,
    replicated over `latent_frames` frames and `mask_channels` channels
    -> [T, C_m, h, w]. Values stay in {0, 1}.
    """
    coarse = spatial_downsample(mask, spatial_factor)
    h, w = coarse.shape
    return coarse.expand(latent_frames, mask_channels, h, w).clone()


def downsample_mask_set(masks: RegionMaskSet, spatial_factor: int,
                        latent_frames: int, mask_channels: int) -> RegionMaskSet:
    return RegionMaskSet(
        union=downsample_mask(masks.union, spatial_factor, latent_frames, mask_channels),
        per_subject=[downsample_mask(m, spatial_factor, latent_frames, mask_channels)
                     for m in masks.per_subject],
    )

"""Exactly invertible latent codec.

A fixed space-to-depth / frame-grouping rearrangement stands in for a learned
video autoencoder: pixels are moved, never mixed, so encode/decode round-trips
are bit-exact and every downstream conditioning shape contract stays testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from einops import rearrange

from .errors import ShapeError


def _check_video_data(data: torch.Tensor) -> None:
    if data.dim() != 4:
        raise ShapeError(f"video tensor must be [T, C, H, W], got {tuple(data.shape)}",
                         module="latents", op="VideoClip")
    if data.shape[0] < 1:
        raise ShapeError("video needs at least one frame", module="latents", op="VideoClip")
    if not torch.isfinite(data).all():
        raise ShapeError("video contains non-finite values", module="latents", op="VideoClip")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ShapeError("video values must lie in [0, 1]", module="latents", op="VideoClip")


@dataclass
class VideoClip:
    """Pixel video [T, C, H, W], float32 values in [0, 1]. fps is metadata."""

    data: torch.Tensor
    fps: float = 8.0

    def __post_init__(self) -> None:
        self.data = self.data.to(torch.float32)
        _check_video_data(self.data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])  # type: ignore[return-value]


@dataclass
class LatentClip:
    """Latent video [T, C, h, w] plus the factors needed to invert it."""

    data: torch.Tensor
    spatial_factor: int = 2
    temporal_factor: int = 1
    pixel_channels: int = 3
    fps: float = 8.0

    def __post_init__(self) -> None:
        if self.data.dim() != 4:
            raise ShapeError(f"latent tensor must be [T, C, h, w], got {tuple(self.data.shape)}",
                             module="latents", op="LatentClip")


@dataclass(frozen=True)
class LatentCodec:
    """Space-to-depth by `spatial_factor`, frame grouping by `temporal_factor`.

    Defaults (2, 1) keep toy resolutions divisible and make the first latent
    frame correspond to exactly the first pixel frame.
    """

    spatial_factor: int = 2
    temporal_factor: int = 1

    def latent_channels(self, pixel_channels: int = 3) -> int:
        return pixel_channels * self.spatial_factor**2 * self.temporal_factor

    def latent_shape(self, video_shape: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
        t, c, h, w = video_shape
        s, g = self.spatial_factor, self.temporal_factor
        return (t // g, self.latent_channels(c), h // s, w // s)

    def encode(self, video: VideoClip) -> LatentClip:
        t, c, h, w = video.data.shape
        s, g = self.spatial_factor, self.temporal_factor
        if h % s != 0 or w % s != 0:
            raise ShapeError(f"frame size {h}x{w} not divisible by spatial factor {s}",
                             module="latents", op="encode")
        if t % g != 0:
            raise ShapeError(f"frame count {t} not divisible by temporal factor {g}",
                             module="latents", op="encode")
        latent = rearrange(video.data, "(t g) c (h p) (w q) -> t (g c p q) h w", g=g, p=s, q=s)
        return LatentClip(latent, spatial_factor=s, temporal_factor=g,
                          pixel_channels=c, fps=video.fps)

    def decode(self, latent: LatentClip) -> VideoClip:
        s, g = self.spatial_factor, self.temporal_factor
        c_in = latent.pixel_channels
        channels = latent.data.shape[1]
        if channels != c_in * s**2 * g:
            raise ShapeError(
                f"latent has {channels} channels, not divisible into "
                f"{c_in} pixel channels x {s}^2 x {g}",
                module="latents", op="decode")
        pixels = rearrange(latent.data, "t (g c p q) h w -> (t g) c (h p) (w q)", g=g, c=c_in, p=s, q=s)
        return VideoClip(pixels, fps=latent.fps)

"""Denoiser input assembly.

The denoiser consumes a channel concatenation of three parts with a frozen
order: noised video latents Z, reference latents (the encoded composite,
zero-padded along time), and the replicated mask channels. The first
projection of the network depends on this order, so it is part of the
contract here, not a convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError
from .latents import LatentCodec, VideoClip


@dataclass
class LatentBlock:
    """The three conditioning parts and their concatenation."""

    z: torch.Tensor            # [T, C, h, w] noised video latents
    f_comp: torch.Tensor       # [T, C, h, w] reference latents
    m_region: torch.Tensor     # [T, C_m, h, w] mask channels, {0,1}
    f_input: torch.Tensor      # [T, 2C + C_m, h, w]


def encode_composite(codec: LatentCodec, composite: torch.Tensor,
                     total_frames: int) -> torch.Tensor:
    """Encode the composite reference image as a video latent.

    The composite occupies frame 0; frames 1..total_frames-1 are zero, so a
    lossless codec propagates exact zeros into the later latent frames.
    """
    if composite.dim() != 3:
        raise ShapeError(f"composite must be [C, H, W], got {tuple(composite.shape)}",
                         module="conditioning", op="encode_composite")
    c, h, w = composite.shape
    padded = torch.zeros(total_frames, c, h, w)
    padded[0] = composite
    return codec.encode(VideoClip(padded)).data


def assemble_input(z: torch.Tensor, f_comp: torch.Tensor,
                   m_region: torch.Tensor) -> torch.Tensor:
    """Concatenate (Z, F_comp, M_region) along channels, in that order."""
    for name, tensor in (("Z", z), ("F_comp", f_comp), ("M_region", m_region)):
        if tensor.dim() != 4:
            raise ShapeError(f"{name} must be [T, C, h, w], got {tuple(tensor.shape)}",
                             module="conditioning", op="assemble_input")
    if f_comp.shape != z.shape:
        raise ShapeError(f"F_comp shape {tuple(f_comp.shape)} != Z shape {tuple(z.shape)}",
                         module="conditioning", op="assemble_input")
    t, _, h, w = z.shape
    if m_region.shape[0] != t or m_region.shape[2:] != (h, w):
        raise ShapeError(
            f"M_region shape {tuple(m_region.shape)} does not share T/h/w with Z {tuple(z.shape)}",
            module="conditioning", op="assemble_input")
    return torch.cat((z, f_comp, m_region), dim=1)


def make_latent_block(z: torch.Tensor, f_comp: torch.Tensor,
                      m_region: torch.Tensor) -> LatentBlock:
    return LatentBlock(z=z, f_comp=f_comp, m_region=m_region,
                       f_input=assemble_input(z, f_comp, m_region))


def split_input(f_input: torch.Tensor, latent_channels: int,
                mask_channels: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Inverse of assemble_input; slicing is lossless."""
    c, cm = latent_channels, mask_channels
    if f_input.shape[1] != 2 * c + cm:
        raise ShapeError(f"expected {2 * c + cm} channels, got {f_input.shape[1]}",
                         module="conditioning", op="split_input")
    return f_input[:, :c], f_input[:, c:2 * c], f_input[:, 2 * c:]

"""Velocity-prediction network with subject-disentangling value injection.

A small factorized transformer over latent tokens: per-frame spatial
attention, per-position temporal attention, cross-attention to caption
tokens, and a feed-forward, repeated for a few blocks. After every
cross-attention the value embeddings of the subject labels are added into
the first-frame tokens inside their canvas regions, binding each label to
its own spatial support.

Value embeddings live in the text dimension D; they are mapped into the
channel dimension of whatever tensor they are injected into by a learned
linear projection with seeded orthogonal init (the addition itself is
dimensionless only when D happens to match).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import nn
from torch.nn import functional as F

from .errors import NonFiniteError, ShapeError, UnresolvedLabelError

SUBJECT_COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan")
SHAPES = ("circle", "square", "triangle")
DIRECTIONS = ("left", "right", "up", "down")
BACKGROUND_WORDS = ("white", "black", "gray", "white-black", "white-gray", "black-gray")
TEMPLATE_WORDS = ("the", "moves", "over", "a", "and", "background")

DEFAULT_VOCAB: tuple[str, ...] = (
    ("<pad>", "<unk>") + TEMPLATE_WORDS + SUBJECT_COLORS + SHAPES + DIRECTIONS
    + BACKGROUND_WORDS
)


def tokenize(caption: str, vocab: Sequence[str] = DEFAULT_VOCAB) -> list[int]:
    index = {w: i for i, w in enumerate(vocab)}
    unk = index["<unk>"]
    return [index.get(word, unk) for word in caption.lower().split()]


@dataclass
class TextCondition:
    """Caption, its subject word labels, and their token positions.

    `token_embeddings` is a snapshot taken by the model that encoded the
    caption; the network re-embeds from `tokens` on every forward pass so
    gradients reach the embedding table.
    """

    caption: str
    subject_labels: list[str]
    tokens: list[int]
    label_token_index: dict[str, int]
    token_embeddings: torch.Tensor | None = None


def resolve_labels(caption: str, subject_labels: Sequence[str],
                   vocab: Sequence[str] = DEFAULT_VOCAB) -> dict[str, int]:
    """Map each label to the unique caption token position holding it."""
    words = caption.lower().split()
    positions: dict[str, int] = {}
    for label in subject_labels:
        hits = [i for i, w in enumerate(words) if w == label.lower()]
        if not hits:
            raise UnresolvedLabelError(f"label {label!r} not present in caption {caption!r}")
        if len(hits) > 1:
            raise UnresolvedLabelError(f"label {label!r} is ambiguous in caption {caption!r}")
        positions[label] = hits[0]
    return positions


def make_text_condition(caption: str, subject_labels: Sequence[str],
                        vocab: Sequence[str] = DEFAULT_VOCAB) -> TextCondition:
    """TextCondition without an embedding snapshot (the network embeds from
    token ids on every forward)."""
    return TextCondition(caption=caption, subject_labels=list(subject_labels),
                         tokens=tokenize(caption, vocab),
                         label_token_index=resolve_labels(caption, subject_labels, vocab))


@dataclass
class ValueSet:
    """Per-subject value embeddings at one cross-attention layer."""

    values: list[torch.Tensor]


@dataclass
class Guidance:
    """Per-sample extra conditioning handed through the flow machinery."""

    text: TextCondition
    subject_masks: list[torch.Tensor] | None = None  # latent-resolution [h, w]


def inject_subjects(z0: torch.Tensor, values: Sequence[torch.Tensor],
                    masks: Sequence[torch.Tensor], alpha: float) -> torch.Tensor:
    """Masked additive injection z0 + alpha * sum_k mask_k * v_k.

    z0 is [1, C, h, w] (or [C, h, w]); each value vector must already live in
    C dimensions; masks are binary [h, w]. Positions outside every mask are
    returned unchanged.
    """
    squeeze = z0.dim() == 3
    z = z0.unsqueeze(0) if squeeze else z0
    if z.dim() != 4:
        raise ShapeError(f"z0 must be [1, C, h, w], got {tuple(z0.shape)}",
                         module="denoiser", op="inject_subjects")
    if len(values) != len(masks):
        raise ShapeError(f"{len(values)} values but {len(masks)} masks",
                         module="denoiser", op="inject_subjects")
    c, h, w = z.shape[1:]
    out = z.clone()
    if alpha != 0.0:
        for k, (v, m) in enumerate(zip(values, masks)):
            if m.shape != (h, w):
                raise ShapeError(f"mask {k} shape {tuple(m.shape)} != latent grid {(h, w)}",
                                 module="denoiser", op="inject_subjects")
            if v.shape != (c,):
                raise ShapeError(f"value {k} has dim {tuple(v.shape)}, expected ({c},)",
                                 module="denoiser", op="inject_subjects")
            out = out + alpha * m.unsqueeze(0).unsqueeze(0) * v.view(1, c, 1, 1)
    return out.squeeze(0) if squeeze else out


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1))
    angles = t[:, None] * freqs[None, :]
    return torch.cat([angles.sin(), angles.cos()], dim=-1)


class Attention(nn.Module):
    """Multi-head attention; self-attention when kv_dim is None."""

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None,
                 inner_dim: int | None = None):
        super().__init__()
        inner = inner_dim or dim
        if inner % heads != 0:
            raise ShapeError(f"attention dim {inner} not divisible by {heads} heads",
                             module="denoiser", op="Attention")
        self.heads = heads
        self.head_dim = inner // heads
        self.q = nn.Linear(dim, inner, bias=False)
        self.k = nn.Linear(kv_dim or dim, inner, bias=False)
        self.v = nn.Linear(kv_dim or dim, inner, bias=False)
        self.out = nn.Linear(inner, dim, bias=False)

    def forward(self, x: torch.Tensor, kv: torch.Tensor | None = None,
                key_mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: [B, N, dim]; kv: [B, M, kv_dim]; key_mask: [B, M] True = real key
        kv = x if kv is None else kv
        b, n, _ = x.shape
        m = kv.shape[1]
        q = self.q(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(kv).view(b, m, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(kv).view(b, m, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, self.heads * self.head_dim)
        return self.out(out)


class Block(nn.Module):
    def __init__(self, width: int, heads: int, text_dim: int, ff_mult: int):
        super().__init__()
        self.norm_spatial = nn.LayerNorm(width)
        self.spatial = Attention(width, heads)
        self.norm_temporal = nn.LayerNorm(width)
        self.temporal = Attention(width, heads)
        self.norm_cross = nn.LayerNorm(width)
        self.cross = Attention(width, heads, kv_dim=text_dim, inner_dim=text_dim)
        self.inject_proj = nn.Linear(text_dim, width, bias=False)
        self.norm_ff = nn.LayerNorm(width)
        # timestep scale/shift for the FF branch; zero-init = identity
        self.time_mod = nn.Linear(width, 2 * width)
        self.ff = nn.Sequential(nn.Linear(width, ff_mult * width), nn.GELU(),
                                nn.Linear(ff_mult * width, width))


@dataclass
class ModelConfig:
    latent_channels: int = 12        # C of the latent codec
    mask_channels: int = 4           # C_m
    blocks: int = 2
    width: int = 64
    heads: int = 4
    text_dim: int = 32               # D: token/value embedding dimension
    ff_mult: int = 2
    alpha: float = 1.0
    vocab: tuple[str, ...] = field(default=DEFAULT_VOCAB)

    @property
    def input_channels(self) -> int:
        return 2 * self.latent_channels + self.mask_channels


class VelocityNet(nn.Module):
    """u(F_input, condition, t) -> velocity over the Z latents."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(len(config.vocab), config.text_dim)
        self.in_proj = nn.Linear(config.input_channels, config.width)
        self.time_mlp = nn.Sequential(nn.Linear(config.width, config.width), nn.SiLU(),
                                      nn.Linear(config.width, config.width))
        self.blocks = nn.ModuleList(
            Block(config.width, config.heads, config.text_dim, config.ff_mult)
            for _ in range(config.blocks))
        self.out_norm = nn.LayerNorm(config.width)
        self.out_mod = nn.Linear(config.width, 2 * config.width)
        self.out_proj = nn.Linear(config.width, config.latent_channels)
        # direct input->output path; layer norms erase token amplitude, and
        # the velocity target contains -Z verbatim
        self.skip = nn.Linear(config.input_channels, config.latent_channels, bias=False)
        # Value vectors live in D; project into latent channels for the
        # standalone first-frame injection form.
        self.value_to_latent = nn.Linear(config.text_dim, config.latent_channels, bias=False)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def seeded_init(self, rng: torch.Generator) -> "VelocityNet":
        """Re-initialize every parameter from `rng`: orthogonal injection
        projections, zeroed output head, unit layer norms."""
        for name, module in sorted(self.named_modules(), key=lambda kv: kv[0]):
            if isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, std=0.5, generator=rng)
            elif isinstance(module, nn.Linear):
                if name == "out_proj" or name.endswith("time_mod") or name == "out_mod":
                    nn.init.zeros_(module.weight)
                    nn.init.zeros_(module.bias)
                    continue
                if name == "skip":
                    nn.init.zeros_(module.weight)
                    continue
                if name.endswith("inject_proj") or name == "value_to_latent":
                    nn.init.orthogonal_(module.weight, generator=rng)
                    continue
                nn.init.kaiming_uniform_(module.weight, a=math.sqrt(5), generator=rng)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
        return self

    def encode_text(self, caption: str, subject_labels: Sequence[str]) -> TextCondition:
        tokens = tokenize(caption, self.config.vocab)
        label_index = resolve_labels(caption, subject_labels, self.config.vocab)
        with torch.no_grad():
            emb = self.embed(torch.tensor(tokens, dtype=torch.long))
        return TextCondition(caption=caption, subject_labels=list(subject_labels),
                             tokens=tokens, label_token_index=label_index,
                             token_embeddings=emb)

    def bind_subject_values(self, condition: TextCondition, layer: int) -> ValueSet:
        """Value-projection outputs of each subject label's token embedding
        at cross-attention layer `layer`."""
        if condition.token_embeddings is None:
            raise ShapeError("condition has no token embeddings; use encode_text",
                             module="denoiser", op="bind_subject_values")
        v_proj = self.blocks[layer].cross.v
        values = []
        for label in condition.subject_labels:
            if label not in condition.label_token_index:
                raise UnresolvedLabelError(f"label {label!r} missing from label_token_index")
            pos = condition.label_token_index[label]
            values.append(v_proj(condition.token_embeddings[pos]))
        return ValueSet(values=values)

    def _text_batch(self, conds: Sequence[Guidance], dtype: torch.dtype
                    ) -> tuple[torch.Tensor, torch.Tensor]:
        lengths = [len(g.text.tokens) for g in conds]
        longest = max(lengths)
        ids = torch.zeros(len(conds), longest, dtype=torch.long)
        mask = torch.zeros(len(conds), longest, dtype=torch.bool)
        for i, g in enumerate(conds):
            ids[i, :lengths[i]] = torch.tensor(g.text.tokens, dtype=torch.long)
            mask[i, :lengths[i]] = True
        return self.embed(ids).to(dtype), mask

    def velocity(self, f_input: torch.Tensor, conds: Sequence[Guidance],
                 t: torch.Tensor) -> torch.Tensor:
        """Batched forward: f_input [B, T, 2C+C_m, h, w], t [B] -> [B, T, C, h, w]."""
        cfg = self.config
        if f_input.dim() != 5:
            raise ShapeError(f"f_input must be [B, T, C_in, h, w], got {tuple(f_input.shape)}",
                             module="denoiser", op="predict_velocity")
        b, frames, channels, h, w = f_input.shape
        if channels != cfg.input_channels:
            raise ShapeError(
                f"f_input has {channels} channels, expected 2*{cfg.latent_channels}"
                f" + {cfg.mask_channels} = {cfg.input_channels}",
                module="denoiser", op="predict_velocity")
        if len(conds) != b:
            raise ShapeError(f"{len(conds)} conditions for batch of {b}",
                             module="denoiser", op="predict_velocity")
        dtype = f_input.dtype

        # [B, T, h*w, width] token grid
        x = self.in_proj(f_input.permute(0, 1, 3, 4, 2).reshape(b, frames, h * w, channels))
        t_feat = self.time_mlp(sinusoidal_embedding(t.to(dtype), cfg.width))
        x = x + t_feat[:, None, None, :]
        text, text_mask = self._text_batch(conds, dtype)

        inject_rows = self._injection_rows(conds, h, w, dtype)
        for block in self.blocks:
            y = block.norm_spatial(x).reshape(b * frames, h * w, cfg.width)
            x = x + block.spatial(y).reshape(b, frames, h * w, cfg.width)
            y = block.norm_temporal(x).permute(0, 2, 1, 3).reshape(b * h * w, frames, cfg.width)
            y = block.temporal(y).reshape(b, h * w, frames, cfg.width).permute(0, 2, 1, 3)
            x = x + y
            y = block.norm_cross(x).reshape(b, frames * h * w, cfg.width)
            y = block.cross(y, kv=text, key_mask=text_mask)
            x = x + y.reshape(b, frames, h * w, cfg.width)
            if inject_rows is not None:
                x = self._apply_injection(x, block, conds, inject_rows, text)
            scale, shift = block.time_mod(t_feat).chunk(2, dim=-1)
            y = block.norm_ff(x) * (1 + scale[:, None, None, :]) + shift[:, None, None, :]
            x = x + block.ff(y)

        scale, shift = self.out_mod(t_feat).chunk(2, dim=-1)
        out = self.out_norm(x) * (1 + scale[:, None, None, :]) + shift[:, None, None, :]
        out = self.out_proj(out)
        out = out + self.skip(f_input.permute(0, 1, 3, 4, 2).reshape(b, frames, h * w, channels))
        out = out.reshape(b, frames, h, w, cfg.latent_channels).permute(0, 1, 4, 2, 3)
        if not torch.isfinite(out).all():
            raise NonFiniteError("non-finite activation in velocity output",
                                 module="denoiser", op="predict_velocity")
        return out

    def _injection_rows(self, conds: Sequence[Guidance], h: int, w: int,
                        dtype: torch.dtype) -> list[list[tuple[int, torch.Tensor]]] | None:
        """Per sample: (token position, flat first-frame mask) per subject."""
        if self.config.alpha == 0.0 or all(g.subject_masks is None for g in conds):
            return None
        rows: list[list[tuple[int, torch.Tensor]]] = []
        for g in conds:
            entries: list[tuple[int, torch.Tensor]] = []
            if g.subject_masks is not None:
                if len(g.subject_masks) > len(g.text.subject_labels):
                    raise ShapeError("more subject masks than labels",
                                     module="denoiser", op="predict_velocity")
                for label, mask in zip(g.text.subject_labels, g.subject_masks):
                    if mask.shape != (h, w):
                        raise ShapeError(
                            f"subject mask shape {tuple(mask.shape)} != latent grid {(h, w)}",
                            module="denoiser", op="predict_velocity")
                    entries.append((g.text.label_token_index[label],
                                    mask.reshape(h * w).to(dtype)))
            rows.append(entries)
        return rows

    def _apply_injection(self, x: torch.Tensor, block: Block,
                         conds: Sequence[Guidance],
                         rows: list[list[tuple[int, torch.Tensor]]],
                         text: torch.Tensor) -> torch.Tensor:
        alpha = self.config.alpha
        add = torch.zeros_like(x[:, 0])
        for i, entries in enumerate(rows):
            for pos, flat_mask in entries:
                value = block.cross.v(text[i, pos])
                add[i] = add[i] + flat_mask[:, None] * block.inject_proj(value)[None, :]
        x = x.clone()
        x[:, 0] = x[:, 0] + alpha * add
        return x

    def predict_velocity(self, f_input: torch.Tensor, guidance: Guidance,
                         t: float) -> torch.Tensor:
        """Single-sample convenience: [T, 2C+C_m, h, w] -> [T, C, h, w]."""
        dtype = f_input.dtype
        return self.velocity(f_input.unsqueeze(0), [guidance],
                             torch.tensor([t], dtype=dtype))[0]


def build_model(config: ModelConfig, seed: int) -> VelocityNet:
    torch.manual_seed(seed)
    model = VelocityNet(config)
    return model.seeded_init(torch.Generator().manual_seed(seed))

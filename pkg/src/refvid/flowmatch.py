"""Flow-matching trajectory, training loss, and Euler sampling.

The trajectory is the straight line x_t = t*x1 + (1-t)*x0 with constant
velocity x1 - x0. Training regresses that velocity; sampling integrates the
learned field from pure noise (t=0) to data (t=1) with a fixed Euler step.
Conditioning channels are reassembled at every step but never integrated:
only Z evolves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import torch

from .conditioning import assemble_input
from .errors import DomainError, NonFiniteError, ShapeError


class VelocityModel(Protocol):
    """Batched velocity predictor u(F_input, cond, t)."""

    def velocity(self, f_input: torch.Tensor, conds: Sequence[Any],
                 t: torch.Tensor) -> torch.Tensor: ...


@dataclass
class FlowSample:
    """One training example: clean latents plus its fixed conditioning."""

    x1: torch.Tensor           # [T, C, h, w] clean (data) latents
    f_comp: torch.Tensor       # [T, C, h, w] reference latents
    m_region: torch.Tensor     # [T, C_m, h, w] mask channels
    cond: Any = None           # opaque extra condition (text, subject masks)


@dataclass
class FlowState:
    x0: torch.Tensor
    x1: torch.Tensor
    t: float
    x_t: torch.Tensor
    v_t: torch.Tensor


def interpolate(x0: torch.Tensor, x1: torch.Tensor, t: float) -> torch.Tensor:
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 {tuple(x0.shape)} and x1 {tuple(x1.shape)} differ",
                         module="flowmatch", op="interpolate")
    if not 0.0 <= float(t) <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]", module="flowmatch", op="interpolate")
    t = float(t)
    return t * x1 + (1.0 - t) * x0


def target_velocity(x0: torch.Tensor, x1: torch.Tensor) -> torch.Tensor:
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 {tuple(x0.shape)} and x1 {tuple(x1.shape)} differ",
                         module="flowmatch", op="target_velocity")
    return x1 - x0


def make_flow_state(x0: torch.Tensor, x1: torch.Tensor, t: float) -> FlowState:
    return FlowState(x0=x0, x1=x1, t=float(t),
                     x_t=interpolate(x0, x1, t), v_t=target_velocity(x0, x1))


def _derive_seed(base: int, index: int) -> int:
    # Splitmix-style stable mix; per-sample draws are order-independent.
    x = (base + 0x9E3779B97F4A7C15 * (index + 1)) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (x ^ (x >> 31)) & 0x7FFFFFFFFFFFFFFF


def fm_loss(model: VelocityModel, batch: Sequence[FlowSample],
            rng: torch.Generator) -> torch.Tensor:
    """Mean squared velocity error over the batch.

    t ~ U[0,1] and x0 ~ N(0,I) are drawn per sample from generators derived
    from `rng`, so the value does not depend on evaluation order.
    """
    if not batch:
        raise ShapeError("empty batch", module="flowmatch", op="fm_loss")
    base = int(torch.randint(0, 2**62, (1,), generator=rng).item())
    dtype = batch[0].x1.dtype
    xs, vs, ts = [], [], []
    for i, sample in enumerate(batch):
        sub = torch.Generator().manual_seed(_derive_seed(base, i))
        x0 = torch.randn(sample.x1.shape, generator=sub, dtype=dtype)
        t = float(torch.rand((), generator=sub).item())
        xs.append(assemble_input(interpolate(x0, sample.x1, t), sample.f_comp,
                                 sample.m_region))
        vs.append(target_velocity(x0, sample.x1))
        ts.append(t)
    f_input = torch.stack(xs)
    target = torch.stack(vs)
    pred = model.velocity(f_input, [s.cond for s in batch], torch.tensor(ts, dtype=dtype))
    if pred.shape != target.shape:
        raise ShapeError(f"model returned {tuple(pred.shape)}, expected {tuple(target.shape)}",
                         module="flowmatch", op="fm_loss")
    loss = torch.mean((pred - target) ** 2)
    if not torch.isfinite(loss):
        raise NonFiniteError("flow-matching loss is not finite",
                             module="flowmatch", op="fm_loss")
    return loss


def sample(model: VelocityModel, f_comp: torch.Tensor, m_region: torch.Tensor,
           cond: Any, steps: int, rng: torch.Generator) -> torch.Tensor:
    """Euler-integrate the velocity field from noise (t=0) to data (t=1).

    F_comp and M_region are held fixed across steps; only the Z slice of the
    input evolves. Deterministic given the generator state.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}",
                          module="flowmatch", op="sample")
    x = torch.randn(f_comp.shape, generator=rng, dtype=f_comp.dtype)
    dt = 1.0 / steps
    for i in range(steps):
        t = torch.tensor([i * dt], dtype=f_comp.dtype)
        f_input = assemble_input(x, f_comp, m_region).unsqueeze(0)
        with torch.no_grad():
            v = model.velocity(f_input, [cond], t)[0]
        x = x + dt * v
        if not torch.isfinite(x).all():
            raise NonFiniteError(f"state became non-finite at step {i + 1}/{steps}",
                                 module="flowmatch", op="sample")
    return x

"""Built-in sanity checks runnable from the CLI.

Each check exercises one small documented behavior with a hand-computable
expected value. `refvid selftest` runs them all and prints one line each.
"""

from __future__ import annotations

import torch

from . import datapipe, flowmatch, masking, metrics
from .conditioning import assemble_input, encode_composite, split_input
from .denoiser import Guidance, ModelConfig, VelocityNet, build_model, inject_subjects, make_text_condition
from .latents import LatentClip, LatentCodec, VideoClip
from .sprites import SpriteConfig, generate_sample, sprite_descriptor


def _assert(condition: bool, message: str) -> None:
    if not condition:
        raise AssertionError(message)


def check_encode_shape() -> None:
    codec = LatentCodec(2, 1)
    latent = codec.encode(VideoClip(torch.rand(1, 3, 8, 8)))
    _assert(tuple(latent.data.shape) == (1, 12, 4, 4), f"got {tuple(latent.data.shape)}")


def check_encode_zeros() -> None:
    latent = LatentCodec(2, 1).encode(VideoClip(torch.zeros(2, 3, 8, 8)))
    _assert(torch.equal(latent.data, torch.zeros(2, 12, 4, 4)), "nonzero latent")


def check_decode_ones() -> None:
    clip = LatentCodec(2, 1).decode(LatentClip(torch.ones(1, 12, 4, 4)))
    _assert(torch.equal(clip.data, torch.ones(1, 3, 8, 8)), "nonzero difference")


def check_roundtrip() -> None:
    codec = LatentCodec(2, 1)
    video = VideoClip(torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(3)))
    _assert(torch.equal(codec.decode(codec.encode(video)).data, video.data),
            "decode(encode(x)) != x")


def check_pack_origin() -> None:
    ref = masking.ReferenceImage(torch.zeros(3, 4, 4), "object", "red")
    layout = masking.layout_references([ref], (8, 8))
    _assert(layout.placements == [(0, 0, 4, 4)], f"got {layout.placements}")


def check_compose_identity() -> None:
    ref = masking.ReferenceImage(torch.rand(3, 8, 8), "object", "red")
    layout = masking.layout_references([ref], (8, 8))
    _assert(torch.equal(masking.compose_canvas([ref], layout), ref.pixels),
            "composite != reference")


def check_compose_empty() -> None:
    layout = masking.CanvasLayout(canvas=(8, 8), placements=[])
    _assert(torch.equal(masking.compose_canvas([], layout), torch.zeros(3, 8, 8)),
            "empty composite not zero")


def check_union_area() -> None:
    ref = masking.ReferenceImage(torch.zeros(3, 4, 4), "object", "red")
    masks = masking.build_masks(masking.layout_references([ref], (8, 8)))
    _assert(float(masks.union.sum()) == 16.0, f"area {float(masks.union.sum())}")


def check_disjoint_additivity() -> None:
    refs = [masking.ReferenceImage(torch.zeros(3, 4, 4), "object", c) for c in ("red", "blue")]
    masks = masking.build_masks(masking.layout_references(refs, (8, 8)))
    total = sum(float(m.sum()) for m in masks.per_subject)
    _assert(float(masks.union.sum()) == 32.0 == total, "union area != 32")


def check_downsample_ones() -> None:
    out = masking.downsample_mask(torch.ones(8, 8), 2, 1, 4)
    _assert(torch.equal(out, torch.ones(1, 4, 4, 4)), "expected all ones")


def check_downsample_single_pixel() -> None:
    mask = torch.zeros(8, 8)
    mask[0, 0] = 1.0
    out = masking.downsample_mask(mask, 2, 1, 1)
    expected = torch.zeros(1, 1, 4, 4)
    expected[0, 0, 0, 0] = 1.0
    _assert(torch.equal(out, expected), "coverage bit misplaced")


def check_composite_single_frame() -> None:
    codec = LatentCodec(2, 1)
    composite = torch.rand(3, 8, 8)
    direct = codec.encode(VideoClip(composite.unsqueeze(0))).data
    _assert(torch.equal(encode_composite(codec, composite, 1), direct),
            "T=1 composite latent differs from direct encode")


def check_composite_zero() -> None:
    out = encode_composite(LatentCodec(2, 1), torch.zeros(3, 8, 8), 4)
    _assert(torch.equal(out, torch.zeros(4, 12, 4, 4)), "nonzero F_comp")


def check_channel_arithmetic() -> None:
    f = assemble_input(torch.zeros(1, 12, 4, 4), torch.zeros(1, 12, 4, 4),
                       torch.zeros(1, 4, 4, 4))
    _assert(f.shape[1] == 28, f"got {f.shape[1]} channels")


def check_slice_recovery() -> None:
    z = torch.rand(2, 12, 4, 4)
    f = assemble_input(z, torch.rand(2, 12, 4, 4), torch.rand(2, 4, 4, 4))
    back, _, _ = split_input(f, 12, 4)
    _assert(torch.equal(back, z), "slice [0, C) does not recover Z")


def check_endpoints() -> None:
    x0, x1 = torch.rand(2, 3), torch.rand(2, 3)
    _assert(torch.equal(flowmatch.interpolate(x0, x1, 0.0), x0), "t=0 endpoint")
    _assert(torch.equal(flowmatch.interpolate(x0, x1, 1.0), x1), "t=1 endpoint")


def check_velocity_identities() -> None:
    x = torch.rand(4)
    _assert(torch.equal(flowmatch.target_velocity(x, x), torch.zeros(4)), "identity path")
    _assert(torch.equal(flowmatch.target_velocity(torch.zeros(4), x), x), "zero endpoint")


class _OracleModel:
    """Returns the exact target velocity recovered from the assembled input."""

    def __init__(self, x1: torch.Tensor, channels: int):
        self.x1 = x1
        self.channels = channels

    def velocity(self, f_input, conds, t):
        xt = f_input[:, :, :self.channels]
        out = []
        for i in range(f_input.shape[0]):
            ti = float(t[i])
            # x_t = t*x1 + (1-t)*x0  =>  v = x1 - x0 = (x1 - x_t) / (1 - t)
            out.append((self.x1 - xt[i]) / (1.0 - ti) if ti < 1.0 else self.x1 - xt[i])
        return torch.stack(out)


def check_oracle_zero_loss() -> None:
    x1 = torch.rand(1, 4, 2, 2, generator=torch.Generator().manual_seed(0))
    sample = flowmatch.FlowSample(x1=x1, f_comp=torch.zeros_like(x1),
                                  m_region=torch.zeros(1, 1, 2, 2))
    loss = flowmatch.fm_loss(_OracleModel(x1, 4), [sample],
                             torch.Generator().manual_seed(1))
    _assert(float(loss) < 1e-10, f"oracle loss {float(loss)}")


class _ConstantField:
    def __init__(self, v: torch.Tensor):
        self.v = v

    def velocity(self, f_input, conds, t):
        return self.v.expand(f_input.shape[0], *self.v.shape)


def check_euler_constant_exact() -> None:
    g = torch.Generator().manual_seed(5)
    v = torch.rand(1, 4, 2, 2, generator=g)
    f_comp = torch.zeros(1, 4, 2, 2)
    m_region = torch.zeros(1, 1, 2, 2)
    results = []
    for steps in (1, 4, 16):
        x = flowmatch.sample(_ConstantField(v), f_comp, m_region, None, steps,
                             torch.Generator().manual_seed(9))
        results.append(x)
    _assert(torch.allclose(results[0], results[1], atol=1e-6)
            and torch.allclose(results[1], results[2], atol=1e-6),
            "constant-field integration depends on step count")


def check_euler_single_step() -> None:
    v = torch.ones(1, 4, 2, 2)
    f_comp = torch.zeros(1, 4, 2, 2)
    x = flowmatch.sample(_ConstantField(v), f_comp, torch.zeros(1, 1, 2, 2), None,
                         1, torch.Generator().manual_seed(9))
    x0 = torch.randn(1, 4, 2, 2, generator=torch.Generator().manual_seed(9))
    _assert(torch.allclose(x, x0 + v), "N=1 is not x0 + u(x0, y, 0)")


def _tiny_model(alpha: float = 1.0) -> VelocityNet:
    config = ModelConfig(latent_channels=4, mask_channels=2, blocks=2, width=16,
                         heads=2, text_dim=16, alpha=alpha)
    return build_model(config, 0)


def check_bind_zero_weights() -> None:
    model = _tiny_model()
    torch.nn.init.zeros_(model.blocks[0].cross.v.weight)
    cond = model.encode_text("the red circle moves left over a white background", ["red"])
    values = model.bind_subject_values(cond, 0)
    _assert(float(values.values[0].abs().max()) == 0.0, "nonzero value under zero weights")


def check_bind_identity() -> None:
    model = _tiny_model()
    torch.nn.init.eye_(model.blocks[0].cross.v.weight)
    cond = model.encode_text("the red circle moves left over a white background", ["red"])
    values = model.bind_subject_values(cond, 0)
    expected = cond.token_embeddings[cond.label_token_index["red"]]
    _assert(torch.allclose(values.values[0], expected), "identity projection mismatch")


def check_inject_alpha_zero() -> None:
    z0 = torch.rand(1, 4, 3, 3)
    out = inject_subjects(z0, [torch.ones(4)], [torch.ones(3, 3)], alpha=0.0)
    _assert(torch.equal(out, z0), "alpha=0 must be bit-exact identity")


def check_inject_full_mask() -> None:
    value = torch.tensor([1.0, 2.0, 3.0, 4.0])
    out = inject_subjects(torch.zeros(1, 4, 2, 2), [value], [torch.ones(2, 2)], alpha=1.0)
    _assert(torch.equal(out, value.view(1, 4, 1, 1).expand(1, 4, 2, 2)),
            "full-mask broadcast mismatch")


def check_zero_params_zero_velocity() -> None:
    model = _tiny_model()
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    cond = make_text_condition("the red circle moves left over a white background", ["red"])
    f_input = torch.rand(2, 10, 4, 4)
    out = model.predict_velocity(f_input, Guidance(text=cond), t=0.5)
    _assert(float(out.abs().max()) == 0.0, "zero network emitted nonzero velocity")


def check_velocity_shape() -> None:
    config = ModelConfig(latent_channels=12, mask_channels=4, blocks=2, width=16,
                         heads=2, text_dim=16)
    model = build_model(config, 0)
    cond = make_text_condition("the red circle moves left over a white background", ["red"])
    out = model.predict_velocity(torch.rand(4, 28, 4, 4), Guidance(text=cond), t=0.25)
    _assert(tuple(out.shape) == (4, 12, 4, 4), f"got {tuple(out.shape)}")


def check_static_scene() -> None:
    config = SpriteConfig(min_subjects=1, max_subjects=1, speed_min=0.0, speed_max=0.0)
    scene = generate_sample(config, torch.Generator().manual_seed(2))
    frames = scene.video.data
    _assert(all(torch.equal(frames[t], frames[0]) for t in range(frames.shape[0])),
            "zero-speed frames differ")
    track = scene.gt_masks[0]
    _assert(all(torch.equal(track[t], track[0]) for t in range(track.shape[0])),
            "zero-speed mask moved")


def check_scene_determinism() -> None:
    config = SpriteConfig()
    a = generate_sample(config, torch.Generator().manual_seed(11))
    b = generate_sample(config, torch.Generator().manual_seed(11))
    _assert(torch.equal(a.video.data, b.video.data) and a.caption == b.caption,
            "same seed produced different scenes")


def check_descriptor_self() -> None:
    scene = generate_sample(SpriteConfig(), torch.Generator().manual_seed(4))
    d = sprite_descriptor(scene.video.data[0], scene.gt_masks[0][0])
    _assert(abs(float(torch.dot(d, d)) - 1.0) < 1e-6, "self-similarity != 1")
    _assert(abs(float(d.norm()) - 1.0) < 1e-6, "descriptor not unit length")


def check_iou_basics() -> None:
    a = torch.zeros(4, 4)
    a[:2] = 1.0
    _assert(datapipe.iou(a, a) == 1.0, "self IoU != 1")
    b = torch.zeros(4, 4)
    b[2:] = 1.0
    _assert(datapipe.iou(a, b) == 0.0, "disjoint IoU != 0")


def check_refine_zeros() -> None:
    out = datapipe.refine_mask(torch.zeros(6, 6), 1)
    _assert(float(out.sum()) == 0.0, "opening created pixels")


def check_refine_single_pixel() -> None:
    mask = torch.zeros(6, 6)
    mask[3, 3] = 1.0
    out = datapipe.refine_mask(mask, 1)
    _assert(float(out.sum()) == 0.0, "isolated pixel survived opening")


def check_filter_area_boundary() -> None:
    config = datapipe.PipelineConfig(min_area=16)
    mask = torch.zeros(8, 8)
    mask[:3, :5] = 1.0  # area 15 = min_area - 1
    kept = datapipe.filter_objects([datapipe.ObjectCandidate("red", mask)], [], config)
    _assert(kept == [], "area theta_min - 1 must drop")


def check_select_singleton() -> None:
    det = datapipe.FaceDetection(box=(0, 0, 4, 4), embedding=torch.ones(4),
                                 confidence=0.9, yaw=0.0, pitch=0.0, roll=0.0)
    out = datapipe.select_faces([det], datapipe.PipelineConfig(),
                                torch.Generator().manual_seed(0))
    _assert(len(out) == 1 and out[0] == [det], "singleton face not returned")


def check_curate_motion_gate() -> None:
    from .backends import sprite_backend_suite

    config = SpriteConfig(min_subjects=1, max_subjects=1, speed_min=0.0, speed_max=0.0)
    scene = generate_sample(config, torch.Generator().manual_seed(2))
    records = datapipe.curate([("static", scene.video)], sprite_backend_suite(0),
                              datapipe.PipelineConfig(), torch.Generator().manual_seed(0))
    _assert(records == [], "static clip passed the motion gate")


def check_region_self_similarity() -> None:
    scene = generate_sample(SpriteConfig(), torch.Generator().manual_seed(6))
    provider = metrics.GroundTruthRegions(scene.gt_masks)
    ref = scene.references[0]
    ref_mask = (ref.pixels.sum(dim=0) > 0).float()
    value = metrics.region_similarity(scene.video, ref.pixels, ref_mask, "subject",
                                      sprite_descriptor, provider, stride=4)
    _assert(value > 0.999, f"self similarity {value}")


def check_stride_clamp() -> None:
    _assert(metrics.sampled_indices(8, 100) == [0], "stride clamp should keep frame 0")


def check_frame_mean() -> None:
    video = VideoClip(torch.rand(3, 3, 4, 4))
    _assert(abs(metrics.frame_mean_score(video, lambda f: 0.5) - 0.5) < 1e-9,
            "constant predictor mean")
    scores = iter([0.2, 0.4, 0.6])
    _assert(abs(metrics.frame_mean_score(video, lambda f: next(scores)) - 0.4) < 1e-9,
            "mean of three")


def check_static_smoothness() -> None:
    video = VideoClip(torch.rand(1, 3, 4, 4).expand(5, 3, 4, 4).clone())
    _assert(metrics.motion_smoothness(video) == 1.0, "static video smoothness != 1")


CHECKS: list[tuple[str, object]] = [(name[6:], fn) for name, fn in sorted(globals().items())
                                    if name.startswith("check_")]


def run_selftest(verbose: bool = True) -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures += 1
            if verbose:
                print(f"FAIL {name}: {exc}")
        else:
            if verbose:
                print(f"ok   {name}")
    if verbose:
        print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures

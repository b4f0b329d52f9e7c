import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from refvid.denoiser import BACKGROUND_WORDS
from refvid.errors import ConfigError, EmptyRegionError
from refvid.sprites import (COLOR_RGB, SpriteConfig, color_region, generate_sample,
                            load_scene, save_scene, shape_stencil, sprite_descriptor)


def test_static_scene_all_frames_identical():
    config = SpriteConfig(min_subjects=1, max_subjects=1, speed_min=0.0, speed_max=0.0)
    scene = generate_sample(config, torch.Generator().manual_seed(0))
    for t in range(1, scene.video.frames):
        assert torch.equal(scene.video.data[t], scene.video.data[0])
        assert torch.equal(scene.gt_masks[0][t], scene.gt_masks[0][0])


def test_same_seed_bit_identical():
    config = SpriteConfig(max_subjects=3)
    a = generate_sample(config, torch.Generator().manual_seed(9))
    b = generate_sample(config, torch.Generator().manual_seed(9))
    assert torch.equal(a.video.data, b.video.data)
    assert a.caption == b.caption
    assert [s.identity for s in a.subjects] == [s.identity for s in b.subjects]


def test_per_frame_masks_disjoint_collision_oracle():
    config = SpriteConfig(min_subjects=2, max_subjects=3)
    for seed in range(30):
        scene = generate_sample(config, torch.Generator().manual_seed(seed))
        tracks = scene.gt_masks
        for t in range(scene.video.frames):
            for i in range(len(tracks)):
                for j in range(i + 1, len(tracks)):
                    overlap = float((tracks[i][t] * tracks[j][t]).sum())
                    assert overlap == 0.0, (seed, t, i, j)


def test_caption_references_and_identities_consistent():
    config = SpriteConfig(min_subjects=1, max_subjects=3, two_tone_prob=0.3)
    for seed in range(20):
        scene = generate_sample(config, torch.Generator().manual_seed(seed))
        words = scene.caption.split()
        for subject, ref in zip(scene.subjects, scene.references):
            assert ref.label == subject.color
            assert words.count(subject.color) == 1
            assert subject.shape in words
            assert subject.direction in words
        assert scene.background in BACKGROUND_WORDS
        assert f"a {scene.background} background" in scene.caption
        assert len(scene.gt_masks) == len(scene.subjects) == len(scene.references)


def test_subjects_stay_in_bounds():
    config = SpriteConfig(speed_min=2.0, speed_max=4.0, max_subjects=2)
    for seed in range(20):
        scene = generate_sample(config, torch.Generator().manual_seed(seed))
        for subject, track in zip(scene.subjects, scene.gt_masks):
            stencil_area = float(shape_stencil(subject.shape, subject.size).sum())
            for t in range(scene.video.frames):
                assert float(track[t].sum()) == stencil_area, (seed, t)


def test_shape_stencils():
    square = shape_stencil("square", 10)
    assert float(square.sum()) == 100.0
    circle = shape_stencil("circle", 10)
    assert 60 < float(circle.sum()) < 90  # ~ pi/4 * 100
    triangle = shape_stencil("triangle", 10)
    assert 30 < float(triangle.sum()) < 70
    with pytest.raises(ConfigError):
        shape_stencil("hexagon", 10)


def test_config_validation():
    with pytest.raises(ConfigError):
        generate_sample(SpriteConfig(min_subjects=1, max_subjects=4),
                        torch.Generator().manual_seed(0))
    with pytest.raises(ConfigError):
        generate_sample(SpriteConfig(sprite_min=60, sprite_max=70),
                        torch.Generator().manual_seed(0))


def numpy_descriptor_oracle(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Independent reimplementation: histogram + bbox statistics."""
    inside = mask > 0
    pix = image[:, inside]
    count = pix.shape[1]
    hist = []
    for c in range(image.shape[0]):
        bins = np.clip((np.clip(pix[c], 0, 1) * 8).astype(int), 0, 7)
        hist.append(np.bincount(bins, minlength=8) / count)
    ys, xs = np.nonzero(inside)
    bw = xs.max() - xs.min() + 1.0
    bh = ys.max() - ys.min() + 1.0
    fill = count / (bw * bh)
    aspect = bw / (bw + bh)
    sx = np.sqrt(((xs - xs.mean()) ** 2).mean()) / bw
    sy = np.sqrt(((ys - ys.mean()) ** 2).mean()) / bh
    vec = np.concatenate([np.concatenate(hist), 0.5 * np.array([fill, aspect, sx, sy])])
    return vec / np.linalg.norm(vec)


def test_descriptor_matches_numpy_oracle():
    scene = generate_sample(SpriteConfig(max_subjects=2),
                            torch.Generator().manual_seed(3))
    image = scene.video.data[0]
    mask = scene.gt_masks[0][0]
    ours = sprite_descriptor(image, mask).numpy()
    oracle = numpy_descriptor_oracle(image.numpy(), mask.numpy())
    assert np.allclose(ours, oracle, atol=1e-5)


def test_descriptor_red_vs_blue_circle():
    stencil = shape_stencil("circle", 14)
    red = stencil.unsqueeze(0) * torch.tensor(COLOR_RGB["red"]).view(3, 1, 1)
    blue = stencil.unsqueeze(0) * torch.tensor(COLOR_RGB["blue"]).view(3, 1, 1)
    cos = float(torch.dot(sprite_descriptor(red, stencil), sprite_descriptor(blue, stencil)))
    oracle = float(np.dot(numpy_descriptor_oracle(red.numpy(), stencil.numpy()),
                          numpy_descriptor_oracle(blue.numpy(), stencil.numpy())))
    assert abs(cos - oracle) < 1e-5
    assert cos < 0.9


def test_descriptor_norm_and_self_similarity():
    for seed in range(5):
        scene = generate_sample(SpriteConfig(), torch.Generator().manual_seed(seed))
        d = sprite_descriptor(scene.video.data[0], scene.gt_masks[0][0])
        assert abs(float(d.norm()) - 1.0) < 1e-6


def test_descriptor_ignores_pixels_outside_mask():
    scene = generate_sample(SpriteConfig(), torch.Generator().manual_seed(5))
    image = scene.video.data[0]
    mask = scene.gt_masks[0][0]
    scrambled = image.clone()
    outside = mask == 0
    scrambled[:, outside] = torch.rand(3, int(outside.sum()))
    assert torch.equal(sprite_descriptor(image, mask), sprite_descriptor(scrambled, mask))


def test_descriptor_empty_mask_error():
    with pytest.raises(EmptyRegionError):
        sprite_descriptor(torch.rand(3, 4, 4), torch.zeros(4, 4))


def test_color_region_matches_ground_truth():
    scene = generate_sample(SpriteConfig(min_subjects=1, max_subjects=1),
                            torch.Generator().manual_seed(7))
    subject = scene.subjects[0]
    detected = color_region(scene.video.data[0], COLOR_RGB[subject.color])
    assert torch.equal(detected, scene.gt_masks[0][0])


def test_scene_save_load_roundtrip(tmp_path):
    scene = generate_sample(SpriteConfig(max_subjects=2, two_tone_prob=1.0),
                            torch.Generator().manual_seed(8))
    save_scene(scene, tmp_path / "scene")
    back = load_scene(tmp_path / "scene")
    assert torch.equal(back.video.data, scene.video.data)
    assert back.caption == scene.caption
    assert back.background == scene.background
    assert [r.label for r in back.references] == [r.label for r in scene.references]
    for a, b in zip(back.gt_masks, scene.gt_masks):
        assert torch.equal(a, b)
    for a, b in zip(back.references, scene.references):
        assert torch.equal(a.pixels, b.pixels)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_scene_invariants_property(seed):
    config = SpriteConfig(min_subjects=1, max_subjects=2, two_tone_prob=0.2)
    scene = generate_sample(config, torch.Generator().manual_seed(seed))
    assert 0.0 <= float(scene.video.data.min()) and float(scene.video.data.max()) <= 1.0
    assert len(scene.identities) == len(scene.subjects)
    for track in scene.gt_masks:
        assert set(track.unique().tolist()) <= {0.0, 1.0}

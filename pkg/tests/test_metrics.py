import numpy as np
import pytest
import torch

from refvid.errors import DomainError, EmptyRegionError
from refvid.latents import VideoClip
from refvid.metrics import (ColorRegions, GroundTruthRegions, caption_match_score,
                            cosine, format_table, frame_mean_score, make_report,
                            motion_smoothness, parse_caption, region_similarity,
                            sampled_indices, total_score)
from refvid.sprites import SpriteConfig, generate_sample, sprite_descriptor


def test_region_self_similarity_is_one():
    """Frame regions pixel-identical to the reference crop score exactly 1."""
    scene = generate_sample(SpriteConfig(min_subjects=1, max_subjects=1),
                            torch.Generator().manual_seed(0))
    provider = GroundTruthRegions(scene.gt_masks)
    ref = scene.references[0]
    ref_mask = (ref.pixels.sum(dim=0) > 0).float()
    value = region_similarity(scene.video, ref.pixels, ref_mask, "subject",
                              sprite_descriptor, provider, stride=2)
    assert abs(value - 1.0) < 1e-6


def test_stride_larger_than_video_uses_frame_zero():
    assert sampled_indices(8, 100) == [0]
    assert sampled_indices(8, 3) == [0, 3, 6]


def test_two_frame_mean_of_cosines():
    """Cosines 0.8 and 0.6 against the reference average to 0.7 exactly."""
    video = VideoClip(torch.rand(2, 3, 4, 4, generator=torch.Generator().manual_seed(1)))

    class FixedEmbedder:
        def __init__(self):
            self.calls = 0

        def __call__(self, image, mask):
            vectors = [torch.tensor([1.0, 0.0, 0.0]),   # reference
                       torch.tensor([0.8, 0.6, 0.0]),   # frame 0: cos 0.8
                       torch.tensor([0.6, 0.8, 0.0])]   # frame 1: cos 0.6
            vec = vectors[min(self.calls, 2)]
            self.calls += 1
            return vec

    class FullFrame:
        def subject_masks(self, index, frame):
            return [torch.ones(4, 4)]

    value = region_similarity(video, video.data[0], torch.ones(4, 4), "subject",
                              FixedEmbedder(), FullFrame(), stride=1)
    assert abs(value - 0.7) < 1e-7


def test_region_similarity_per_frame_oracle():
    """Implementation equals the looped per-frame cosine oracle."""
    scene = generate_sample(SpriteConfig(min_subjects=1, max_subjects=1, speed_min=2.0,
                                         speed_max=2.0),
                            torch.Generator().manual_seed(2))
    provider = GroundTruthRegions(scene.gt_masks)
    ref = scene.references[0]
    ref_mask = (ref.pixels.sum(dim=0) > 0).float()
    stride = 3
    ref_emb = sprite_descriptor(ref.pixels, ref_mask)
    values = []
    for t in range(0, scene.video.frames, stride):
        emb = sprite_descriptor(scene.video.data[t], scene.gt_masks[0][t])
        values.append(float(torch.dot(emb, ref_emb) / (emb.norm() * ref_emb.norm())))
    oracle = sum(values) / len(values)
    ours = region_similarity(scene.video, ref.pixels, ref_mask, "identity",
                             sprite_descriptor, provider, stride=stride)
    assert abs(ours - oracle) < 1e-7


def test_region_similarity_ignores_outside_pixels():
    scene = generate_sample(SpriteConfig(min_subjects=1, max_subjects=1),
                            torch.Generator().manual_seed(3))
    provider = GroundTruthRegions(scene.gt_masks)
    ref = scene.references[0]
    ref_mask = (ref.pixels.sum(dim=0) > 0).float()
    base = region_similarity(scene.video, ref.pixels, ref_mask, "subject",
                             sprite_descriptor, provider, stride=2)
    tampered = scene.video.data.clone()
    outside = scene.gt_masks[0] == 0  # [T, H, W]
    for t in range(tampered.shape[0]):
        frame = tampered[t]
        frame[:, outside[t]] = torch.rand(3, int(outside[t].sum()))
    video2 = VideoClip(tampered)
    tampered_score = region_similarity(video2, ref.pixels, ref_mask, "subject",
                                       sprite_descriptor, provider, stride=2)
    assert abs(base - tampered_score) < 1e-7


def test_background_mode_uses_complement():
    scene = generate_sample(SpriteConfig(min_subjects=1, max_subjects=1),
                            torch.Generator().manual_seed(4))
    provider = GroundTruthRegions(scene.gt_masks)
    bg = scene.background_ref
    value = region_similarity(scene.video, bg.pixels, torch.ones(64, 64), "background",
                              sprite_descriptor, provider, stride=4)
    assert value > 0.99  # background pixels equal the background reference


def test_no_valid_frames_error():
    video = VideoClip(torch.rand(2, 3, 4, 4))

    class Empty:
        def subject_masks(self, index, frame):
            return [torch.zeros(4, 4)]

    with pytest.raises(EmptyRegionError):
        region_similarity(video, video.data[0], torch.ones(4, 4), "subject",
                          sprite_descriptor, Empty(), stride=1)


def test_region_similarity_validation():
    video = VideoClip(torch.rand(2, 3, 4, 4))
    provider = GroundTruthRegions([torch.ones(2, 4, 4)])
    with pytest.raises(DomainError):
        region_similarity(video, video.data[0], torch.ones(4, 4), "subject",
                          sprite_descriptor, provider, stride=0)
    with pytest.raises(DomainError):
        region_similarity(video, video.data[0], torch.ones(4, 4), "nope",
                          sprite_descriptor, provider)
    with pytest.raises(EmptyRegionError):
        region_similarity(video, video.data[0], torch.zeros(4, 4), "subject",
                          sprite_descriptor, provider)


def test_color_regions_min_pixels():
    provider = ColorRegions(["red"], tol=0.3, min_pixels=50)
    frame = torch.zeros(3, 8, 8)
    frame[0, :2, :2] = 1.0  # only 4 red pixels
    assert float(provider.subject_masks(0, frame)[0].sum()) == 0.0


def test_frame_mean_score_examples():
    video = VideoClip(torch.rand(3, 3, 4, 4))
    assert abs(frame_mean_score(video, lambda f: 0.5) - 0.5) < 1e-12
    scores = iter([0.2, 0.4, 0.6])
    assert abs(frame_mean_score(video, lambda f: next(scores)) - 0.4) < 1e-12


def test_frame_mean_score_summation_oracle():
    g = torch.Generator().manual_seed(5)
    video = VideoClip(torch.rand(7, 3, 4, 4, generator=g))
    per_frame = [float(video.data[t].mean()) for t in range(7)]
    oracle = sum(per_frame) / 7
    assert frame_mean_score(video, lambda f: float(f.mean())) == pytest.approx(oracle, abs=0)


class TestMotionSmoothness:
    def test_static_video_is_one(self):
        video = VideoClip(torch.rand(1, 3, 8, 8).expand(5, 3, 8, 8).clone())
        assert motion_smoothness(video) == 1.0

    def test_constant_velocity_sprite_smooth(self):
        config = SpriteConfig(min_subjects=1, max_subjects=1, speed_min=2.0, speed_max=2.0)
        scene = generate_sample(config, torch.Generator().manual_seed(6))
        value = motion_smoothness(scene.video)
        oracle = self.numpy_oracle(scene.video.data.numpy())
        assert value == pytest.approx(oracle, abs=1e-6)
        assert value >= 0.9

    def test_alternating_frames_rough(self):
        frames = torch.stack([torch.zeros(3, 8, 8), torch.ones(3, 8, 8)] * 3)
        value = motion_smoothness(VideoClip(frames))
        assert value <= 0.1

    def test_too_few_frames(self):
        with pytest.raises(DomainError):
            motion_smoothness(VideoClip(torch.rand(2, 3, 4, 4)))

    @staticmethod
    def numpy_oracle(x: np.ndarray, eps: float = 1e-8) -> float:
        first = np.abs(x[1:] - x[:-1])
        second = np.abs(x[2:] - 2 * x[1:-1] + x[:-2])
        scale = first.mean() + eps
        return 1.0 - float(np.clip(second / scale, 0.0, 1.0).mean())


class TestTotalScore:
    # reported totals are half-up roundings: differences reach exactly 0.0005,
    # so the gate carries a sliver of float headroom
    TOL = 5.0001e-4

    def test_published_row_examples(self):
        assert total_score((0.595, 0.516, 0.956, 0.710)) == pytest.approx(0.694, abs=self.TOL)
        assert total_score((0.542, 0.496, 0.622, 0.478, 0.945, 0.681)) == pytest.approx(
            0.627, abs=self.TOL)
        assert total_score((0.577, 0.524, 0.949, 0.696)) == pytest.approx(0.687, abs=self.TOL)

    def test_empty_report_error(self):
        with pytest.raises(DomainError):
            total_score(())

    def test_full_precision_mean(self):
        assert total_score([0.1, 0.2]) == pytest.approx(0.15000000000000002, abs=0)


def test_make_report_and_table():
    report = make_report({"subj_sim": 0.9, "motion": 0.8}, provenance={"stride": 4})
    assert report.total == pytest.approx(0.85)
    table = format_table(report)
    assert "subj_sim" in table and "total" in table and "0.850" in table
    with pytest.raises(DomainError):
        make_report({"subj_sim": 1.5})
    with pytest.raises(DomainError):
        make_report({"aesthetic": float("nan")})


def test_report_save_load(tmp_path):
    report = make_report({"gme": 0.75}, provenance={"embedder": "sprite"})
    report.save(tmp_path / "report.json")
    from refvid.metrics import MetricReport

    back = MetricReport.load(tmp_path / "report.json")
    assert back.scores == report.scores and back.total == report.total


def test_parse_caption_roundtrip():
    caption = ("the red circle moves left and the blue square moves right "
               "over a white-gray background")
    subjects, background = parse_caption(caption)
    assert subjects == [("red", "circle", "left"), ("blue", "square", "right")]
    assert background == "white-gray"


def test_caption_match_score_on_ground_truth():
    config = SpriteConfig(min_subjects=1, max_subjects=2, speed_min=2.0, speed_max=3.0)
    for seed in range(5):
        scene = generate_sample(config, torch.Generator().manual_seed(seed))
        assert caption_match_score(scene.video, scene.caption) == 1.0


def test_caption_match_score_penalizes_wrong_color():
    config = SpriteConfig(min_subjects=1, max_subjects=1, speed_min=2.0, speed_max=3.0)
    scene = generate_sample(config, torch.Generator().manual_seed(3))
    color = scene.subjects[0].color
    wrong = "red" if color != "red" else "blue"
    corrupted = scene.caption.replace(color, wrong)
    assert caption_match_score(scene.video, corrupted) < 1.0


def test_cosine_helper():
    assert cosine(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])) == 0.0
    assert cosine(torch.tensor([2.0, 0.0]), torch.tensor([1.0, 0.0])) == pytest.approx(1.0)

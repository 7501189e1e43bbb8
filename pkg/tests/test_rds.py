import math

import kornia
import numpy as np
import pytest
import torch
from pydantic import ValidationError
from torch.autograd import gradcheck

from gifguard.data_pipeline import GifClipDataset
from gifguard.errors import SurrogateUnavailable, UnknownDistortion
from gifguard.rds import (
    HARD_KINDS,
    KINDS,
    CurriculumSchedule,
    DistortionSpec,
    SemanticSurrogate,
    apply_distortion,
    central_face_mask,
    dct_matrix,
    diff_jpeg,
    drop_fill_indices,
    feather_mask,
    fit_surrogate,
    gaussian_blur,
    quantization_tables,
    random_crop,
    sample_spec,
    semantic_surrogate,
    surrogate_calibration,
)


def clip(seed=0, batch=2, frames=4, size=16, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand(batch, 3, frames, size, size, generator=gen, dtype=dtype) * 2 - 1)


def fitted_surrogate(bottleneck=4):
    torch.manual_seed(0)
    model = SemanticSurrogate(bottleneck)
    return fit_surrogate(model, [clip(1, batch=1)[0]], steps=2, batch_size=2)


def loop_jpeg(frame, quality):
    """Scalar pipeline on one (3, H, W) frame in [-1, 1], H and W multiples of 8."""
    tables = quantization_tables(quality)
    ycc = (kornia.color.rgb_to_ycbcr((frame[None] + 1) / 2)[0] * 255 - 128).double().numpy()
    _, h, w = ycc.shape
    out = np.zeros_like(ycc)

    basis = [[(math.sqrt(1 / 8) if k == 0 else math.sqrt(2 / 8))
              * math.cos(math.pi * (2 * i + 1) * k / 16) for i in range(8)] for k in range(8)]

    for c in range(3):
        for by in range(0, h, 8):
            for bx in range(0, w, 8):
                block = ycc[c, by:by + 8, bx:bx + 8].tolist()
                coeff = np.zeros((8, 8))
                for u in range(8):
                    for v in range(8):
                        coeff[u, v] = sum(basis[u][y] * basis[v][x] * block[y][x]
                                          for y in range(8) for x in range(8))
                q = coeff / tables[c]
                q = np.round(q) + (q - np.round(q)) ** 3
                coeff = (q * tables[c]).tolist()
                for y in range(8):
                    for x in range(8):
                        out[c, by + y, bx + x] = sum(basis[u][y] * basis[v][x] * coeff[u][v]
                                                     for u in range(8) for v in range(8))
    restored = torch.from_numpy(out).to(frame.dtype)
    return kornia.color.ycbcr_to_rgb(((restored + 128) / 255)[None])[0] * 2 - 1


# --- DistortionSpec ---------------------------------------------------------------------------

def test_spec_defaults_and_aliases():
    spec = DistortionSpec("jpeg", {}, 3)
    assert spec.kind == "diff_jpeg"
    assert spec.resolved_params == {"quality": 75}
    assert DistortionSpec("g-noise").resolved_params["sigma"] == pytest.approx(0.05)
    assert DistortionSpec("drop").resolved_params["p_drop"] == pytest.approx(0.7)


def test_spec_serialize_parse():
    spec = DistortionSpec("random_crop", {"scale_min": 0.9}, 42)
    text = spec.serialize()
    assert text == "kind=random_crop;scale_max=1.0;scale_min=0.9;seed=42"
    parsed = DistortionSpec.parse(text)
    assert parsed == DistortionSpec("random_crop", {"scale_max": 1.0, "scale_min": 0.9}, 42)
    assert parsed.serialize() == text
    surrogate = DistortionSpec.parse("kind=semantic_surrogate;variant=ae8;seed=1")
    assert surrogate.resolved_params["variant"] == "ae8"


def test_spec_rejects_unknown_kind_and_params():
    with pytest.raises(UnknownDistortion):
        DistortionSpec("cartoonify")
    with pytest.raises(ValueError):
        DistortionSpec("g_blur", {"radius": 3})
    with pytest.raises(ValueError):
        DistortionSpec("diff_jpeg", {"quality": 0})
    with pytest.raises(ValueError):
        DistortionSpec("frame_drop", {"p_drop": 1.0})


def test_crop_window_params_only_for_crop():
    assert DistortionSpec.parse("kind=random_crop;scale=0.5;top=1;left=2").params["scale"] == 0.5
    for kind in ("g_blur", "identity", "semantic_surrogate"):
        with pytest.raises(ValueError, match="unknown parameter"):
            DistortionSpec(kind, {"scale": 0.5})
    with pytest.raises(ValueError, match="unknown parameter"):
        DistortionSpec.parse("kind=g_blur;scale=0.5")


def test_spec_parse_malformed():
    with pytest.raises(ValueError):
        DistortionSpec.parse("seed=3")
    with pytest.raises(ValueError):
        DistortionSpec.parse("kind=identity;junk")


# --- Dispatch ---------------------------------------------------------------------------------

def test_identity_bit_exact():
    g = clip()
    result = apply_distortion(g, DistortionSpec("identity"))
    assert torch.equal(result.output, g)
    assert result.metadata["kind"] == "identity"


def test_unbatched_input():
    g = clip()[0]
    out = apply_distortion(g, DistortionSpec("g_blur")).output
    assert out.shape == g.shape


def test_every_kind_keeps_shape_and_is_deterministic():
    g = clip(frames=5)
    surrogates = {"ae4": fitted_surrogate(4)}
    for kind in KINDS:
        spec = DistortionSpec(kind, {}, 11)
        a = apply_distortion(g, spec, surrogates).output
        b = apply_distortion(g, spec, surrogates).output
        assert a.shape == g.shape, kind
        assert torch.equal(a, b), kind


def test_temporal_kinds_on_single_frame_warn():
    g = clip(frames=1)
    for kind in ("frame_drop", "frame_shuffle", "frame_replace"):
        result = apply_distortion(g, DistortionSpec(kind, {}, 0))
        assert torch.equal(result.output, g)
        assert "warning" in result.metadata


def test_shuffle_of_constant_frames():
    g = clip(frames=1).expand(-1, -1, 6, -1, -1).contiguous()
    assert torch.equal(apply_distortion(g, DistortionSpec("frame_shuffle", {}, 5)).output, g)


def test_noise_std():
    g = torch.zeros(1, 3, 1, 100, 334)
    out = apply_distortion(g, DistortionSpec("g_noise", {}, 7)).output
    assert 0.049 <= out.std().item() <= 0.051


def test_salt_and_pepper_fraction_and_values():
    g = torch.zeros(1, 3, 4, 100, 100)
    out = apply_distortion(g, DistortionSpec("salt_pepper", {"ratio": 0.05}, 2)).output
    hit = (out != 0).all(dim=1)
    assert 0.04 < hit.float().mean().item() < 0.06
    assert set(out[:, 0][hit].unique().tolist()) == {-1.0, 1.0}


def test_median_removes_outlier():
    g = torch.full((1, 3, 5, 6, 6), 0.2)
    g[0, :, 2, 3, 3] = 1.0
    out = apply_distortion(g, DistortionSpec("median3d")).output
    assert torch.allclose(out, torch.full_like(g, 0.2))


def test_crop_full_window_is_identity():
    g = clip()
    spec = DistortionSpec("random_crop", {"scale": 1.0, "top": 0, "left": 0}, 0)
    result = apply_distortion(g, spec)
    assert torch.allclose(result.output, g, atol=1e-6)
    assert result.metadata["scale"] == 1.0


def test_crop_window_bounds():
    g = clip()
    gen = torch.Generator().manual_seed(0)
    for _ in range(20):
        _, meta = random_crop(g, {"scale_min": 0.8, "scale_max": 1.0}, gen)
        assert 0.8 <= meta["scale"] <= 1.0
        crop = math.floor(meta["scale"] * 16)
        assert 0 <= meta["top"] <= 16 - crop and 0 <= meta["left"] <= 16 - crop


def test_frame_drop_fill_policy():
    assert drop_fill_indices([False, True, False, True]) == [1, 1, 1, 3]
    assert drop_fill_indices([True, False, False]) == [0, 0, 0]
    with pytest.raises(ValueError):
        drop_fill_indices([False, False])
    g = clip(frames=10)
    for seed in range(20):
        result = apply_distortion(g, DistortionSpec("frame_drop", {"p_drop": 0.99}, seed))
        kept = result.metadata["kept"]
        assert len(kept) >= 1
        assert result.output.shape == g.shape
        for t in kept:
            assert torch.equal(result.output[:, :, t], g[:, :, t])


def test_frame_replace_copies_one_frame():
    g = clip(frames=6)
    result = apply_distortion(g, DistortionSpec("frame_replace", {}, 4))
    src, dst = result.metadata["source"], result.metadata["target"]
    assert src != dst
    assert torch.equal(result.output[:, :, dst], g[:, :, src])
    others = [t for t in range(6) if t != dst]
    assert torch.equal(result.output[:, :, others], g[:, :, others])


# --- JPEG proxy -------------------------------------------------------------------------------

def test_quantization_tables():
    q50 = quantization_tables(50)
    assert q50[0, 0, 0] == 16 and q50[1, 0, 0] == 17
    assert (quantization_tables(100) == 1).all()
    assert quantization_tables(1).max() == 255
    with pytest.raises(ValueError):
        quantization_tables(101)


def test_dct_of_constant_block():
    d = dct_matrix(8, torch.float64)
    assert torch.allclose(d @ d.T, torch.eye(8, dtype=torch.float64), atol=1e-12)
    coeffs = d @ torch.full((8, 8), 3.0, dtype=torch.float64) @ d.T
    assert coeffs[0, 0].item() == pytest.approx(24.0)
    coeffs[0, 0] = 0
    assert coeffs.abs().max().item() < 1e-12


def test_jpeg_quality_100_near_lossless():
    g = torch.full((1, 3, 2, 8, 8), 0.3)
    assert (diff_jpeg(g, 100) - g).abs().max().item() < 1e-2


def test_jpeg_matches_loop_oracle():
    g = clip(seed=3, batch=1, frames=1, size=16, dtype=torch.float64)
    out = diff_jpeg(g, 75)
    expected = loop_jpeg(g[0, :, 0], 75)
    assert torch.allclose(out[0, :, 0], expected, atol=1e-5)


def test_jpeg_handles_unaligned_frames():
    g = clip(seed=4, batch=1, frames=2, size=12)
    assert diff_jpeg(g, 75).shape == g.shape


def test_jpeg_error_shrinks_with_quality():
    for seed in range(20):
        g = clip(seed=seed, batch=1, frames=1, size=16, dtype=torch.float64)
        err50 = (diff_jpeg(g, 50) - g).pow(2).sum().item()
        err95 = (diff_jpeg(g, 95) - g).pow(2).sum().item()
        assert err50 >= err95


def test_jpeg_gradcheck():
    g = clip(seed=5, batch=1, frames=1, size=8, dtype=torch.float64).requires_grad_()
    assert gradcheck(lambda x: diff_jpeg(x, 75), (g,), eps=1e-6, atol=1e-5, rtol=1e-3)


def test_blur_and_crop_gradcheck():
    g = clip(seed=6, batch=1, frames=2, size=8, dtype=torch.float64).requires_grad_()
    assert gradcheck(lambda x: gaussian_blur(x, 5, 1.0), (g,), eps=1e-6, atol=1e-5, rtol=1e-3)
    params = {"scale": 0.8, "top": 1, "left": 0}

    def crop(x):
        return random_crop(x, params, torch.Generator().manual_seed(0))[0]

    assert gradcheck(crop, (g,), eps=1e-6, atol=1e-5, rtol=1e-3)


def test_gradients_flow_through_attacks():
    surrogates = {"ae4": fitted_surrogate(4)}
    for kind in KINDS:
        g = clip(seed=7, frames=4).requires_grad_()
        out = apply_distortion(g, DistortionSpec(kind, {}, 1), surrogates).output
        out.sum().backward()
        assert g.grad is not None and g.grad.abs().sum() > 0, kind


# --- Semantic surrogate -----------------------------------------------------------------------

def test_surrogate_requires_fit():
    g = clip()
    mask = central_face_mask(4, 16, 16)
    with pytest.raises(SurrogateUnavailable, match="surrogate unavailable"):
        semantic_surrogate(g, mask, SemanticSurrogate(4))
    with pytest.raises(SurrogateUnavailable):
        apply_distortion(g, DistortionSpec("semantic_surrogate"), None)
    with pytest.raises(SurrogateUnavailable):
        apply_distortion(g, DistortionSpec("semantic_surrogate", {"variant": "ae8"}),
                         {"ae4": fitted_surrogate(4)})


def test_surrogate_mask_edges():
    model = fitted_surrogate(8)
    g = clip()
    empty = torch.zeros(4, 16, 16)
    assert torch.equal(semantic_surrogate(g, empty, model), g)
    full = torch.ones(4, 16, 16)
    with torch.no_grad():
        out = semantic_surrogate(g, full, model)
        assert torch.allclose(out, model.reconstruct(g), atol=1e-6)
    assert (out - g).norm() > 0


def test_face_mask_and_feather():
    mask = central_face_mask(2, 32, 32)
    assert mask.shape == (2, 32, 32)
    assert mask[0, 16, 16] == 1 and mask[0, 0, 0] == 0
    soft = feather_mask(mask[None])
    assert soft.max() <= 1 and soft.min() >= 0
    assert torch.equal(soft[mask[None] == 0], torch.zeros_like(soft[mask[None] == 0]))
    assert soft[0, 0, 16, 16] == 1
    edge = soft[(mask[None] == 1) & (soft < 1)]
    assert edge.numel() > 0


def test_surrogate_bottleneck_validation():
    with pytest.raises(ValueError):
        SemanticSurrogate(2)
    assert SemanticSurrogate(8).name == "ae8"


@pytest.mark.slow
def test_surrogate_calibration_gate(tmp_path):
    from gifguard.data_pipeline import build_dataset

    manifest = build_dataset(32, 4, 8, tmp_path, seed=0, frames=10, height=64, width=64)
    train = GifClipDataset(manifest, "train")
    held_out = GifClipDataset(manifest, "test")
    torch.manual_seed(0)
    model = fit_surrogate(SemanticSurrogate(4), [train[i] for i in range(len(train))], steps=300)
    g_co = torch.stack([held_out[i] for i in range(len(held_out))])
    residual = 0.1 * torch.randn(g_co.shape, generator=torch.Generator().manual_seed(1))
    mask = central_face_mask(10, 64, 64)
    report = surrogate_calibration(model, g_co, g_co + residual, mask)
    assert report["passes"], report


# --- Curriculum -------------------------------------------------------------------------------

def test_curriculum_stage_boundaries():
    schedule = CurriculumSchedule(total_epochs=50)
    assert [schedule.stage_for_epoch(e) for e in (1, 2, 3)] == [1, 1, 1]
    assert schedule.stage_for_epoch(4) == 2 and schedule.stage_for_epoch(10) == 2
    assert schedule.stage_for_epoch(11) == 3 and schedule.stage_for_epoch(20) == 3
    assert schedule.stage_for_epoch(21) == 4 and schedule.stage_for_epoch(50) == 4
    assert schedule.stage_ends() == [3, 10, 20, 50]


def test_curriculum_distributions_sum_to_one():
    schedule = CurriculumSchedule(total_epochs=20)
    for epoch in range(1, 21):
        dist = schedule.distribution(epoch)
        assert sum(dist.values()) == pytest.approx(1.0)
    assert schedule.distribution(1) == {"identity": 1.0}
    assert set(schedule.distribution(3)) == set(KINDS) - {"identity"} - set(HARD_KINDS)
    info = schedule.describe(15)
    assert info.stage == 4 and info.climb_probability == pytest.approx(0.6)


def test_curriculum_epoch_out_of_range():
    with pytest.raises(ValueError):
        CurriculumSchedule(total_epochs=5).stage_for_epoch(6)
    with pytest.raises(ValueError):
        CurriculumSchedule(total_epochs=5).stage_for_epoch(0)


def test_curriculum_validation():
    with pytest.raises(ValidationError):
        CurriculumSchedule(stage_fractions=(0.5, 0.2, 0.4))
    with pytest.raises(ValidationError):
        CurriculumSchedule(climb_probabilities=(0, 0, 0.3, 1.5))
    with pytest.raises(ValidationError):
        CurriculumSchedule(hard_kinds=("g_blur",))


def test_stage_one_always_identity():
    schedule = CurriculumSchedule(total_epochs=50)
    rng = np.random.default_rng(0)
    assert {sample_spec(schedule, 2, rng).kind for _ in range(500)} == {"identity"}


def test_climb_probabilities_monte_carlo():
    schedule = CurriculumSchedule(total_epochs=50)
    for epoch, target in ((15, 0.3), (30, 0.6)):
        rng = np.random.default_rng(epoch)
        hard = sum(sample_spec(schedule, epoch, rng).kind in HARD_KINDS for _ in range(100_000))
        assert abs(hard / 100_000 - target) <= 0.01


def test_uniform_mode_from_first_epoch():
    schedule = CurriculumSchedule(total_epochs=10, mode="uniform")
    dist = schedule.distribution(1)
    assert set(dist) == set(KINDS) - {"identity"}
    assert len(set(dist.values())) == 1


def test_sample_spec_reproducible():
    schedule = CurriculumSchedule(total_epochs=20)
    a = [sample_spec(schedule, 12, np.random.default_rng(9)).serialize() for _ in range(3)]
    assert len(set(a)) == 1

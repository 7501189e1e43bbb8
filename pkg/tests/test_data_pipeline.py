import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from gifguard.data_pipeline import (
    GifClipDataset,
    SampleRecord,
    build_dataset,
    check_identity_disjoint,
    denormalize,
    extract_clip,
    load_manifest,
    message_from_hex,
    message_to_hex,
    normalize,
    random_messages,
    synth_face_gif,
)
from gifguard.errors import ClipError, DatasetError


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_normalize_range_and_layout():
    frames = np.zeros((4, 6, 8, 3), dtype=np.uint8)
    frames[..., 0] = 255
    g = normalize(frames)
    assert g.shape == (3, 4, 6, 8)
    assert g.dtype == torch.float32
    assert g[0].eq(1.0).all() and g[1].eq(-1.0).all()


def test_denormalize_inverts_normalize():
    rng = np.random.default_rng(0)
    frames = rng.integers(0, 256, size=(2, 3, 5, 7, 3), dtype=np.uint8)
    assert np.array_equal(denormalize(normalize(frames)), frames)


def test_denormalize_clamps():
    g = torch.tensor([-3.0, 3.0]).view(1, 1, 1, 2).expand(3, 1, 1, 2)
    assert denormalize(g).reshape(-1, 3).tolist() == [[0, 0, 0], [255, 255, 255]]


def test_normalize_rejects_float_frames():
    with pytest.raises(ValueError):
        normalize(np.zeros((2, 4, 4, 3), dtype=np.float32))


def test_message_hex_roundtrip_msb_first():
    bits = message_from_hex("80000001", 32)
    assert bits[0] == 1 and bits[-1] == 1 and bits[1:-1].sum() == 0
    assert message_to_hex(bits) == "80000001"
    assert message_to_hex(message_from_hex("0xDEADbeef", 32)) == "deadbeef"


def test_message_hex_wrong_length():
    with pytest.raises(ValueError):
        message_from_hex("abc", 32)
    with pytest.raises(ValueError):
        message_from_hex("zzzzzzzz", 32)


def test_random_messages_seeded():
    a = random_messages(4, 32, torch.Generator().manual_seed(1))
    b = random_messages(4, 32, torch.Generator().manual_seed(1))
    assert torch.equal(a, b)
    assert set(a.unique().tolist()) <= {0.0, 1.0}


def test_synth_face_deterministic_identity():
    clip_a, id_a = synth_face_gif(7, frames=5, height=32, width=32)
    clip_b, id_b = synth_face_gif(7, frames=5, height=32, width=32)
    clip_c, id_c = synth_face_gif(8, frames=5, height=32, width=32)
    assert np.array_equal(clip_a, clip_b)
    assert id_a == id_b == "id-00000007"
    assert id_c != id_a
    assert clip_a.shape == (5, 32, 32, 3) and clip_a.dtype == np.uint8
    # every frame moves
    assert all(not np.array_equal(clip_a[t], clip_a[t + 1]) for t in range(4))


def test_synth_face_needs_two_frames():
    with pytest.raises(ValueError):
        synth_face_gif(0, frames=1)


def test_extract_clip_from_first_detection():
    video = [np.full((40, 60, 3), i, dtype=np.uint8) for i in range(30)]
    clip = extract_clip(video, lambda f: f[0, 0, 0] >= 5, frames=10, height=16, width=16)
    assert clip.shape == (10, 16, 16, 3)
    assert clip[0, 0, 0, 0] == 5 and clip[-1, 0, 0, 0] == 14


def test_extract_clip_too_short():
    video = [np.full((20, 20, 3), i, dtype=np.uint8) for i in range(20)]
    with pytest.raises(ClipError, match="clip too short"):
        extract_clip(video, lambda f: f[0, 0, 0] >= 15, frames=10)


def test_extract_clip_no_face():
    video = [np.zeros((20, 20, 3), dtype=np.uint8) for _ in range(12)]
    with pytest.raises(ClipError, match="no face found"):
        extract_clip(video, lambda f: False)


def test_build_dataset_layout_and_disjoint(tiny_dataset):
    df = load_manifest(tiny_dataset)
    assert df["split"].value_counts().to_dict() == {"train": 4, "val": 1, "test": 1}
    assert check_identity_disjoint(df)
    assert df.attrs["header"]["frames"] == 4
    assert df.attrs["header"]["interpolation"] == "bilinear"
    lines = tiny_dataset.read_text().splitlines()
    assert len(lines) == 7
    assert all(json.loads(line) for line in lines)


def test_build_dataset_reproducible(tmp_path):
    a = build_dataset(2, 1, 1, tmp_path / "a", seed=5, frames=3, height=16, width=16)
    b = build_dataset(2, 1, 1, tmp_path / "b", seed=5, frames=3, height=16, width=16)
    assert digest(a) == digest(b)
    for path in load_manifest(a)["frames_path"]:
        name = Path(path).relative_to(tmp_path / "a")
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_build_dataset_collision_and_overwrite(tmp_path):
    build_dataset(1, 1, 1, tmp_path, seed=0, frames=2, height=16, width=16)
    with pytest.raises(DatasetError):
        build_dataset(1, 1, 1, tmp_path, seed=0, frames=2, height=16, width=16)
    manifest = build_dataset(2, 1, 1, tmp_path, seed=1, frames=2, height=16, width=16,
                             overwrite=True)
    assert len(load_manifest(manifest)) == 4


def test_load_manifest_malformed(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text('{"clip_id": "a"}\n')
    with pytest.raises(DatasetError):
        load_manifest(path)
    path.write_text("not json\n")
    with pytest.raises(DatasetError):
        load_manifest(path)


def test_sample_record_rejects_unknown_split():
    with pytest.raises(DatasetError):
        SampleRecord("c", "i", "p.gif", "holdout")


def test_dataset_items(tiny_dataset):
    ds = GifClipDataset(tiny_dataset, "train", (4, 16, 16))
    assert len(ds) == 4
    g = ds[0]
    assert g.shape == (3, 4, 16, 16)
    assert g.min() >= -1.0 and g.max() <= 1.0
    assert np.array_equal(denormalize(g), ds.frames(0))


def test_dataset_dims_mismatch(tiny_dataset):
    ds = GifClipDataset(tiny_dataset, "test", (10, 16, 16))
    with pytest.raises(ClipError):
        ds[0]


def test_dataset_empty_split(tiny_dataset):
    df = load_manifest(tiny_dataset)
    with pytest.raises(DatasetError):
        GifClipDataset(df[df["split"] != "val"], "val")

# file: data_pipeline.py
"""
Desk-scale face-GIF dataset: procedural synthetic faces, clip extraction from user video,
identity-disjoint splits written as real GIF files, and the tensor conversions used everywhere
else in the package.
"""

import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from PIL import Image
from torch.utils.data import Dataset
from tqdm import tqdm

from .errors import ClipError, DatasetError
from .gif_codec import IndexedGif, gif_read, gif_write

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.jsonl"
MANIFEST_FORMAT = "gifguard-manifest"
MANIFEST_VERSION = 1
SEED_STRIDE = 1_000_000

PathLike = Union[str, Path]


@dataclass
class SampleRecord:
    clip_id: str
    identity_id: str
    frames_path: str
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split '{self.split}'")


# --- Tensor conversions -----------------------------------------------------------------------

def normalize(frames: np.ndarray) -> torch.Tensor:
    """uint8 (T, H, W, 3) -> float32 (3, T, H, W) in [-1, 1]; a leading batch axis is kept."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8:
        raise ValueError(f"expected uint8 frames, got {frames.dtype}")
    if frames.ndim not in (4, 5) or frames.shape[-1] != 3:
        raise ValueError(f"expected (..., T, H, W, 3) frames, got {frames.shape}")
    g = torch.from_numpy(np.ascontiguousarray(frames)).to(torch.float32) / 127.5 - 1.0
    return g.movedim(-1, -4)


def denormalize(g: torch.Tensor) -> np.ndarray:
    """float (3, T, H, W) -> uint8 (T, H, W, 3), rounded and clamped to [0, 255]."""
    if g.dim() not in (4, 5) or g.shape[-4] != 3:
        raise ValueError(f"expected (..., 3, T, H, W) tensor, got {tuple(g.shape)}")
    pixels = ((g.detach().cpu().to(torch.float64) + 1.0) * 127.5).round().clamp(0, 255)
    return pixels.to(torch.uint8).movedim(-4, -1).numpy()


# --- Messages ---------------------------------------------------------------------------------

def random_messages(batch_size: int, payload_len: int,
                    generator: Optional[torch.Generator] = None) -> torch.Tensor:
    bits = torch.randint(0, 2, (batch_size, payload_len), generator=generator)
    return bits.to(torch.float32)


def message_from_hex(text: str, payload_len: int) -> torch.Tensor:
    """Parse an L/4-character hex string into an L-bit float tensor, most significant bit first."""
    if payload_len % 4:
        raise ValueError("hex messages need a payload length divisible by 4")
    text = text.strip().lower().removeprefix("0x")
    if len(text) != payload_len // 4:
        raise ValueError(f"message must be {payload_len // 4} hex characters, got {len(text)}")
    try:
        value = int(text, 16)
    except ValueError as exc:
        raise ValueError(f"'{text}' is not a hex string") from exc
    bits = [(value >> (payload_len - 1 - i)) & 1 for i in range(payload_len)]
    return torch.tensor(bits, dtype=torch.float32)


def message_to_hex(bits) -> str:
    bits = [int(b) for b in torch.as_tensor(bits).flatten().round().tolist()]
    if len(bits) % 4:
        raise ValueError("hex messages need a payload length divisible by 4")
    value = 0
    for b in bits:
        value = (value << 1) | b
    return f"{value:0{len(bits) // 4}x}"


# --- Synthetic faces --------------------------------------------------------------------------

def _soft_ellipse(u: np.ndarray, v: np.ndarray, rx: float, ry: float) -> np.ndarray:
    radius = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    # roughly one pixel of anti-aliased edge
    return np.clip((1.0 - radius) * min(rx, ry) + 0.5, 0.0, 1.0)


def _paint(image: np.ndarray, mask: np.ndarray, color: np.ndarray) -> np.ndarray:
    return image * (1.0 - mask[..., None]) + color * mask[..., None]


def synth_face_gif(seed: int, frames: int = 10, height: int = 64,
                   width: int = 64) -> Tuple[np.ndarray, str]:
    """
    Procedural talking-head clip. Face geometry, colors and motion are drawn from the seed, so
    the identity is `id-<seed>`; the background texture scrolls so every frame differs.
    """
    if frames < 2:
        raise ValueError("synthetic clips need at least 2 frames")
    rng = np.random.default_rng(seed)
    identity_id = f"id-{seed:08d}"

    face_ry = rng.uniform(0.28, 0.38) * height
    face_rx = rng.uniform(0.22, 0.30) * width
    skin = rng.uniform([150, 100, 80], [240, 190, 160])
    bg_a = rng.uniform(0, 120, 3)
    bg_b = rng.uniform(100, 255, 3)
    tex_freq = rng.uniform(0.15, 0.6, 2)
    tex_phase = rng.uniform(0, 2 * np.pi)

    eye_dx = rng.uniform(0.30, 0.45) * face_rx
    eye_dy = rng.uniform(0.20, 0.35) * face_ry
    eye_r = rng.uniform(0.09, 0.15) * face_rx
    eye_color = rng.uniform(0, 80, 3)
    mouth_dy = rng.uniform(0.35, 0.55) * face_ry
    mouth_rx = rng.uniform(0.25, 0.50) * face_rx
    mouth_ry = rng.uniform(0.06, 0.12) * face_ry
    mouth_color = rng.uniform([120, 20, 30], [200, 80, 90])

    drift = rng.uniform(-0.02, 0.02, 2) * np.array([height, width])
    sway = rng.uniform(0.01, 0.05, 2) * np.array([height, width])
    omega = rng.uniform(0.3, 0.9)
    tilt = rng.uniform(0.03, 0.15)
    blink_at = rng.integers(0, frames)

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    clip = np.empty((frames, height, width, 3), dtype=np.uint8)
    for t in range(frames):
        cy = height / 2 + drift[0] * t + sway[0] * np.sin(omega * t)
        cx = width / 2 + drift[1] * t + sway[1] * np.cos(omega * t)
        theta = tilt * np.sin(omega * t + 0.5)

        texture = 0.5 + 0.5 * np.sin(tex_freq[0] * xx + tex_freq[1] * yy + tex_phase + 0.4 * t)
        image = bg_a * (1.0 - texture[..., None]) + bg_b * texture[..., None]

        dy, dx = yy - cy, xx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        image = _paint(image, _soft_ellipse(u, v, face_rx, face_ry), skin)

        openness = 0.25 if t == blink_at else 1.0
        for side in (-1.0, 1.0):
            eye = _soft_ellipse(u - side * eye_dx, v + eye_dy, eye_r, max(eye_r * openness, 0.6))
            image = _paint(image, eye, eye_color)
        talk = 1.0 + 0.5 * np.sin(1.7 * omega * t)
        image = _paint(image, _soft_ellipse(u, v - mouth_dy, mouth_rx, mouth_ry * talk), mouth_color)

        clip[t] = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return clip, identity_id


# --- Real video ingestion ---------------------------------------------------------------------

def _center_crop_resize(frame: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = frame.shape[:2]
    target = width / height
    if w / h > target:
        crop_w, crop_h = max(1, int(round(h * target))), h
    else:
        crop_w, crop_h = w, max(1, int(round(w / target)))
    top, left = (h - crop_h) // 2, (w - crop_w) // 2
    window = np.ascontiguousarray(frame[top:top + crop_h, left:left + crop_w, :3], dtype=np.uint8)
    resized = Image.fromarray(window).resize((width, height), Image.Resampling.BILINEAR)
    return np.asarray(resized, dtype=np.uint8)


def extract_clip(video_frames: Sequence[np.ndarray], face_present: Callable[[np.ndarray], bool],
                 frames: int = 10, height: int = 64, width: int = 64) -> np.ndarray:
    """Take `frames` consecutive frames starting at the first detected face, center-cropped."""
    video_frames = list(video_frames)
    start = next((i for i, f in enumerate(video_frames) if face_present(f)), None)
    if start is None:
        raise ClipError("no face found")
    if len(video_frames) - start < frames:
        raise ClipError("clip too short")
    window = video_frames[start:start + frames]
    return np.stack([_center_crop_resize(np.asarray(f), height, width) for f in window])


# --- Dataset build ----------------------------------------------------------------------------

def _split_seeds(n_train: int, n_val: int, n_test: int, seed: int) -> Dict[str, List[int]]:
    base = seed * SEED_STRIDE
    counts = {"train": n_train, "val": n_val, "test": n_test}
    seeds, offset = {}, base
    for split in SPLITS:
        seeds[split] = list(range(offset, offset + counts[split]))
        offset += counts[split]
    return seeds


def _render_sample(job: Tuple[int, str, str, int, int, int]) -> Tuple[str, str]:
    sample_seed, split, path, frames, height, width = job
    clip, identity_id = synth_face_gif(sample_seed, frames, height, width)
    gif_write(IndexedGif.from_frames(clip), path)
    return identity_id, path


def build_dataset(n_train: int, n_val: int, n_test: int, out_dir: PathLike, seed: int = 0,
                  frames: int = 10, height: int = 64, width: int = 64,
                  overwrite: bool = False, workers: int = 0) -> Path:
    """
    Render an identity-disjoint synthetic dataset under `out_dir` and return the manifest path.

    Each split draws its sample seeds from its own contiguous range, so identities never cross
    splits. Output is byte-reproducible for a given seed.
    """
    for name, count in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if count < 1:
            raise ValueError(f"{name} must be at least 1")
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    existing = [out_dir / s for s in SPLITS if (out_dir / s).exists()]
    if manifest_path.exists() or existing:
        if not overwrite:
            raise DatasetError(f"{out_dir} already holds a dataset; pass overwrite to replace it")
        logger.info("Overwriting dataset in %s", out_dir)
        for split_dir in existing:
            shutil.rmtree(split_dir)
        manifest_path.unlink(missing_ok=True)

    jobs, records = [], []
    for split, seeds in _split_seeds(n_train, n_val, n_test, seed).items():
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        for sample_seed in seeds:
            clip_id = f"{split}-{sample_seed:08d}"
            rel_path = f"{split}/{clip_id}.gif"
            jobs.append((sample_seed, split, str(out_dir / rel_path), frames, height, width))
            records.append((clip_id, rel_path, split))

    if workers > 0:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(_render_sample, jobs, chunksize=8), total=len(jobs),
                                desc="build-dataset"))
    else:
        results = [_render_sample(job) for job in tqdm(jobs, desc="build-dataset")]

    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "seed": seed,
        "frames": frames,
        "height": height,
        "width": width,
        "crop": "center",
        "interpolation": "bilinear",
    }
    lines = [json.dumps(header, sort_keys=True)]
    for (clip_id, rel_path, split), (identity_id, _) in zip(records, results):
        record = SampleRecord(clip_id, identity_id, rel_path, split)
        lines.append(json.dumps(asdict(record), sort_keys=True))
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote %d samples (%d/%d/%d) to %s", len(records), n_train, n_val, n_test, out_dir)
    return manifest_path


def load_manifest(path: PathLike) -> pd.DataFrame:
    """
    Read a manifest into a DataFrame with one row per sample. `frames_path` is resolved against
    the manifest's directory; the header record is kept in `df.attrs["header"]`.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    header, rows = {}, []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{number}: malformed manifest line") from exc
        if entry.get("format") == MANIFEST_FORMAT:
            header = entry
            continue
        try:
            rows.append(asdict(SampleRecord(**entry)))
        except TypeError as exc:
            raise DatasetError(f"{path}:{number}: malformed manifest record") from exc

    df = pd.DataFrame(rows, columns=["clip_id", "identity_id", "frames_path", "split"])
    df["frames_path"] = df["frames_path"].apply(lambda p: str(path.parent / p))
    df.attrs["header"] = header
    return df


def check_identity_disjoint(df: pd.DataFrame) -> bool:
    groups = [set(df.loc[df["split"] == s, "identity_id"]) for s in SPLITS]
    return all(not (groups[i] & groups[j]) for i in range(3) for j in range(i + 1, 3))


class GifClipDataset(Dataset):
    """Normalized (3, T, H, W) clips of one manifest split; decoded GIFs are cached as uint8."""

    def __init__(self, manifest: Union[PathLike, pd.DataFrame], split: str = "train",
                 dims: Optional[Tuple[int, int, int]] = None):
        df = manifest if isinstance(manifest, pd.DataFrame) else load_manifest(manifest)
        self.records = df[df["split"] == split].reset_index(drop=True)
        if self.records.empty:
            raise DatasetError(f"split '{split}' has no samples")
        self.dims = tuple(dims) if dims is not None else None
        self._cache: Dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.records)

    def frames(self, index: int) -> np.ndarray:
        if index not in self._cache:
            clip = gif_read(self.records.at[index, "frames_path"]).to_frames()
            if self.dims is not None and clip.shape[:3] != self.dims:
                raise ClipError(
                    f"{self.records.at[index, 'clip_id']}: expected {self.dims}, got {clip.shape[:3]}"
                )
            self._cache[index] = clip
        return self._cache[index]

    def __getitem__(self, index: int) -> torch.Tensor:
        return normalize(self.frames(index))

# file: rds.py
"""
Distortion simulator: a pool of differentiable attacks applied between encoder and decoder,
the soft-rounding JPEG proxy, the frozen reconstruction surrogate that stands in for face-swap
generators, and the staged curriculum that decides which attack each step sees.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import kornia
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field, field_validator, model_validator

from .errors import SurrogateUnavailable, UnknownDistortion

logger = logging.getLogger(__name__)

BASE_KINDS = (
    "g_blur",
    "g_noise",
    "salt_pepper",
    "median3d",
    "diff_jpeg",
    "frame_drop",
    "frame_shuffle",
    "frame_replace",
)
HARD_KINDS = ("random_crop", "semantic_surrogate")
KINDS = ("identity",) + BASE_KINDS + HARD_KINDS
TEMPORAL_KINDS = ("frame_drop", "frame_shuffle", "frame_replace")

DEFAULT_PARAMS: Dict[str, Dict[str, Any]] = {
    "identity": {},
    "g_blur": {"kernel_size": 5, "sigma": 1.0},
    "g_noise": {"sigma": 0.05},
    "salt_pepper": {"ratio": 0.005},
    "median3d": {},
    "diff_jpeg": {"quality": 75},
    "frame_drop": {"p_drop": 0.7},
    "frame_shuffle": {},
    "frame_replace": {},
    "random_crop": {"scale_min": 0.8, "scale_max": 1.0},
    "semantic_surrogate": {"variant": "ae4", "mask_scale": 1.0},
}

# command-line names
ALIASES = {
    "identity": "identity",
    "g-blur": "g_blur",
    "g-noise": "g_noise",
    "salt-pep": "salt_pepper",
    "median": "median3d",
    "jpeg": "diff_jpeg",
    "drop": "frame_drop",
    "shuffle": "frame_shuffle",
    "f-repl": "frame_replace",
    "crop": "random_crop",
    "surrogate": "semantic_surrogate",
}


def resolve_kind(name: str) -> str:
    if name in KINDS:
        return name
    if name in ALIASES:
        return ALIASES[name]
    raise UnknownDistortion(f"unknown distortion kind '{name}'")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# a replayed crop pins its window through these
CROP_WINDOW_PARAMS = frozenset({"scale", "top", "left"})


def _check_params(kind: str, params: Mapping[str, Any]):
    allowed = set(DEFAULT_PARAMS[kind]) | (CROP_WINDOW_PARAMS if kind == "random_crop" else set())
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"{kind}: unknown parameter(s) {sorted(unknown)}")
    if kind == "g_blur":
        if params["kernel_size"] < 1 or params["kernel_size"] % 2 == 0:
            raise ValueError("g_blur: kernel_size must be a positive odd integer")
        if params["sigma"] <= 0:
            raise ValueError("g_blur: sigma must be positive")
    elif kind == "g_noise" and params["sigma"] < 0:
        raise ValueError("g_noise: sigma must be non-negative")
    elif kind == "salt_pepper" and not 0.0 <= params["ratio"] <= 1.0:
        raise ValueError("salt_pepper: ratio must lie in [0, 1]")
    elif kind == "diff_jpeg" and not 1 <= int(params["quality"]) <= 100:
        raise ValueError("diff_jpeg: quality must lie in [1, 100]")
    elif kind == "frame_drop" and not 0.0 <= params["p_drop"] < 1.0:
        raise ValueError("frame_drop: p_drop must lie in [0, 1)")
    elif kind == "random_crop":
        if not 0.0 < params["scale_min"] <= params["scale_max"] <= 1.0:
            raise ValueError("random_crop: need 0 < scale_min <= scale_max <= 1")
        if "scale" in params and not 0.0 < params["scale"] <= 1.0:
            raise ValueError("random_crop: scale must lie in (0, 1]")
    elif kind == "semantic_surrogate" and params["mask_scale"] <= 0:
        raise ValueError("semantic_surrogate: mask_scale must be positive")


@dataclass
class DistortionSpec:
    """One attack: kind, parameter overrides and the seed of its private RNG."""

    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.kind = resolve_kind(self.kind)
        self.params = dict(self.params)
        _check_params(self.kind, self.resolved_params)

    @property
    def resolved_params(self) -> Dict[str, Any]:
        return {**DEFAULT_PARAMS[self.kind], **self.params}

    def serialize(self) -> str:
        """Flat `kind=...;name=value;...;seed=N` record, parameters in name order."""
        parts = [f"kind={self.kind}"]
        for name, value in sorted(self.resolved_params.items()):
            parts.append(f"{name}={value if isinstance(value, str) else json.dumps(value)}")
        parts.append(f"seed={self.seed}")
        return ";".join(parts)

    @classmethod
    def parse(cls, text: str) -> "DistortionSpec":
        fields = {}
        for part in filter(None, text.strip().split(";")):
            name, sep, value = part.partition("=")
            if not sep:
                raise ValueError(f"malformed distortion field '{part}'")
            fields[name.strip()] = value.strip()
        if "kind" not in fields:
            raise ValueError("distortion record has no kind")
        kind = fields.pop("kind")
        seed = int(fields.pop("seed", 0))
        return cls(kind, {k: _parse_value(v) for k, v in fields.items()}, seed)


class DistortionResult(NamedTuple):
    output: torch.Tensor
    metadata: Dict[str, Any]


# --- Frame helpers ----------------------------------------------------------------------------

def _to_frames(g: torch.Tensor) -> torch.Tensor:
    b, c, t, h, w = g.shape
    return g.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)


def _from_frames(x: torch.Tensor, batch: int, frames: int) -> torch.Tensor:
    _, c, h, w = x.shape
    return x.reshape(batch, frames, c, h, w).permute(0, 2, 1, 3, 4)


def _generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


# --- Signal distortions -----------------------------------------------------------------------

def gaussian_blur(g: torch.Tensor, kernel_size: int = 5, sigma: float = 1.0) -> torch.Tensor:
    b, _, t, _, _ = g.shape
    blurred = kornia.filters.gaussian_blur2d(
        _to_frames(g), (kernel_size, kernel_size), (sigma, sigma), border_type="reflect"
    )
    return _from_frames(blurred, b, t)


def gaussian_noise(g: torch.Tensor, sigma: float, gen: torch.Generator) -> torch.Tensor:
    noise = torch.randn(g.shape, generator=gen, dtype=torch.float64)
    return g + sigma * noise.to(device=g.device, dtype=g.dtype)


def salt_and_pepper(g: torch.Tensor, ratio: float, gen: torch.Generator) -> torch.Tensor:
    b, _, t, h, w = g.shape
    hit = torch.rand((b, 1, t, h, w), generator=gen) < ratio
    salt = torch.rand((b, 1, t, h, w), generator=gen) < 0.5
    value = salt.to(g.dtype) * 2.0 - 1.0
    return torch.where(hit.to(g.device), value.to(g.device).expand_as(g), g)


def median_filter3d(g: torch.Tensor) -> torch.Tensor:
    """3x3x3 median over (T, H, W) with replicate padding."""
    padded = F.pad(g, (1, 1, 1, 1, 1, 1), mode="replicate")
    windows = padded.unfold(2, 3, 1).unfold(3, 3, 1).unfold(4, 3, 1)
    return windows.reshape(*g.shape, 27).median(dim=-1).values


# --- Differentiable JPEG ----------------------------------------------------------------------

_LUMA_TABLE = (
    (16, 11, 10, 16, 24, 40, 51, 61),
    (12, 12, 14, 19, 26, 58, 60, 55),
    (14, 13, 16, 24, 40, 57, 69, 56),
    (14, 17, 22, 29, 51, 87, 80, 62),
    (18, 22, 37, 56, 68, 109, 103, 77),
    (24, 35, 55, 64, 81, 104, 113, 92),
    (49, 64, 78, 87, 103, 121, 120, 101),
    (72, 92, 95, 98, 112, 100, 103, 99),
)
_CHROMA_TABLE = (
    (17, 18, 24, 47, 99, 99, 99, 99),
    (18, 21, 26, 66, 99, 99, 99, 99),
    (24, 26, 56, 99, 99, 99, 99, 99),
    (47, 66, 99, 99, 99, 99, 99, 99),
) + ((99,) * 8,) * 4


def quality_scale(quality: int) -> int:
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def quantization_tables(quality: int) -> np.ndarray:
    """(3, 8, 8) tables for Y, Cb, Cr at the given quality, IJG scaling, entries in [1, 255]."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must lie in [1, 100], got {quality}")
    scale = quality_scale(quality)
    base = np.array([_LUMA_TABLE, _CHROMA_TABLE, _CHROMA_TABLE], dtype=np.int64)
    return np.clip((base * scale + 50) // 100, 1, 255)


def dct_matrix(n: int = 8, dtype=torch.float32, device=None) -> torch.Tensor:
    """Orthonormal DCT-II matrix D; a block B transforms as D @ B @ D.T."""
    k = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(n, dtype=torch.float64)[None, :]
    d = torch.cos(math.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    d[0] /= math.sqrt(2.0)
    return d.to(dtype=dtype, device=device)


def soft_round(x: torch.Tensor) -> torch.Tensor:
    rounded = torch.round(x).detach()
    return rounded + (x - rounded) ** 3


def diff_jpeg(g: torch.Tensor, quality: int = 75) -> torch.Tensor:
    """
    JPEG proxy on a normalized (B, 3, T, H, W) clip: YCbCr, 8x8 orthonormal DCT per channel
    (no chroma subsampling), quantization with soft rounding, inverse transform.
    """
    quality = int(quality)
    tables = torch.as_tensor(quantization_tables(quality), dtype=g.dtype, device=g.device)
    b, _, t, h, w = g.shape
    frames = _to_frames(g)

    ycc = kornia.color.rgb_to_ycbcr((frames + 1.0) / 2.0) * 255.0 - 128.0
    pad_h, pad_w = (-h) % 8, (-w) % 8
    if pad_h or pad_w:
        ycc = F.pad(ycc, (0, pad_w, 0, pad_h), mode="replicate")
    n, c, hp, wp = ycc.shape
    blocks = ycc.reshape(n, c, hp // 8, 8, wp // 8, 8).permute(0, 1, 2, 4, 3, 5)

    d = dct_matrix(8, g.dtype, g.device)
    table = tables[None, :, None, None]
    coeffs = d @ blocks @ d.T
    restored = soft_round(coeffs / table) * table
    pixels = d.T @ restored @ d

    ycc = pixels.permute(0, 1, 2, 4, 3, 5).reshape(n, c, hp, wp)[:, :, :h, :w]
    rgb = kornia.color.ycbcr_to_rgb((ycc + 128.0) / 255.0)
    return _from_frames(rgb * 2.0 - 1.0, b, t)


# --- Temporal and geometric distortions -------------------------------------------------------

def drop_fill_indices(kept: Sequence[bool]) -> List[int]:
    """Source frame for every slot: itself if kept, else the nearest kept earlier frame,
    else the nearest kept later one."""
    kept = list(kept)
    if not any(kept):
        raise ValueError("at least one frame must be kept")
    indices, last = [], None
    for t, keep in enumerate(kept):
        if keep:
            last = t
        indices.append(last)
    first = kept.index(True)
    return [first if i is None else i for i in indices]


def frame_drop(g: torch.Tensor, p_drop: float, gen: torch.Generator):
    frames = g.shape[2]
    kept = (torch.rand(frames, generator=gen) >= p_drop).tolist()
    if not any(kept):
        kept[int(torch.randint(frames, (1,), generator=gen))] = True
    index = drop_fill_indices(kept)
    return g[:, :, index], {"kept": [t for t, k in enumerate(kept) if k]}


def frame_shuffle(g: torch.Tensor, gen: torch.Generator):
    perm = torch.randperm(g.shape[2], generator=gen).tolist()
    return g[:, :, perm], {"permutation": perm}


def frame_replace(g: torch.Tensor, gen: torch.Generator):
    frames = g.shape[2]
    src = int(torch.randint(frames, (1,), generator=gen))
    dst = int(torch.randint(frames - 1, (1,), generator=gen))
    if dst >= src:
        dst += 1
    index = list(range(frames))
    index[dst] = src
    return g[:, :, index], {"source": src, "target": dst}


def random_crop(g: torch.Tensor, params: Mapping[str, Any], gen: torch.Generator):
    b, _, t, h, w = g.shape
    if "scale" in params:
        scale = float(params["scale"])
    else:
        u = float(torch.rand((), generator=gen, dtype=torch.float64))
        scale = params["scale_min"] + (params["scale_max"] - params["scale_min"]) * u
    crop_h, crop_w = max(1, math.floor(scale * h)), max(1, math.floor(scale * w))
    top = params.get("top")
    left = params.get("left")
    if top is None:
        top = int(torch.randint(h - crop_h + 1, (1,), generator=gen))
    if left is None:
        left = int(torch.randint(w - crop_w + 1, (1,), generator=gen))
    if not (0 <= top <= h - crop_h and 0 <= left <= w - crop_w):
        raise ValueError("random_crop: window falls outside the frame")

    window = _to_frames(g[:, :, :, top:top + crop_h, left:left + crop_w])
    resized = F.interpolate(window, size=(h, w), mode="bilinear", align_corners=False)
    meta = {"scale": scale, "top": top, "left": left}
    return _from_frames(resized, b, t), meta


# --- Semantic surrogate -----------------------------------------------------------------------

class SemanticSurrogate(nn.Module):
    """
    Per-frame convolutional autoencoder with a 4x (or 8x) spatial bottleneck. After fitting it
    is frozen; its reconstructions drop the high-frequency content a face-swap would repaint.
    """

    def __init__(self, bottleneck: int = 4):
        super().__init__()
        if bottleneck not in (4, 8):
            raise ValueError("bottleneck must be 4 or 8")
        self.bottleneck = bottleneck
        encoder = [nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.ReLU(),
                   nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU()]
        decoder = [nn.ConvTranspose2d(32, 16, 4, stride=2, padding=1), nn.ReLU(),
                   nn.ConvTranspose2d(16, 3, 4, stride=2, padding=1), nn.Tanh()]
        if bottleneck == 8:
            encoder += [nn.Conv2d(32, 32, 3, stride=2, padding=1), nn.ReLU()]
            decoder = [nn.ConvTranspose2d(32, 32, 4, stride=2, padding=1), nn.ReLU()] + decoder
        self.encoder = nn.Sequential(*encoder)
        self.decoder = nn.Sequential(*decoder)
        self.register_buffer("fitted", torch.zeros((), dtype=torch.bool))

    @property
    def name(self) -> str:
        return f"ae{self.bottleneck}"

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(frames))

    def reconstruct(self, g: torch.Tensor) -> torch.Tensor:
        b, _, t, _, _ = g.shape
        return _from_frames(self(_to_frames(g)), b, t)

    def freeze(self) -> "SemanticSurrogate":
        for p in self.parameters():
            p.requires_grad_(False)
        self.fitted.fill_(True)
        return self.eval()


SurrogateArg = Optional[Union[SemanticSurrogate, Mapping[str, SemanticSurrogate]]]


def fit_surrogate(surrogate: SemanticSurrogate, clips: Sequence[torch.Tensor], steps: int = 300,
                  batch_size: int = 16, lr: float = 1e-3, seed: int = 0) -> SemanticSurrogate:
    """Fit the autoencoder to reconstruct frames of clean (3, T, H, W) clips, then freeze it."""
    if len(clips) == 0:
        raise SurrogateUnavailable("surrogate unavailable: no clips to fit on")
    gen = _generator(seed)
    device = next(surrogate.parameters()).device
    frames = torch.cat([_to_frames(c.unsqueeze(0)) for c in clips]).to(device)
    optimizer = torch.optim.Adam(surrogate.parameters(), lr=lr)
    surrogate.train()
    loss = torch.zeros(())
    for _ in range(steps):
        index = torch.randint(len(frames), (min(batch_size, len(frames)),), generator=gen)
        batch = frames[index.to(device)]
        loss = F.mse_loss(surrogate(batch), batch)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    logger.info("Fitted surrogate %s for %d steps (final mse %.5f)", surrogate.name, steps,
                float(loss))
    return surrogate.freeze()


def central_face_mask(frames: int, height: int, width: int, scale: float = 1.0,
                      device=None, dtype=torch.float32) -> torch.Tensor:
    """Binary (T, H, W) ellipse centred in the frame, the shared face track for every frame."""
    yy = torch.arange(height, dtype=torch.float64)[:, None] + 0.5 - height / 2
    xx = torch.arange(width, dtype=torch.float64)[None, :] + 0.5 - width / 2
    ry, rx = 0.42 * height * scale, 0.34 * width * scale
    inside = (yy / ry) ** 2 + (xx / rx) ** 2 <= 1.0
    return inside.expand(frames, height, width).to(device=device, dtype=dtype)


def feather_mask(mask: torch.Tensor, width: int = 2) -> torch.Tensor:
    """Soften a binary (B, T, H, W) mask inwards over `width` pixels; outside stays 0."""
    b, t, h, w = mask.shape
    flat = mask.reshape(b * t, 1, h, w)
    size = 2 * width + 1
    blurred = F.avg_pool2d(flat, size, stride=1, padding=width, count_include_pad=False)
    return (flat * blurred).reshape(b, t, h, w)


def _select_surrogate(surrogate: SurrogateArg, variant: str) -> SemanticSurrogate:
    if isinstance(surrogate, Mapping):
        surrogate = surrogate.get(variant)
    if surrogate is None or not bool(surrogate.fitted):
        raise SurrogateUnavailable("surrogate unavailable")
    return surrogate


def semantic_surrogate(g: torch.Tensor, face_mask: torch.Tensor,
                       surrogate: Optional[SemanticSurrogate]) -> torch.Tensor:
    """Replace the masked face region by the frozen surrogate's reconstruction."""
    if surrogate is None or not bool(surrogate.fitted):
        raise SurrogateUnavailable("surrogate unavailable")
    b, _, t, h, w = g.shape
    mask = face_mask.to(device=g.device, dtype=g.dtype)
    if mask.dim() == 3:
        mask = mask.expand(b, t, h, w)
    soft = feather_mask(mask)[:, None]
    return g * (1.0 - soft) + surrogate.reconstruct(g) * soft


def surrogate_calibration(surrogate: SemanticSurrogate, g_co: torch.Tensor, g_w: torch.Tensor,
                          face_mask: torch.Tensor) -> Dict[str, float]:
    """Residual energy inside the mask before and after the surrogate attack."""
    with torch.no_grad():
        attacked = semantic_surrogate(g_w, face_mask, surrogate)
        mask = face_mask.to(device=g_co.device, dtype=g_co.dtype)
        mask = mask.expand(g_co.shape[0], *mask.shape[-3:])[:, None]
        raw = torch.linalg.vector_norm((g_w - g_co) * mask).item()
        after = torch.linalg.vector_norm((attacked - g_co) * mask).item()
    return {"raw_energy": raw, "attacked_energy": after, "passes": after < raw}


# --- Dispatch ---------------------------------------------------------------------------------

def apply_distortion(g: torch.Tensor, spec: DistortionSpec,
                     surrogate: SurrogateArg = None) -> DistortionResult:
    """
    Apply one attack to a (3, T, H, W) clip or (B, 3, T, H, W) batch. The result is a pure
    function of (g, spec); all randomness comes from a CPU generator seeded by `spec.seed`.
    """
    if not isinstance(spec, DistortionSpec):
        raise TypeError("spec must be a DistortionSpec")
    batched = g.dim() == 5
    if not batched and g.dim() != 4:
        raise ValueError(f"expected (3, T, H, W) or (B, 3, T, H, W), got {tuple(g.shape)}")
    x = g if batched else g.unsqueeze(0)
    kind, params = spec.kind, spec.resolved_params
    gen = _generator(spec.seed)
    meta: Dict[str, Any] = {"kind": kind, "spec": spec.serialize()}

    if kind in TEMPORAL_KINDS and x.shape[2] == 1:
        meta["warning"] = f"{kind} needs at least two frames; applied identity"
        logger.debug(meta["warning"])
        out = x
    elif kind == "identity":
        out = x
    elif kind == "g_blur":
        out = gaussian_blur(x, int(params["kernel_size"]), float(params["sigma"]))
    elif kind == "g_noise":
        out = gaussian_noise(x, float(params["sigma"]), gen)
    elif kind == "salt_pepper":
        out = salt_and_pepper(x, float(params["ratio"]), gen)
    elif kind == "median3d":
        out = median_filter3d(x)
    elif kind == "diff_jpeg":
        out = diff_jpeg(x, int(params["quality"]))
    elif kind == "frame_drop":
        out, extra = frame_drop(x, float(params["p_drop"]), gen)
        meta.update(extra)
    elif kind == "frame_shuffle":
        out, extra = frame_shuffle(x, gen)
        meta.update(extra)
    elif kind == "frame_replace":
        out, extra = frame_replace(x, gen)
        meta.update(extra)
    elif kind == "random_crop":
        out, extra = random_crop(x, params, gen)
        meta.update(extra)
    elif kind == "semantic_surrogate":
        model = _select_surrogate(surrogate, str(params["variant"]))
        _, _, t, h, w = x.shape
        mask = central_face_mask(t, h, w, float(params["mask_scale"]), x.device, x.dtype)
        out = semantic_surrogate(x, mask, model)
    else:
        raise UnknownDistortion(f"unknown distortion kind '{kind}'")

    return DistortionResult(out if batched else out[0], meta)


# --- Curriculum -------------------------------------------------------------------------------

class StageInfo(NamedTuple):
    stage: int
    climb_probability: float
    distribution: Dict[str, float]


class CurriculumSchedule(BaseModel):
    """
    Four stages over `total_epochs`. `stage_fractions` are the cumulative ends of stages 1-3;
    stage k samples the hard kinds with total probability climb_probabilities[k-1]. Stage 1 is
    identity only and stage 2 is uniform over the base pool. mode="uniform" ignores the
    stages and samples every kind uniformly from the first epoch.
    """

    total_epochs: int = Field(20, ge=1)
    stage_fractions: Tuple[float, float, float] = (0.06, 0.20, 0.40)
    climb_probabilities: Tuple[float, float, float, float] = (0.0, 0.0, 0.3, 0.6)
    mode: Literal["climb", "uniform"] = "climb"
    hard_kinds: Tuple[str, ...] = HARD_KINDS

    @field_validator("stage_fractions")
    @classmethod
    def _fractions_increase(cls, value):
        if not all(0.0 < f <= 1.0 for f in value) or list(value) != sorted(value):
            raise ValueError("stage_fractions must be increasing values in (0, 1]")
        return value

    @field_validator("climb_probabilities")
    @classmethod
    def _probabilities_in_range(cls, value):
        if not all(0.0 <= p <= 1.0 for p in value):
            raise ValueError("climb probabilities must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _hard_kinds_known(self):
        unknown = [k for k in self.hard_kinds if k not in HARD_KINDS]
        if unknown:
            raise ValueError(f"unsupported hard kinds {unknown}")
        return self

    def stage_for_epoch(self, epoch: int) -> int:
        """1-based stage of a 1-based epoch."""
        if not 1 <= epoch <= self.total_epochs:
            raise ValueError(f"epoch {epoch} outside 1..{self.total_epochs}")
        for stage, fraction in enumerate(self.stage_fractions, start=1):
            if epoch <= fraction * self.total_epochs + 1e-9:
                return stage
        return 4

    def stage_ends(self) -> List[int]:
        """Last epoch of each stage; a stage that gets no epoch repeats the previous end."""
        ends = [math.floor(f * self.total_epochs + 1e-9) for f in self.stage_fractions]
        return ends + [self.total_epochs]

    def distribution(self, epoch: int) -> Dict[str, float]:
        stage = self.stage_for_epoch(epoch)
        if self.mode == "uniform":
            pool = BASE_KINDS + self.hard_kinds
            return {k: 1.0 / len(pool) for k in pool}
        if stage == 1:
            return {"identity": 1.0}
        p = self.climb_probabilities[stage - 1] if self.hard_kinds else 0.0
        dist = {k: (1.0 - p) / len(BASE_KINDS) for k in BASE_KINDS}
        for k in self.hard_kinds:
            dist[k] = p / len(self.hard_kinds)
        return {k: v for k, v in dist.items() if v > 0.0}

    def describe(self, epoch: int) -> StageInfo:
        stage = self.stage_for_epoch(epoch)
        return StageInfo(stage, self.climb_probabilities[stage - 1], self.distribution(epoch))


def sample_spec(schedule: CurriculumSchedule, epoch: int,
                rng: np.random.Generator) -> DistortionSpec:
    dist = schedule.distribution(epoch)
    kinds = list(dist)
    probs = np.array([dist[k] for k in kinds], dtype=np.float64)
    kind = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]
    seed = int(rng.integers(0, 2**31 - 1))
    return DistortionSpec(kind, {}, seed)

# file: dird_decoder.py
"""
Restoration decoder: SE-gated strided 3D convolutions, transposed-convolution restoration and
a projection head whose input width is found by profiling the backbone with a dummy volume.
"""

import dataclasses
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ReprofileRequired
from .stare_encoder import group_count, make_se

logger = logging.getLogger(__name__)

HEAD_MODES = ("adaptive_flat", "global_pool", "grid_interp")


@dataclass
class DecoderConfig:
    payload_len: int = 32
    contracting: Tuple[int, ...] = (16, 32, 64)
    expanding: Tuple[int, ...] = (32, 16)
    head_mode: str = "adaptive_flat"
    grid_size: Tuple[int, int, int] = (4, 8, 8)
    use_se: bool = True
    se_reduction: int = 4
    frames: int = 10
    height: int = 64
    width: int = 64
    inferred_flat_dim: int = 0

    def __post_init__(self):
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}, got '{self.head_mode}'")
        if not self.contracting:
            raise ValueError("the decoder needs at least one contracting block")
        self.contracting = tuple(self.contracting)
        self.expanding = tuple(self.expanding)
        self.grid_size = tuple(self.grid_size)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("contracting", "expanding", "grid_size"):
            data[key] = list(data[key])
        return data


class ContractingBlock(nn.Module):
    """Strided conv, group norm, ReLU, then an SE gate (attentive denoising)."""

    def __init__(self, in_channels, out_channels, use_se=True, reduction=4):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, 3, stride=(1, 2, 2), padding=1)
        self.norm = nn.GroupNorm(group_count(out_channels), out_channels)
        self.se = make_se(out_channels, use_se, reduction)

    def forward(self, x):
        return self.se(F.relu(self.norm(self.conv(x))))


class ExpandingBlock(nn.Module):
    def __init__(self, in_channels, out_channels, use_se=True, reduction=4):
        super().__init__()
        self.conv = nn.ConvTranspose3d(in_channels, out_channels, (1, 2, 2), stride=(1, 2, 2))
        self.norm = nn.GroupNorm(group_count(out_channels), out_channels)
        self.se = make_se(out_channels, use_se, reduction)

    def forward(self, x):
        return self.se(F.relu(self.norm(self.conv(x))))


def build_backbone(cfg: DecoderConfig) -> nn.Sequential:
    layers, channels = [], 3
    for width in cfg.contracting:
        layers.append(ContractingBlock(channels, width, cfg.use_se, cfg.se_reduction))
        channels = width
    for width in cfg.expanding:
        layers.append(ExpandingBlock(channels, width, cfg.use_se, cfg.se_reduction))
        channels = width
    return nn.Sequential(*layers)


def _profile(backbone: nn.Module, channels: int, dims: Sequence[int]) -> torch.Size:
    param = next(backbone.parameters(), None)
    device = param.device if param is not None else torch.device("cpu")
    dtype = param.dtype if param is not None else torch.float32
    was_training = backbone.training
    backbone.eval()
    try:
        with torch.no_grad():
            dummy = torch.zeros(1, channels, *dims, device=device, dtype=dtype)
            first = backbone(dummy).shape
            second = backbone(dummy).shape
    finally:
        backbone.train(was_training)
    if first != second:
        raise ReprofileRequired(f"backbone output shape is not stable: {first} vs {second}")
    return first


def infer_projection_dim(backbone: nn.Module, channels: int, frames: int, height: int,
                         width: int) -> int:
    """Element count of the backbone's flattened output for one (channels, T, H, W) volume."""
    shape = _profile(backbone, channels, (frames, height, width))
    return int(math.prod(shape[1:]))


class DirdDecoder(nn.Module):
    """
    Backbone plus one of three heads:
      adaptive_flat  Linear over the full flattened feature volume (profiled width).
      global_pool    per-channel global average, then Linear over C.
      grid_interp    trilinear resample to `grid_size`, flatten, Linear.
    """

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.backbone = build_backbone(cfg)
        if cfg.inferred_flat_dim <= 0:
            cfg = dataclasses.replace(
                cfg, inferred_flat_dim=infer_projection_dim(self.backbone, 3, *cfg.dims)
            )
            logger.debug("Profiled decoder flat dim %d for dims %s", cfg.inferred_flat_dim, cfg.dims)
        self.cfg = cfg

        out_channels = (cfg.expanding or cfg.contracting)[-1]
        if cfg.head_mode == "adaptive_flat":
            in_features = cfg.inferred_flat_dim
        elif cfg.head_mode == "global_pool":
            in_features = out_channels
        else:
            in_features = out_channels * math.prod(cfg.grid_size)
        self.head = nn.Linear(in_features, cfg.payload_len)

    @property
    def compression_ratio(self) -> float:
        """Feature elements per head input; 1.0 for adaptive_flat."""
        return self.cfg.inferred_flat_dim / self.head.in_features

    def check_dims(self, dims: Sequence[int]):
        if tuple(dims) != self.cfg.dims:
            raise ReprofileRequired(
                f"reprofile required: decoder profiled for {self.cfg.dims}, got {tuple(dims)}"
            )

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        if g.dim() != 5 or g.shape[1] != 3:
            raise ReprofileRequired(f"reprofile required: bad input shape {tuple(g.shape)}")
        self.check_dims(g.shape[2:])
        features = self.backbone(g)
        if self.cfg.head_mode == "adaptive_flat":
            flat = features.flatten(1)
        elif self.cfg.head_mode == "global_pool":
            flat = features.mean(dim=(2, 3, 4))
        else:
            flat = F.interpolate(features, size=self.cfg.grid_size, mode="trilinear",
                                 align_corners=False).flatten(1)
        return self.head(flat)

    def decode(self, g: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return (logits, bits); sigmoid(0) = 0.5 decodes to 0."""
        logits = self.forward(g)
        return logits, logits_to_bits(logits)


def logits_to_bits(logits: torch.Tensor) -> torch.Tensor:
    return (torch.sigmoid(logits) > 0.5).to(logits.dtype)

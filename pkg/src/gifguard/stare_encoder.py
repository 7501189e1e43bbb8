# file: stare_encoder.py
"""
Spatiotemporal residual encoder: the message is lifted to a coarse 3D grid and trilinearly
upsampled, concatenated with the cover, recalibrated by a squeeze-and-excitation gate and
passed through a 3D U-Net whose tanh-bounded output is added to the cover.
"""

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

Dims = Tuple[int, int, int]


@dataclass
class EncoderConfig:
    payload_len: int = 32
    base_channels: int = 16
    depth: int = 2
    alpha: float = 0.05
    message_channels: int = 8
    message_seed_shape: Optional[Dims] = None
    use_se: bool = True
    se_reduction: int = 4
    frames: int = 10
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        step = 2 ** self.depth
        if self.height % step or self.width % step:
            raise ValueError(f"height and width must be divisible by 2**depth = {step}")
        if self.message_seed_shape is None:
            self.message_seed_shape = (
                max(1, self.frames // 2), max(1, self.height // 8), max(1, self.width // 8)
            )
        self.message_seed_shape = tuple(int(d) for d in self.message_seed_shape)

    @property
    def dims(self) -> Dims:
        return (self.frames, self.height, self.width)

    @property
    def message_latent_dim(self) -> int:
        return self.message_channels * math.prod(self.message_seed_shape)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["message_seed_shape"] = list(self.message_seed_shape)
        return data


def group_count(channels: int) -> int:
    return next(g for g in (8, 4, 2, 1) if channels % g == 0)


# --- Squeeze and excitation -------------------------------------------------------------------

def se_recalibrate3d(x: torch.Tensor, w1: torch.Tensor, b1: torch.Tensor,
                     w2: torch.Tensor, b2: torch.Tensor) -> torch.Tensor:
    """
    Channel gate on a (B, C, T, H, W) volume: z = mean over (T, H, W),
    s = sigmoid(W2 relu(W1 z + b1) + b2), output = s_c * x_c.
    """
    z = x.mean(dim=(2, 3, 4))
    s = torch.sigmoid(F.linear(F.relu(F.linear(z, w1, b1)), w2, b2))
    return x * s[:, :, None, None, None]


class SEBlock3d(nn.Module):
    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        return se_recalibrate3d(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


def make_se(channels: int, enabled: bool, reduction: int = 4) -> nn.Module:
    return SEBlock3d(channels, reduction) if enabled else nn.Identity()


# --- Message expansion ------------------------------------------------------------------------

def upsample_latent(latent: torch.Tensor, channels: int, seed_shape: Sequence[int],
                    size: Sequence[int]) -> torch.Tensor:
    """Reshape a (B, C*T'*H'*W') latent to the coarse grid and resize it trilinearly to `size`.

    Corner-aligned: the first and last coarse samples land exactly on the first and last
    target samples along each axis.
    """
    seed_shape, size = tuple(seed_shape), tuple(int(s) for s in size)
    if any(s < c for s, c in zip(size, seed_shape)):
        raise ValueError(f"target size {size} is smaller than the message grid {seed_shape}")
    grid = latent.reshape(latent.shape[0], channels, *seed_shape)
    if size == seed_shape:
        return grid
    return F.interpolate(grid, size=size, mode="trilinear", align_corners=True)


class MessageExpander(nn.Module):
    def __init__(self, payload_len: int, channels: int, seed_shape: Sequence[int]):
        super().__init__()
        self.channels = channels
        self.seed_shape = tuple(seed_shape)
        self.fc = nn.Linear(payload_len, channels * math.prod(self.seed_shape))

    def forward(self, message: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
        return upsample_latent(self.fc(message), self.channels, self.seed_shape, size)


# --- 3D U-Net ---------------------------------------------------------------------------------

class ConvBlock3d(nn.Module):
    """Two 3x3x3 convolutions with group norm and ReLU; the first may stride."""

    def __init__(self, in_channels: int, out_channels: int, stride=(1, 1, 1)):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, 3, stride=stride, padding=1),
            nn.GroupNorm(group_count(out_channels), out_channels),
            nn.ReLU(inplace=True),
            nn.Conv3d(out_channels, out_channels, 3, padding=1),
            nn.GroupNorm(group_count(out_channels), out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


class UpBlock3d(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.ConvTranspose3d(in_channels, out_channels, (1, 2, 2), stride=(1, 2, 2))
        self.block = ConvBlock3d(2 * out_channels, out_channels)

    def forward(self, x, skip):
        return self.block(torch.cat([self.up(x), skip], dim=1))


class StareEncoder(nn.Module):
    """
    G_w = G_co + alpha * tanh(head(unet(se([G_co ; expand(M)])))).

    Level widths are base_channels * 2**i for i < depth, the bottleneck keeping the last width;
    every down step halves H and W and leaves T untouched.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.expander = MessageExpander(cfg.payload_len, cfg.message_channels,
                                        cfg.message_seed_shape)
        in_channels = 3 + cfg.message_channels
        self.fusion = make_se(in_channels, cfg.use_se, cfg.se_reduction)

        widths = [cfg.base_channels * 2 ** min(i, cfg.depth - 1) for i in range(cfg.depth + 1)]
        self.stem = ConvBlock3d(in_channels, widths[0])
        self.downs = nn.ModuleList(
            ConvBlock3d(widths[i], widths[i + 1], stride=(1, 2, 2)) for i in range(cfg.depth)
        )
        self.ups = nn.ModuleList(
            UpBlock3d(widths[i + 1], widths[i]) for i in reversed(range(cfg.depth))
        )
        self.head = nn.Conv3d(widths[0], 3, kernel_size=1)

    def expand_message(self, message: torch.Tensor) -> torch.Tensor:
        return self.expander(message, self.cfg.dims)

    def forward(self, g_co: torch.Tensor, message: torch.Tensor) -> torch.Tensor:
        expected = (3, *self.cfg.dims)
        if g_co.dim() != 5 or tuple(g_co.shape[1:]) != expected:
            raise ValueError(f"cover must be (B, {expected}), got {tuple(g_co.shape)}")
        if message.shape != (g_co.shape[0], self.cfg.payload_len):
            raise ValueError(
                f"message must be (B, {self.cfg.payload_len}), got {tuple(message.shape)}"
            )

        x = torch.cat([g_co, self.expand_message(message.to(g_co.dtype))], dim=1)
        h = self.stem(self.fusion(x))
        skips = []
        for down in self.downs:
            skips.append(h)
            h = down(h)
        for up in self.ups:
            h = up(h, skips.pop())
        return g_co + self.cfg.alpha * torch.tanh(self.head(h))

# file: objectives.py
"""Training objectives: imperceptibility, adversarial and message losses plus the lambda_msg ramp."""

from typing import List, NamedTuple, Protocol, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator

EPS = 1e-7


class LossWeights(BaseModel):
    lambda_adv: float = Field(0.01, ge=0)
    lambda_msg_start: float = Field(1.0, ge=0)
    lambda_msg_end: float = Field(10.0, ge=0)
    beta: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _ramp_not_decreasing(self):
        if self.lambda_msg_end < self.lambda_msg_start:
            raise ValueError("lambda_msg_end must be >= lambda_msg_start")
        return self


class FeatureExtractor(Protocol):
    """Anything mapping a (B, 3, T, H, W) clip to a list of per-frame feature maps."""

    def __call__(self, g: torch.Tensor) -> List[torch.Tensor]:
        ...


class PerceptualExtractor(nn.Module):
    """
    Frozen three-layer conv stack applied frame by frame. Weights are He-normal draws from a
    private generator, so every instance built with the same seed is identical.
    """

    def __init__(self, seed: int = 1234, channels: Sequence[int] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, in_channels = [], 3
        for i, out_channels in enumerate(channels):
            conv = nn.Conv2d(in_channels, out_channels, 3, stride=1 if i == 0 else 2, padding=1)
            fan_in = in_channels * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            in_channels = out_channels
        self.layers = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # frozen: stays in eval mode
        return super().train(False)

    def forward(self, g: torch.Tensor) -> List[torch.Tensor]:
        b, c, t, h, w = g.shape
        x = g.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)
        features = []
        for conv in self.layers:
            x = F.relu(conv(x))
            features.append(x)
        return features


def feature_distance(phi: FeatureExtractor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean over layers of the mean squared feature difference."""
    fa, fb = phi(a), phi(b)
    return torch.stack([F.mse_loss(x, y) for x, y in zip(fa, fb)]).mean()


def imperceptibility_loss(g_co: torch.Tensor, g_w: torch.Tensor,
                          phi: Union[FeatureExtractor, None] = None,
                          beta: float = 1.0) -> torch.Tensor:
    if g_co.shape != g_w.shape:
        raise ValueError(f"shape mismatch {tuple(g_co.shape)} vs {tuple(g_w.shape)}")
    loss = F.mse_loss(g_w, g_co)
    if beta and phi is not None:
        loss = loss + beta * feature_distance(phi, g_co, g_w)
    return loss


class Discriminator(nn.Module):
    """Three strided 3D convs (16, 32, 64), LeakyReLU, global average, sigmoid probability."""

    def __init__(self, channels: Sequence[int] = (16, 32, 64)):
        super().__init__()
        layers, in_channels = [], 3
        for out_channels in channels:
            layers += [
                nn.Conv3d(in_channels, out_channels, 3, stride=(1, 2, 2), padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_channels = out_channels
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Linear(in_channels, 1)

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        pooled = self.features(g).mean(dim=(2, 3, 4))
        return torch.sigmoid(self.classifier(pooled)).squeeze(1)


def adversarial_terms(p_real: torch.Tensor, p_fake: torch.Tensor,
                      eps: float = EPS) -> Tuple[torch.Tensor, torch.Tensor]:
    """(encoder_term, discriminator_term) from real/fake probabilities clamped to [eps, 1-eps]."""
    p_real = p_real.clamp(eps, 1.0 - eps)
    p_fake = p_fake.clamp(eps, 1.0 - eps)
    encoder_term = -torch.log(p_fake).mean()
    discriminator_term = -(torch.log(p_real) + torch.log(1.0 - p_fake)).mean()
    return encoder_term, discriminator_term


def adversarial_losses(disc: nn.Module, g_co: torch.Tensor,
                       g_w: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """The discriminator term sees G_w detached, so it never pushes gradient into the encoder."""
    p_real = disc(g_co)
    encoder_term, _ = adversarial_terms(p_real.detach(), disc(g_w))
    _, discriminator_term = adversarial_terms(p_real, disc(g_w.detach()))
    return encoder_term, discriminator_term


def message_loss(message: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, message.to(logits.dtype))


class LossParts(NamedTuple):
    imp: torch.Tensor
    adv: torch.Tensor
    msg: torch.Tensor


def lambda_msg(weights: LossWeights, epoch: float, total_epochs: float) -> float:
    """Linear ramp from lambda_msg_start at epoch 0 to lambda_msg_end at `total_epochs`."""
    progress = min(max(float(epoch) / float(total_epochs), 0.0), 1.0)
    return weights.lambda_msg_start + (weights.lambda_msg_end - weights.lambda_msg_start) * progress


def total_loss(parts: LossParts, weights: LossWeights, epoch: float,
               total_epochs: float) -> torch.Tensor:
    return (
        parts.imp
        + weights.lambda_adv * parts.adv
        + lambda_msg(weights, epoch, total_epochs) * parts.msg
    )

"""
Inpainting decoders: SPADE-conditioned upsampling from [F_w || F_S] back to an image.
"""

from typing import Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError
from .warping import instance_norm


class SPADE(nn.Module):
    """
    Spatially-adaptive normalization.

    out = (1 + gamma(cond)) * instance_norm(x) + beta(cond), where gamma and beta come
    from a shared conv trunk and two conv heads over ``cond`` bilinearly resized to x.
    Convolutions pad by replication, so a spatially constant ``cond`` yields spatially
    constant gamma and beta.
    """

    def __init__(self, channels: int, cond_channels: int, hidden: int = 64):
        super().__init__()
        self.shared = nn.Sequential(
            nn.Conv2d(cond_channels, hidden, 3, padding=1, padding_mode="replicate"),
            nn.ReLU(),
        )
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1, padding_mode="replicate")
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1, padding_mode="replicate")

    def modulation(self, cond: torch.Tensor, size: Sequence[int]) -> Tuple[torch.Tensor, torch.Tensor]:
        if tuple(cond.shape[2:]) != tuple(size):
            cond = F.interpolate(cond, size=size, mode="bilinear", align_corners=False)
        h = self.shared(cond)
        return self.gamma(h), self.beta(h)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or cond.dim() != 4 or x.shape[0] != cond.shape[0]:
            raise ShapeError(f"SPADE expects (B, C, h, w) inputs with equal batch, got {tuple(x.shape)} and {tuple(cond.shape)}")
        gamma, beta = self.modulation(cond, x.shape[2:])
        return (1 + gamma) * instance_norm(x) + beta


def _concat(f_w: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
    if f_w.shape != f_s.shape:
        raise ShapeError(f"Warped features {tuple(f_w.shape)} and source features {tuple(f_s.shape)} differ")
    return torch.cat([f_w, f_s], dim=1)


class SpadeDecoder(nn.Module):
    """
    Two upsampling stages (SPADE, LeakyReLU, nearest x2, conv), then SPADE and a
    3-channel conv with sigmoid. Every SPADE is conditioned on [F_w || F_S].
    """

    def __init__(self, channels: int, hidden: int = 64):
        super().__init__()
        cond = 2 * channels
        self.norm1 = SPADE(cond, cond)
        self.conv1 = nn.Conv2d(cond, hidden, 3, padding=1)
        self.norm2 = SPADE(hidden, cond)
        self.conv2 = nn.Conv2d(hidden, hidden // 2, 3, padding=1)
        self.norm_out = SPADE(hidden // 2, cond)
        self.conv_out = nn.Conv2d(hidden // 2, 3, 3, padding=1)

    def forward(self, f_w: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        x = cond = _concat(f_w, f_s)
        x = self.conv1(F.interpolate(F.leaky_relu(self.norm1(x, cond), 0.2), scale_factor=2, mode="nearest"))
        x = self.conv2(F.interpolate(F.leaky_relu(self.norm2(x, cond), 0.2), scale_factor=2, mode="nearest"))
        return torch.sigmoid(self.conv_out(F.leaky_relu(self.norm_out(x, cond), 0.2)))


class ConvDecoder(nn.Module):
    """Decoder of the same depth without SPADE (no_spade ablation)."""

    def __init__(self, channels: int, hidden: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(2 * channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, hidden // 2, 3, padding=1)
        self.conv_out = nn.Conv2d(hidden // 2, 3, 3, padding=1)

    def forward(self, f_w: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        x = _concat(f_w, f_s)
        x = F.leaky_relu(self.conv1(F.interpolate(x, scale_factor=2, mode="nearest")), 0.2)
        x = F.leaky_relu(self.conv2(F.interpolate(x, scale_factor=2, mode="nearest")), 0.2)
        return torch.sigmoid(self.conv_out(x))

"""
Flow-based warping of reference features.

The masked source and each reference are encoded to H/4 x W/4 feature maps, fused,
and passed through an AdaIN-conditioned encoder-decoder that predicts a dense motion
flow M. The concatenated reference features are backward-warped by M.

Flow convention: M has shape (B, 2, h, w) in normalized units; (u, v) = M[:, :, y, x]
moves the sampling point of output pixel (y, x) by (u * w / 2, v * h / 2) pixels.
"""

from dataclasses import dataclass

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import TrainConfig
from .errors import NumericalError, ShapeError

FLOW_BOUND = 2.0
EPS = 1e-5


def instance_norm(x: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Per-sample, per-channel normalization over the spatial axes (biased variance)."""
    if x.shape[-1] * x.shape[-2] < 2:
        raise NumericalError(f"Instance statistics undefined for a {x.shape[-2]}x{x.shape[-1]} feature map")
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


class FeatureEncoder(nn.Module):
    """A stride-1 stem and two stride-2 blocks: 3 x H x W -> channels x H/4 x W/4."""

    def __init__(self, out_channels: int, hidden: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, 2 * hidden, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * hidden, out_channels, 3, stride=2, padding=1),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeError(f"Expected (B, 3, H, W) images, got {tuple(image.shape)}")
        if image.shape[2] % 4 or image.shape[3] % 4:
            raise ShapeError(f"Image size must be divisible by 4, got {image.shape[2]}x{image.shape[3]}")
        return self.net(image)


class FusionBlock(nn.Module):
    """E_u: F_u = s + body(s) with s = F_S + F_R."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, f_s: torch.Tensor, f_r: torch.Tensor) -> torch.Tensor:
        if f_s.shape != f_r.shape:
            raise ShapeError(f"Source features {tuple(f_s.shape)} and reference features {tuple(f_r.shape)} differ")
        s = f_s + f_r
        return s + self.body(s)


class AdaIN(nn.Module):
    """
    Adaptive instance normalization.

    out = gamma(v) * instance_norm(x) + beta(v), with gamma and beta linear in v. The
    gamma bias starts at 1 and the beta bias at 0.
    """

    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.gamma = nn.Linear(cond_dim, channels)
        self.beta = nn.Linear(cond_dim, channels)
        nn.init.ones_(self.gamma.bias)
        nn.init.zeros_(self.beta.bias)

    def forward(self, x: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        gamma = self.gamma(v)[:, :, None, None]
        beta = self.beta(v)[:, :, None, None]
        return gamma * instance_norm(x) + beta


class AdaINConv(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, cond_dim: int, stride: int = 1, activation: bool = True):
        super().__init__()
        self.norm = AdaIN(in_channels, cond_dim)
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.activation = activation

    def forward(self, x: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        h = self.conv(self.norm(x, v))
        return F.leaky_relu(h, 0.2) if self.activation else h


class FlowPredictor(nn.Module):
    """
    F_UNet: two downsampling and two upsampling levels with skip connections.

    AdaIN(., v_alg) precedes every convolution. The 2-channel head ends in
    tanh scaled to the flow bound.
    """

    def __init__(self, channels: int, cond_dim: int, hidden: int = 64, bound: float = FLOW_BOUND):
        super().__init__()
        self.bound = bound
        self.stem = AdaINConv(channels, hidden, cond_dim)
        self.down1 = AdaINConv(hidden, 2 * hidden, cond_dim, stride=2)
        self.down2 = AdaINConv(2 * hidden, 2 * hidden, cond_dim, stride=2)
        self.up1 = AdaINConv(4 * hidden, 2 * hidden, cond_dim)
        self.up2 = AdaINConv(3 * hidden, hidden, cond_dim)
        self.head = AdaINConv(hidden, 2, cond_dim, activation=False)
        nn.init.normal_(self.head.conv.weight, std=1e-3)
        nn.init.zeros_(self.head.conv.bias)

    def forward(self, f_u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        x0 = self.stem(f_u, v)
        x1 = self.down1(x0, v)
        x2 = self.down2(x1, v)
        u1 = self.up1(torch.cat([F.interpolate(x2, size=x1.shape[2:], mode="nearest"), x1], dim=1), v)
        u2 = self.up2(torch.cat([F.interpolate(u1, size=x0.shape[2:], mode="nearest"), x0], dim=1), v)
        return torch.tanh(self.head(u2, v)) * self.bound


def warp(features: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """
    Backward-warp ``features`` by ``flow`` with bilinear sampling.

    Output pixel (y, x) samples the input at (x + u w/2, y + v h/2); sample points are
    clamped to the border. Differentiable with respect to both inputs.

    Args:
        features: (B, C, h, w)
        flow: (B, 2, h, w) normalized displacement

    Returns:
        (B, C, h, w) warped features

    Raises:
        ShapeError: batch or spatial sizes differ
    """
    if features.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise ShapeError(f"Expected (B, C, h, w) features and (B, 2, h, w) flow, got {tuple(features.shape)} and {tuple(flow.shape)}")
    b, c, h, w = features.shape
    if flow.shape[0] != b or flow.shape[2:] != features.shape[2:]:
        raise ShapeError(f"Flow {tuple(flow.shape)} does not match features {tuple(features.shape)}")

    ys = torch.arange(h, dtype=flow.dtype, device=flow.device).view(1, h, 1)
    xs = torch.arange(w, dtype=flow.dtype, device=flow.device).view(1, 1, w)
    sx = (xs + flow[:, 0] * (w / 2)).clamp(0, w - 1)
    sy = (ys + flow[:, 1] * (h / 2)).clamp(0, h - 1)

    x0 = sx.detach().floor().clamp(0, w - 1)
    y0 = sy.detach().floor().clamp(0, h - 1)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = (sx - x0).unsqueeze(1)
    wy = (sy - y0).unsqueeze(1)

    flat = features.reshape(b, c, h * w)

    def gather(yy: torch.Tensor, xx: torch.Tensor) -> torch.Tensor:
        index = (yy * w + xx).long().view(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, index).view(b, c, h, w)

    return (
        (1 - wx) * (1 - wy) * gather(y0, x0)
        + wx * (1 - wy) * gather(y0, x1)
        + (1 - wx) * wy * gather(y1, x0)
        + wx * wy * gather(y1, x1)
    )


@dataclass
class WarpOutput:
    source_features: torch.Tensor
    reference_features: torch.Tensor
    fused: torch.Tensor
    flow: torch.Tensor
    warped: torch.Tensor


class WarpingModule(nn.Module):
    """Encoders, fusion, flow prediction and warping."""

    def __init__(self, channels: int, num_refs: int, cond_dim: int):
        super().__init__()
        if channels % num_refs:
            raise ShapeError(f"Feature width {channels} is not divisible by {num_refs} references")
        self.num_refs = num_refs
        self.source_encoder = FeatureEncoder(channels)
        self.reference_encoder = FeatureEncoder(channels // num_refs)
        self.fusion = FusionBlock(channels)
        self.flow = FlowPredictor(channels, cond_dim)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "WarpingModule":
        return cls(config.feature_channels, config.num_refs, config.embedding_dim)

    def encode_references(self, references: torch.Tensor) -> torch.Tensor:
        """(B, N, 3, H, W) -> concatenated F_R of shape (B, C, H/4, W/4)."""
        if references.dim() != 5 or references.shape[1] != self.num_refs:
            raise ShapeError(f"Expected (B, {self.num_refs}, 3, H, W) references, got {tuple(references.shape)}")
        b, n = references.shape[:2]
        f = self.reference_encoder(references.flatten(0, 1))
        return f.view(b, n * f.shape[1], *f.shape[2:])

    def forward(self, masked_source: torch.Tensor, references: torch.Tensor, v: torch.Tensor) -> WarpOutput:
        f_s = self.source_encoder(masked_source)
        f_r = self.encode_references(references)
        f_u = self.fusion(f_s, f_r)
        flow = self.flow(f_u, v)
        return WarpOutput(f_s, f_r, f_u, flow, warp(f_r, flow))


def feature_map_image(features: torch.Tensor) -> np.ndarray:
    """Mean over channels of one (C, h, w) feature map, min-max scaled to 8-bit grayscale."""
    mean = features.detach().float().mean(dim=0).cpu().numpy()
    span = float(mean.max() - mean.min())
    scaled = (mean - mean.min()) / span if span > 0 else np.zeros_like(mean)
    return np.rint(scaled * 255.0).astype(np.uint8)


def flow_magnitude_image(flow: torch.Tensor) -> np.ndarray:
    """Heatmap (RGB uint8) of |M| for one (2, h, w) flow; full scale is the flow bound."""
    magnitude = flow.detach().float().norm(dim=0).cpu().numpy()
    scaled = np.clip(magnitude / (FLOW_BOUND * np.sqrt(2.0)), 0.0, 1.0)
    heat = cv2.applyColorMap(np.rint(scaled * 255.0).astype(np.uint8), cv2.COLORMAP_JET)
    return cv2.cvtColor(heat, cv2.COLOR_BGR2RGB)

"""
Training objectives: two-scale perceptual loss, least-squares GAN losses, lip-sync loss
and their weighted total, plus the fixed networks they rely on.
"""

import math
from typing import Callable, List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AUDIO_FEATURE_DIM
from .errors import ContractError, NumericalError, ShapeError

PERCEPTUAL_SEED = 1234
PERCEPTUAL_CHANNELS = (16, 32, 64, 64, 64)

Scalar = Union[float, torch.Tensor]


class PerceptualExtractor(nn.Module):
    """
    Fixed random convolutional feature pyramid.

    Five 3x3 conv + LeakyReLU layers; the first keeps full resolution, the others halve
    it. Weights are drawn once from ``seed`` and never trained.
    """

    def __init__(
        self,
        channels: Sequence[int] = PERCEPTUAL_CHANNELS,
        seed: int = PERCEPTUAL_SEED,
        layers: Optional[Sequence[nn.Module]] = None,
    ):
        super().__init__()
        if layers is None:
            generator = torch.Generator().manual_seed(seed)
            built: List[nn.Module] = []
            in_channels = 3
            for i, out_channels in enumerate(channels):
                conv = nn.Conv2d(in_channels, out_channels, 3, stride=1 if i == 0 else 2, padding=1)
                fan_in = in_channels * 9
                with torch.no_grad():
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * math.sqrt(2.0 / fan_in))
                    conv.bias.zero_()
                built.append(nn.Sequential(conv, nn.LeakyReLU(0.2)))
                in_channels = out_channels
            layers = built
        self.layers = nn.ModuleList(layers)
        self.requires_grad_(False)
        self.eval()

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        features = []
        x = image
        for layer in self.layers:
            x = layer(x)
            features.append(x)
        return features


def perception_loss(output: torch.Tensor, target: torch.Tensor, extractor: PerceptualExtractor) -> torch.Tensor:
    """
    L_p at full and half resolution.

    L_p = sum_i (mean|V_i(I_O) - V_i(I_r)| + mean|V_i(I_O') - V_i(I_r')|) / (2 N_v), where
    ' denotes bilinear downsampling by 2 and each mean runs over C_i x H_i x W_i (and batch).

    Raises:
        ShapeError: shapes differ or the image size is odd
    """
    if output.shape != target.shape or output.dim() != 4:
        raise ShapeError(f"Expected equal (B, 3, H, W) images, got {tuple(output.shape)} and {tuple(target.shape)}")
    if output.shape[2] % 2 or output.shape[3] % 2:
        raise ShapeError(f"Image size must be even, got {output.shape[2]}x{output.shape[3]}")

    small_output = F.interpolate(output, scale_factor=0.5, mode="bilinear", align_corners=False)
    small_target = F.interpolate(target, scale_factor=0.5, mode="bilinear", align_corners=False)

    total = output.new_zeros(())
    for a, b in ((output, target), (small_output, small_target)):
        for fa, fb in zip(extractor(a), extractor(b)):
            total = total + (fa - fb).abs().mean()
    return total / (2 * len(extractor.layers))


class PatchDiscriminator(nn.Module):
    """Strided conv patch discriminator; D(I) is the mean of its score map, shape (B,)."""

    def __init__(self, hidden: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, hidden, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, 2 * hidden, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * hidden, 4 * hidden, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * hidden, 1, 3, padding=1),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.net(image).mean(dim=(1, 2, 3))


Discriminator = Callable[[torch.Tensor], torch.Tensor]


def gan_d_loss(discriminator: Discriminator, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """L_D = 1/2 E[(D(I_r) - 1)^2] + 1/2 E[D(I_O)^2]; I_O is detached."""
    d_real = discriminator(real)
    d_fake = discriminator(fake.detach())
    return 0.5 * ((d_real - 1) ** 2).mean() + 0.5 * (d_fake**2).mean()


def gan_g_loss(discriminator: Discriminator, fake: torch.Tensor) -> torch.Tensor:
    """L_G = E[(D(I_O) - 1)^2]."""
    return ((discriminator(fake) - 1) ** 2).mean()


def crop_regions(images: torch.Tensor, boxes: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Differentiable mouth crops of a batch.

    Args:
        images: B x 3 x H x W
        boxes: B x 4 integer boxes [x0, y0, x1, y1) in image pixels; None takes rows H//2 onward

    Returns:
        B x 3 x H//2 x W//2 bilinear resizes of the boxed regions
    """
    if images.dim() != 4:
        raise ShapeError(f"Images must be (B, 3, H, W), got {tuple(images.shape)}")
    b, _, h, w = images.shape
    size = (max(1, h // 2), max(1, w // 2))
    if boxes is None:
        boxes = torch.tensor([[0, h // 2, w, h]] * b)
    if boxes.shape != (b, 4):
        raise ShapeError(f"Boxes must be ({b}, 4), got {tuple(boxes.shape)}")
    crops = []
    for image, (x0, y0, x1, y1) in zip(images, boxes.tolist()):
        region = image[None, :, y0:y1, x0:x1]
        crops.append(F.interpolate(region, size=size, mode="bilinear", align_corners=False))
    return torch.cat(crops)


class SyncScorer(nn.Module):
    """
    Two-tower lip-sync scorer.

    The audio tower embeds a T x 29 window, the visual tower embeds the mouth crop of a
    face: the bounding box of its lower-half mask, resized to half the face size.
    Without boxes the rows H//2 onward are used. The score is the cosine similarity
    of the embeddings; confidence maps it to [0, 1]. A learnable scale and bias turn
    the similarity into a logit for contrastive training.
    """

    def __init__(self, embedding_dim: int = 64, window: int = 9, hidden: int = 64):
        super().__init__()
        self.audio_tower = nn.Sequential(
            nn.Conv1d(AUDIO_FEATURE_DIM, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv1d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.AdaptiveAvgPool1d(window),
            nn.Flatten(),
            nn.Linear(hidden * window, embedding_dim),
        )
        self.visual_tower = nn.Sequential(
            nn.Conv2d(3, hidden // 2, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden // 2, hidden, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, hidden, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(hidden, embedding_dim),
        )
        self.logit_scale = nn.Parameter(torch.tensor(5.0))
        self.logit_bias = nn.Parameter(torch.tensor(0.0))

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def freeze(self) -> "SyncScorer":
        self.requires_grad_(False)
        self.eval()
        return self

    def embed_audio(self, audio: torch.Tensor) -> torch.Tensor:
        return self.audio_tower(audio.transpose(1, 2))

    def embed_visual(self, frames: torch.Tensor, boxes: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.visual_tower(crop_regions(frames, boxes))

    def similarity(
        self, audio: torch.Tensor, frames: torch.Tensor, boxes: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        return F.cosine_similarity(self.embed_audio(audio), self.embed_visual(frames, boxes), dim=-1)

    def confidence(
        self, audio: torch.Tensor, frames: torch.Tensor, boxes: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        return (self.similarity(audio, frames, boxes) + 1) / 2

    def forward(
        self, audio: torch.Tensor, frames: torch.Tensor, boxes: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        """Logits of the matched-pair classifier."""
        return self.logit_scale * self.similarity(audio, frames, boxes) + self.logit_bias


def sync_loss(
    audio: torch.Tensor, output: torch.Tensor, scorer: SyncScorer, boxes: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """
    L_sync = E[(confidence(A, I_O) - 1)^2], scored on the mouth crops given by ``boxes``.

    Raises:
        ContractError: the scorer still has trainable parameters
    """
    if not scorer.frozen:
        raise ContractError("sync_loss needs a frozen SyncScorer; call freeze() after pretraining")
    return ((scorer.confidence(audio, output, boxes) - 1) ** 2).mean()


def total_loss(
    l_p: Scalar, l_sync: Scalar, l_g: Scalar, lambda_p: float = 10.0, lambda_sync: float = 0.1
) -> Scalar:
    """
    L = lambda_p L_p + lambda_sync L_sync + L_G.

    Raises:
        NumericalError: any term is not finite
    """
    for name, value in (("L_p", l_p), ("L_sync", l_sync), ("L_G", l_g)):
        finite = bool(torch.isfinite(value).all()) if isinstance(value, torch.Tensor) else math.isfinite(value)
        if not finite:
            raise NumericalError(f"{name} is not finite: {float(value)}")
    return lambda_p * l_p + lambda_sync * l_sync + l_g

"""
Evaluation metrics: SSIM, PSNR, a perceptual distance and lip-sync confidence/distance.

The perceptual distance and the sync scores run on this package's own fixed networks
(``PerceptualExtractor``, ``SyncScorer``). They are proxies for LPIPS and the
SyncNet-based LSE-C / LSE-D and are not comparable to numbers computed with the
official pretrained models.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Union

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from .audio import audio_window
from .errors import ShapeError
from .losses import PerceptualExtractor, SyncScorer

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 99.0
SYNC_MAX_OFFSET = 15

ImageLike = Union[np.ndarray, torch.Tensor]


def _as_hwc(image: ImageLike) -> np.ndarray:
    """float64 H x W (x C) array; torch tensors are taken as C x H x W."""
    if isinstance(image, torch.Tensor):
        array = image.detach().cpu().double().numpy()
        if array.ndim == 3:
            array = array.transpose(1, 2, 0)
        return array
    array = np.asarray(image)
    if array.dtype == np.uint8:
        return array.astype(np.float64) / 255.0
    return array.astype(np.float64)


def to_gray(image: ImageLike) -> np.ndarray:
    """Luma 0.299 R + 0.587 G + 0.114 B; single-channel input is returned as is."""
    array = _as_hwc(image)
    if array.ndim == 2:
        return array
    if array.shape[2] == 1:
        return array[:, :, 0]
    return 0.299 * array[:, :, 0] + 0.587 * array[:, :, 1] + 0.114 * array[:, :, 2]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian of odd length ``size``."""
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = len(kernel) // 2
    filtered = cv2.sepFilter2D(np.ascontiguousarray(image), cv2.CV_64F, kernel, kernel, borderType=cv2.BORDER_REFLECT)
    return filtered[r:-r, r:-r] if r else filtered


def ssim(a: ImageLike, b: ImageLike) -> float:
    """
    Mean structural similarity over all valid 11x11 Gaussian windows of the gray images.

    Args:
        a: image in [0, 1] (H x W x 3 array, H x W array or 3 x H x W tensor)
        b: image of the same size

    Returns:
        SSIM in [-1, 1]

    Raises:
        ShapeError: sizes differ or are smaller than the window
    """
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ShapeError(f"Images differ in size: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < SSIM_WINDOW:
        raise ShapeError(f"Images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ga.shape}")

    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    kernel = gaussian_window()
    mu_a = _filter_valid(ga, kernel)
    mu_b = _filter_valid(gb, kernel)
    var_a = _filter_valid(ga * ga, kernel) - mu_a * mu_a
    var_b = _filter_valid(gb * gb, kernel) - mu_b * mu_b
    cov = _filter_valid(ga * gb, kernel) - mu_a * mu_b

    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


def psnr(a: ImageLike, b: ImageLike) -> float:
    """10 log10(1 / MSE) in dB for images in [0, 1]; 99 dB when MSE < 1e-10."""
    xa, xb = _as_hwc(a), _as_hwc(b)
    if xa.shape != xb.shape:
        raise ShapeError(f"Images differ in shape: {xa.shape} vs {xb.shape}")
    mse = float(np.mean((xa - xb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def _as_batch(image: ImageLike, dtype: torch.dtype) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        tensor = image.detach()
    else:
        tensor = torch.from_numpy(np.ascontiguousarray(_as_hwc(image).transpose(2, 0, 1)))
    return tensor.unsqueeze(0).to(dtype)


def perceptual_distance(a: ImageLike, b: ImageLike, extractor: PerceptualExtractor) -> float:
    """
    Mean over layers and spatial sites of the L2 distance between channel-normalized
    features of ``a`` and ``b``.
    """
    dtype = next(extractor.parameters()).dtype
    ta, tb = _as_batch(a, dtype), _as_batch(b, dtype)
    if ta.shape != tb.shape:
        raise ShapeError(f"Images differ in shape: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    with torch.no_grad():
        distances = []
        for fa, fb in zip(extractor(ta), extractor(tb)):
            na = F.normalize(fa, dim=1, eps=1e-10)
            nb = F.normalize(fb, dim=1, eps=1e-10)
            distances.append((na - nb).norm(dim=1).mean())
        return float(torch.stack(distances).mean())


@dataclass
class SyncScores:
    """Sync confidence and distance of a clip, plus the mean similarity per audio offset."""

    confidence: float
    distance: float
    offsets: List[int]
    curve: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {"confidence": self.confidence, "distance": self.distance, "offsets": self.offsets, "curve": self.curve}


def sync_scores(
    frames: ImageLike,
    audio: np.ndarray,
    scorer: SyncScorer,
    window: int = 9,
    max_offset: int = SYNC_MAX_OFFSET,
    boxes: Optional[torch.Tensor] = None,
) -> SyncScores:
    """
    Lip-sync confidence and distance of a clip.

    For each offset k in [-max_offset, max_offset] the similarity between frame t and
    the audio window centered on t + k (edge-padded) is averaged over frames. The
    confidence is sim(0) - max_{k != 0} sim(k); the distance is the mean L2 between
    unit-normalized embeddings at offset 0.

    Args:
        frames: T x 3 x H x W tensor or T x H x W x 3 array
        audio: (T_a, 29) features aligned with the frames
        scorer: sync scorer (evaluated without gradients)
        boxes: T x 4 mouth boxes [x0, y0, x1, y1) of the frames; None scores the lower half
    """
    n = len(frames)
    if n == 0:
        raise ShapeError("sync_scores needs at least one frame")
    if isinstance(frames, torch.Tensor):
        video = frames.detach()
    else:
        video = torch.from_numpy(np.stack([_as_hwc(f).transpose(2, 0, 1) for f in frames]))
    dtype = next(scorer.parameters()).dtype
    video = video.to(dtype)

    centers = range(-max_offset, n + max_offset)
    windows = np.stack([audio_window(audio, c, window).features for c in centers])
    with torch.no_grad():
        visual = F.normalize(scorer.embed_visual(video, boxes), dim=-1)
        sound = F.normalize(scorer.embed_audio(torch.from_numpy(windows).to(dtype)), dim=-1)

    offsets = list(range(-max_offset, max_offset + 1))
    curve = []
    for k in offsets:
        shifted = sound[max_offset + k : max_offset + k + n]
        curve.append(float((visual * shifted).sum(dim=-1).mean()))
    zero = offsets.index(0)
    others = [s for k, s in zip(offsets, curve) if k != 0]
    distance = float((visual - sound[max_offset : max_offset + n]).norm(dim=-1).mean())
    return SyncScores(confidence=curve[zero] - max(others), distance=distance, offsets=offsets, curve=curve)

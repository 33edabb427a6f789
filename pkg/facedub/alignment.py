"""
Audio-visual alignment.

Driving audio and N reference mouth crops are embedded into D-dim tokens, mixed by a
stack of audio-visual alignment units (AVAUs) and compressed by the cross-modal
encoder into v_alg, the vector that conditions the warping network.

Token layout everywhere in this module: index 0 is the audio token, indices 1..N are
the visual tokens in reference order. No positional encoding is applied, so the
visual tokens form an unordered set.
"""

from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AUDIO_FEATURE_DIM, TrainConfig
from .errors import InvalidParameter, NumericalError, ShapeError


def _check_finite(x: torch.Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericalError(f"{name} contains non-finite values")


class AudioEncoder(nn.Module):
    """
    E_a: 1-D temporal convolutions over a T x 29 window, flatten, linear to D.

    The temporal axis is pooled to ``window`` steps before flattening, so windows of
    other lengths are accepted.
    """

    def __init__(self, dim: int, window: int = 9, hidden: int = 64):
        super().__init__()
        self.window = window
        self.convs = nn.Sequential(
            nn.Conv1d(AUDIO_FEATURE_DIM, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv1d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.pool = nn.AdaptiveAvgPool1d(window)
        self.proj = nn.Linear(hidden * window, dim)
        self.token = nn.Parameter(torch.randn(dim) * 0.02)  # e_alpha

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        """(B, T, 29) -> e_a of shape (B, D)."""
        if audio.dim() != 3 or audio.shape[-1] != AUDIO_FEATURE_DIM:
            raise ShapeError(f"Audio must be (B, T, {AUDIO_FEATURE_DIM}), got {tuple(audio.shape)}")
        _check_finite(audio, "Audio window")
        h = self.pool(self.convs(audio.transpose(1, 2)))
        return self.proj(h.flatten(1)) + self.token


class MouthEncoder(nn.Module):
    """E_v: strided convolutions, global average pool, linear to D."""

    def __init__(self, dim: int, hidden: int = 64):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(3, hidden // 2, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden // 2, hidden, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, hidden, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.proj = nn.Linear(hidden, dim)
        self.token = nn.Parameter(torch.randn(dim) * 0.02)  # e_beta

    def forward(self, mouths: torch.Tensor) -> torch.Tensor:
        """(B, N, 3, H, W) -> e_v of shape (B, N, D)."""
        if mouths.dim() != 5 or mouths.shape[2] != 3:
            raise ShapeError(f"Mouth crops must be (B, N, 3, H, W), got {tuple(mouths.shape)}")
        _check_finite(mouths, "Mouth crops")
        b, n = mouths.shape[:2]
        h = self.convs(mouths.flatten(0, 1)).mean(dim=(2, 3))
        return (self.proj(h) + self.token).view(b, n, -1)


class AVAU(nn.Module):
    """
    Audio-visual alignment unit.

    Pre-norm self-attention over all N+1 tokens, then the audio token queries the N
    visual tokens by cross-attention, then a two-layer feed-forward; each sublayer is
    residual. The attention weights of the last call are kept in ``self_weights`` and
    ``cross_weights``.
    """

    def __init__(self, dim: int, heads: int = 4, ff_mult: int = 2):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_mult * dim), nn.GELU(), nn.Linear(ff_mult * dim, dim))
        self.self_weights: Optional[torch.Tensor] = None
        self.cross_weights: Optional[torch.Tensor] = None

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, N+1, D) -> (B, N+1, D)."""
        if tokens.dim() != 3:
            raise ShapeError(f"Tokens must be (B, N+1, D), got {tuple(tokens.shape)}")
        if tokens.shape[1] < 2:
            raise InvalidParameter("An AVAU needs at least one visual token (N >= 1)")

        h = self.norm_self(tokens)
        attended, weights = self.self_attn(h, h, h, need_weights=True, average_attn_weights=False)
        self.self_weights = weights.detach()
        x = tokens + attended

        h = self.norm_cross(x)
        queried, weights = self.cross_attn(h[:, :1], h[:, 1:], h[:, 1:], need_weights=True, average_attn_weights=False)
        self.cross_weights = weights.detach()
        x = torch.cat([x[:, :1] + queried, x[:, 1:]], dim=1)

        return x + self.ff(self.norm_ff(x))


def rank_tokens(tokens: torch.Tensor) -> torch.Tensor:
    """
    Order the visual tokens by their dot product with the audio token, highest
    first, keeping the audio token in front.
    """
    audio, visual = tokens[:, :1], tokens[:, 1:]
    scores = (visual * audio).sum(dim=-1)
    order = torch.argsort(scores, dim=1, descending=True, stable=True)
    ranked = torch.gather(visual, 1, order.unsqueeze(-1).expand_as(visual))
    return torch.cat([audio, ranked], dim=1)


class CrossModalEncoder(nn.Module):
    """E_cm: two kernel-3 1-D convolutions along the ranked token sequence, then mean pooling."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, dim, 3, padding=1)
        self.conv2 = nn.Conv1d(dim, dim, 3, padding=1)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        h = rank_tokens(tokens).transpose(1, 2)
        h = self.conv2(F.leaky_relu(self.conv1(h), 0.2))
        return h.mean(dim=-1)


class TokenProjection(nn.Module):
    """Cross-modal encoder replacement: concatenated (ranked) tokens, one linear map to D."""

    def __init__(self, dim: int, num_refs: int):
        super().__init__()
        self.num_refs = num_refs
        self.proj = nn.Linear((num_refs + 1) * dim, dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[1] != self.num_refs + 1:
            raise ShapeError(f"Expected {self.num_refs + 1} tokens, got {tokens.shape[1]}")
        return self.proj(rank_tokens(tokens).flatten(1))


class AlignmentModule(nn.Module):
    """v_alg = E_cm(AVAU_k(...AVAU_1([e_a, e_v^1..e_v^N]))) + e_a."""

    def __init__(
        self,
        dim: int,
        heads: int = 4,
        layers: int = 4,
        window: int = 9,
        num_refs: int = 5,
        use_cross_modal_encoder: bool = True,
    ):
        super().__init__()
        self.audio_encoder = AudioEncoder(dim, window)
        self.mouth_encoder = MouthEncoder(dim)
        self.units = nn.ModuleList([AVAU(dim, heads) for _ in range(layers)])
        self.cross_modal: nn.Module = (
            CrossModalEncoder(dim) if use_cross_modal_encoder else TokenProjection(dim, num_refs)
        )

    def tokens(self, audio: torch.Tensor, mouths: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return (e_a, AVAU output tokens)."""
        e_a = self.audio_encoder(audio)
        e_v = self.mouth_encoder(mouths)
        x = torch.cat([e_a.unsqueeze(1), e_v], dim=1)
        for unit in self.units:
            x = unit(x)
        return e_a, x

    def forward(self, audio: torch.Tensor, mouths: torch.Tensor) -> torch.Tensor:
        e_a, x = self.tokens(audio, mouths)
        return self.cross_modal(x) + e_a


class ConvAudioEncoder(nn.Module):
    """
    Alignment replacement for the no_alignment ablation: a multi-layer 1-D
    convolutional audio encoder. Mouth crops are ignored.
    """

    def __init__(self, dim: int, window: int = 9, hidden: int = 128):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv1d(AUDIO_FEATURE_DIM, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv1d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv1d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.pool = nn.AdaptiveAvgPool1d(window)
        self.proj = nn.Linear(hidden * window, dim)

    def forward(self, audio: torch.Tensor, mouths: Optional[torch.Tensor] = None) -> torch.Tensor:
        if audio.dim() != 3 or audio.shape[-1] != AUDIO_FEATURE_DIM:
            raise ShapeError(f"Audio must be (B, T, {AUDIO_FEATURE_DIM}), got {tuple(audio.shape)}")
        _check_finite(audio, "Audio window")
        return self.proj(self.pool(self.convs(audio.transpose(1, 2))).flatten(1))


def build_alignment(config: TrainConfig) -> nn.Module:
    """The conditioning network selected by the config's ablation flags."""
    if config.no_alignment:
        return ConvAudioEncoder(config.embedding_dim, config.audio_window)
    return AlignmentModule(
        config.embedding_dim,
        heads=config.attention_heads,
        layers=config.avau_layers,
        window=config.audio_window,
        num_refs=config.num_refs,
        use_cross_modal_encoder=not config.no_cm,
    )

"""
The dubbing generator: alignment, warping and inpainting composed into one network.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Tuple, Union

import torch
import torch.nn as nn

from .alignment import build_alignment
from .config import TrainConfig
from .dataio import Sample
from .inpainting import ConvDecoder, SpadeDecoder
from .warping import WarpingModule


@dataclass
class GeneratorOutput:
    """Generated face plus the intermediates used for visualisation."""

    image: torch.Tensor
    flow: torch.Tensor
    warped: torch.Tensor
    v_alg: torch.Tensor
    source_features: torch.Tensor


class DubbingGenerator(nn.Module):
    """
    I_O = Decoder(Warp(F_R, F_UNet(Fuse(F_S, F_R) | v_alg)), F_S).

    Args:
        config: training configuration; its ablation flags pick the alignment
            network and the decoder
    """

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.config = config
        self.alignment = build_alignment(config)
        self.warping = WarpingModule.from_config(config)
        self.decoder: nn.Module = (
            ConvDecoder(config.feature_channels) if config.no_spade else SpadeDecoder(config.feature_channels)
        )

    def forward(
        self, masked_source: torch.Tensor, references: torch.Tensor, mouths: torch.Tensor, audio: torch.Tensor
    ) -> GeneratorOutput:
        v_alg = self.alignment(audio, mouths)
        warped = self.warping(masked_source, references, v_alg)
        image = self.decoder(warped.warped, warped.source_features)
        return GeneratorOutput(image, warped.flow, warped.warped, v_alg, warped.source_features)

    def generate(self, batch: Mapping[str, Any]) -> GeneratorOutput:
        """Run on a collated batch dictionary (see ``dataio.collate_samples``)."""
        return self(batch["masked_source"], batch["references"], batch["mouths"], batch["audio"])

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        return {
            "alignment": list(self.alignment.parameters()),
            "warping": list(self.warping.parameters()),
            "inpainting": list(self.decoder.parameters()),
        }


def generate_frame(
    sample: Union[Sample, Mapping[str, Any]], model: DubbingGenerator
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Generate the face of one sample.

    Returns:
        (I_O of shape 3 x H x W, motion flow 2 x h x w, warped features C x h x w)
    """
    data = sample.as_dict() if isinstance(sample, Sample) else sample
    dtype = next(model.parameters()).dtype
    inputs = [data[key].unsqueeze(0).to(dtype) for key in ("masked_source", "references", "mouths", "audio")]
    out = model(*inputs)
    return out.image[0], out.flow[0], out.warped[0]

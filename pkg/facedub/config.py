"""
Configuration for FaceDub: training hyper-parameters and frozen landmark constants.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from .errors import InvalidParameter

NUM_LANDMARKS = 468
AUDIO_FEATURE_DIM = 29
FPS = 25

# Canonical landmark layout. Indices 0..233 lie at or below the nose tip,
# indices 234..467 strictly above it.
NOSE_TIP_INDEX = 1
CHIN_INDEX = 0
LOWER_HALF_INDICES: Tuple[int, ...] = tuple(range(0, 234))
UPPER_HALF_INDICES: Tuple[int, ...] = tuple(range(234, NUM_LANDMARKS))
LOWER_OVAL_INDICES: Tuple[int, ...] = tuple(range(2, 22))
OUTER_LIP_INDICES: Tuple[int, ...] = tuple(range(22, 42))
INNER_LIP_INDICES: Tuple[int, ...] = tuple(range(42, 62))
NOSTRIL_INDICES: Tuple[int, ...] = tuple(range(62, 72))
LOWER_FILL_INDICES: Tuple[int, ...] = tuple(range(72, 234))
UPPER_OVAL_INDICES: Tuple[int, ...] = tuple(range(234, 258))
LEFT_EYE_INDICES: Tuple[int, ...] = tuple(range(258, 274))
RIGHT_EYE_INDICES: Tuple[int, ...] = tuple(range(274, 290))
LEFT_BROW_INDICES: Tuple[int, ...] = tuple(range(290, 300))
RIGHT_BROW_INDICES: Tuple[int, ...] = tuple(range(300, 310))
NOSE_BRIDGE_INDICES: Tuple[int, ...] = tuple(range(310, 316))
UPPER_FILL_INDICES: Tuple[int, ...] = tuple(range(316, NUM_LANDMARKS))

ABLATIONS = ("no_alignment", "no_spade", "no_cm")

LOSS_CSV_COLUMNS = ("step", "L_p", "L_G", "L_D", "L_sync", "L")


@dataclass
class TrainConfig:
    """
    All knobs of a training run.

    Resolution, network widths, loss weights, optimiser settings, schedules and
    ablation switches. Defaults are the desk-scale configuration.
    """

    seed: int = 0
    height: int = 128
    width: int = 96
    embedding_dim: int = 256
    num_refs: int = 5
    audio_window: int = 9
    avau_layers: int = 4
    attention_heads: int = 4
    feature_channels_per_ref: int = 16
    batch_size: int = 4
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    adam_betas: Tuple[float, float] = (0.5, 0.999)
    lambda_p: float = 10.0
    lambda_sync: float = 0.1
    total_steps: int = 10000
    sync_warmup_steps: int = 500
    checkpoint_every: int = 100
    log_every: int = 10
    reference_gap: int = 10
    crop_margin: float = 0.10
    smooth_sigma_fraction: float = 0.02
    sync_pretrain_steps: int = 2000
    sync_target_accuracy: float = 0.9
    sync_min_accuracy: float = 0.75
    sync_negative_shift: int = 5
    sync_embedding_dim: int = 64
    no_alignment: bool = False
    no_spade: bool = False
    no_cm: bool = False
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)  # JSON gives lists
        self.validate()

    @property
    def feature_channels(self) -> int:
        """Source feature width C; each reference contributes C/N channels."""
        return self.feature_channels_per_ref * self.num_refs

    @property
    def ablation(self) -> str:
        """Name of the active ablation, or "full"."""
        active = [name for name in ABLATIONS if getattr(self, name)]
        return active[0] if active else "full"

    def validate(self):
        """
        Check the invariants of the configuration.

        Raises:
            InvalidParameter: on any violation
        """
        if self.height <= 0 or self.width <= 0 or self.height % 4 or self.width % 4:
            raise InvalidParameter(f"Resolution must be positive and divisible by 4, got {self.height}x{self.width}")
        if self.lambda_p < 0 or self.lambda_sync < 0:
            raise InvalidParameter(f"Loss weights must be >= 0, got lambda_p={self.lambda_p}, lambda_sync={self.lambda_sync}")
        if self.num_refs < 1:
            raise InvalidParameter(f"num_refs must be >= 1, got {self.num_refs}")
        if self.audio_window < 1 or self.audio_window % 2 == 0:
            raise InvalidParameter(f"audio_window must be a positive odd number, got {self.audio_window}")
        if self.embedding_dim % self.attention_heads:
            raise InvalidParameter(
                f"embedding_dim ({self.embedding_dim}) must be divisible by attention_heads ({self.attention_heads})"
            )
        if self.avau_layers < 1:
            raise InvalidParameter(f"avau_layers must be >= 1, got {self.avau_layers}")
        if self.batch_size < 1:
            raise InvalidParameter(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.crop_margin < 1:
            raise InvalidParameter(f"crop_margin must be in [0, 1), got {self.crop_margin}")
        if self.smooth_sigma_fraction <= 0:
            raise InvalidParameter(f"smooth_sigma_fraction must be > 0, got {self.smooth_sigma_fraction}")
        if sum(bool(getattr(self, name)) for name in ABLATIONS) > 1:
            raise InvalidParameter("At most one ablation flag may be set")

    def replace(self, **changes: Any) -> "TrainConfig":
        """Return a validated copy with some fields changed."""
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation."""
        data = dataclasses.asdict(self)
        data["adam_betas"] = list(self.adam_betas)
        return data

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        """Serialize to canonical JSON, optionally writing it to ``path``."""
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, paths excluded."""
        data = self.to_dict()
        data.pop("data_dir")
        data.pop("out_dir")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        """
        Build a config from a dictionary.

        Raises:
            InvalidParameter: on unknown keys or invalid values
        """
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidParameter(f"Unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "TrainConfig":
        """Load a config from a JSON document."""
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise InvalidParameter(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise InvalidParameter(f"Config file {path} must contain a JSON object")
        return cls.from_dict(data)

    @classmethod
    def desk(cls, **changes: Any) -> "TrainConfig":
        """Desk-scale preset (128x96, D=256)."""
        return cls(**changes)

    @classmethod
    def full_resolution(cls, **changes: Any) -> "TrainConfig":
        """Full-resolution preset (416x320 crops)."""
        defaults: Dict[str, Any] = {"height": 416, "width": 320, "embedding_dim": 256}
        defaults.update(changes)
        return cls(**defaults)

    @classmethod
    def tiny(cls, **changes: Any) -> "TrainConfig":
        """Test preset (64x48, D=64, two AVAUs)."""
        defaults: Dict[str, Any] = {
            "height": 64,
            "width": 48,
            "embedding_dim": 64,
            "avau_layers": 2,
            "sync_embedding_dim": 32,
        }
        defaults.update(changes)
        return cls(**defaults)

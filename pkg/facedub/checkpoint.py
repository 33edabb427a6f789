"""
Checkpoint files and the trainable model state.

File layout (little-endian):

    magic "FDCK" | u32 version | u32 meta length | meta JSON (UTF-8)
    u32 blob count
    per blob: u16 name length | name (UTF-8) | u8 ndim | ndim x u32 dims | float32 data, row-major

The meta JSON carries the training config, the step counter and the optimizer
hyper-parameters; every tensor (parameters and optimizer moments) is a named blob.
"""

import copy
import hashlib
import io
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from .config import TrainConfig
from .errors import FormatError
from .generator import DubbingGenerator
from .losses import PatchDiscriminator, SyncScorer

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_MAGIC = b"FDCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sII")
_COUNT = struct.Struct("<I")
_NAME_LEN = struct.Struct("<H")
_NDIM = struct.Struct("<B")


def write_checkpoint(path: PathLike, meta: Dict[str, Any], tensors: Dict[str, torch.Tensor]) -> Path:
    """Write ``meta`` and named float32 blobs to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buffer = io.BytesIO()
    buffer.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(meta_bytes)))
    buffer.write(meta_bytes)
    buffer.write(_COUNT.pack(len(tensors)))
    for name, tensor in tensors.items():
        encoded = name.encode("utf-8")
        array = tensor.detach().cpu().to(torch.float32).numpy()
        buffer.write(_NAME_LEN.pack(len(encoded)))
        buffer.write(encoded)
        buffer.write(_NDIM.pack(array.ndim))
        buffer.write(struct.pack(f"<{array.ndim}I", *array.shape))
        buffer.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    path.write_bytes(buffer.getvalue())
    return path


def read_checkpoint(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    """
    Read a checkpoint file.

    Returns:
        (meta dictionary, name -> float32 tensor)

    Raises:
        FormatError: unreadable file, bad magic, unsupported version or truncated content
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"Cannot read checkpoint {path}: {e}") from e
    try:
        magic, version, meta_len = _HEADER.unpack_from(raw, 0)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        offset = _HEADER.size
        meta = json.loads(raw[offset : offset + meta_len].decode("utf-8"))
        offset += meta_len
        (count,) = _COUNT.unpack_from(raw, offset)
        offset += _COUNT.size

        tensors: Dict[str, torch.Tensor] = {}
        for _ in range(count):
            (name_len,) = _NAME_LEN.unpack_from(raw, offset)
            offset += _NAME_LEN.size
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = _NDIM.unpack_from(raw, offset)
            offset += _NDIM.size
            dims = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            if offset + 4 * size > len(raw):
                raise FormatError(f"{path}: blob {name!r} is truncated")
            array = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(dims)
            offset += 4 * size
            tensors[name] = torch.from_numpy(array.astype(np.float32))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: malformed checkpoint: {e}") from e
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after the last blob")
    return meta, tensors


def _module_tensors(prefix: str, module: nn.Module) -> Dict[str, torch.Tensor]:
    return {f"{prefix}.{name}": tensor for name, tensor in module.state_dict().items()}


def _optimizer_tensors(prefix: str, optimizer: torch.optim.Optimizer) -> Dict[str, torch.Tensor]:
    tensors = {}
    for index, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            tensors[f"{prefix}.{index}.{key}"] = torch.as_tensor(value, dtype=torch.float32)
    return tensors


def _load_module(module: nn.Module, prefix: str, tensors: Dict[str, torch.Tensor]) -> None:
    start = prefix + "."
    module.load_state_dict({k[len(start) :]: v for k, v in tensors.items() if k.startswith(start)})


def _load_optimizer(
    optimizer: torch.optim.Optimizer, prefix: str, groups: Any, tensors: Dict[str, torch.Tensor]
) -> None:
    state: Dict[int, Dict[str, torch.Tensor]] = {}
    start = prefix + "."
    for name, value in tensors.items():
        if name.startswith(start):
            index, key = name[len(start) :].split(".", 1)
            state.setdefault(int(index), {})[key] = value
    optimizer.load_state_dict({"state": state, "param_groups": groups})


def _param_groups(optimizer: torch.optim.Optimizer) -> Any:
    groups = optimizer.state_dict()["param_groups"]
    return json.loads(json.dumps(groups, default=list))


class ModelState:
    """
    Generator, discriminator, optional sync scorer and both optimizers, plus the
    global step counter.
    """

    def __init__(
        self,
        config: TrainConfig,
        generator: DubbingGenerator,
        discriminator: PatchDiscriminator,
        g_optimizer: torch.optim.Optimizer,
        d_optimizer: torch.optim.Optimizer,
        scorer: Optional[SyncScorer] = None,
        step: int = 0,
    ):
        self.config = config
        self.generator = generator
        self.discriminator = discriminator
        self.g_optimizer = g_optimizer
        self.d_optimizer = d_optimizer
        self.scorer = scorer
        self.step = step

    def __repr__(self):
        return f"ModelState(step={self.step}, ablation={self.config.ablation!r}, sync={self.scorer is not None})"

    @classmethod
    def create(cls, config: TrainConfig, scorer: Optional[SyncScorer] = None) -> "ModelState":
        """Fresh networks initialised from ``config.seed``."""
        torch.manual_seed(config.seed)
        generator = DubbingGenerator(config)
        discriminator = PatchDiscriminator()
        g_optimizer = torch.optim.Adam(generator.parameters(), lr=config.lr_generator, betas=config.adam_betas)
        d_optimizer = torch.optim.Adam(discriminator.parameters(), lr=config.lr_discriminator, betas=config.adam_betas)
        return cls(config, generator, discriminator, g_optimizer, d_optimizer, scorer=scorer)

    def copy(self) -> "ModelState":
        """Deep copy; optimizers stay bound to the copied parameters."""
        return copy.deepcopy(self)

    def tensors(self) -> Dict[str, torch.Tensor]:
        tensors = {}
        tensors.update(_module_tensors("generator", self.generator))
        tensors.update(_module_tensors("discriminator", self.discriminator))
        if self.scorer is not None:
            tensors.update(_module_tensors("sync", self.scorer))
        tensors.update(_optimizer_tensors("optim.generator", self.g_optimizer))
        tensors.update(_optimizer_tensors("optim.discriminator", self.d_optimizer))
        return tensors

    def parameter_hash(self, part: str = "generator") -> str:
        """SHA-256 over the parameters of ``generator``, ``discriminator`` or ``sync``."""
        module = {"generator": self.generator, "discriminator": self.discriminator, "sync": self.scorer}[part]
        if module is None:
            return ""
        digest = hashlib.sha256()
        for name, tensor in module.state_dict().items():
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().numpy().tobytes())
        return digest.hexdigest()

    def save(self, path: PathLike) -> Path:
        meta = {
            "kind": "model_state",
            "step": self.step,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "has_sync": self.scorer is not None,
            "sync_frozen": bool(self.scorer is not None and self.scorer.frozen),
            "optimizers": {
                "generator": _param_groups(self.g_optimizer),
                "discriminator": _param_groups(self.d_optimizer),
            },
        }
        path = write_checkpoint(path, meta, self.tensors())
        logger.debug(f"Saved checkpoint {path} at step {self.step}")
        return path

    @classmethod
    def load(cls, path: PathLike) -> "ModelState":
        """
        Restore a state saved by ``save``.

        Raises:
            FormatError: the file is not a model checkpoint
        """
        meta, tensors = read_checkpoint(path)
        if meta.get("kind") != "model_state":
            raise FormatError(f"{path} is not a model checkpoint (kind={meta.get('kind')!r})")
        config = TrainConfig.from_dict(meta["config"])
        scorer = SyncScorer(config.sync_embedding_dim, config.audio_window) if meta["has_sync"] else None
        state = cls.create(config, scorer=scorer)
        _load_module(state.generator, "generator", tensors)
        _load_module(state.discriminator, "discriminator", tensors)
        if scorer is not None:
            _load_module(scorer, "sync", tensors)
            if meta["sync_frozen"]:
                scorer.freeze()
        _load_optimizer(state.g_optimizer, "optim.generator", meta["optimizers"]["generator"], tensors)
        _load_optimizer(state.d_optimizer, "optim.discriminator", meta["optimizers"]["discriminator"], tensors)
        state.step = int(meta["step"])
        return state


def save_scorer(path: PathLike, scorer: SyncScorer, config: TrainConfig, accuracy: Optional[float] = None) -> Path:
    meta = {"kind": "sync_scorer", "config": config.to_dict(), "accuracy": accuracy, "frozen": scorer.frozen}
    return write_checkpoint(path, meta, _module_tensors("sync", scorer))


def load_scorer(path: PathLike) -> Tuple[SyncScorer, Dict[str, Any]]:
    """Load a sync scorer checkpoint; the scorer comes back frozen if it was saved frozen."""
    meta, tensors = read_checkpoint(path)
    if meta.get("kind") != "sync_scorer":
        raise FormatError(f"{path} is not a sync scorer checkpoint (kind={meta.get('kind')!r})")
    config = TrainConfig.from_dict(meta["config"])
    scorer = SyncScorer(config.sync_embedding_dim, config.audio_window)
    _load_module(scorer, "sync", tensors)
    if meta["frozen"]:
        scorer.freeze()
    return scorer, meta

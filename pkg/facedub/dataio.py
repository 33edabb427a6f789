"""
Clip manifests, frame I/O and training samples.

A clip on disk is a directory of numbered PNG frames, a directory of per-frame
landmark JSON files, an AUDF audio feature file and a ``manifest.json`` tying them
together. Paths inside a manifest are relative to the manifest's directory.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import torch
from torch.utils.data import Dataset, default_collate

from .audio import audio_window, read_audio_features
from .config import FPS, TrainConfig
from .errors import FormatError, InsufficientFrames, InvalidParameter
from .geometry import (
    CropBox,
    CropTransform,
    LandmarkSet,
    crop_face,
    crop_region,
    load_landmarks,
    lower_half_mask,
    mask_bounds,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FRAME_NAME = "{:06d}.png"
LANDMARK_NAME = "{:06d}.json"


def read_frame(path: PathLike) -> np.ndarray:
    """Read a PNG frame as an RGB float32 array in [0, 1]."""
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise FormatError(f"Cannot read frame {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_frame(path: PathLike, image: np.ndarray) -> None:
    """Write an RGB frame (uint8, or float in [0, 1]) as PNG."""
    pixels = to_uint8(image)
    if pixels.ndim == 3:
        pixels = cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), pixels):
        raise FormatError(f"Cannot write frame {path}")


@dataclass
class ClipManifest:
    """Location and size of one clip's frames, landmarks and audio features."""

    clip_id: str
    frame_dir: str
    landmark_dir: str
    audio_path: str
    frame_count: int
    fps: int = FPS
    height: int = 0
    width: int = 0
    signals_path: Optional[str] = None
    root: Path = field(default=Path("."), compare=False, repr=False)

    def resolve(self, relative: str) -> Path:
        return (self.root / relative).resolve()

    def frame_path(self, index: int) -> Path:
        return self.resolve(self.frame_dir) / FRAME_NAME.format(index)

    def landmark_path(self, index: int) -> Path:
        return self.resolve(self.landmark_dir) / LANDMARK_NAME.format(index)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation."""
        return {
            "clip_id": self.clip_id,
            "frame_dir": self.frame_dir,
            "landmark_dir": self.landmark_dir,
            "audio_path": self.audio_path,
            "frame_count": self.frame_count,
            "fps": self.fps,
            "height": self.height,
            "width": self.width,
            "signals_path": self.signals_path,
        }

    def save(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: PathLike) -> "ClipManifest":
        """
        Load a manifest document.

        Raises:
            FormatError: unreadable document or missing keys
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text())
            return cls(root=path.parent.resolve(), **data)
        except (OSError, json.JSONDecodeError, TypeError) as e:
            raise FormatError(f"Cannot load clip manifest {path}: {e}") from e

    def validate(self) -> None:
        """
        Check that frame, landmark and audio counts agree with ``frame_count``.

        Raises:
            FormatError: on any count mismatch
        """
        frames = len(list(self.resolve(self.frame_dir).glob("*.png")))
        landmarks = len(list(self.resolve(self.landmark_dir).glob("*.json")))
        audio_rows = len(read_audio_features(self.resolve(self.audio_path)))
        if not frames == landmarks == audio_rows == self.frame_count:
            raise FormatError(
                f"Clip {self.clip_id}: frame_count={self.frame_count} but found {frames} frames, "
                f"{landmarks} landmark files and {audio_rows} audio rows"
            )


def find_manifests(data_dir: PathLike) -> List[ClipManifest]:
    """All clip manifests below ``data_dir``, sorted by clip id."""
    paths = sorted(Path(data_dir).glob("*/manifest.json"))
    if not paths:
        raise FormatError(f"No clip manifests found in {data_dir}")
    return sorted((ClipManifest.load(p) for p in paths), key=lambda m: m.clip_id)


@dataclass
class Sample:
    """
    One training example.

    Image tensors are 3xHxW in [0, 1]; ``references`` is Nx3xHxW and ``mouths`` holds
    the N lower-half mouth crops at Nx3x(H//2)x(W//2). ``mask`` is the 1xHxW binary
    lower-half mask of the source and ``mouth_box`` its bounding box [x0, y0, x1, y1);
    ``audio`` is Tx29.
    """

    source_frame: torch.Tensor
    masked_source: torch.Tensor
    mask: torch.Tensor
    references: torch.Tensor
    mouths: torch.Tensor
    audio: torch.Tensor
    target: torch.Tensor
    target_index: int
    reference_indices: List[int]
    mouth_box: torch.Tensor

    def as_dict(self) -> Dict[str, Any]:
        return {
            "source_frame": self.source_frame,
            "masked_source": self.masked_source,
            "mask": self.mask,
            "references": self.references,
            "mouths": self.mouths,
            "audio": self.audio,
            "target": self.target,
            "target_index": self.target_index,
            "reference_indices": torch.tensor(self.reference_indices),
            "mouth_box": self.mouth_box,
        }


def collate_samples(samples: Sequence[Sample]) -> Dict[str, torch.Tensor]:
    """Stack samples into a batch dictionary."""
    return default_collate([s.as_dict() for s in samples])


def select_references(
    candidates: Sequence[int], target_index: int, n_refs: int, gap: int, rng: np.random.Generator
) -> List[int]:
    """
    Draw ``n_refs`` distinct frame indices at least ``gap`` frames from the target.

    Raises:
        InsufficientFrames: fewer than ``n_refs`` admissible frames
    """
    admissible = [i for i in candidates if abs(i - target_index) >= gap]
    if len(admissible) < n_refs:
        raise InsufficientFrames(
            f"Need {n_refs} reference frames at least {gap} frames from target {target_index}, "
            f"only {len(admissible)} available"
        )
    chosen = rng.choice(len(admissible), size=n_refs, replace=False)
    return [int(admissible[i]) for i in chosen]


def _chw(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))


def _box_list(box: CropBox) -> List[int]:
    return [box.x0, box.y0, box.x1, box.y1]


class ClipData:
    """
    A clip loaded into memory: face crops at model resolution, their landmarks,
    lower-half masks and mouth boxes, and the full audio feature matrix.
    """

    def __init__(
        self,
        manifest: ClipManifest,
        frames: np.ndarray,
        landmarks: List[LandmarkSet],
        masks: np.ndarray,
        audio: np.ndarray,
        transforms: List[CropTransform],
    ):
        self.manifest = manifest
        self.frames = frames
        self.landmarks = landmarks
        self.masks = masks
        self.audio = audio
        self.transforms = transforms
        self.mouth_boxes: List[CropBox] = [mask_bounds(m) for m in masks]

    def __len__(self) -> int:
        return len(self.frames)

    def __repr__(self):
        return f"ClipData(clip_id={self.manifest.clip_id!r}, frames={len(self)})"

    @classmethod
    def load(cls, manifest: ClipManifest, height: int, width: int, margin: float = 0.10) -> "ClipData":
        """
        Read, crop and mask every frame of a clip.

        Args:
            manifest: clip to load
            height: crop height
            width: crop width
            margin: crop margin fraction
        """
        frames, landmarks, masks, transforms = [], [], [], []
        for index in range(manifest.frame_count):
            frame = read_frame(manifest.frame_path(index))
            lm = load_landmarks(manifest.landmark_path(index), frame.shape[1], frame.shape[0])
            crop, transform, crop_lm = crop_face(frame, lm, height, width, margin)
            frames.append(crop.astype(np.float32))
            landmarks.append(crop_lm)
            masks.append(lower_half_mask(crop_lm).data)
            transforms.append(transform)
        audio = read_audio_features(manifest.resolve(manifest.audio_path))
        if len(audio) != manifest.frame_count:
            raise FormatError(f"Clip {manifest.clip_id}: {len(audio)} audio rows for {manifest.frame_count} frames")
        return cls(manifest, np.stack(frames), landmarks, np.stack(masks).astype(np.float32), audio, transforms)

    def mouth_box_tensor(self, indices: Sequence[int]) -> torch.Tensor:
        """Mouth boxes of ``indices`` as an int64 (len, 4) tensor of [x0, y0, x1, y1)."""
        return torch.tensor([_box_list(self.mouth_boxes[i]) for i in indices], dtype=torch.int64).reshape(-1, 4)

    def mouth_crop(self, index: int) -> np.ndarray:
        """Lower-half pixels of frame ``index`` inside its mouth box, resized to (H//2, W//2)."""
        h, w = self.frames.shape[1:3]
        masked = self.frames[index] * self.masks[index][:, :, None]
        return crop_region(masked, self.mouth_boxes[index], h // 2, w // 2)

    def segment(self, name: Optional[str]) -> range:
        """Frame range of a segment: None (whole clip), "first" or "second" half."""
        half = len(self) // 2
        if name is None:
            return range(len(self))
        if name == "first":
            return range(0, half)
        if name == "second":
            return range(half, len(self))
        raise InvalidParameter(f"Unknown segment {name!r}")

    def sample(
        self,
        target_index: int,
        n_refs: int,
        rng_seed: Any,
        gap: int = 10,
        window: int = 9,
        segment: Optional[str] = None,
        audio: Optional[np.ndarray] = None,
    ) -> Sample:
        """
        Build the sample whose target is frame ``target_index``.

        The source is the target frame with its lower-half mask zeroed; references are
        drawn uniformly without replacement from frames of the same segment at least
        ``gap`` frames away. ``audio`` overrides the clip's own features (dubbing).
        """
        frames = self.segment(segment)
        if target_index not in frames:
            raise InvalidParameter(f"Target index {target_index} outside segment {frames}")
        rng = np.random.default_rng(rng_seed)
        ref_indices = select_references(frames, target_index, n_refs, gap, rng)

        source = self.frames[target_index]
        mask = self.masks[target_index][:, :, None]
        masked = source * (1.0 - mask)
        references = np.stack([self.frames[i] for i in ref_indices])
        mouths = np.stack([self.mouth_crop(i) for i in ref_indices])
        features = self.audio if audio is None else audio
        window_features = audio_window(features, target_index, window).features

        return Sample(
            source_frame=_chw(source),
            masked_source=_chw(masked.astype(np.float32)),
            mask=_chw(mask.astype(np.float32)),
            references=torch.from_numpy(np.ascontiguousarray(references.transpose(0, 3, 1, 2))),
            mouths=torch.from_numpy(np.ascontiguousarray(mouths.astype(np.float32).transpose(0, 3, 1, 2))),
            audio=torch.from_numpy(window_features),
            target=_chw(source),
            target_index=target_index,
            reference_indices=ref_indices,
            mouth_box=torch.tensor(_box_list(self.mouth_boxes[target_index]), dtype=torch.int64),
        )


def load_sample(
    manifest: ClipManifest,
    target_index: int,
    n_refs: int,
    rng_seed: Any,
    height: int = 128,
    width: int = 96,
    gap: int = 10,
    window: int = 9,
    margin: float = 0.10,
) -> Sample:
    """
    Load one sample straight from disk.

    Raises:
        InsufficientFrames: the clip has fewer than ``n_refs`` frames ``gap`` away from the target
        InvalidParameter: target index outside the clip
    """
    if not 0 <= target_index < manifest.frame_count:
        raise InvalidParameter(f"Target index {target_index} outside clip of {manifest.frame_count} frames")
    clip = ClipData.load(manifest, height, width, margin)
    return clip.sample(target_index, n_refs, rng_seed, gap=gap, window=window)


class DubbingDataset(Dataset):
    """
    Samples over a set of clips.

    Items are pure functions of (seed, index); ``batch_for_step`` draws the batch of
    a training step as a pure function of (seed, step).
    """

    def __init__(self, clips: Sequence[ClipData], config: TrainConfig, segment: Optional[str] = None):
        self.clips = list(clips)
        self.config = config
        self.segment = segment
        self.index: List[Tuple[int, int]] = []
        for c, clip in enumerate(self.clips):
            frames = clip.segment(segment)
            for t in frames:
                if sum(abs(i - t) >= config.reference_gap for i in frames) >= config.num_refs:
                    self.index.append((c, t))
        if not self.index:
            raise InsufficientFrames(
                f"No frame has {config.num_refs} references at least {config.reference_gap} frames away"
            )

    @classmethod
    def from_manifests(
        cls, manifests: Sequence[ClipManifest], config: TrainConfig, segment: Optional[str] = None
    ) -> "DubbingDataset":
        clips = [ClipData.load(m, config.height, config.width, config.crop_margin) for m in manifests]
        return cls(clips, config, segment)

    def __len__(self) -> int:
        return len(self.index)

    def get(self, item: int, rng_seed: Any) -> Sample:
        c, t = self.index[item]
        return self.clips[c].sample(
            t,
            self.config.num_refs,
            rng_seed,
            gap=self.config.reference_gap,
            window=self.config.audio_window,
            segment=self.segment,
        )

    def __getitem__(self, item: int) -> Dict[str, Any]:
        return self.get(item, [self.config.seed, item]).as_dict()

    def batch_for_step(self, step: int, batch_size: Optional[int] = None) -> Dict[str, torch.Tensor]:
        """The batch used at training step ``step``."""
        size = batch_size or self.config.batch_size
        rng = np.random.default_rng([self.config.seed, step])
        items = rng.choice(len(self), size=size, replace=len(self) < size)
        return collate_samples([self.get(int(i), [self.config.seed, step, j]) for j, i in enumerate(items)])

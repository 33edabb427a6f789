"""
Dubbing inference and evaluation.

``infer`` regenerates the lower face of every frame of a clip from driving audio and
pastes it back into the full frame. ``evaluate`` scores generated faces against the
ground-truth crops and writes the comparison table.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import torch
from tqdm import tqdm

from .audio import read_audio_features
from .checkpoint import ModelState
from .dataio import ClipData, ClipManifest, read_frame, write_frame
from .errors import LengthMismatch
from .generator import generate_frame
from .geometry import LandmarkSet, full_face_mask, load_landmarks, paste_back, smooth_mask
from .losses import PerceptualExtractor, SyncScorer
from .metrics import perceptual_distance, psnr, ssim, sync_scores
from .warping import feature_map_image, flow_magnitude_image

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TABLE_COLUMNS = ("condition", "SSIM", "PSNR", "LPIPS-proxy", "LSE-C-proxy", "LSE-D-proxy")


class InferenceResult:
    """Outputs of one inference run."""

    def __init__(self, out_dir: Path, frame_count: int, truncated: bool, metrics: List[Dict[str, float]]):
        self.out_dir = out_dir
        self.frame_count = frame_count
        self.truncated = truncated
        self.metrics = metrics

    @property
    def frames_dir(self) -> Path:
        return self.out_dir / "frames"

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation."""
        return {
            "out_dir": str(self.out_dir),
            "frame_count": self.frame_count,
            "truncated": self.truncated,
            "mean_ssim": float(np.mean([m["ssim"] for m in self.metrics])) if self.metrics else None,
            "mean_psnr": float(np.mean([m["psnr"] for m in self.metrics])) if self.metrics else None,
        }

    def __repr__(self):
        return f"InferenceResult(frames={self.frame_count}, truncated={self.truncated}, out_dir={str(self.out_dir)!r})"


@dataclass
class EvaluationRow:
    """One row of the comparison table."""

    condition: str
    ssim: float
    psnr: float
    lpips_proxy: float
    lse_c_proxy: float
    lse_d_proxy: float

    def values(self) -> Tuple[Any, ...]:
        return (self.condition, self.ssim, self.psnr, self.lpips_proxy, self.lse_c_proxy, self.lse_d_proxy)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation."""
        return dict(zip(TABLE_COLUMNS, self.values()))


def generate_clip(
    state: ModelState,
    clip: ClipData,
    indices: Optional[Sequence[int]] = None,
    audio: Optional[np.ndarray] = None,
    segment: Optional[str] = None,
) -> List[Tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """
    Generate faces for frames of ``clip``.

    References for frame t are drawn with seed (config.seed, t) from ``segment``.

    Returns:
        per frame: (I_O 3 x H x W, flow 2 x h x w, warped features C x h x w)
    """
    config = state.config
    frames = clip.segment(segment) if indices is None else indices
    generator = state.generator
    generator.eval()
    outputs = []
    with torch.no_grad():
        for t in tqdm(frames, desc=clip.manifest.clip_id, leave=False, disable=None):
            sample = clip.sample(
                t,
                config.num_refs,
                [config.seed, t],
                gap=config.reference_gap,
                window=config.audio_window,
                segment=segment,
                audio=audio,
            )
            outputs.append(generate_frame(sample, generator))
    return outputs


def _to_hwc(image: torch.Tensor) -> np.ndarray:
    return image.detach().cpu().float().numpy().transpose(1, 2, 0)


def composite(
    face: np.ndarray, frame: np.ndarray, lm: LandmarkSet, clip: ClipData, index: int, sigma_fraction: float
) -> np.ndarray:
    """Paste a generated crop back into its full frame with the smoothed full-face mask."""
    box = clip.transforms[index].box
    resized = cv2.resize(face, (box.width, box.height), interpolation=cv2.INTER_LINEAR)
    local = LandmarkSet.from_points(lm.points - np.array([box.x0, box.y0]), box.width, box.height)
    mask = smooth_mask(full_face_mask(local), sigma_fraction * box.height)
    return paste_back(resized, frame, mask, box)


def infer(
    state: ModelState,
    manifest: ClipManifest,
    audio_path: PathLike,
    out_dir: PathLike,
    allow_truncate: bool = False,
    scorer: Optional[SyncScorer] = None,
) -> InferenceResult:
    """
    Dub a clip with driving audio.

    For each frame: crop, mask, draw references, generate, paste back. Writes
    ``faces/`` (generated crops), ``frames/`` (composited frames), ``flow/`` (flow
    magnitude heatmaps), ``features/`` (mean warped feature maps) and ``metrics.json``.

    Args:
        state: trained model
        manifest: source clip
        audio_path: AUDF file with the driving audio features
        out_dir: output directory
        allow_truncate: dub only the frames covered by shorter audio instead of failing
        scorer: optional sync scorer for clip-level sync scores

    Returns:
        InferenceResult

    Raises:
        LengthMismatch: audio shorter than the video and truncation not allowed
    """
    config = state.config
    audio = read_audio_features(audio_path)
    count = manifest.frame_count
    truncated = False
    if len(audio) < count:
        if not allow_truncate:
            raise LengthMismatch(f"Driving audio has {len(audio)} frames, the video has {count}")
        logger.warning(f"Driving audio has {len(audio)} frames, truncating the {count}-frame video")
        count = len(audio)
        truncated = True

    out = Path(out_dir)
    for name in ("faces", "frames", "flow", "features"):
        (out / name).mkdir(parents=True, exist_ok=True)

    clip = ClipData.load(manifest, config.height, config.width, config.crop_margin)
    outputs = generate_clip(state, clip, indices=range(count), audio=audio)

    metrics = []
    faces = []
    for t, (face, flow, warped) in enumerate(outputs):
        face_np = _to_hwc(face)
        frame = read_frame(manifest.frame_path(t))
        lm = load_landmarks(manifest.landmark_path(t), frame.shape[1], frame.shape[0])
        composited = composite(face_np, frame, lm, clip, t, config.smooth_sigma_fraction)

        name = f"{t:06d}.png"
        write_frame(out / "faces" / name, face_np)
        write_frame(out / "frames" / name, composited)
        heat = cv2.resize(flow_magnitude_image(flow), (config.width, config.height), interpolation=cv2.INTER_NEAREST)
        write_frame(out / "flow" / name, heat)
        cv2.imwrite(str(out / "features" / name), feature_map_image(warped))

        metrics.append({"frame": t, "ssim": ssim(face_np, clip.frames[t]), "psnr": psnr(face_np, clip.frames[t])})
        faces.append(face)

    summary: Dict[str, Any] = {"frames": metrics, "frame_count": count, "truncated": truncated}
    if scorer is not None and faces:
        boxes = clip.mouth_box_tensor(range(count))
        scores = sync_scores(torch.stack(faces), audio[:count], scorer, window=config.audio_window, boxes=boxes)
        summary["sync"] = scores.to_dict()
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    logger.info(f"Dubbed {count} frames of {manifest.clip_id} into {out}")
    return InferenceResult(out, count, truncated, metrics)


def evaluate(
    state: ModelState,
    clips: Sequence[ClipData],
    condition: str = "full",
    extractor: Optional[PerceptualExtractor] = None,
    scorer: Optional[SyncScorer] = None,
    segment: Optional[str] = None,
) -> EvaluationRow:
    """
    Self-reconstruction scores of ``state`` averaged over clips.

    Every frame of ``segment`` is regenerated from its own audio and compared with the
    ground-truth crop. Sync columns are NaN without a scorer.
    """
    extractor = extractor or PerceptualExtractor()
    scorer = scorer or state.scorer
    ssims, psnrs, lpips, confidences, distances = [], [], [], [], []
    for clip in clips:
        indices = list(clip.segment(segment))
        faces = [face for face, _, _ in generate_clip(state, clip, indices=indices, segment=segment)]
        for t, face in zip(indices, faces):
            truth = torch.from_numpy(np.ascontiguousarray(clip.frames[t].transpose(2, 0, 1)))
            ssims.append(ssim(face, truth))
            psnrs.append(psnr(face, truth))
            lpips.append(perceptual_distance(face, truth, extractor))
        if scorer is not None:
            scores = sync_scores(
                torch.stack(faces),
                clip.audio[indices[0] : indices[-1] + 1],
                scorer,
                state.config.audio_window,
                boxes=clip.mouth_box_tensor(indices),
            )
            confidences.append(scores.confidence)
            distances.append(scores.distance)
    return EvaluationRow(
        condition=condition,
        ssim=float(np.mean(ssims)),
        psnr=float(np.mean(psnrs)),
        lpips_proxy=float(np.mean(lpips)),
        lse_c_proxy=float(np.mean(confidences)) if confidences else math.nan,
        lse_d_proxy=float(np.mean(distances)) if distances else math.nan,
    )


def _cell(value: Any) -> str:
    return f"{value:.4f}" if isinstance(value, float) else str(value)


def format_table(rows: Sequence[EvaluationRow]) -> str:
    """Aligned plain-text table with one row per condition."""
    cells = [list(TABLE_COLUMNS)] + [[_cell(v) for v in row.values()] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_table(rows: Sequence[EvaluationRow], out_dir: PathLike, stem: str = "evaluation") -> Tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.txt``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out / f"{stem}.csv", out / f"{stem}.txt"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([_cell(v) for v in row.values()])
    txt_path.write_text(format_table(rows))
    return csv_path, txt_path

"""
Procedural talking faces.

Each clip has its own identity (skin tone, lip colour, eye spacing, tooth pattern,
head size and position). The mouth opening follows a smooth random signal o(t) in
[0, 1], the eyes blink on their own schedule, and the "audio" features are a fixed
random linear embedding of (o, o') plus a little Gaussian noise, so lip motion is
linearly decodable from audio. Landmarks are the analytic positions of the drawn face
in the canonical 468-point layout of ``facedub.config``.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import cv2
import numpy as np
from tqdm import tqdm

from .audio import write_audio_features
from .config import (
    AUDIO_FEATURE_DIM,
    CHIN_INDEX,
    FPS,
    INNER_LIP_INDICES,
    LEFT_BROW_INDICES,
    LEFT_EYE_INDICES,
    LOWER_FILL_INDICES,
    LOWER_OVAL_INDICES,
    NOSE_BRIDGE_INDICES,
    NOSE_TIP_INDEX,
    NOSTRIL_INDICES,
    NUM_LANDMARKS,
    OUTER_LIP_INDICES,
    RIGHT_BROW_INDICES,
    RIGHT_EYE_INDICES,
    UPPER_FILL_INDICES,
    UPPER_OVAL_INDICES,
)
from .dataio import FRAME_NAME, LANDMARK_NAME, ClipManifest, write_frame
from .errors import InvalidParameter, ShapeError
from .geometry import LandmarkSet, save_landmarks

logger = logging.getLogger(__name__)

SUPERSAMPLE = 4
_SHIFT = 4  # fixed-point fractional bits for cv2 drawing
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

NOSE_TIP_V = 0.15
MOUTH_CENTER_V = 0.55
JAW_DROP = 0.06
TEETH = 8
AUDIO_NOISE_STD = 0.01
DERIVATIVE_SCALE = 0.1 * FPS  # o' in opening per 100 ms


@dataclass(frozen=True)
class FaceIdentity:
    """Appearance parameters fixed for a whole clip."""

    skin: Tuple[int, ...]
    lip: Tuple[int, ...]
    iris: Tuple[int, ...]
    background: Tuple[int, ...]
    eye_spacing: float
    head_scale: float
    center_offset: float
    tooth_pattern: Tuple[int, ...]

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "FaceIdentity":
        red = rng.uniform(150, 235)
        skin = (int(red), int(red * rng.uniform(0.65, 0.85)), int(red * rng.uniform(0.5, 0.75)))
        lip = (int(rng.uniform(140, 200)), int(rng.uniform(40, 80)), int(rng.uniform(50, 90)))
        iris = tuple(int(c) for c in rng.uniform(20, 110, 3))
        background = tuple(int(c) for c in rng.uniform(30, 100, 3))
        pattern = tuple(int(b) for b in rng.random(TEETH) < 0.8)
        return cls(
            skin=skin,
            lip=lip,
            iris=iris,
            background=background,
            eye_spacing=float(rng.uniform(0.30, 0.40)),
            head_scale=float(rng.uniform(0.95, 1.05)),
            center_offset=float(rng.uniform(-0.02, 0.02)),
            tooth_pattern=pattern,
        )

    def face_frame(self, h: int, w: int) -> Tuple[float, float, float, float]:
        """(cx, cy, rx, ry): pixel position of the face origin and its radii."""
        return w / 2 + self.center_offset * w, h / 2, 0.34 * w * self.head_scale, 0.40 * h * self.head_scale


def _sunflower(n: int) -> Tuple[np.ndarray, np.ndarray]:
    k = np.arange(n)
    return np.sqrt((k + 0.5) / n), k * _GOLDEN_ANGLE


def _arc(start: float, stop: float, n: int) -> np.ndarray:
    return np.linspace(start, stop, n)


def _ellipse_points(cu: float, cv: float, au: float, av: float, n: int) -> np.ndarray:
    phi = 2 * np.pi * np.arange(n) / n
    return np.stack([cu + au * np.cos(phi), cv + av * np.sin(phi)], axis=1)


def mouth_axes(opening: float) -> Dict[str, float]:
    """Mouth center and outer / inner lip half-axes in face units."""
    return {
        "center": MOUTH_CENTER_V + 0.04 * opening,
        "outer_u": 0.32,
        "outer_v": 0.07 + 0.10 * opening,
        "inner_u": 0.24,
        "inner_v": 0.01 + 0.09 * opening,
    }


def eye_openness(blink: float) -> float:
    return max(0.06 * (1.0 - blink), 0.008)


def face_points(identity: FaceIdentity, opening: float, blink: float) -> np.ndarray:
    """
    Canonical landmarks in face units (u right, v down, nose tip at v = 0.15).

    Returns:
        (468, 2) array; rows 0..233 have v >= 0.15, rows 234..467 have v <= 0.1
    """
    uv = np.zeros((NUM_LANDMARKS, 2))
    mouth = mouth_axes(opening)
    s = identity.eye_spacing

    uv[CHIN_INDEX] = (0.0, 1.0)
    uv[NOSE_TIP_INDEX] = (0.0, NOSE_TIP_V)

    theta = _arc(math.asin(0.2), math.pi - math.asin(0.2), len(LOWER_OVAL_INDICES))
    uv[list(LOWER_OVAL_INDICES)] = np.stack([np.cos(theta), np.sin(theta)], axis=1)

    uv[list(OUTER_LIP_INDICES)] = _ellipse_points(0.0, mouth["center"], mouth["outer_u"], mouth["outer_v"], 20)
    uv[list(INNER_LIP_INDICES)] = _ellipse_points(0.0, mouth["center"], mouth["inner_u"], mouth["inner_v"], 20)

    j = np.arange(5)
    nostrils = [(side * (0.06 + 0.03 * k), 0.17 + 0.015 * k) for side in (-1, 1) for k in j]
    uv[list(NOSTRIL_INDICES)] = nostrils

    r, phi = _sunflower(len(LOWER_FILL_INDICES))
    uv[list(LOWER_FILL_INDICES)] = np.stack([0.78 * r * np.cos(phi), 0.22 + 0.68 * r * np.abs(np.sin(phi))], axis=1)

    theta = _arc(math.pi - math.asin(0.1), 2 * math.pi + math.asin(0.1), len(UPPER_OVAL_INDICES))
    uv[list(UPPER_OVAL_INDICES)] = np.stack([np.cos(theta), np.sin(theta)], axis=1)

    eye_v = eye_openness(blink)
    uv[list(LEFT_EYE_INDICES)] = _ellipse_points(-s, -0.22, 0.12, eye_v, 16)
    uv[list(RIGHT_EYE_INDICES)] = _ellipse_points(s, -0.22, 0.12, eye_v, 16)

    t = 2 * np.arange(10) / 9 - 1
    for indices, side in ((LEFT_BROW_INDICES, -1), (RIGHT_BROW_INDICES, 1)):
        uv[list(indices)] = np.stack([side * s + 0.14 * t, -0.38 - 0.04 * (1 - t**2)], axis=1)

    uv[list(NOSE_BRIDGE_INDICES)] = np.stack([np.zeros(6), np.linspace(-0.15, 0.1, 6)], axis=1)

    r, phi = _sunflower(len(UPPER_FILL_INDICES))
    uv[list(UPPER_FILL_INDICES)] = np.stack([0.8 * r * np.cos(phi), 0.08 - 0.85 * r * np.abs(np.sin(phi))], axis=1)

    # Jaw follows the mouth; lips are already parametric in the opening.
    jaw = [CHIN_INDEX, *LOWER_OVAL_INDICES, *LOWER_FILL_INDICES]
    weight = np.clip((uv[jaw, 1] - 0.45) / 0.55, 0.0, 1.0)
    uv[jaw, 1] += JAW_DROP * opening * weight
    return uv


def to_pixels(identity: FaceIdentity, uv: np.ndarray, h: int, w: int) -> np.ndarray:
    cx, cy, rx, ry = identity.face_frame(h, w)
    return np.stack([cx + uv[:, 0] * rx, cy + uv[:, 1] * ry], axis=1)


def _fixed(points: np.ndarray) -> np.ndarray:
    """Continuous supersampled coordinates to cv2 fixed-point pixel-center coordinates."""
    return np.round((points - 0.5) * (1 << _SHIFT)).astype(np.int32)


def _fill_ellipse(canvas: np.ndarray, center: np.ndarray, axes: Tuple[float, float], color) -> None:
    c = _fixed(np.asarray([center]))[0]
    a = np.round(np.asarray(axes) * (1 << _SHIFT)).astype(int)
    cv2.ellipse(canvas, (int(c[0]), int(c[1])), (int(a[0]), int(a[1])), 0, 0, 360, color, -1, cv2.LINE_8, _SHIFT)


def _sorted_polygon(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    angles = np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])
    return points[np.argsort(angles)]


def render_face(identity: FaceIdentity, opening: float, blink: float, h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw one frame.

    The face is drawn at ``SUPERSAMPLE`` times the output resolution and area-averaged
    down, so small mouth movements change pixel values smoothly.

    Returns:
        (h x w x 3 uint8 RGB image, (468, 2) landmark pixel coordinates)
    """
    uv = face_points(identity, opening, blink)
    points = to_pixels(identity, uv, h, w)
    S = SUPERSAMPLE
    big = points * S
    cx, cy, rx, ry = identity.face_frame(h * S, w * S)

    gradient = np.linspace(0.85, 1.15, h * S)[:, None, None]
    canvas = np.clip(gradient * np.asarray(identity.background, dtype=np.float64), 0, 255).astype(np.uint8)
    canvas = np.ascontiguousarray(np.broadcast_to(canvas, (h * S, w * S, 3)))

    skin = identity.skin
    shade = tuple(int(c * 0.8) for c in skin)
    dark = tuple(int(c * 0.35) for c in skin)

    outline = [CHIN_INDEX, *LOWER_OVAL_INDICES, *UPPER_OVAL_INDICES]
    head = _sorted_polygon(big[outline], np.array([cx, cy + 0.1 * ry]))
    cv2.fillPoly(canvas, [_fixed(head)], skin, cv2.LINE_8, _SHIFT)

    openness = eye_openness(blink)
    for side in (-1, 1):
        center = np.array([cx + side * identity.eye_spacing * rx, cy - 0.22 * ry])
        _fill_ellipse(canvas, center, (0.12 * rx, openness * ry), (240, 240, 235))
        if openness > 0.03:
            radius = min(0.045 * rx, openness * ry)
            _fill_ellipse(canvas, center, (radius, radius), identity.iris)

    thickness = max(1, int(round(0.02 * h * S)))
    for indices in (LEFT_BROW_INDICES, RIGHT_BROW_INDICES):
        cv2.polylines(canvas, [_fixed(big[list(indices)])], False, dark, thickness, cv2.LINE_8, _SHIFT)
    cv2.polylines(canvas, [_fixed(big[list(NOSE_BRIDGE_INDICES)])], False, shade, thickness, cv2.LINE_8, _SHIFT)
    for side in (-1, 1):
        nostril = np.array([cx + side * 0.09 * rx, cy + 0.19 * ry])
        _fill_ellipse(canvas, nostril, (0.03 * rx, 0.015 * ry), tuple(int(c * 0.5) for c in skin))

    mouth = mouth_axes(opening)
    mouth_center = np.array([cx, cy + mouth["center"] * ry])
    _fill_ellipse(canvas, mouth_center, (mouth["outer_u"] * rx, mouth["outer_v"] * ry), identity.lip)

    inner = np.zeros(canvas.shape[:2], dtype=np.uint8)
    _fill_ellipse(inner, mouth_center, (mouth["inner_u"] * rx, mouth["inner_v"] * ry), 1)
    teeth = np.zeros_like(inner)
    top = mouth_center[1] - mouth["inner_v"] * ry
    band = 0.7 * mouth["inner_v"] * ry
    width = 2 * mouth["inner_u"] * rx / TEETH
    for k, present in enumerate(identity.tooth_pattern):
        if present:
            x0 = mouth_center[0] - mouth["inner_u"] * rx + k * width
            corners = np.array([[x0 + 0.1 * width, top], [x0 + 0.9 * width, top + band]])
            a, b = _fixed(corners)
            cv2.rectangle(teeth, (int(a[0]), int(a[1])), (int(b[0]), int(b[1])), 1, -1, cv2.LINE_8, _SHIFT)
    canvas[inner > 0] = (50, 20, 30)
    canvas[(inner > 0) & (teeth > 0)] = (235, 232, 220)

    image = cv2.resize(canvas, (w, h), interpolation=cv2.INTER_AREA)
    return image, points


def opening_signal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Smooth random mouth opening in [0, 1] (sum of three sinusoids, min-max scaled)."""
    t = np.arange(n) / FPS
    freqs = rng.uniform(0.6, 2.2, 3)
    phases = rng.uniform(0, 2 * np.pi, 3)
    amps = rng.uniform(0.5, 1.0, 3)
    s = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
    span = s.max() - s.min()
    return (s - s.min()) / span if span > 0 else np.zeros(n)


def blink_signal(rng: np.random.Generator, n: int) -> np.ndarray:
    profile = (0.5, 1.0, 1.0, 0.5)
    blink = np.zeros(n)
    t = 0
    while t < n:
        if rng.random() < 0.04:
            for k, value in enumerate(profile):
                if t + k < n:
                    blink[t + k] = value
            t += len(profile)
        else:
            t += 1
    return blink


def audio_projection(seed: int) -> np.ndarray:
    """The dataset-wide 29 x 2 embedding matrix W_a."""
    rng = np.random.default_rng([seed, 0xA0D1])
    return rng.normal(size=(AUDIO_FEATURE_DIM, 2)) / math.sqrt(2)


def audio_features(opening: np.ndarray, projection: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """W_a [o, o'] plus N(0, 0.01^2) noise, one row per frame."""
    derivative = np.gradient(opening) * DERIVATIVE_SCALE if len(opening) > 1 else np.zeros_like(opening)
    signal = np.stack([opening, derivative], axis=1)
    noise = rng.normal(0.0, AUDIO_NOISE_STD, size=(len(opening), AUDIO_FEATURE_DIM))
    return (signal @ projection.T + noise).astype(np.float32)


def synth_generate(
    seed: int,
    num_clips: int,
    frames_per_clip: int,
    h: int,
    w: int,
    out_dir: Union[str, Path],
    audio_window: int = 9,
) -> List[ClipManifest]:
    """
    Render a synthetic talking-face dataset.

    Args:
        seed: dataset seed; equal seeds give byte-identical output
        num_clips: number of clips (one identity each)
        frames_per_clip: frames per clip, at least twice the audio window
        h: frame height, divisible by 4
        w: frame width, divisible by 4
        out_dir: directory that receives one ``clip_XXX`` folder per clip
        audio_window: audio window length T

    Returns:
        list of ClipManifest, one per clip

    Raises:
        InvalidParameter: invalid sizes or counts
    """
    if h <= 0 or w <= 0 or h % 4 or w % 4:
        raise InvalidParameter(f"Frame size must be positive and divisible by 4, got {h}x{w}")
    if num_clips < 1:
        raise InvalidParameter(f"num_clips must be >= 1, got {num_clips}")
    if frames_per_clip < 2 * audio_window:
        raise InvalidParameter(f"frames_per_clip must be >= 2T = {2 * audio_window}, got {frames_per_clip}")

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    projection = audio_projection(seed)
    manifests = []
    for clip_index in range(num_clips):
        rng = np.random.default_rng([seed, clip_index])
        identity = FaceIdentity.sample(rng)
        opening = opening_signal(rng, frames_per_clip)
        blink = blink_signal(rng, frames_per_clip)
        features = audio_features(opening, projection, rng)

        clip_id = f"clip_{clip_index:03d}"
        clip_dir = root / clip_id
        (clip_dir / "frames").mkdir(parents=True, exist_ok=True)
        (clip_dir / "landmarks").mkdir(parents=True, exist_ok=True)

        for t in tqdm(range(frames_per_clip), desc=clip_id, leave=False, disable=None):
            image, points = render_face(identity, float(opening[t]), float(blink[t]), h, w)
            write_frame(clip_dir / "frames" / FRAME_NAME.format(t), image)
            save_landmarks(clip_dir / "landmarks" / LANDMARK_NAME.format(t), LandmarkSet.from_points(points, w, h))
        write_audio_features(clip_dir / "audio.audf", features)
        signals = {
            "mouth_opening": [round(float(v), 6) for v in opening],
            "blink": [float(v) for v in blink],
            "identity": asdict(identity),
        }
        (clip_dir / "signals.json").write_text(json.dumps(signals, sort_keys=True) + "\n")

        manifest = ClipManifest(
            clip_id=clip_id,
            frame_dir="frames",
            landmark_dir="landmarks",
            audio_path="audio.audf",
            frame_count=frames_per_clip,
            fps=FPS,
            height=h,
            width=w,
            signals_path="signals.json",
            root=clip_dir.resolve(),
        )
        manifest.save(clip_dir / "manifest.json")
        manifests.append(manifest)
        logger.info(f"Rendered {clip_id}: {frames_per_clip} frames at {h}x{w}")
    return manifests


def load_opening(manifest: ClipManifest) -> np.ndarray:
    """Ground-truth mouth opening o(t) of a synthetic clip."""
    if manifest.signals_path is None:
        raise InvalidParameter(f"Clip {manifest.clip_id} has no synthetic signals")
    data = json.loads(manifest.resolve(manifest.signals_path).read_text())
    return np.asarray(data["mouth_opening"], dtype=np.float64)


def mouth_opening_signal(frames: Union[np.ndarray, Sequence[np.ndarray]], landmarks: Sequence[LandmarkSet]) -> np.ndarray:
    """
    Measure mouth opening from rendered frames.

    For each frame, the mean darkness (1 - gray) of a box centered on the outer-lip
    landmarks whose size is a fixed fraction of the face bounding box.

    Args:
        frames: T images (H x W x 3, float in [0, 1] or uint8)
        landmarks: T landmark sets of those frames

    Returns:
        (T,) darkness values; larger means a wider open mouth
    """
    if len(frames) != len(landmarks):
        raise ShapeError(f"{len(frames)} frames but {len(landmarks)} landmark sets")
    values = []
    for frame, lm in zip(frames, landmarks):
        image = np.asarray(frame)
        if image.dtype == np.uint8:
            image = image.astype(np.float64) / 255.0
        gray = image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114
        x_min, y_min, x_max, y_max = lm.bounds()
        half_w = 0.18 * (x_max - x_min)
        half_h = 0.12 * (y_max - y_min)
        cx, cy = lm.subset(OUTER_LIP_INDICES).mean(axis=0)
        rows = slice(max(0, int(round(cy - half_h))), min(gray.shape[0], int(round(cy + half_h)) + 1))
        cols = slice(max(0, int(round(cx - half_w))), min(gray.shape[1], int(round(cx + half_w)) + 1))
        values.append(float(np.mean(1.0 - gray[rows, cols])))
    return np.asarray(values)

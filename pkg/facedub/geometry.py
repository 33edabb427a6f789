"""
Landmark geometry: convex hulls, region masks, Gaussian feathering, paste-back and face crops.

Coordinates are continuous pixel coordinates: pixel (row i, column j) covers
[j, j+1) x [i, i+1) and its center is (j + 0.5, i + 0.5). Images are numpy
arrays in HxW or HxWxC layout with values in [0, 1].
"""

import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Tuple, Union

import cv2
import numpy as np

from .config import LOWER_HALF_INDICES, NUM_LANDMARKS
from .errors import DegenerateCrop, DegenerateHull, FormatError, InvalidParameter, ShapeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class LandmarkSet:
    """468 facial points of one frame, clamped into the frame on ingestion."""

    points: np.ndarray
    frame_width: int
    frame_height: int
    clamp_count: int = 0

    @classmethod
    def from_points(cls, points: Union[np.ndarray, Sequence[Sequence[float]]], frame_width: int, frame_height: int) -> "LandmarkSet":
        """
        Build a landmark set, clamping every point into the frame.

        Args:
            points: 468 (x, y) pairs in pixel coordinates
            frame_width: width of the owning frame
            frame_height: height of the owning frame

        Returns:
            LandmarkSet whose clamp_count records how many coordinates were moved
        """
        if frame_width <= 0 or frame_height <= 0:
            raise InvalidParameter(f"Frame size must be positive, got {frame_width}x{frame_height}")
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape != (NUM_LANDMARKS, 2):
            raise ShapeError(f"Expected {NUM_LANDMARKS} (x, y) points, got array of shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidParameter("Landmarks contain non-finite coordinates")

        upper = np.array([np.nextafter(frame_width, 0), np.nextafter(frame_height, 0)])
        clamped = np.clip(pts, 0.0, upper)
        clamp_count = int(np.count_nonzero(clamped != pts))
        if clamp_count:
            logger.warning(f"Clamped {clamp_count} landmark coordinates into a {frame_width}x{frame_height} frame")
        return cls(points=clamped, frame_width=int(frame_width), frame_height=int(frame_height), clamp_count=clamp_count)

    def subset(self, indices: Iterable[int]) -> np.ndarray:
        """Return the (k, 2) array of the selected points."""
        return self.points[list(indices)]

    def bounds(self) -> Tuple[float, float, float, float]:
        """Bounding box (x_min, y_min, x_max, y_max) of all points."""
        x_min, y_min = self.points.min(axis=0)
        x_max, y_max = self.points.max(axis=0)
        return float(x_min), float(y_min), float(x_max), float(y_max)


class MaskKind(str, enum.Enum):
    BINARY = "binary"
    SMOOTHED = "smoothed"


@dataclass
class RegionMask:
    """HxW mask with values in [0, 1]."""

    data: np.ndarray
    kind: MaskKind = MaskKind.BINARY

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def area(self) -> float:
        return float(self.data.sum())


@dataclass(frozen=True)
class CropBox:
    """Integer crop rectangle [x0, x1) x [y0, y1) in frame pixels."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def slices(self) -> Tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


@dataclass(frozen=True)
class CropTransform:
    """Affine map between frame coordinates and crop-output coordinates."""

    box: CropBox
    out_height: int
    out_width: int

    @property
    def scale(self) -> Tuple[float, float]:
        return self.out_width / self.box.width, self.out_height / self.box.height

    def to_crop(self, points: np.ndarray) -> np.ndarray:
        sx, sy = self.scale
        pts = np.asarray(points, dtype=np.float64)
        return np.stack([(pts[:, 0] - self.box.x0) * sx, (pts[:, 1] - self.box.y0) * sy], axis=1)

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        sx, sy = self.scale
        pts = np.asarray(points, dtype=np.float64)
        return np.stack([pts[:, 0] / sx + self.box.x0, pts[:, 1] / sy + self.box.y0], axis=1)


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def convex_hull(points: Union[np.ndarray, Sequence[Sequence[float]]]) -> np.ndarray:
    """
    Convex hull by Andrew's monotone chain.

    Points are sorted lexicographically by (x, y); collinear and duplicate points are
    dropped from the hull.

    Args:
        points: (n, 2) array-like of 2D points

    Returns:
        (k, 2) array of hull vertices in counter-clockwise order (positive signed area),
        starting at the lexicographically smallest point

    Raises:
        DegenerateHull: fewer than 3 points or all points collinear
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError(f"Expected an (n, 2) point array, got shape {pts.shape}")
    if len(pts) < 3:
        raise DegenerateHull(f"Convex hull needs at least 3 points, got {len(pts)}")

    order = np.lexsort((pts[:, 1], pts[:, 0]))
    ordered = pts[order]

    lower: list = []
    for p in ordered:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)

    upper: list = []
    for p in ordered[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)

    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise DegenerateHull(f"All {len(pts)} points are collinear")
    return hull


def polygon_area(polygon: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise polygons."""
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def point_in_hull(hull: np.ndarray, point: Sequence[float], tol: float = 1e-9) -> bool:
    """True if ``point`` lies inside or on the boundary of a counter-clockwise convex polygon."""
    p = np.asarray(point, dtype=np.float64)
    for i in range(len(hull)):
        if _cross(hull[i], hull[(i + 1) % len(hull)], p) < -tol:
            return False
    return True


def rasterize_polygon(polygon: np.ndarray, height: int, width: int) -> np.ndarray:
    """
    Rasterize a convex polygon with the pixel-center rule.

    A pixel is inside when its center (j + 0.5, i + 0.5) is inside the polygon. Edges
    are half-open in y ([y_min, y_max)) and the span in x is half-open ([x_left, x_right)).

    Returns:
        uint8 HxW array of {0, 1}
    """
    centers_y = np.arange(height, dtype=np.float64) + 0.5
    x_left = np.full(height, np.inf)
    x_right = np.full(height, -np.inf)

    for i in range(len(polygon)):
        (px, py), (qx, qy) = polygon[i], polygon[(i + 1) % len(polygon)]
        if py == qy:
            continue
        y_lo, y_hi = min(py, qy), max(py, qy)
        rows = (centers_y >= y_lo) & (centers_y < y_hi)
        if not rows.any():
            continue
        t = (centers_y[rows] - py) / (qy - py)
        xs = px + t * (qx - px)
        x_left[rows] = np.minimum(x_left[rows], xs)
        x_right[rows] = np.maximum(x_right[rows], xs)

    centers_x = np.arange(width, dtype=np.float64) + 0.5
    inside = (centers_x[None, :] >= x_left[:, None]) & (centers_x[None, :] < x_right[:, None])
    return inside.astype(np.uint8)


def hull_mask(points: np.ndarray, height: int, width: int) -> RegionMask:
    """
    Binary mask of the convex hull of ``points``.

    The pixels holding the points themselves are always set, so every point of the
    set is covered by the mask.
    """
    hull = convex_hull(points)
    data = rasterize_polygon(hull, height, width)
    cols = np.clip(np.floor(points[:, 0]).astype(int), 0, width - 1)
    rows = np.clip(np.floor(points[:, 1]).astype(int), 0, height - 1)
    data[rows, cols] = 1
    return RegionMask(data=data.astype(np.float32), kind=MaskKind.BINARY)


def lower_half_mask(lm: LandmarkSet, indices: Sequence[int] = LOWER_HALF_INDICES) -> RegionMask:
    """Binary mask of the convex hull of the lower-half landmarks (nose tip and below)."""
    return hull_mask(lm.subset(indices), lm.frame_height, lm.frame_width)


def full_face_mask(lm: LandmarkSet) -> RegionMask:
    """Binary mask of the convex hull of all 468 landmarks."""
    return hull_mask(lm.points, lm.frame_height, lm.frame_width)


def gaussian_radius(sigma: float) -> int:
    """Truncation radius of the smoothing kernel: ceil(3 sigma)."""
    return int(math.ceil(3.0 * sigma))


def smooth_mask(m: RegionMask, sigma: float) -> RegionMask:
    """
    Feather a binary mask with a separable Gaussian.

    The blur is truncated at r = ceil(3 sigma) with replicated borders. Pixels whose
    (2r+1)x(2r+1) neighbourhood is entirely inside the mask are set to exactly 1 and
    pixels whose neighbourhood misses the mask entirely are set to exactly 0.

    Args:
        m: binary mask
        sigma: Gaussian standard deviation in pixels

    Returns:
        smoothed mask with values in [0, 1]

    Raises:
        InvalidParameter: sigma <= 0 or a non-binary input mask
    """
    if not sigma > 0:
        raise InvalidParameter(f"sigma must be > 0, got {sigma}")
    if m.kind != MaskKind.BINARY:
        raise InvalidParameter(f"smooth_mask expects a binary mask, got {m.kind.value}")

    radius = gaussian_radius(sigma)
    size = 2 * radius + 1
    binary = (m.data > 0.5).astype(np.uint8)
    blurred = cv2.GaussianBlur(
        binary.astype(np.float64), (size, size), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_REPLICATE
    )
    element = np.ones((size, size), dtype=np.uint8)
    interior = cv2.erode(binary, element) > 0
    support = cv2.dilate(binary, element) > 0

    data = np.where(interior, 1.0, np.where(support, np.clip(blurred, 0.0, 1.0), 0.0))
    return RegionMask(data=data.astype(np.float32), kind=MaskKind.SMOOTHED)


def paste_back(generated_face: np.ndarray, source_frame: np.ndarray, m: RegionMask, crop_box: CropBox) -> np.ndarray:
    """
    Composite a generated face onto its source frame.

    Inside ``crop_box`` the output is m * generated + (1 - m) * source; outside it the
    source is copied unchanged. Pixels with m == 0 are bit-identical to the source.

    Raises:
        ShapeError: when the face, mask and crop box sizes disagree
    """
    box_shape = (crop_box.height, crop_box.width)
    if generated_face.shape[:2] != box_shape:
        raise ShapeError(f"Generated face {generated_face.shape[:2]} does not match crop box {box_shape}")
    if m.shape != box_shape:
        raise ShapeError(f"Mask {m.shape} does not match generated face {box_shape}")
    if generated_face.shape[2:] != source_frame.shape[2:]:
        raise ShapeError(f"Channel layout mismatch: {generated_face.shape} vs {source_frame.shape}")
    if crop_box.x0 < 0 or crop_box.y0 < 0 or crop_box.y1 > source_frame.shape[0] or crop_box.x1 > source_frame.shape[1]:
        raise ShapeError(f"Crop box {crop_box} exceeds frame of shape {source_frame.shape[:2]}")

    weights = m.data.astype(source_frame.dtype)
    if source_frame.ndim == 3:
        weights = weights[:, :, None]
    output = source_frame.copy()
    rows, cols = crop_box.slices()
    region = source_frame[rows, cols]
    output[rows, cols] = weights * generated_face.astype(source_frame.dtype) + (1 - weights) * region
    return output


def crop_box_for(lm: LandmarkSet, margin: float) -> CropBox:
    """Landmark bounding box expanded by ``margin`` of its size per side, clamped to the frame."""
    x_min, y_min, x_max, y_max = lm.bounds()
    pad_x = margin * (x_max - x_min)
    pad_y = margin * (y_max - y_min)
    x0 = max(0, int(math.floor(x_min - pad_x)))
    y0 = max(0, int(math.floor(y_min - pad_y)))
    x1 = min(lm.frame_width, int(math.floor(x_max + pad_x)) + 1)
    y1 = min(lm.frame_height, int(math.floor(y_max + pad_y)) + 1)
    if x1 - x0 < 2 or y1 - y0 < 2:
        raise DegenerateCrop(f"Crop box collapsed to {x1 - x0}x{y1 - y0} pixels")
    return CropBox(x0, y0, x1, y1)


def mask_bounds(m: Union[RegionMask, np.ndarray]) -> CropBox:
    """
    Tight bounding box of the non-zero pixels of a mask.

    Raises:
        DegenerateCrop: the mask is empty
    """
    data = m.data if isinstance(m, RegionMask) else np.asarray(m)
    x, y, w, h = cv2.boundingRect((data > 0).astype(np.uint8))
    if w == 0 or h == 0:
        raise DegenerateCrop("Mask has no pixels to bound")
    return CropBox(x, y, x + w, y + h)


def crop_region(image: np.ndarray, box: CropBox, out_h: int, out_w: int) -> np.ndarray:
    """Cut ``box`` out of an HxWxC image and resize it to (out_h, out_w)."""
    rows, cols = box.slices()
    crop = cv2.resize(image[rows, cols], (out_w, out_h), interpolation=cv2.INTER_LINEAR)
    if image.ndim == 3 and crop.ndim == 2:
        crop = crop[:, :, None]
    return crop


def crop_face(
    frame: np.ndarray, lm: LandmarkSet, out_h: int, out_w: int, margin: float = 0.10
) -> Tuple[np.ndarray, CropTransform, LandmarkSet]:
    """
    Crop the face region and resize it to (out_h, out_w).

    Args:
        frame: HxWxC image
        lm: landmarks of ``frame``
        out_h: output height, divisible by 4
        out_w: output width, divisible by 4
        margin: fraction of the landmark bounding box added on each side

    Returns:
        (resized crop, crop transform, landmarks in crop coordinates)

    Raises:
        InvalidParameter: output size not divisible by 4
        DegenerateCrop: collapsed crop box
    """
    if out_h <= 0 or out_w <= 0 or out_h % 4 or out_w % 4:
        raise InvalidParameter(f"Crop size must be positive and divisible by 4, got {out_h}x{out_w}")
    if frame.shape[:2] != (lm.frame_height, lm.frame_width):
        raise ShapeError(f"Frame {frame.shape[:2]} does not match landmark frame {(lm.frame_height, lm.frame_width)}")

    box = crop_box_for(lm, margin)
    transform = CropTransform(box=box, out_height=out_h, out_width=out_w)
    crop = crop_region(frame, box, out_h, out_w)
    landmarks = LandmarkSet.from_points(transform.to_crop(lm.points), out_w, out_h)
    return crop, transform, landmarks


def load_landmarks(path: PathLike, frame_width: int, frame_height: int) -> LandmarkSet:
    """
    Read a per-frame landmark file (JSON array of 468 [x, y] pairs).

    Raises:
        FormatError: unreadable or wrongly shaped document
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read landmark file {path}: {e}") from e
    try:
        return LandmarkSet.from_points(data, frame_width, frame_height)
    except (ShapeError, InvalidParameter, ValueError, TypeError) as e:
        raise FormatError(f"Landmark file {path} is malformed: {e}") from e


def save_landmarks(path: PathLike, lm: Union[LandmarkSet, np.ndarray]) -> None:
    """Write landmarks as a JSON array of [x, y] pairs."""
    points = lm.points if isinstance(lm, LandmarkSet) else np.asarray(lm)
    Path(path).write_text(json.dumps([[round(float(x), 4), round(float(y), 4)] for x, y in points]))


def mask_to_uint8(m: RegionMask) -> np.ndarray:
    return np.rint(255.0 * np.clip(m.data, 0.0, 1.0)).astype(np.uint8)


def save_mask_png(path: PathLike, m: RegionMask) -> None:
    """Export a mask as 8-bit grayscale PNG (value = round(255 m))."""
    cv2.imwrite(str(path), mask_to_uint8(m))

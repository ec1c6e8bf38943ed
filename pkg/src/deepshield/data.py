"""Dataset layout, clip containers, and clip-sampling protocols.

A frame is a float32 array of shape (H, W, 3) with values in [0, 1].
On disk a video is a directory::

    <root>/<video_id>/frames/000000.png ...   8-bit RGB
    <root>/<video_id>/meta.json               label, face_box, landmarks, ...
    <root>/<video_id>/<landmarks file>        one line per frame: x0 y0 x1 y1 ...
    <root>/<video_id>/masks/000000.png ...    blended videos only, 8-bit gray

Everything here is read-only after construction; sampling never transforms
pixels, so clips are bit-identical to the source frames.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DatasetError, MalformedLandmarksError, TooShortVideoError

logger = logging.getLogger(__name__)

#: 4 inference segments x 12 frames; shorter videos are rejected at load.
MIN_VIDEO_FRAMES = 48

FRAMES_DIRNAME = "frames"
MASKS_DIRNAME = "masks"
META_FILENAME = "meta.json"
INFERENCE_SEGMENTS = 4


@dataclass
class LandmarkSet:
    """Facial landmarks of one frame, (L, 2) float32 in (x, y) pixel units."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 3:
            raise MalformedLandmarksError(
                f"landmark set needs at least 3 (x, y) points, got shape "
                f"{self.points.shape}")


@dataclass
class VideoClip:
    """T consecutive frames of one video, stacked as (T, H, W, 3) float32."""

    frames: np.ndarray
    source_id: str
    start_index: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass
class BlendMask:
    """Per-frame manipulation masks, (T, H, W) float32 in [0, 1]."""

    values: np.ndarray

    @classmethod
    def zeros(cls, num_frames: int, height: int, width: int) -> "BlendMask":
        return cls(np.zeros((num_frames, height, width), dtype=np.float32))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values > 0)


@dataclass
class VideoRecord:
    """One validated video of the dataset."""

    video_id: str
    label: str                       # "real" | "fake"
    frame_paths: list[Path]
    face_boxes: np.ndarray           # (N, 4) float32, x0 y0 x1 y1 per frame
    landmark_path: Path | None = None
    mask_paths: list[Path] | None = None
    manipulation: str | None = None  # forgery-type tag for fake videos
    frame_shape: tuple[int, int] = (0, 0)
    _landmarks: list[LandmarkSet] | None = field(default=None, repr=False)

    @property
    def num_frames(self) -> int:
        return len(self.frame_paths)

    def landmarks(self) -> list[LandmarkSet]:
        """Parse (and memoize) the per-frame landmark sets."""
        if self._landmarks is None:
            if self.landmark_path is None:
                raise MalformedLandmarksError(
                    f"video {self.video_id} has no landmark file")
            self._landmarks = load_landmarks(
                self.landmark_path, self.num_frames, self.frame_shape)
        return self._landmarks


def read_image_rgb(path: Path) -> np.ndarray:
    """Read an 8-bit image as float32 RGB in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise DatasetError(f"cannot read image {path}")
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def write_image_rgb(path: Path, image: np.ndarray) -> None:
    """Write a [0, 1] float RGB image as 8-bit PNG."""
    out = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(out, cv2.COLOR_RGB2BGR)):
        raise DatasetError(f"cannot write image {path}")


def read_mask_gray(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise DatasetError(f"cannot read mask {path}")
    return raw.astype(np.float32) / 255.0


def write_mask_gray(path: Path, mask: np.ndarray) -> None:
    out = np.clip(np.rint(np.asarray(mask) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), out):
        raise DatasetError(f"cannot write mask {path}")


class FrameCache:
    """Memoizes decoded frames by path. Unbounded; sized for desk-scale data."""

    def __init__(self):
        self._frames: dict[str, np.ndarray] = {}

    def frame(self, path: Path) -> np.ndarray:
        key = str(path)
        if key not in self._frames:
            self._frames[key] = read_image_rgb(path)
        return self._frames[key]

    def clear(self) -> None:
        self._frames.clear()


def load_landmarks(path: Path, num_frames: int,
                   frame_shape: tuple[int, int] | None = None) -> list[LandmarkSet]:
    """Parse a landmark file: one line per frame of flattened x y pairs."""
    try:
        lines = Path(path).read_text().strip().splitlines()
    except OSError as exc:
        raise MalformedLandmarksError(f"cannot read landmark file {path}: {exc}")
    if len(lines) != num_frames:
        raise MalformedLandmarksError(
            f"{path}: {len(lines)} landmark lines for {num_frames} frames")
    sets = []
    for i, line in enumerate(lines):
        try:
            values = np.array([float(v) for v in line.split()], dtype=np.float32)
        except ValueError:
            raise MalformedLandmarksError(f"{path}: non-numeric landmarks on line {i}")
        if values.size < 6 or values.size % 2 != 0:
            raise MalformedLandmarksError(
                f"{path}: line {i} must hold >= 3 x y pairs, got {values.size} values")
        points = values.reshape(-1, 2)
        if frame_shape is not None:
            h, w = frame_shape
            if (points[:, 0].min() < 0 or points[:, 1].min() < 0
                    or points[:, 0].max() >= w or points[:, 1].max() >= h):
                raise MalformedLandmarksError(
                    f"{path}: line {i} has landmarks outside the {w}x{h} frame")
        sets.append(LandmarkSet(points))
    return sets


def _numbered_paths(directory: Path, what: str, video_id: str) -> list[Path]:
    if not directory.is_dir():
        raise DatasetError(f"video {video_id}: missing {what} directory {directory}")
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DatasetError(f"video {video_id}: no {what} images in {directory}")
    return paths


def load_record(video_dir: Path) -> VideoRecord:
    video_id = video_dir.name
    meta_path = video_dir / META_FILENAME
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"video {video_id}: bad {META_FILENAME}: {exc}")

    label = meta.get("label")
    if label not in ("real", "fake"):
        raise DatasetError(f"video {video_id}: label must be 'real' or 'fake', "
                           f"got {label!r}")

    frame_paths = _numbered_paths(video_dir / FRAMES_DIRNAME, "frame", video_id)
    if len(frame_paths) < MIN_VIDEO_FRAMES:
        raise TooShortVideoError(
            f"video {video_id}: {len(frame_paths)} frames, minimum is "
            f"{MIN_VIDEO_FRAMES} (4 inference segments of 12)")

    boxes = np.asarray(meta.get("face_box", []), dtype=np.float32)
    if boxes.ndim != 2 or boxes.shape != (len(frame_paths), 4):
        raise DatasetError(
            f"video {video_id}: face_box must list one [x0, y0, x1, y1] per frame")

    first = read_image_rgb(frame_paths[0])
    frame_shape = (first.shape[0], first.shape[1])

    landmark_path = None
    if meta.get("landmarks"):
        landmark_path = video_dir / meta["landmarks"]
    if label == "real" and landmark_path is None:
        raise DatasetError(f"video {video_id}: real videos need a landmark file")

    mask_paths = None
    masks_dir = video_dir / MASKS_DIRNAME
    if masks_dir.is_dir():
        mask_paths = _numbered_paths(masks_dir, "mask", video_id)
        if len(mask_paths) != len(frame_paths):
            raise DatasetError(
                f"video {video_id}: {len(mask_paths)} masks for "
                f"{len(frame_paths)} frames")

    record = VideoRecord(
        video_id=video_id,
        label=label,
        frame_paths=frame_paths,
        face_boxes=boxes,
        landmark_path=landmark_path,
        mask_paths=mask_paths,
        manipulation=meta.get("manipulation"),
        frame_shape=frame_shape,
    )
    if landmark_path is not None:
        record.landmarks()  # validate eagerly
    return record


def load_dataset(root: str | Path) -> list[VideoRecord]:
    """Load and validate every video under ``root``, ordered by video_id."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    video_dirs = sorted(
        (d for d in root.iterdir() if d.is_dir() and (d / META_FILENAME).is_file()),
        key=lambda d: d.name)
    if not video_dirs:
        logger.warning("dataset root %s contains no videos", root)
        return []
    return [load_record(d) for d in video_dirs]


def load_clip(record: VideoRecord, start: int, clip_len: int,
              cache: FrameCache | None = None) -> VideoClip:
    if start < 0 or start + clip_len > record.num_frames:
        raise TooShortVideoError(
            f"video {record.video_id}: clip [{start}, {start + clip_len}) out of "
            f"range for {record.num_frames} frames")
    reader = cache.frame if cache is not None else read_image_rgb
    frames = np.stack([reader(p) for p in record.frame_paths[start:start + clip_len]])
    return VideoClip(frames=frames, source_id=record.video_id, start_index=start)


def load_mask_clip(record: VideoRecord, start: int, clip_len: int) -> BlendMask:
    if record.mask_paths is None:
        raise DatasetError(f"video {record.video_id} has no stored masks")
    values = np.stack([read_mask_gray(p)
                       for p in record.mask_paths[start:start + clip_len]])
    return BlendMask(values)


def sample_training_clips(record: VideoRecord, num_clips: int, clip_len: int,
                          rng: np.random.Generator,
                          cache: FrameCache | None = None) -> list[VideoClip]:
    """Sample ``num_clips`` clips with uniformly random starts (may overlap)."""
    if num_clips < 1:
        raise ValueError("num_clips must be >= 1")
    if record.num_frames < clip_len:
        raise TooShortVideoError(
            f"video {record.video_id}: {record.num_frames} frames < clip_len "
            f"{clip_len}")
    starts = rng.integers(0, record.num_frames - clip_len + 1, size=num_clips)
    return [load_clip(record, int(s), clip_len, cache) for s in starts]


def inference_clip_starts(num_frames: int, clip_len: int) -> list[int]:
    """Start offsets of the 4-segment inference protocol (deterministic)."""
    if num_frames < INFERENCE_SEGMENTS * clip_len:
        raise TooShortVideoError(
            f"{num_frames} frames < {INFERENCE_SEGMENTS} segments of {clip_len}")
    segment = num_frames // INFERENCE_SEGMENTS  # remainder stays in last segment
    return [i * segment for i in range(INFERENCE_SEGMENTS)]


def sample_inference_clips(record: VideoRecord, clip_len: int = 12,
                           cache: FrameCache | None = None) -> list[VideoClip]:
    """The first ``clip_len`` frames of each of 4 equal contiguous segments."""
    starts = inference_clip_starts(record.num_frames, clip_len)
    return [load_clip(record, s, clip_len, cache) for s in starts]

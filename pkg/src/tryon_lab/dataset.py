"""VVT-style video try-on data on disk.

Directory layout under ``<root>/<split>/<video_id>/``::

    frames/%05d.png           RGB frames, contiguous from 00000
    cloth/product.png         isolated cloth product image (RGB)
    cloth/product_mask.png    its binary mask (L, 0/255)
    garment_mask/%05d.png     per-frame worn-garment mask (L, 0/255)
    pose_coco/%05d.json       18 keypoints: [[x, y, confidence] | null, ...]
    pose_dense/%05d.png       IUV map: R = part index, G = U*255, B = V*255
    flow/%05d.flo             flow t -> t+1 (see :mod:`tryon_lab.flo`)

Flow file ``t`` lives on frame t+1's pixel grid and points back into frame t,
so ``backward_warp(frame_t, flow_t)`` reconstructs frame t+1.
"""

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptImage, DatasetError, EmptyDataset, IndexOutOfRange, MissingAnnotation
from .flo import read_flo

SPLITS = ("train", "val", "test")
NUM_KEYPOINTS = 18
NUM_PARTS = 24
HEAD_PARTS = (23, 24)

KEYPOINT_NAMES = (
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
)
FACE_KEYPOINTS = (0, 14, 15, 16, 17)

# annotation kind -> (subdirectory, extension); frames are always required
ANNOTATION_KINDS = {
    "garment_mask": ("garment_mask", ".png"),
    "pose_coco": ("pose_coco", ".json"),
    "pose_dense": ("pose_dense", ".png"),
    "flow": ("flow", ".flo"),
}
DEFAULT_KINDS = ("garment_mask", "pose_coco", "pose_dense")

_INDEXED = re.compile(r"^(\d{5})\.[a-z]+$")


@dataclass(frozen=True)
class KeypointSet:
    """18 COCO keypoints as an (18, 3) array of x, y, confidence.

    Absent points carry NaN coordinates and confidence 0.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (NUM_KEYPOINTS, 3):
            raise ValueError(f"KeypointSet needs shape (18, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def present(self):
        return ~np.isnan(self.points[:, 0]) & ~np.isnan(self.points[:, 1])

    @property
    def xy(self):
        return self.points[:, :2]

    def check_bounds(self, height, width):
        xy = self.xy[self.present]
        ok = (xy[:, 0] >= 0) & (xy[:, 0] < width) & (xy[:, 1] >= 0) & (xy[:, 1] < height)
        if not ok.all():
            raise ValueError("present keypoints must lie inside the frame")

    def to_json(self):
        rows = []
        for (x, y, c), p in zip(self.points, self.present):
            rows.append([float(x), float(y), float(c)] if p else None)
        return rows

    @classmethod
    def from_json(cls, rows):
        if len(rows) != NUM_KEYPOINTS:
            raise ValueError(f"expected {NUM_KEYPOINTS} keypoint entries, got {len(rows)}")
        pts = np.full((NUM_KEYPOINTS, 3), np.nan)
        pts[:, 2] = 0.0
        for i, row in enumerate(rows):
            if row is not None:
                pts[i] = [float(row[0]), float(row[1]), float(row[2])]
        return cls(pts)

    @classmethod
    def empty(cls):
        return cls.from_json([None] * NUM_KEYPOINTS)


@dataclass(frozen=True)
class IUVMap:
    part_index: np.ndarray  # int, H x W, 0 = background
    u: np.ndarray           # float32 in [0, 1]
    v: np.ndarray

    def validate(self):
        from .errors import PartIndexOutOfRange

        if not (self.part_index.shape == self.u.shape == self.v.shape):
            raise ValueError("IUV channels must share a shape")
        if self.part_index.min() < 0 or self.part_index.max() > NUM_PARTS:
            raise PartIndexOutOfRange(
                f"part index outside [0, {NUM_PARTS}]",
                low=int(self.part_index.min()), high=int(self.part_index.max()),
            )
        bg = self.part_index == 0
        if np.any(self.u[bg] != 0) or np.any(self.v[bg] != 0):
            raise ValueError("u and v must be 0 on background pixels")
        return self

    def to_png_array(self):
        return np.stack(
            [
                self.part_index.astype(np.uint8),
                np.round(self.u * 255).astype(np.uint8),
                np.round(self.v * 255).astype(np.uint8),
            ],
            axis=-1,
        )

    @classmethod
    def from_png_array(cls, arr):
        arr = np.asarray(arr)
        return cls(
            part_index=arr[..., 0].astype(np.int64),
            u=arr[..., 1].astype(np.float32) / np.float32(255),
            v=arr[..., 2].astype(np.float32) / np.float32(255),
        )


@dataclass
class VideoSample:
    video_id: str
    frames: np.ndarray                  # T x H x W x 3 float32 in [0, 1]
    cloth: np.ndarray                   # H x W x 3
    cloth_mask: np.ndarray              # H x W, {0, 1}
    garment_masks: Optional[np.ndarray] = None   # T x H x W, {0, 1}
    pose_coco: Optional[list] = None    # list of KeypointSet
    pose_dense: Optional[list] = None   # list of IUVMap
    flows: Optional[list] = None        # flows[k]: frame start+k -> start+k+1, (2, H, W)
    start: int = 0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be T x H x W x 3 with T >= 1, got {self.frames.shape}")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def frame_size(self):
        return self.frames.shape[1:3]


@dataclass
class DatasetManifest:
    root_path: Path
    split: str
    video_ids: list
    frame_size: tuple            # (height, width)
    frame_counts: dict = field(default_factory=dict)
    kinds: tuple = DEFAULT_KINDS

    def video_dir(self, video_id):
        return Path(self.root_path) / self.split / video_id

    def iter_frames(self):
        """(video_id, frame_idx) pairs in deterministic order."""
        for vid in self.video_ids:
            for t in range(self.frame_counts[vid]):
                yield vid, t

    @property
    def total_frames(self):
        return sum(self.frame_counts[v] for v in self.video_ids)


# --------------------------------------------------------------------------
# image io
# --------------------------------------------------------------------------

def save_png(path, array):
    """Write a uint8 array (H x W or H x W x 3) losslessly."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise TypeError("save_png expects uint8 data; quantise first")
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def read_png_u8(path, channels):
    try:
        with Image.open(path) as im:
            im.load()
            mode = "RGB" if channels == 3 else "L"
            if im.mode != mode:
                im = im.convert(mode)
            return np.asarray(im, dtype=np.uint8).copy()
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptImage(str(path)) from exc


def to_unit(u8):
    return u8.astype(np.float32) / np.float32(255)


def read_rgb(path):
    return to_unit(read_png_u8(path, 3))


def read_mask(path):
    return (read_png_u8(path, 1) >= 128).astype(np.float32)


def frame_name(t, ext=".png"):
    return f"{t:05d}{ext}"


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

def _indexed_files(directory, ext):
    if not directory.is_dir():
        return None
    idx = []
    for name in os.listdir(directory):
        m = _INDEXED.match(name)
        if m and name.endswith(ext):
            idx.append(int(m.group(1)))
    return sorted(idx)


def scan_manifest(root, split="train", kinds=DEFAULT_KINDS):
    """Index ``<root>/<split>`` and validate annotation coverage.

    Every problem found is collected; the first raises :class:`MissingAnnotation`
    with the full list under ``details["problems"]``.
    """
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    for kind in kinds:
        if kind not in ANNOTATION_KINDS:
            raise DatasetError(f"unknown annotation kind {kind!r}")
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise EmptyDataset(f"no {split!r} split under {root}")
    video_ids = sorted(p.name for p in split_dir.iterdir() if p.is_dir())
    if not video_ids:
        raise EmptyDataset(f"{split_dir} contains no videos")

    problems = []
    counts = {}
    frame_size = None
    for vid in video_ids:
        vdir = split_dir / vid
        frames = _indexed_files(vdir / "frames", ".png")
        if not frames or frames != list(range(len(frames))):
            problems.append((vid, "frames"))
            continue
        n = len(frames)
        counts[vid] = n
        for name in ("product.png", "product_mask.png"):
            if not (vdir / "cloth" / name).is_file():
                problems.append((vid, "cloth"))
                break
        for kind in kinds:
            sub, ext = ANNOTATION_KINDS[kind]
            have = _indexed_files(vdir / sub, ext)
            need = range(n - 1) if kind == "flow" else range(n)
            if have is None or not set(need) <= set(have):
                problems.append((vid, kind))
        try:
            with Image.open(vdir / "frames" / frame_name(0)) as im:
                size = (im.height, im.width)
        except (UnidentifiedImageError, OSError) as exc:
            raise CorruptImage(str(vdir / "frames" / frame_name(0))) from exc
        if frame_size is None:
            frame_size = size
        elif size != frame_size:
            raise DatasetError(f"video {vid!r} has frame size {size}, expected {frame_size}")

    if problems:
        vid, kind = problems[0]
        desc = ", ".join(f"{v}:{k}" for v, k in problems)
        raise MissingAnnotation(vid, kind, message=f"incomplete videos: {desc}")
    return DatasetManifest(
        root_path=Path(root), split=split, video_ids=video_ids,
        frame_size=frame_size, frame_counts=counts, kinds=tuple(kinds),
    )


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------

def read_keypoints(path):
    with open(path) as fh:
        return KeypointSet.from_json(json.load(fh))


def read_iuv(path):
    return IUVMap.from_png_array(read_png_u8(path, 3))


def load_sample(manifest, video_id, frame_range=None, kinds=None):
    """Decode frames ``[start, end)`` of one video plus the requested annotations.

    ``kinds`` defaults to the manifest's kinds; pass a subset to skip files a
    caller does not need (e.g. only ``("garment_mask", "pose_dense")``).
    Flows are loaded for transitions inside the range (``end - start - 1`` of them).
    """
    if video_id not in manifest.frame_counts:
        raise DatasetError(f"video {video_id!r} not in manifest")
    n = manifest.frame_counts[video_id]
    start, end = (0, n) if frame_range is None else frame_range
    if not (0 <= start < end <= n):
        raise IndexOutOfRange(f"frame range ({start}, {end}) invalid for {n} frames", video_id=video_id)
    kinds = manifest.kinds if kinds is None else tuple(kinds)
    vdir = manifest.video_dir(video_id)
    ts = range(start, end)

    frames = np.stack([read_rgb(vdir / "frames" / frame_name(t)) for t in ts])
    sample = VideoSample(
        video_id=video_id,
        frames=frames,
        cloth=read_rgb(vdir / "cloth" / "product.png"),
        cloth_mask=read_mask(vdir / "cloth" / "product_mask.png"),
        start=start,
    )
    if "garment_mask" in kinds:
        sample.garment_masks = np.stack([read_mask(vdir / "garment_mask" / frame_name(t)) for t in ts])
    if "pose_coco" in kinds:
        sample.pose_coco = [read_keypoints(vdir / "pose_coco" / frame_name(t, ".json")) for t in ts]
    if "pose_dense" in kinds:
        sample.pose_dense = [read_iuv(vdir / "pose_dense" / frame_name(t)) for t in ts]
    if "flow" in kinds:
        sample.flows = [read_flo(vdir / "flow" / frame_name(t, ".flo")) for t in range(start, end - 1)]
    return sample


def load_flow(manifest, video_id, t):
    """Flow from frame ``t`` to ``t + 1`` of one video."""
    n = manifest.frame_counts.get(video_id)
    if n is None:
        raise DatasetError(f"video {video_id!r} not in manifest")
    if not 0 <= t < n - 1:
        raise IndexOutOfRange(f"no flow {t} -> {t + 1} for {n} frames", video_id=video_id)
    return read_flo(manifest.video_dir(video_id) / "flow" / frame_name(t, ".flo"))

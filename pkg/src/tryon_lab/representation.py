"""Per-frame network input: agnostic person, body shape, head region and pose.

The pose block is either 18 CocoPose disc heatmaps or a 3-channel DensePose
IUV encoding; everything else is shared between the two modes.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import FACE_KEYPOINTS, HEAD_PARTS, NUM_KEYPOINTS, NUM_PARTS
from .errors import AnnotationUnavailable, ConfigInvalid, PartIndexOutOfRange

POSE_MODES = ("coco", "dense")
POSE_CHANNELS = {"coco": NUM_KEYPOINTS, "dense": 3}
SHAPE_DOWNSAMPLE = 8


@dataclass(frozen=True)
class PoseMode:
    mode: str = "dense"
    heatmap_radius: float = 3.0

    def __post_init__(self):
        if self.mode not in POSE_MODES:
            raise ConfigInvalid(f"pose mode must be one of {POSE_MODES}, got {self.mode!r}")
        if not self.heatmap_radius >= 1:
            raise ConfigInvalid("heatmap_radius must be >= 1")

    @classmethod
    def for_height(cls, mode, height):
        """Default disc radius: 3 px at 64 rows, scaled with resolution."""
        return cls(mode, max(1.0, round(3.0 * height / 64.0)))


def layout_for(mode):
    mode = mode.mode if isinstance(mode, PoseMode) else mode
    if mode not in POSE_MODES:
        raise ConfigInvalid(f"unknown pose mode {mode!r}")
    return (("agnostic_person", 3), ("body_shape", 1), ("head_region", 3), ("pose", POSE_CHANNELS[mode]))


def layout_channels(layout):
    return sum(size for _, size in layout)


@dataclass
class PersonRepresentation:
    channels: np.ndarray    # C x H x W float32
    layout: tuple

    def __post_init__(self):
        if self.channels.shape[0] != layout_channels(self.layout):
            raise ValueError(
                f"{self.channels.shape[0]} channels do not match layout total {layout_channels(self.layout)}"
            )
        if not np.isfinite(self.channels).all():
            raise ValueError("representation contains non-finite values")

    def block(self, name):
        start = 0
        for n, size in self.layout:
            if n == name:
                return self.channels[start:start + size]
            start += size
        raise KeyError(name)


def rasterize_coco(keypoints, size, radius):
    """18 x H x W solid discs; an absent keypoint leaves its channel zero."""
    h, w = size
    pts = keypoints.xy.copy()
    pts[~keypoints.present] = np.nan
    return kernels.rasterize_discs(pts, h, w, radius)


def encode_dense(iuv):
    """3 x H x W: part index / 24, then U and V unchanged."""
    part = np.asarray(iuv.part_index)
    if part.min() < 0 or part.max() > NUM_PARTS:
        raise PartIndexOutOfRange(
            f"part index outside [0, {NUM_PARTS}]", low=int(part.min()), high=int(part.max())
        )
    return np.stack([
        part.astype(np.float32) / np.float32(NUM_PARTS),
        np.asarray(iuv.u, dtype=np.float32),
        np.asarray(iuv.v, dtype=np.float32),
    ])


def blur_shape(silhouette, factor=SHAPE_DOWNSAMPLE):
    """Block-average ``factor``x down, bilinear back up to the original size."""
    h, w = silhouette.shape
    hs, ws = -(-h // factor), -(-w // factor)
    padded = np.zeros((hs * factor, ws * factor))
    padded[:h, :w] = silhouette
    small = padded.reshape(hs, factor, ws, factor).mean(axis=(1, 3))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    up = kernels.bilinear_sample(small, (xs + 0.5) / factor - 0.5, (ys + 0.5) / factor - 0.5, kernels.BORDER)
    return up.astype(np.float32)


def _convex_hull(points):
    """Andrew's monotone chain; returns CCW vertices (collinear points dropped)."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts, dtype=float)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def keypoint_silhouette(keypoints, size, margin):
    """Convex hull of present keypoints grown by ``margin`` px (approximately)."""
    h, w = size
    pts = keypoints.xy[keypoints.present]
    if len(pts) == 0:
        return np.zeros((h, w), dtype=np.float32)
    discs = kernels.rasterize_discs(pts, h, w, margin).max(axis=0)
    hull = _convex_hull(pts)
    if len(hull) < 3:
        return discs
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    inside = np.ones((h, w), dtype=bool)
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        edge = b - a
        length = np.hypot(*edge)
        # signed distance to the edge line; hull is CCW in (x, y) with y down
        dist = (edge[0] * (ys - a[1]) - edge[1] * (xs - a[0])) / length
        inside &= dist >= -margin
    return np.maximum(inside.astype(np.float32), discs)


def keypoint_head_mask(keypoints, size, pad):
    h, w = size
    mask = np.zeros((h, w), dtype=np.float32)
    face = [k for k in FACE_KEYPOINTS if keypoints.present[k]]
    if not face:
        return mask
    xy = keypoints.xy[face]
    x0 = max(0, int(np.floor(xy[:, 0].min() - pad)))
    x1 = min(w - 1, int(np.ceil(xy[:, 0].max() + pad)))
    y0 = max(0, int(np.floor(xy[:, 1].min() - pad)))
    y1 = min(h - 1, int(np.ceil(xy[:, 1].max() + pad)))
    mask[y0:y1 + 1, x0:x1 + 1] = 1.0
    return mask


def build_representation(sample, frame_idx, mode):
    """Stack the network input for frame ``frame_idx`` (relative to the sample)."""
    if isinstance(mode, str):
        mode = PoseMode.for_height(mode, sample.frame_size[0])
    if sample.garment_masks is None:
        raise AnnotationUnavailable("garment_mask")
    frame = sample.frames[frame_idx]
    h, w = frame.shape[:2]
    garment = sample.garment_masks[frame_idx]

    if mode.mode == "coco":
        if sample.pose_coco is None:
            raise AnnotationUnavailable("coco")
        kp = sample.pose_coco[frame_idx]
        pose = rasterize_coco(kp, (h, w), mode.heatmap_radius)
        silhouette = keypoint_silhouette(kp, (h, w), 2 * mode.heatmap_radius)
        head = keypoint_head_mask(kp, (h, w), 1.5 * mode.heatmap_radius)
    else:
        if sample.pose_dense is None:
            raise AnnotationUnavailable("dense")
        iuv = sample.pose_dense[frame_idx]
        pose = encode_dense(iuv)
        silhouette = (iuv.part_index > 0).astype(np.float32)
        head = np.isin(iuv.part_index, HEAD_PARTS).astype(np.float32)

    agnostic = frame * (1.0 - garment)[..., None]
    channels = np.concatenate([
        agnostic.transpose(2, 0, 1),
        blur_shape(silhouette)[None],
        (frame * head[..., None]).transpose(2, 0, 1),
        pose,
    ]).astype(np.float32)
    return PersonRepresentation(channels, layout_for(mode))

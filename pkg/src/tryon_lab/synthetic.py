"""Procedural stand-in for VVT: animated articulated figures wearing textured shirts.

Every body part is a rigid 2-D frame (origin, unit axis, normal) so keypoints,
IUV coordinates and frame-to-frame flow all follow analytically from the pose.
The shirt (torso + upper arms) carries a high-frequency texture defined in
part-local coordinates, which makes the product image and the worn garment
consistent by construction.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import (
    DEFAULT_KINDS,
    NUM_KEYPOINTS,
    IUVMap,
    KeypointSet,
    frame_name,
    save_png,
    scan_manifest,
)
from .errors import ConfigInvalid, IoFailure
from .flo import write_flo

# name, DensePose-style part index, shape, radius (px at H=64), surface
PARTS = {
    "r_upper_leg": (9, "capsule", 3.0, "pants"),
    "l_upper_leg": (10, "capsule", 3.0, "pants"),
    "r_lower_leg": (13, "capsule", 2.5, "pants"),
    "l_lower_leg": (14, "capsule", 2.5, "pants"),
    "torso": (2, "box", 7.0, "garment"),
    "neck": (24, "capsule", 2.0, "skin"),
    "head": (23, "circle", 5.5, "head"),
    "r_upper_arm": (16, "capsule", 2.3, "garment"),
    "l_upper_arm": (15, "capsule", 2.3, "garment"),
    "r_lower_arm": (20, "capsule", 1.9, "skin"),
    "l_lower_arm": (19, "capsule", 1.9, "skin"),
}
DRAW_ORDER = tuple(PARTS)
GARMENT_PARTS = ("torso", "r_upper_arm", "l_upper_arm")
TEXTURES = ("stripes", "checker", "glyphs")


@dataclass(frozen=True)
class SyntheticSpec:
    num_videos: int
    frames_per_video: int
    frame_size: tuple = (64, 48)   # (height, width)
    seed: int = 0
    split: str = "train"

    def validate(self):
        if self.num_videos < 1:
            raise ConfigInvalid("num_videos must be >= 1")
        if self.frames_per_video < 2:
            raise ConfigInvalid("frames_per_video must be >= 2")
        h, w = self.frame_size
        if h < 16 or w < 12:
            raise ConfigInvalid("frame_size too small for the figure")
        return self


@dataclass
class PartFrame:
    origin: np.ndarray
    axis: np.ndarray
    length: float
    radius: float
    shape: str

    @property
    def normal(self):
        return np.array([-self.axis[1], self.axis[0]])

    @property
    def cap(self):
        return 0.0 if self.shape == "box" else self.radius


def _rot(v, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _segment(a, b, radius, shape):
    d = b - a
    length = float(np.hypot(*d))
    return PartFrame(np.asarray(a, float), d / length, length, radius, shape)


class Figure:
    """One synthetic person: appearance plus a periodic motion model."""

    def __init__(self, rng, height, width, num_frames):
        self.h, self.w = height, width
        s = self.s = height / 64.0
        self.num_frames = num_frames

        self.cx0 = width / 2 + rng.uniform(-2, 2) * s
        self.root_y = 36 * s + rng.uniform(-1, 1) * s
        self.omega = 2 * math.pi / rng.uniform(10, 16)
        self.phase = rng.uniform(0, 2 * math.pi)
        self.sway = rng.uniform(1.0, 2.5) * s
        self.bob = rng.uniform(0.2, 0.6) * s
        self.drift = rng.uniform(-1, 1) * min(0.2 * s, 3 * s / num_frames)
        self.tilt_amp = math.radians(rng.uniform(2, 5))
        self.arm_base = math.radians(rng.uniform(12, 22))
        self.arm_swing = math.radians(rng.uniform(6, 14))
        self.elbow_amp = math.radians(rng.uniform(5, 20))
        self.leg_amp = math.radians(rng.uniform(4, 10))

        self.bg_top = rng.uniform(0.15, 0.9, 3)
        self.bg_bottom = rng.uniform(0.15, 0.9, 3)
        self.skin = rng.uniform(0.45, 0.95) * np.array([1.0, 0.78, 0.62])
        self.hair = rng.uniform(0.05, 0.35, 3)
        self.pants = rng.uniform(0.1, 0.6, 3)
        self.tex_kind = TEXTURES[int(rng.integers(len(TEXTURES)))]
        self.tex_period = rng.uniform(4.5, 7.0) * s
        self.tex_phase = rng.uniform(0, 2 * math.pi)
        c1 = rng.uniform(0.1, 0.9, 3)
        c2 = np.clip(c1 + rng.choice([-1, 1], 3) * rng.uniform(0.2, 0.35, 3), 0, 1)
        self.tex_colors = (c1, c2)
        self.glyphs = (rng.random((6, 5)) < 0.45).astype(float)
        self.glyphs[-1] = 0.0   # blank line between text rows
        self.glyph_cell = 1.6 * s
        self.drop_ears = rng.random() < 0.3

    # ---------------- pose ----------------

    def pose(self, t, canonical=False):
        """Part frames and joint positions at (continuous) time ``t``."""
        s = self.s
        if canonical:
            phi, root = 0.0, np.array([self.w / 2, self.h / 2 + 9 * s])
            tilt, swing, elbow, leg = 0.0, 0.0, 0.0, 0.0
        else:
            phi = self.omega * t + self.phase
            root = np.array([
                self.cx0 + self.drift * t + self.sway * math.sin(phi),
                self.root_y + self.bob * math.sin(2 * phi),
            ])
            tilt = self.tilt_amp * math.sin(phi + 0.7)
            swing = self.arm_swing * math.sin(phi)
            elbow = self.elbow_amp * 0.5 * (1 + math.sin(phi + 1.3))
            leg = self.leg_amp * math.sin(phi)

        down = _rot(np.array([0.0, 1.0]), tilt)
        right = _rot(np.array([1.0, 0.0]), tilt)      # image-right
        up = -down
        neck = root + 18 * s * up
        j = {
            "root": root,
            "neck": neck,
            "head": neck + 7 * s * up,
            "r_shoulder": neck - 6.5 * s * right + 1.0 * s * down,
            "l_shoulder": neck + 6.5 * s * right + 1.0 * s * down,
            "r_hip": root - 3.5 * s * right,
            "l_hip": root + 3.5 * s * right,
        }
        # person's right limbs sit on the image left and abduct towards -right
        for side, sign, swing_sign in (("r", -1.0, 1.0), ("l", 1.0, -1.0)):
            abd = (self.arm_base if not canonical else math.radians(30)) + swing_sign * swing
            upper = _rot(down, -sign * abd)
            j[f"{side}_elbow"] = j[f"{side}_shoulder"] + 9 * s * upper
            lower = _rot(upper, sign * elbow)
            j[f"{side}_wrist"] = j[f"{side}_elbow"] + 8.5 * s * lower
            thigh = _rot(down, -sign * (math.radians(4) + swing_sign * leg))
            j[f"{side}_knee"] = j[f"{side}_hip"] + 11 * s * thigh
            shin = _rot(thigh, sign * 0.5 * abs(leg))
            j[f"{side}_ankle"] = j[f"{side}_knee"] + 11 * s * shin

        frames = {}
        for name, (_, shape, radius, _) in PARTS.items():
            r = radius * s
            if name == "torso":
                frames[name] = PartFrame(root + 1.0 * s * down, up, 19 * s, r, shape)
            elif name == "head":
                frames[name] = PartFrame(j["head"], down, 0.0, r, shape)
            elif name == "neck":
                frames[name] = _segment(neck + 1.0 * s * down, j["head"], r, shape)
            else:
                side, seg, limb = name.split("_")
                a, b = {
                    ("upper", "arm"): ("shoulder", "elbow"),
                    ("lower", "arm"): ("elbow", "wrist"),
                    ("upper", "leg"): ("hip", "knee"),
                    ("lower", "leg"): ("knee", "ankle"),
                }[(seg, limb)]
                frames[name] = _segment(j[f"{side}_{a}"], j[f"{side}_{b}"], r, shape)
        return frames, j, right, down

    def keypoints(self, joints, right, down):
        s = self.s
        head = joints["head"]
        xy = {
            0: head + 1.2 * s * down,
            1: joints["neck"],
            2: joints["r_shoulder"], 3: joints["r_elbow"], 4: joints["r_wrist"],
            5: joints["l_shoulder"], 6: joints["l_elbow"], 7: joints["l_wrist"],
            8: joints["r_hip"], 9: joints["r_knee"], 10: joints["r_ankle"],
            11: joints["l_hip"], 12: joints["l_knee"], 13: joints["l_ankle"],
            14: head - 2.0 * s * right - 0.6 * s * down,
            15: head + 2.0 * s * right - 0.6 * s * down,
            16: head - 5.3 * s * right,
            17: head + 5.3 * s * right,
        }
        pts = np.full((NUM_KEYPOINTS, 3), np.nan)
        pts[:, 2] = 0.0
        for k, p in xy.items():
            if self.drop_ears and k in (16, 17):
                continue
            if 0 <= p[0] < self.w and 0 <= p[1] < self.h:
                pts[k] = [p[0], p[1], 1.0]
        return KeypointSet(pts)

    # ---------------- appearance ----------------

    def garment_texture(self, a, b):
        p = self.tex_period
        if self.tex_kind == "stripes":
            t = 0.5 + 0.5 * np.tanh(2.0 * np.sin(2 * np.pi * a / p + self.tex_phase))
        elif self.tex_kind == "checker":
            t = 0.5 + 0.5 * np.tanh(2.2 * np.sin(2 * np.pi * a / p + self.tex_phase) * np.sin(2 * np.pi * b / p))
        else:
            gy, gx = self.glyphs.shape
            fy = a / self.glyph_cell
            fx = b / self.glyph_cell
            y0 = np.floor(fy)
            x0 = np.floor(fx)
            wy = fy - y0
            wx = fx - x0
            y0 = y0.astype(int)
            x0 = x0.astype(int)
            g = self.glyphs
            t = ((1 - wy) * (1 - wx) * g[y0 % gy, x0 % gx] + (1 - wy) * wx * g[y0 % gy, (x0 + 1) % gx]
                 + wy * (1 - wx) * g[(y0 + 1) % gy, x0 % gx] + wy * wx * g[(y0 + 1) % gy, (x0 + 1) % gx])
        c1, c2 = self.tex_colors
        return c1 * (1 - t[..., None]) + c2 * t[..., None]

    def surface_color(self, surface, a, b, frame):
        shade = (0.82 + 0.18 * np.cos(0.5 * np.pi * np.clip(b / frame.radius, -1, 1)))[..., None]
        if surface == "garment":
            return self.garment_texture(a, b) * shade
        if surface == "pants":
            return self.pants * shade
        if surface == "skin":
            return self.skin * shade
        # head: hair on the crown, two soft eyes
        s = self.s
        hair = 1 / (1 + np.exp((a + 1.5 * s) / (0.6 * s)))
        eyes = sum(np.exp(-((a + 0.6 * s) ** 2 + (b - e * s) ** 2) / (0.8 * s) ** 2) for e in (-2.0, 2.0))
        col = self.skin * (1 - hair[..., None]) + self.hair * hair[..., None]
        return col * (1 - 0.7 * eyes[..., None])

    def background(self):
        ramp = np.linspace(0, 1, self.h)[:, None, None]
        bg = self.bg_top * (1 - ramp) + self.bg_bottom * ramp
        return np.broadcast_to(bg, (self.h, self.w, 3)).copy()

    # ---------------- rendering ----------------

    def rasterize(self, frames, parts=DRAW_ORDER):
        """Per-pixel owning part (-1 = none) and local (a, b) coordinates."""
        ys, xs = np.mgrid[0:self.h, 0:self.w].astype(float)
        owner = np.full((self.h, self.w), -1, dtype=int)
        la = np.zeros((self.h, self.w))
        lb = np.zeros((self.h, self.w))
        for k, name in enumerate(DRAW_ORDER):
            if name not in parts:
                continue
            f = frames[name]
            dx, dy = xs - f.origin[0], ys - f.origin[1]
            a = dx * f.axis[0] + dy * f.axis[1]
            b = dx * f.normal[0] + dy * f.normal[1]
            if f.shape == "box":
                inside = (a >= 0) & (a <= f.length) & (np.abs(b) <= f.radius)
            else:
                near = np.clip(a, 0, f.length)
                inside = (a - near) ** 2 + b ** 2 <= f.radius ** 2
            owner[inside] = k
            la[inside] = a[inside]
            lb[inside] = b[inside]
        return owner, la, lb

    def render(self, frames, parts=DRAW_ORDER, background=True):
        owner, la, lb = self.rasterize(frames, parts)
        rgb = self.background() if background else np.zeros((self.h, self.w, 3))
        part_index = np.zeros((self.h, self.w), dtype=np.int64)
        u = np.zeros((self.h, self.w))
        v = np.zeros((self.h, self.w))
        for k, name in enumerate(DRAW_ORDER):
            sel = owner == k
            if not sel.any():
                continue
            pid, _, _, surface = PARTS[name]
            f = frames[name]
            a, b = la[sel], lb[sel]
            rgb[sel] = self.surface_color(surface, a, b, f)
            part_index[sel] = pid
            u[sel] = np.clip((a + f.cap) / (f.length + 2 * f.cap), 0, 1)
            v[sel] = np.clip((b / f.radius + 1) / 2, 0, 1)
        return np.clip(rgb, 0, 1), owner, la, lb, part_index, u, v


def quantize(img):
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


def flow_between(fig, frames_t, frames_next, owner_next, la_next, lb_next):
    """Flow on frame t+1's grid pointing to the same body point in frame t."""
    h, w = owner_next.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    flow = np.zeros((2, h, w))
    for k, name in enumerate(DRAW_ORDER):
        sel = owner_next == k
        if not sel.any():
            continue
        f = frames_t[name]
        src = f.origin[:, None] + f.axis[:, None] * la_next[sel] + f.normal[:, None] * lb_next[sel]
        flow[0][sel] = src[0] - xs[sel]
        flow[1][sel] = src[1] - ys[sel]
    return flow


def render_video(spec, index):
    """In-memory arrays for one synthetic video (exactly what gets written)."""
    spec.validate()
    h, w = spec.frame_size
    split_code = {"train": 0, "val": 1, "test": 2}[spec.split]
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed) & 0xFFFFFFFF, split_code, index]))
    n = spec.frames_per_video
    fig = Figure(rng, h, w, n)

    out = {"frames": [], "garment_masks": [], "iuv": [], "keypoints": [], "flows": [], "owners": []}
    prev = None
    for t in range(n):
        frames, joints, right, down = fig.pose(t)
        rgb, owner, la, lb, part_index, u, v = fig.render(frames)
        out["frames"].append(quantize(rgb))
        garment = np.isin(owner, [DRAW_ORDER.index(p) for p in GARMENT_PARTS])
        out["garment_masks"].append((garment * 255).astype(np.uint8))
        out["iuv"].append(IUVMap(part_index, u.astype(np.float32), v.astype(np.float32)).to_png_array())
        out["keypoints"].append(fig.keypoints(joints, right, down))
        out["owners"].append(owner)
        if prev is not None:
            out["flows"].append(flow_between(fig, prev, frames, owner, la, lb).astype(np.float32))
        prev = frames

    canon, _, _, _ = fig.pose(0, canonical=True)
    cloth, owner, *_ = fig.render(canon, parts=GARMENT_PARTS, background=False)
    out["cloth"] = quantize(cloth)
    out["cloth_mask"] = ((owner >= 0) * 255).astype(np.uint8)
    out["video_id"] = f"syn{index:04d}"
    out["figure"] = fig
    return out


def write_video(vdir, video):
    for sub in ("frames", "cloth", "garment_mask", "pose_coco", "pose_dense", "flow"):
        (vdir / sub).mkdir(parents=True, exist_ok=True)
    save_png(vdir / "cloth" / "product.png", video["cloth"])
    save_png(vdir / "cloth" / "product_mask.png", video["cloth_mask"])
    for t, frame in enumerate(video["frames"]):
        save_png(vdir / "frames" / frame_name(t), frame)
        save_png(vdir / "garment_mask" / frame_name(t), video["garment_masks"][t])
        save_png(vdir / "pose_dense" / frame_name(t), video["iuv"][t])
        with open(vdir / "pose_coco" / frame_name(t, ".json"), "w") as fh:
            json.dump(video["keypoints"][t].to_json(), fh)
    for t, flow in enumerate(video["flows"]):
        write_flo(vdir / "flow" / frame_name(t, ".flo"), flow)


def generate_synthetic(root, spec):
    """Write ``spec.num_videos`` videos under ``<root>/<spec.split>`` and index them."""
    from pathlib import Path

    spec.validate()
    split_dir = Path(root) / spec.split
    try:
        for i in range(spec.num_videos):
            video = render_video(spec, i)
            write_video(split_dir / video["video_id"], video)
    except OSError as exc:
        raise IoFailure(f"cannot write synthetic dataset under {root}: {exc}") from exc
    return scan_manifest(root, spec.split, kinds=DEFAULT_KINDS + ("flow",))

"""Warped cloth ``w``: thin-plate-spline application or the ground-truth oracle.

Coordinates are normalised to [-1, 1] with pixel centres at
``(2 * j + 1) / W - 1`` so a normalised shift of ``d`` moves content by
``d * W / 2`` pixels.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateTps, ShapeMismatch

RIDGE = 1e-6
DEFAULT_GRID = 5


@dataclass
class WarpedCloth:
    image: np.ndarray   # H x W x 3
    mask: np.ndarray    # H x W

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ShapeMismatch(f"image {self.image.shape} vs mask {self.mask.shape}")


def regular_grid(g):
    lin = np.linspace(-1.0, 1.0, g)
    gx, gy = np.meshgrid(lin, lin)
    return np.stack([gx, gy], axis=-1)


@dataclass
class TpsParams:
    """``control_grid`` (G x G x 2) is mapped onto ``target_grid``.

    The warp samples the source at ``f(p)`` for each output point ``p``,
    where ``f(control) = target``.
    """

    control_grid: np.ndarray
    target_grid: np.ndarray

    def __post_init__(self):
        self.control_grid = np.asarray(self.control_grid, dtype=np.float64)
        self.target_grid = np.asarray(self.target_grid, dtype=np.float64)
        c, t = self.control_grid, self.target_grid
        if c.ndim != 3 or c.shape[0] != c.shape[1] or c.shape[2] != 2:
            raise ValueError(f"control grid must be G x G x 2, got {c.shape}")
        if t.shape != c.shape:
            raise ValueError(f"target grid {t.shape} does not match control grid {c.shape}")
        if c.shape[0] < 3:
            raise ValueError("TPS grid needs G >= 3")
        if not (np.isfinite(c).all() and np.isfinite(t).all()):
            raise ValueError("TPS points must be finite")

    @property
    def grid_size(self):
        return self.control_grid.shape[0]

    @classmethod
    def identity(cls, g=DEFAULT_GRID):
        grid = regular_grid(g)
        return cls(grid, grid.copy())

    @classmethod
    def from_targets(cls, targets):
        """Regular control grid with the given flat list of 2*G*G target coordinates."""
        flat = np.asarray(targets, dtype=np.float64).ravel()
        g = int(round(np.sqrt(flat.size / 2)))
        if 2 * g * g != flat.size:
            raise ValueError(f"{flat.size} numbers is not 2*G*G for any G")
        return cls(regular_grid(g), flat.reshape(g, g, 2))

    def to_text(self):
        """``tps v1 G`` header line, then 2*G*G target numbers (row-major x, y)."""
        if not np.array_equal(self.control_grid, regular_grid(self.grid_size)):
            raise ValueError("text format only covers the regular control grid")
        nums = " ".join(repr(float(x)) for x in self.target_grid.ravel())
        return f"tps v1 {self.grid_size}\n{nums}\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        head = lines[0].split()
        if len(head) != 3 or head[:2] != ["tps", "v1"]:
            raise ValueError("not a 'tps v1' parameter file")
        g = int(head[2])
        nums = [float(x) for ln in lines[1:] for x in ln.split()]
        if len(nums) != 2 * g * g:
            raise ValueError(f"expected {2 * g * g} numbers, got {len(nums)}")
        return cls.from_targets(nums)


def _radial(d2):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d2 * np.log(d2)
    return np.where(d2 > 0, out, 0.0)


def solve_tps(control, target, ridge=RIDGE):
    """Coefficients (n + 3) x 2 of the spline taking ``control`` to ``target``."""
    p = control.reshape(-1, 2)
    q = target.reshape(-1, 2)
    n = len(p)
    affine = np.hstack([np.ones((n, 1)), p])
    if np.linalg.matrix_rank(affine) < 3:
        raise DegenerateTps("control points are collinear or coincident")
    d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = _radial(d2) + ridge * np.eye(n)
    system[:n, n:] = affine
    system[n:, :n] = affine.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = q
    try:
        coef = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateTps(f"singular TPS system: {exc}") from exc
    if not np.isfinite(coef).all():
        raise DegenerateTps("TPS solve produced non-finite coefficients")
    return coef


def apply_tps(coef, control, points):
    """Evaluate the spline at ``points`` (..., 2)."""
    p = control.reshape(-1, 2)
    flat = points.reshape(-1, 2)
    d2 = ((flat[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    n = len(p)
    out = _radial(d2) @ coef[:n] + coef[n] + flat @ coef[n + 1:]
    return out.reshape(points.shape)


def tps_warp(cloth, cloth_mask, params, out_size):
    """Backward-sample ``cloth`` and its mask through the spline; zero outside."""
    cloth = np.asarray(cloth, dtype=np.float64)
    cloth_mask = np.asarray(cloth_mask, dtype=np.float64)
    if cloth.shape[:2] != cloth_mask.shape:
        raise ShapeMismatch(f"cloth {cloth.shape} vs mask {cloth_mask.shape}")
    h_in, w_in = cloth_mask.shape
    h, w = out_size
    coef = solve_tps(params.control_grid, params.target_grid)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    grid = np.stack([(2 * xs + 1) / w - 1, (2 * ys + 1) / h - 1], axis=-1)
    src = apply_tps(coef, params.control_grid, grid)
    sx = ((src[..., 0] + 1) * w_in - 1) / 2
    sy = ((src[..., 1] + 1) * h_in - 1) / 2
    image = kernels.bilinear_sample(cloth, sx, sy, kernels.ZERO_PAD)
    mask = (kernels.bilinear_sample(cloth_mask, sx, sy, kernels.ZERO_PAD) >= 0.5).astype(np.float32)
    return WarpedCloth((image * mask[..., None]).astype(np.float32), mask)


def oracle_warp(sample, frame_idx):
    """The worn garment cut out of the ground-truth frame."""
    if sample.garment_masks is None:
        raise ValueError("oracle warp needs garment masks")
    mask = sample.garment_masks[frame_idx].astype(np.float32)
    return WarpedCloth(sample.frames[frame_idx] * mask[..., None], mask)

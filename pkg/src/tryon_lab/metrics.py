"""PSNR, SSIM / MS-SSIM and per-video aggregation with JSON/CSV/plot output.

SSIM uses a Gaussian window (sigma = window / 6) over 'valid' positions on a
luma image (BT.601 weights 0.299, 0.587, 0.114). MS-SSIM runs on every colour
channel and averages the per-channel terms at each scale.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EmptyInput, ImageTooSmall, ShapeMismatch

LUMA = np.array([0.299, 0.587, 0.114])
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
K1, K2 = 0.01, 0.03
WINDOW = 11


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, max_val=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    x, y = _pair(x, y)
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(max_val ** 2 / mse))


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ LUMA
    if img.ndim == 2:
        return img
    raise ShapeMismatch(f"expected H x W or H x W x 3, got {img.shape}")


def gaussian_window(size=WINDOW, sigma=None):
    sigma = size / 6.0 if sigma is None else sigma
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_components(x, y, window=WINDOW, k1=K1, k2=K2, max_val=1.0):
    """Luminance and contrast-structure maps for two 2-D images."""
    if min(x.shape) < window:
        raise ImageTooSmall(f"image {x.shape} smaller than the {window}px window")
    g = gaussian_window(window)
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    mu_x = kernels.filter_valid(x, g)
    mu_y = kernels.filter_valid(y, g)
    sxx = kernels.filter_valid(x * x, g) - mu_x * mu_x
    syy = kernels.filter_valid(y * y, g) - mu_y * mu_y
    sxy = kernels.filter_valid(x * y, g) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def ssim(x, y, window=WINDOW, k1=K1, k2=K2, max_val=1.0):
    """Single-scale SSIM on luma, averaged over all valid window positions."""
    x, y = _pair(x, y)
    lum, cs = ssim_components(to_gray(x), to_gray(y), window, k1, k2, max_val)
    return float(np.mean(lum * cs))


def supported_levels(shape, window=WINDOW, max_levels=len(MS_SSIM_WEIGHTS)):
    """Number of dyadic scales whose coarsest image still fits the window."""
    side = min(shape[:2])
    levels = 0
    while side >= window and levels < max_levels:
        levels += 1
        side //= 2
    return levels


def _downsample(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim_terms(x, y, levels, window=WINDOW, k1=K1, k2=K2, max_val=1.0):
    """Per-scale mean contrast-structure values and the coarsest luminance mean."""
    chans_x = [x] if x.ndim == 2 else [x[..., c] for c in range(x.shape[-1])]
    chans_y = [y] if y.ndim == 2 else [y[..., c] for c in range(y.shape[-1])]
    cs_means, lum_mean = [], None
    for level in range(levels):
        terms = [ssim_components(a, b, window, k1, k2, max_val) for a, b in zip(chans_x, chans_y)]
        cs_means.append(float(np.mean([np.mean(cs) for _, cs in terms])))
        if level == levels - 1:
            lum_mean = float(np.mean([np.mean(lum) for lum, _ in terms]))
        else:
            chans_x = [_downsample(a) for a in chans_x]
            chans_y = [_downsample(b) for b in chans_y]
    return cs_means, lum_mean


def ms_ssim(x, y, levels=None, window=WINDOW, k1=K1, k2=K2, max_val=1.0, weights=MS_SSIM_WEIGHTS):
    """Multiscale SSIM over all channels.

    ``levels=None`` picks as many scales as the image supports (at most 5). The
    standard weights are truncated to ``levels`` and renormalised; negative
    contrast-structure means are clamped to 0.
    """
    x, y = _pair(x, y)
    avail = supported_levels(x.shape, window, len(weights))
    if avail == 0:
        raise ImageTooSmall(f"image {x.shape} smaller than the {window}px window")
    if levels is None:
        levels = avail
    elif levels < 1 or levels > avail:
        raise ImageTooSmall(f"image {x.shape} supports {avail} scales, {levels} requested")
    w = np.asarray(weights[:levels], dtype=np.float64)
    w = w / w.sum()
    cs_means, lum_mean = ms_ssim_terms(x, y, levels, window, k1, k2, max_val)
    value = max(lum_mean, 0.0) ** w[-1]
    for cs, wj in zip(cs_means, w):
        value *= max(cs, 0.0) ** wj
    return float(value)


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

@dataclass
class MetricRow:
    video_id: str
    frame_idx: int
    ssim: float
    psnr: float


@dataclass
class Aggregate:
    ssim_mean: float
    ssim_std: float
    psnr_mean: float
    psnr_std: float
    count: int = 0
    psnr_inf_excluded: int = 0


@dataclass
class MetricReport:
    per_frame: list
    per_video: dict = field(default_factory=dict)
    overall: Aggregate = None

    def to_dict(self):
        return {
            "per_frame": [asdict(r) for r in self.per_frame],
            "per_video": {k: asdict(v) for k, v in self.per_video.items()},
            "overall": asdict(self.overall),
        }


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.inf, 0.0
    mean = float(arr.mean())
    return mean, float(np.sqrt(np.mean((arr - mean) ** 2)))


def aggregate(rows):
    """Per-video mean/std and cross-video mean/std of the per-video means.

    Standard deviations are population (ddof=0). Infinite PSNR rows are left
    out of the means and counted in ``psnr_inf_excluded``.
    """
    rows = list(rows)
    if not rows:
        raise EmptyInput("no metric rows to aggregate")
    by_video = {}
    for r in rows:
        by_video.setdefault(r.video_id, []).append(r)
    per_video = {}
    for vid, rs in by_video.items():
        finite = [r.psnr for r in rs if math.isfinite(r.psnr)]
        s_mean, s_std = _mean_std([r.ssim for r in rs])
        p_mean, p_std = _mean_std(finite)
        per_video[vid] = Aggregate(s_mean, s_std, p_mean, p_std, len(rs), len(rs) - len(finite))
    s_mean, s_std = _mean_std([a.ssim_mean for a in per_video.values()])
    p_means = [a.psnr_mean for a in per_video.values() if math.isfinite(a.psnr_mean)]
    p_mean, p_std = _mean_std(p_means)
    overall = Aggregate(s_mean, s_std, p_mean, p_std, len(rows),
                        sum(a.psnr_inf_excluded for a in per_video.values()))
    return MetricReport(rows, per_video, overall)


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def _unjson(obj):
    if isinstance(obj, str) and obj in ("inf", "-inf", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _unjson(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjson(v) for v in obj]
    return obj


def report_json(report):
    return json.dumps(_jsonable(report.to_dict()), indent=2) + "\n"


def report_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["video_id", "frame_idx", "ssim", "psnr"])
    for r in report.per_frame:
        writer.writerow([r.video_id, r.frame_idx, repr(float(r.ssim)),
                         repr(float(r.psnr)) if math.isfinite(r.psnr) else "inf"])
    return buf.getvalue()


def load_report(path):
    data = _unjson(json.loads(Path(path).read_text()))
    rows = [MetricRow(**r) for r in data["per_frame"]]
    return MetricReport(
        rows,
        {k: Aggregate(**v) for k, v in data["per_video"].items()},
        Aggregate(**data["overall"]),
    )


def plot_report(report, path, title=None):
    """Per-video mean +/- std bars for SSIM and PSNR side by side."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    vids = list(report.per_video)
    stats = [report.per_video[v] for v in vids]
    fig, axes = plt.subplots(1, 2, figsize=(max(6, 0.6 * len(vids) + 3), 3.5))
    xs = np.arange(len(vids))
    for ax, key, label in ((axes[0], "ssim", "MS-SSIM"), (axes[1], "psnr", "PSNR (dB)")):
        means = [getattr(s, f"{key}_mean") for s in stats]
        stds = [getattr(s, f"{key}_std") for s in stats]
        means = [m if math.isfinite(m) else np.nan for m in means]
        ax.bar(xs, means, yerr=stds, capsize=3, color="#4c72b0")
        ax.set_xticks(xs)
        ax.set_xticklabels(vids, rotation=60, fontsize=7)
        ax.set_ylabel(label)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_comparison(groups, path, title=None):
    """Grouped bars, one group per ablation axis. ``groups``: {group: [(label, Aggregate), ...]}."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, max(1, len(groups)), figsize=(3.2 * max(1, len(groups)), 5.5), squeeze=False)
    for col, (name, cells) in enumerate(groups.items()):
        labels = [c[0] for c in cells]
        xs = np.arange(len(cells))
        for row, key, ylabel in ((0, "ssim", "MS-SSIM"), (1, "psnr", "PSNR (dB)")):
            ax = axes[row][col]
            means = [getattr(a, f"{key}_mean") if a else np.nan for _, a in cells]
            stds = [getattr(a, f"{key}_std") if a else 0.0 for _, a in cells]
            means = [m if m is not None and math.isfinite(m) else np.nan for m in means]
            ax.bar(xs, means, yerr=stds, capsize=3, color="#dd8452")
            ax.set_xticks(xs)
            ax.set_xticklabels(labels, rotation=30, fontsize=8)
            if col == 0:
                ax.set_ylabel(ylabel)
            if row == 0:
                ax.set_title(name, fontsize=9)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def write_report(report, out_dir, plot=True, title=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(report))
    (out / "report.csv").write_text(report_csv(report))
    if plot:
        plot_report(report, out / "plots" / "metrics_per_video.png", title=title)
    return out

"""Reconstruction losses: L1, composition mask, perceptual, and the flow-mask penalty."""

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigInvalid, ShapeMismatch

LOSS_FIELDS = ("l1", "mask", "perceptual", "flow_pen", "total")


@dataclass(frozen=True)
class LossWeights:
    w_l1: float = 1.0
    w_mask: float = 1.0
    w_vgg: float = 1.0
    lambda_f: float = 1e4

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise ConfigInvalid(f"loss weight {name} must be finite and >= 0, got {value}")


@dataclass
class LossBreakdown:
    l1: object
    mask: object
    perceptual: object
    flow_pen: object
    total: object

    def as_floats(self):
        vals = {k: getattr(self, k) for k in LOSS_FIELDS}
        return {k: float(v.detach() if torch.is_tensor(v) else v) for k, v in vals.items()}

    def recombine(self, weights):
        return (weights.w_l1 * self.l1 + weights.w_mask * self.mask
                + weights.w_vgg * self.perceptual + weights.lambda_f * self.flow_pen)


def _same_shape(a, b, what):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeMismatch(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(pred, target):
    _same_shape(pred, target, "l1_loss")
    return abs(pred - target).mean()


def mask_loss(pred_mask, target_mask):
    """Mean absolute gap between predicted composition mask and garment mask."""
    _same_shape(pred_mask, target_mask, "mask_loss")
    return abs(pred_mask - target_mask).mean()


def perceptual_loss(pred, target, extractor):
    """Mean over extractor layers of the mean absolute feature difference."""
    _same_shape(pred, target, "perceptual_loss")
    fa = extractor(pred)
    fb = extractor(target)
    total = 0.0
    for a, b in zip(fa, fb):
        total = total + abs(a - b).mean() / len(fa)
    return total


def flow_mask_penalty(flow_mask):
    return (flow_mask * flow_mask).mean()


class FrozenFeatureExtractor(nn.Module):
    """Fixed random strided conv stack standing in for a pretrained VGG.

    Five stride-2 3x3 stages with ReLU; features from every stage are returned.
    Weights come from ``seed`` and never receive gradients.
    """

    def __init__(self, widths=(16, 32, 64, 64, 64), seed=1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, cin = [], 3
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.normal_(0.0, math.sqrt(2.0 / (cin * 9)), generator=gen)
                conv.bias.zero_()
            layers.append(conv)
            cin = cout
        self.stages = nn.ModuleList(layers)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # frozen: never switch into training mode
        return super().train(False)

    def forward(self, x):
        feats = []
        x = 2 * x - 1
        for conv in self.stages:
            x = torch.relu(conv(x))
            feats.append(x)
        return feats


class IdentityExtractor(nn.Module):
    def forward(self, x):
        return [x]


def reconstruction_losses(final, target, pred_mask, target_mask, weights, extractor, flow_mask=None):
    """All loss terms for one batch plus their weighted total."""
    l1 = l1_loss(final, target)
    mk = mask_loss(pred_mask, target_mask)
    vgg = perceptual_loss(final, target, extractor)
    pen = flow_mask_penalty(flow_mask) if flow_mask is not None else torch.zeros((), dtype=final.dtype)
    total = weights.w_l1 * l1 + weights.w_mask * mk + weights.w_vgg * vgg + weights.lambda_f * pen
    return LossBreakdown(l1, mk, vgg, pen, total)

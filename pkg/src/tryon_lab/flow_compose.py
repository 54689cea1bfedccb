"""Temporal branch: warp the previous output by optical flow and blend it in.

``final = warped_prev * flow_mask + composed * (1 - flow_mask)``. Sampling
clamps to the border. Frame 0 of a video has no predecessor and skips the
branch entirely.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import kernels
from .errors import ShapeMismatch


@dataclass
class FlowComposeOutput:
    warped_prev: object
    flow_mask: object
    final: object


def check_flow(flow):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ShapeMismatch(f"flow must be 2 x H x W, got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    _, h, w = flow.shape
    if np.abs(flow[0]).max(initial=0) > w or np.abs(flow[1]).max(initial=0) > h:
        raise ValueError("flow displacement exceeds the frame size")
    return flow


def backward_warp(prev, flow):
    """``out[y, x] = prev`` sampled bilinearly at ``(x + dx, y + dy)``.

    ``prev`` is H x W x C (numpy) or B x C x H x W (tensor, flow B x 2 x H x W).
    """
    if isinstance(prev, torch.Tensor):
        return backward_warp_torch(prev, flow)
    prev = np.asarray(prev)
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2 or flow.shape[1:] != prev.shape[:2]:
        raise ShapeMismatch(f"flow {flow.shape} does not match image {prev.shape}")
    h, w = prev.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = kernels.bilinear_sample(prev, xs + flow[0], ys + flow[1], kernels.BORDER)
    return out.astype(prev.dtype, copy=False) if np.issubdtype(prev.dtype, np.floating) else out


def backward_warp_torch(prev, flow):
    if prev.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2 or flow.shape[-2:] != prev.shape[-2:] \
            or flow.shape[0] != prev.shape[0]:
        raise ShapeMismatch(f"flow {tuple(flow.shape)} does not match image {tuple(prev.shape)}")
    _, _, h, w = prev.shape
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=prev.dtype, device=prev.device),
        torch.arange(w, dtype=prev.dtype, device=prev.device),
        indexing="ij",
    )
    gx = 2 * (xs + flow[:, 0]) / max(w - 1, 1) - 1
    gy = 2 * (ys + flow[:, 1]) / max(h - 1, 1) - 1
    grid = torch.stack([gx, gy], dim=-1)
    return F.grid_sample(prev, grid, mode="bilinear", padding_mode="border", align_corners=True)


def blend(warped_prev, composed, flow_mask):
    if isinstance(composed, np.ndarray) and flow_mask.ndim == composed.ndim - 1:
        flow_mask = flow_mask[..., None]
    return warped_prev * flow_mask + composed * (1 - flow_mask)


def flow_compose(composed, prev_final, flow, flow_mask):
    """Warp ``prev_final`` into the current step and blend with ``composed``."""
    if tuple(composed.shape) != tuple(prev_final.shape):
        raise ShapeMismatch(f"composed {tuple(composed.shape)} vs previous {tuple(prev_final.shape)}")
    warped = backward_warp(prev_final, flow)
    try:
        final = blend(warped, composed, flow_mask)
    except (ValueError, RuntimeError) as exc:
        raise ShapeMismatch(f"flow mask {tuple(flow_mask.shape)} vs frame {tuple(composed.shape)}") from exc
    if tuple(final.shape) != tuple(composed.shape):
        raise ShapeMismatch(f"flow mask {tuple(flow_mask.shape)} vs frame {tuple(composed.shape)}")
    return FlowComposeOutput(warped, flow_mask, final)


class FlowMaskHead(nn.Module):
    """Predicts the flow mask from [composed, warped_prev] (6 channels)."""

    def __init__(self, hidden=16, seed=0):
        super().__init__()
        self.conv1 = nn.Conv2d(6, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)
        self.force = None   # constant output override, used to ablate the branch
        gen = torch.Generator().manual_seed(int(seed) + 104729)
        with torch.no_grad():
            for conv in (self.conv1, self.conv2):
                fan_in = conv.in_channels * 9
                conv.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                conv.bias.zero_()

    def forward(self, composed, warped_prev):
        if self.force is not None:
            b, _, h, w = composed.shape
            return composed.new_full((b, 1, h, w), float(self.force))
        x = torch.relu(self.conv1(torch.cat([composed, warped_prev], dim=1)))
        return torch.sigmoid(self.conv2(x))

    def compose(self, composed, prev_final, flow):
        warped = backward_warp_torch(prev_final, flow)
        mask = self(composed, warped)
        return FlowComposeOutput(warped, mask, blend(warped, composed, mask))

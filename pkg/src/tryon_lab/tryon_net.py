"""Try-on composition network: U-Net with optional self-attention.

The head emits a rendered person (tanh rescaled to [0, 1]) and a composition
mask (sigmoid); the try-on frame is ``w * m + p * (1 - m)``.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigInvalid, ShapeMismatch, UnknownActivation

ACTIVATIONS = ("relu", "gelu", "swish", "sine")
SIREN_OMEGA0 = 30.0
WIDTH_CAP = 8
MASK_LOGIT_BIAS = -1.0


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

def _check_activation(name):
    if name not in ACTIVATIONS:
        raise UnknownActivation(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


_erf = np.vectorize(math.erf, otypes=[float])


def _normal_cdf(x):
    return 0.5 * (1.0 + _erf(np.asarray(x, dtype=float) / math.sqrt(2.0)))


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation(name, x, omega=SIREN_OMEGA0):
    """Scalar/array reference forms (float64)."""
    _check_activation(name)
    x = np.asarray(x, dtype=float)
    if name == "relu":
        return np.maximum(0.0, x)
    if name == "gelu":
        return x * _normal_cdf(x)
    if name == "swish":
        return x * _sigmoid(x)
    return np.sin(omega * x)


def activation_derivative(name, x, omega=SIREN_OMEGA0):
    _check_activation(name)
    x = np.asarray(x, dtype=float)
    if name == "relu":
        return (x > 0).astype(float)
    if name == "gelu":
        return _normal_cdf(x) + x * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    if name == "swish":
        s = _sigmoid(x)
        return s + x * s * (1 - s)
    return omega * np.cos(omega * x)


class Sine(nn.Module):
    def __init__(self, omega=1.0):
        super().__init__()
        self.omega = omega

    def forward(self, x):
        return torch.sin(self.omega * x)

    def extra_repr(self):
        return f"omega={self.omega}"


def activation_gain(name):
    """Weight gain that keeps a unit-variance pre-activation at unit second moment.

    ``1 / E[phi(z)^2]`` for ``z ~ N(0, 1)`` by Gauss-Hermite quadrature; equals 2 for relu.
    """
    _check_activation(name)
    z, w = np.polynomial.hermite_e.hermegauss(80)
    w = w / w.sum()
    return math.sqrt(1.0 / float(np.sum(w * activation(name, z, omega=1.0) ** 2)))


def make_activation(name, omega=1.0):
    _check_activation(name)
    if name == "relu":
        return nn.ReLU()
    if name == "gelu":
        return nn.GELU(approximate="none")
    if name == "swish":
        return nn.SiLU()
    return Sine(omega)


# --------------------------------------------------------------------------
# self-attention
# --------------------------------------------------------------------------

def attend(q, k, v):
    """Softmax attention over tokens.

    q, k: (B, N, d); v: (B, N, c). Row i of the weights is
    ``softmax_j(q_i . k_j)``; returns (weighted values, weights).
    """
    logits = q @ k.transpose(1, 2)
    logits = logits - logits.amax(dim=-1, keepdim=True)
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


class SelfAttention(nn.Module):
    """1x1 query/key/value projections, softmax over positions, gated residual."""

    def __init__(self, channels):
        super().__init__()
        d = max(1, channels // 8)
        c = max(1, channels // 2)
        self.query = nn.Conv2d(channels, d, 1)
        self.key = nn.Conv2d(channels, d, 1)
        self.value = nn.Conv2d(channels, c, 1)
        self.proj = nn.Conv2d(c, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        b, _, h, w = x.shape
        q = self.query(x).flatten(2).transpose(1, 2)
        k = self.key(x).flatten(2).transpose(1, 2)
        v = self.value(x).flatten(2).transpose(1, 2)
        out, _ = attend(q, k, v)
        out = out.transpose(1, 2).reshape(b, -1, h, w)
        return x + self.gamma * self.proj(out)


# --------------------------------------------------------------------------
# U-Net
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TryonConfig:
    in_channels: int
    base_width: int = 32
    depth: int = 4
    attention: bool = True
    activation: str = "gelu"
    seed: int = 0
    attention_layers: int = 2
    omega0: float = SIREN_OMEGA0

    def validate(self):
        if self.depth < 2:
            raise ConfigInvalid("depth must be >= 2")
        if self.base_width < 8:
            raise ConfigInvalid("base_width must be >= 8")
        if self.in_channels < 1:
            raise ConfigInvalid("in_channels must be positive")
        if self.attention_layers not in (1, 2):
            raise ConfigInvalid("attention_layers must be 1 or 2")
        _check_activation(self.activation)
        return self

    def widths(self):
        cap = WIDTH_CAP * self.base_width
        return [min(self.base_width * 2 ** i, cap) for i in range(self.depth + 1)]

    def to_dict(self):
        return asdict(self)


@dataclass
class TryonOutput:
    rendered: torch.Tensor   # B x 3 x H x W in [0, 1]
    mask: torch.Tensor       # B x 1 x H x W in [0, 1]
    composed: torch.Tensor   # B x 3 x H x W


class ConvAct(nn.Module):
    def __init__(self, cin, cout, act, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.act = act

    def forward(self, x):
        return self.act(self.conv(x))


class TryonNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        widths = cfg.widths()
        first = [True]

        def act():
            # SIREN: the first sine layer uses omega0, later ones omega=1
            if cfg.activation == "sine" and first[0]:
                first[0] = False
                return make_activation("sine", cfg.omega0)
            first[0] = False
            return make_activation(cfg.activation, 1.0)

        self.inc = nn.Sequential(ConvAct(cfg.in_channels, widths[0], act()), ConvAct(widths[0], widths[0], act()))
        self.downs = nn.ModuleList(
            nn.Sequential(ConvAct(widths[i - 1], widths[i], act(), stride=2), ConvAct(widths[i], widths[i], act()))
            for i in range(1, cfg.depth + 1)
        )
        self.ups = nn.ModuleList(
            nn.Sequential(ConvAct(widths[i] + widths[i - 1], widths[i - 1], act()),
                          ConvAct(widths[i - 1], widths[i - 1], act()))
            for i in range(cfg.depth, 0, -1)
        )
        self.attn_bottleneck = SelfAttention(widths[-1]) if cfg.attention else None
        self.attn_decoder = (
            SelfAttention(widths[-2]) if cfg.attention and cfg.attention_layers == 2 else None
        )
        self.head = nn.Conv2d(widths[0], 4, 1)
        self._init_weights()

    def _init_weights(self):
        # attention weights draw from their own stream so that toggling
        # attention leaves every other parameter bit-identical
        attn = [m for m in (self.attn_bottleneck, self.attn_decoder) if m is not None]
        attn_ids = {id(c) for a in attn for c in a.modules()}
        base = [m for m in self.modules() if isinstance(m, nn.Conv2d) and id(m) not in attn_ids]
        extra = [c for a in attn for c in a.modules() if isinstance(c, nn.Conv2d)]
        seed = int(self.cfg.seed)
        gain = activation_gain(self.cfg.activation)
        for convs, gen in ((base, torch.Generator().manual_seed(seed)),
                           (extra, torch.Generator().manual_seed(seed + 7919))):
            for i, m in enumerate(convs):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                with torch.no_grad():
                    if self.cfg.activation == "sine" and m is not self.head:
                        first = convs is base and i == 0
                        bound = 1.0 / fan_in if first else math.sqrt(6.0 / fan_in)
                        m.weight.uniform_(-bound, bound, generator=gen)
                    else:
                        m.weight.normal_(0.0, gain / math.sqrt(fan_in), generator=gen)
                    m.bias.zero_()
        with torch.no_grad():
            # start the composition mask leaning towards the rendered person
            self.head.bias[3] = MASK_LOGIT_BIAS

    @property
    def min_multiple(self):
        return 2 ** self.cfg.depth

    def features(self, x):
        h, w = x.shape[-2:]
        if h % self.min_multiple or w % self.min_multiple:
            raise ShapeMismatch(f"input {h}x{w} not divisible by {self.min_multiple}")
        skips = [self.inc(2 * x - 1)]
        for down in self.downs:
            skips.append(down(skips[-1]))
        x = skips.pop()
        if self.attn_bottleneck is not None:
            x = self.attn_bottleneck(x)
        for i, up in enumerate(self.ups):
            skip = skips.pop()
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = up(torch.cat([x, skip], dim=1))
            if i == 0 and self.attn_decoder is not None:
                x = self.attn_decoder(x)
        return self.head(x)

    def forward(self, person, warped, warped_mask):
        out = self.features(torch.cat([person, warped, warped_mask], dim=1))
        rendered = 0.5 * (torch.tanh(out[:, :3]) + 1.0)
        mask = torch.sigmoid(out[:, 3:4])
        return TryonOutput(rendered, mask, compose(rendered, mask, warped))


def build_network(cfg):
    """Deterministic construction: identical ``cfg`` gives bit-identical weights."""
    return TryonNet(cfg)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


def compose(rendered, mask, warped):
    """``warped * mask + rendered * (1 - mask)``, elementwise.

    Works on numpy arrays or tensors. A mask lacking the trailing channel axis
    of an H x W x 3 image is broadcast across channels.
    """
    warped = getattr(warped, "image", warped)
    if tuple(rendered.shape) != tuple(warped.shape):
        raise ShapeMismatch(f"rendered {tuple(rendered.shape)} vs warped {tuple(warped.shape)}")
    if mask.ndim == rendered.ndim - 1 and tuple(mask.shape) == tuple(rendered.shape[:-1]):
        mask = mask[..., None]
    try:
        target = np.broadcast_shapes(tuple(mask.shape), tuple(rendered.shape))
    except ValueError as exc:
        raise ShapeMismatch(f"mask {tuple(mask.shape)} does not broadcast to {tuple(rendered.shape)}") from exc
    if target != tuple(rendered.shape):
        raise ShapeMismatch(f"mask {tuple(mask.shape)} does not broadcast to {tuple(rendered.shape)}")
    return warped * mask + rendered * (1 - mask)

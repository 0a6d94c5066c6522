"""Recognizer: multi-level fused backbone, lexicon-page head, per-page attention, column pooling.

Shapes for a (N, 3, 24, 94) input::

    fused (N, 521, 4, 18) -> pages (N, 73, 4, 18) -> attended (N, 73, 4, 18) -> logits (N, 73, 18)
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .ptr import ShapeMismatch

ENERGY_EPS = 1e-8


@dataclass(frozen=True)
class AFLNetConfig:
    n_classes: int = 73
    input_size: tuple[int, int] = (94, 24)  # width, height
    page_size: tuple[int, int] = (4, 18)  # height, width
    level_channels: tuple[int, int, int] = (64, 128, 256)  # last level has n_classes channels
    use_lpca: bool = True
    dropout: float = 0.2

    @property
    def fused_channels(self) -> int:
        return sum(self.level_channels) + self.n_classes


def conv_bn(c_in, c_out, kernel, stride=1, padding=0):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=padding, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class SmallBasicBlock(nn.Module):
    """1x1 squeeze, 3x1 and 1x3 convolutions, 1x1 expand."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        mid = c_out // 4
        self.body = nn.Sequential(
            conv_bn(c_in, mid, 1),
            conv_bn(mid, mid, (3, 1), padding=(1, 0)),
            conv_bn(mid, mid, (1, 3), padding=(0, 1)),
            conv_bn(mid, c_out, 1),
        )

    def forward(self, x):
        return self.body(x)


def energy_normalize(x: torch.Tensor, eps: float = ENERGY_EPS) -> torch.Tensor:
    """Scale each sample so its mean squared activation is 1."""
    energy = x.pow(2).mean(dim=(1, 2, 3), keepdim=True)
    return x / torch.sqrt(energy + eps)


class Backbone(nn.Module):
    """Four feature taps pooled to the page grid, energy-normalized and concatenated."""

    def __init__(self, cfg: AFLNetConfig = AFLNetConfig()):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3 = cfg.level_channels
        self.stage1 = conv_bn(3, c1, 3, padding=1)  # 24x94
        self.stage2 = nn.Sequential(nn.MaxPool2d(2), SmallBasicBlock(c1, c2))  # 12x47
        self.stage3 = nn.Sequential(nn.MaxPool2d(2), SmallBasicBlock(c2, c3))  # 6x23
        self.stage4 = nn.Sequential(
            nn.Dropout(cfg.dropout),
            conv_bn(c3, c3 // 2, (1, 3), padding=(0, 1)),
            nn.Dropout(cfg.dropout),
            conv_bn(c3 // 2, cfg.n_classes, (3, 1), padding=(1, 0)),
        )

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        w, h = self.cfg.input_size
        if x.shape[-2:] != (h, w):
            raise ShapeMismatch(f"recognizer expects {w}x{h}, got {x.shape[-1]}x{x.shape[-2]}")
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        # high-level first, matching the fused channel order
        return [f4, f3, f2, f1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = self.cfg.page_size
        levels = [energy_normalize(F.adaptive_avg_pool2d(f, size)) for f in self.taps(x)]
        return torch.cat(levels, dim=1)


class LPCA(nn.Module):
    """Per-page attention: height-averaged profile -> own 1x3 conv -> sigmoid -> broadcast multiply."""

    def __init__(self, channels: int = 73):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(channels, 3))
        self.bias = nn.Parameter(torch.zeros(channels))
        nn.init.normal_(self.weight, std=0.1)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Attention values (N, C, W), constant along height."""
        profile = x.mean(dim=2)
        padded = F.pad(profile, (1, 1), mode="replicate")
        logits = F.conv1d(padded, self.weight.unsqueeze(1), self.bias, groups=self.weight.shape[0])
        return torch.sigmoid(logits)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.attention(x).unsqueeze(2)


def lp_ca(weight: torch.Tensor, bias: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Functional form of the attention block for explicit parameters."""
    profile = x.mean(dim=-2)
    padded = F.pad(profile.unsqueeze(0) if profile.dim() == 2 else profile, (1, 1), mode="replicate")
    att = torch.sigmoid(F.conv1d(padded, weight.unsqueeze(1), bias, groups=weight.shape[0]))
    if x.dim() == 3:
        att = att[0]
    return x * att.unsqueeze(-2)


def column_pool(pages: torch.Tensor) -> torch.Tensor:
    """Average each page over its rows: (..., C, H, W) -> (..., C, W)."""
    return pages.mean(dim=-2)


class AFLNet(nn.Module):
    def __init__(self, cfg: AFLNetConfig = AFLNetConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.head = nn.Conv2d(cfg.fused_channels, cfg.n_classes, 1)
        self.lpca = LPCA(cfg.n_classes)

    def pages(self, x: torch.Tensor) -> torch.Tensor:
        pages = self.head(self.backbone(x))
        return self.lpca(pages) if self.cfg.use_lpca else pages

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return column_pool(self.pages(x))

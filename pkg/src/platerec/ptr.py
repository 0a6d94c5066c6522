"""Perspective rectification: vertex-offset regression + four-point homography + warp.

The regressor sees the crop resized to ``input_size``; sampling always reads
from the original crop, so output quality does not depend on that resize.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import geometry as geo


class ShapeMismatch(ValueError):
    pass


SINGLE_ANCHORS = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))
# upper-left, upper-right, shared-left, shared-right, lower-left, lower-right
DOUBLE_ANCHORS = ((0.0, 0.0), (1.0, 0.0), (0.0, 0.5), (1.0, 0.5), (0.0, 1.0), (1.0, 1.0))


@dataclass(frozen=True)
class PTRConfig:
    layout: str = "single"
    input_size: tuple[int, int] = (128, 64)  # width, height
    output_size: tuple[int, int] = (94, 24)
    upper_width: int = 27  # double-line split; lower width is the remainder

    @property
    def n_offsets(self) -> int:
        return 8 if self.layout == "single" else 12


class OffsetRegressor(nn.Module):
    """Four stride-2 conv stages and three linear layers, output squashed to +-0.5.

    A 1x1 conv narrows the last stage before flattening so the linear layers
    still see where features are (corner finding needs position). The last
    layer starts at zero, so a fresh regressor predicts zero offsets.
    """

    def __init__(self, n_out: int = 8, channels=(16, 32, 64, 128), hidden=(256, 64), reduce: int = 16,
                 input_size=(128, 64)):
        super().__init__()
        layers = []
        c_in = 3
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), nn.BatchNorm2d(c), nn.ReLU(inplace=True)]
            c_in = c
        layers += [nn.Conv2d(c_in, reduce, 1), nn.BatchNorm2d(reduce), nn.ReLU(inplace=True)]
        self.features = nn.Sequential(*layers)
        w, h = input_size
        for _ in channels:
            w, h = (w + 1) // 2, (h + 1) // 2
        self.fc = nn.Sequential(
            nn.Flatten(),
            nn.Linear(reduce * w * h, hidden[0]),
            nn.ReLU(inplace=True),
            nn.Linear(hidden[0], hidden[1]),
            nn.ReLU(inplace=True),
            nn.Linear(hidden[1], n_out),
        )
        nn.init.zeros_(self.fc[-1].weight)
        nn.init.zeros_(self.fc[-1].bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return 0.5 * torch.tanh(self.fc(self.features(x)))


def vertices_from_offsets_single(offsets: torch.Tensor) -> torch.Tensor:
    """(..., 8) offsets -> (..., 4, 2) quad in corner order TL, TR, BR, BL."""
    if offsets.shape[-1] != 8:
        raise ShapeMismatch(f"expected 8 offsets, got {offsets.shape[-1]}")
    anchors = torch.tensor(SINGLE_ANCHORS, dtype=offsets.dtype, device=offsets.device)
    return anchors + offsets.reshape(*offsets.shape[:-1], 4, 2)


def vertices_from_offsets_double(offsets: torch.Tensor) -> torch.Tensor:
    """(..., 12) offsets -> (..., 6, 2) hexad."""
    if offsets.shape[-1] != 12:
        raise ShapeMismatch(f"expected 12 offsets, got {offsets.shape[-1]}")
    anchors = torch.tensor(DOUBLE_ANCHORS, dtype=offsets.dtype, device=offsets.device)
    return anchors + offsets.reshape(*offsets.shape[:-1], 6, 2)


def hexad_quads(hexad: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a hexad (..., 6, 2) into its upper and lower quads."""
    upper = hexad[..., [0, 1, 3, 2], :]
    lower = hexad[..., [2, 3, 5, 4], :]
    return upper, lower


def check_hexad(hexad: torch.Tensor) -> None:
    for q in hexad_quads(hexad):
        geo.check_quad(q)


def warp_quads(image: torch.Tensor, quads: torch.Tensor, width: int, height: int):
    """Rectify each quad of a batch; invalid quads fall back to the full image.

    Returns ``(output, ok)``.
    """
    theta, ok = geo.solve_homography_batch(quads.double())
    out = geo.warp(image, theta, width, height)
    return out, ok


class PTR(nn.Module):
    """Rectifier for one plate layout."""

    def __init__(self, cfg: PTRConfig = PTRConfig()):
        super().__init__()
        self.cfg = cfg
        self.regressor = OffsetRegressor(cfg.n_offsets, input_size=cfg.input_size)
        self.fallbacks = 0  # degenerate predictions replaced by identity

    def estimate_offsets(self, image: torch.Tensor) -> torch.Tensor:
        w, h = self.cfg.input_size
        if image.shape[-2:] != (h, w):
            raise ShapeMismatch(f"regressor expects {w}x{h}, got {image.shape[-1]}x{image.shape[-2]}")
        return self.regressor(image)

    def regressor_input(self, image: torch.Tensor) -> torch.Tensor:
        w, h = self.cfg.input_size
        if image.shape[-2:] == (h, w):
            return image
        return geo.resize(image, w, h)

    def vertices(self, image: torch.Tensor) -> torch.Tensor:
        """Predicted quad (N, 4, 2) or hexad (N, 6, 2) in crop-normalized coordinates."""
        offsets = self.estimate_offsets(self.regressor_input(image))
        if self.cfg.layout == "single":
            return vertices_from_offsets_single(offsets)
        return vertices_from_offsets_double(offsets)

    def rectify_vertices(self, image: torch.Tensor, verts: torch.Tensor):
        """Warp ``image`` (N, C, H, W) by given vertices; returns ``(output, ok)``."""
        out_w, out_h = self.cfg.output_size
        if self.cfg.layout == "single":
            return warp_quads(image, verts, out_w, out_h)
        upper, lower = hexad_quads(verts)
        top, ok_top = warp_quads(image, upper, self.cfg.upper_width, out_h)
        bottom, ok_bottom = warp_quads(image, lower, out_w - self.cfg.upper_width, out_h)
        # a degenerate half falls back to the whole-image identity for that half
        return torch.cat([top, bottom], dim=-1), ok_top & ok_bottom

    def forward(self, image: torch.Tensor):
        """Returns ``(rectified, vertices, ok)`` for a batch."""
        verts = self.vertices(image)
        out, ok = self.rectify_vertices(image, verts)
        self.fallbacks += int((~ok).sum())
        return out, verts, ok


def rectify_single(model: PTR, image: torch.Tensor):
    """Rectify one (C, H, W) single-line crop; returns ``(image, fell_back)``."""
    out, _, ok = model(image.unsqueeze(0))
    return out[0], not bool(ok[0])


def rectify_double(model: PTR, image: torch.Tensor):
    """Rectify one double-line crop into the concatenated single-line strip."""
    out, _, ok = model(image.unsqueeze(0))
    return out[0], not bool(ok[0])


class AffineSTN(nn.Module):
    """Affine spatial-transformer baseline, initialized to the identity map."""

    def __init__(self, input_size=(128, 64), output_size=(94, 24)):
        super().__init__()
        self.input_size = input_size
        self.output_size = output_size
        self.regressor = OffsetRegressor(6, input_size=input_size)
        # the bounded head is replaced by an unbounded one starting at identity
        self.regressor.fc[-1].bias.data.copy_(torch.tensor(geo.IDENTITY_THETA[:6]))

    def params6(self, image: torch.Tensor) -> torch.Tensor:
        w, h = self.input_size
        x = image if image.shape[-2:] == (h, w) else geo.resize(image, w, h)
        return self.regressor.fc(self.regressor.features(x))

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return affine_stn_baseline(self.params6(image), image, self.output_size)


def affine_stn_baseline(params6: torch.Tensor, image: torch.Tensor, output_size=(94, 24)) -> torch.Tensor:
    """Warp by a 2x3 affine map (output -> input, normalized coordinates)."""
    theta = geo.affine_theta(params6.double())
    return geo.warp(image, theta, *output_size)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)

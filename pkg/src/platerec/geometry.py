"""Differentiable planar geometry for plate rectification.

Coordinates are normalized: x in [0, 1] across the image width, y in [0, 1]
down the image height. A homography is stored as its first eight entries
``theta = (t1, ..., t8)``; the ninth entry is fixed to 1. It maps a point
``(u, v)`` of the *output* image to the *input* image::

    x = (t1*u + t2*v + t3) / (1 + t7*u + t8*v)
    y = (t4*u + t5*v + t6) / (1 + t7*u + t8*v)

so grids built from it are backward-warp grids. Images are torch tensors in
``(C, H, W)`` or ``(N, C, H, W)`` layout.
"""

from __future__ import annotations

import torch

UNIT_SQUARE = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))
IDENTITY_THETA = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)

# Reciprocal condition numbers below this count as rank-deficient.
_RCOND_MIN = 1e-12
_DENOM_MIN = 1e-12


class GeometryError(ValueError):
    pass


class SingularSystem(GeometryError):
    """The 8x8 correspondence system has no unique solution."""


class DegenerateDenominator(GeometryError):
    """The projective denominator vanishes at a queried point."""


class DegenerateQuad(GeometryError):
    """A quad is self-intersecting, non-convex or negatively oriented."""


def unit_square(dtype=torch.float64, device=None) -> torch.Tensor:
    return torch.tensor(UNIT_SQUARE, dtype=dtype, device=device)


def identity_theta(dtype=torch.float64, device=None) -> torch.Tensor:
    return torch.tensor(IDENTITY_THETA, dtype=dtype, device=device)


def quad_is_valid(quad: torch.Tensor) -> torch.Tensor:
    """Boolean mask: corners (..., 4, 2) form a strictly convex quad.

    Corner order is top-left, top-right, bottom-right, bottom-left with y
    pointing down, which gives every consecutive edge pair a positive cross
    product. Non-finite corners are invalid.
    """
    edges = torch.roll(quad, -1, dims=-2) - quad
    nxt = torch.roll(edges, -1, dims=-2)
    cross = edges[..., 0] * nxt[..., 1] - edges[..., 1] * nxt[..., 0]
    finite = torch.isfinite(quad).all(dim=-1).all(dim=-1)
    return (cross > 0).all(dim=-1) & finite


def check_quad(quad: torch.Tensor) -> None:
    if not bool(quad_is_valid(quad).all()):
        raise DegenerateQuad(f"not a strictly convex positively oriented quad: {quad.tolist()}")


def correspondence_system(src: torch.Tensor, dst: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Build the 8x8 matrix and right-hand side taking dst corners to src corners."""
    u, v = dst[..., 0], dst[..., 1]
    x, y = src[..., 0], src[..., 1]
    one = torch.ones_like(u)
    zero = torch.zeros_like(u)
    row_x = torch.stack([u, v, one, zero, zero, zero, -x * u, -x * v], dim=-1)
    row_y = torch.stack([zero, zero, zero, u, v, one, -y * u, -y * v], dim=-1)
    # interleave rows: (x1, y1, x2, y2, ...)
    a = torch.stack([row_x, row_y], dim=-2).reshape(*src.shape[:-2], 8, 8)
    b = torch.stack([x, y], dim=-1).reshape(*src.shape[:-2], 8)
    return a, b


def solve_homography_batch(
    src: torch.Tensor, dst: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Solve a batch of four-point systems without raising.

    Returns ``(theta, ok)`` where ``ok`` flags samples whose source quad is
    valid and whose system is well conditioned. Rows that fail are replaced by
    the identity so the result stays finite and differentiable.
    """
    if dst is None:
        dst = unit_square(src.dtype, src.device).expand_as(src)
    a, b = correspondence_system(src, dst)
    rcond = 1.0 / torch.linalg.cond(a.detach())
    ok = quad_is_valid(src) & torch.isfinite(rcond) & (rcond > _RCOND_MIN)
    eye = torch.eye(8, dtype=a.dtype, device=a.device)
    a_safe = torch.where(ok[..., None, None], a, eye)
    ident = identity_theta(a.dtype, a.device).expand_as(b)
    b_safe = torch.where(ok[..., None], b, ident)
    theta = torch.linalg.solve(a_safe, b_safe.unsqueeze(-1)).squeeze(-1)
    return theta, ok


def solve_homography(src: torch.Tensor, dst: torch.Tensor | None = None) -> torch.Tensor:
    """Homography theta (8,) mapping each ``dst`` corner onto the matching ``src`` corner.

    ``src`` and ``dst`` are (4, 2) corner arrays (dst defaults to the unit
    square). Gradients flow to both through the linear solve.
    """
    src = torch.as_tensor(src, dtype=torch.float64) if not torch.is_tensor(src) else src
    check_quad(src)
    if dst is None:
        dst = unit_square(src.dtype, src.device)
    a, b = correspondence_system(src, dst)
    rcond = 1.0 / torch.linalg.cond(a.detach())
    if not bool(torch.isfinite(rcond)) or float(rcond) <= _RCOND_MIN:
        raise SingularSystem("correspondence system is rank-deficient")
    return torch.linalg.solve(a, b)


def _project(theta: torch.Tensor, u: torch.Tensor, v: torch.Tensor):
    t = theta.unbind(-1)
    d = 1.0 + t[6] * u + t[7] * v
    return t, d


def apply_homography(theta: torch.Tensor, pts: torch.Tensor) -> torch.Tensor:
    """Map points (..., 2) through theta (8,). Raises on a vanishing denominator."""
    u, v = pts[..., 0], pts[..., 1]
    t, d = _project(theta, u, v)
    if bool((d.abs() < _DENOM_MIN).any()):
        raise DegenerateDenominator("projective denominator is ~0")
    x = (t[0] * u + t[1] * v + t[2]) / d
    y = (t[3] * u + t[4] * v + t[5]) / d
    return torch.stack([x, y], dim=-1)


def pixel_centers(width: int, height: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Normalized pixel-center coordinates, shape (height, width, 2)."""
    if width < 1 or height < 1:
        raise ValueError("grid size must be positive")
    xs = (torch.arange(width, dtype=dtype, device=device) + 0.5) / width
    ys = (torch.arange(height, dtype=dtype, device=device) + 0.5) / height
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


def make_grid(theta: torch.Tensor, width: int, height: int) -> torch.Tensor:
    """Sampling grid for an output of ``width x height`` pixels.

    ``theta`` of shape (8,) gives a (H, W, 2) grid, (N, 8) gives (N, H, W, 2).
    """
    base = pixel_centers(width, height, theta.dtype, theta.device)
    if theta.dim() == 1:
        return apply_homography(theta, base)
    base = base.expand(theta.shape[0], height, width, 2)
    return apply_homography(theta[:, None, None, :], base)


def bilinear_sample(image: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Sample ``image`` at normalized ``grid`` points with bilinear weights.

    Out-of-range points are clamped to the border. Differentiable in both the
    image values and the grid coordinates.
    """
    batched = image.dim() == 4
    if not batched:
        image, grid = image.unsqueeze(0), grid.unsqueeze(0)
    n, c, h, w = image.shape
    if image.numel() == 0:
        raise ValueError("empty image")
    grid = grid.to(image.dtype)
    out_h, out_w = grid.shape[1:3]

    x = (grid[..., 0] * w - 0.5).clamp(0, w - 1)
    y = (grid[..., 1] * h - 0.5).clamp(0, h - 1)
    x0 = x.detach().floor().clamp(max=max(w - 2, 0))
    y0 = y.detach().floor().clamp(max=max(h - 2, 0))
    wx = (x - x0).reshape(n, 1, -1)
    wy = (y - y0).reshape(n, 1, -1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = image.reshape(n, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx).reshape(n, 1, -1).expand(n, c, -1)
        return flat.gather(2, idx)

    top = gather(y0, x0) * (1 - wx) + gather(y0, x1) * wx
    bottom = gather(y1, x0) * (1 - wx) + gather(y1, x1) * wx
    out = (top * (1 - wy) + bottom * wy).reshape(n, c, out_h, out_w)
    return out if batched else out[0]


def warp(image: torch.Tensor, theta: torch.Tensor, width: int, height: int) -> torch.Tensor:
    """Backward-warp ``image`` through theta into a ``width x height`` output."""
    return bilinear_sample(image, make_grid(theta, width, height))


def resize(image: torch.Tensor, width: int, height: int) -> torch.Tensor:
    """Full-image resample; the zero-offset rectification."""
    theta = identity_theta(torch.float64, image.device)
    if image.dim() == 4:
        theta = theta.expand(image.shape[0], 8)
    return warp(image, theta, width, height)


def rect_theta(x0: float, y0: float, x1: float, y1: float, dtype=torch.float64) -> torch.Tensor:
    """Theta of the axis-aligned crop [x0, x1] x [y0, y1] (normalized units)."""
    return torch.tensor([x1 - x0, 0.0, x0, 0.0, y1 - y0, y0, 0.0, 0.0], dtype=dtype)


def affine_theta(params6: torch.Tensor) -> torch.Tensor:
    """Embed a 2x3 affine matrix (..., 6) as a homography theta (..., 8)."""
    zeros = torch.zeros(*params6.shape[:-1], 2, dtype=params6.dtype, device=params6.device)
    return torch.cat([params6, zeros], dim=-1)

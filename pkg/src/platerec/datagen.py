"""Synthetic plate factory and localization-error simulation.

Pixel-space points use edge coordinates: the image spans [0, W] x [0, H] and
pixel ``c`` covers [c, c + 1), so a point ``(px, py)`` has normalized
coordinates ``(px / W, py / H)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy import ndimage

from . import geometry as geo
from .charset import DIGITS, LETTERS, PROVINCES, DEFAULT_CHARSET, Charset
from .glyphs import MissingGlyphFont, render_glyph
from .ptr import hexad_quads

SINGLE_SIZE = (440, 140)
DOUBLE_SIZE = (440, 220)
DOUBLE_SPLIT = 0.4  # row boundary of the double-line template, fraction of height
UPPER_FRACTION = 27 / 94  # share of the single-line strip holding the first two glyphs

COLORS = {
    "blue": ((0.08, 0.22, 0.70), (0.95, 0.95, 0.95)),
    "yellow": ((0.92, 0.75, 0.10), (0.05, 0.05, 0.05)),
    "green": ((0.35, 0.80, 0.45), (0.05, 0.05, 0.05)),
    "white": ((0.93, 0.93, 0.93), (0.05, 0.05, 0.05)),
}

__all__ = [
    "MissingGlyphFont", "PlateSpec", "PlateSample", "MalformedRecord",
    "render_plate", "augment_blur", "composite", "perturb_localization",
    "iou", "audit_labels", "write_manifest", "read_manifest", "split_of",
    "SceneConfig", "PlateSet", "generate", "make_scene", "synthetic_set",
]


class MalformedRecord(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


# --- templates ---------------------------------------------------------------


def single_line_boxes(n: int = 7, size=SINGLE_SIZE) -> list[tuple[float, float, float, float]]:
    """Glyph boxes of a single-line plate: two glyphs, a separator gap, the rest."""
    w, h = size
    margin, gap = 15.5 * w / 440, 12 * w / 440
    big_gap = 34 * w / 440
    cw = (w - 2 * margin - (n - 2) * gap - big_gap) / n
    y0, y1 = 25 / 140 * h, 115 / 140 * h
    boxes, x = [], margin
    for i in range(n):
        boxes.append((x, y0, x + cw, y1))
        x += cw + (big_gap if i == 1 else gap)
    return boxes


def double_line_boxes(n: int = 7, size=DOUBLE_SIZE, split=DOUBLE_SPLIT):
    """Double-line boxes: each row is the matching slice of the single-line layout
    stretched over the full plate width, so rectified rows line up with the
    single-line strip."""
    w, h = size
    ref = single_line_boxes(n, (w, 140))
    cut = UPPER_FRACTION * w
    yb = split * h
    boxes = []
    for i, (x0, _, x1, _) in enumerate(ref):
        if i < 2:
            sx, ox, top, bot = w / cut, 0.0, 0.0, yb
        else:
            sx, ox, top, bot = w / (w - cut), cut, yb, h
        rh = bot - top
        boxes.append(((x0 - ox) * sx, top + 25 / 140 * rh, (x1 - ox) * sx, top + 115 / 140 * rh))
    return boxes


@dataclass
class PlateSpec:
    glyphs: str
    layout: str = "single"
    color: str = "blue"
    scale: float = 1.0

    @property
    def size(self) -> tuple[int, int]:
        w, h = SINGLE_SIZE if self.layout == "single" else DOUBLE_SIZE
        return round(w * self.scale), round(h * self.scale)

    def boxes(self):
        size = self.size
        if self.layout == "single":
            return single_line_boxes(len(self.glyphs), size)
        return double_line_boxes(len(self.glyphs), size)

    def validate(self, charset: Charset = DEFAULT_CHARSET):
        if self.layout not in ("single", "double"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.layout == "double" and len(self.glyphs) < 3:
            raise ValueError("double-line plates need at least 3 glyphs")
        charset.encode(self.glyphs)


def template_vertices(layout: str, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    if layout == "single":
        return np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)
    yb = DOUBLE_SPLIT * h
    return np.array([[0, 0], [w, 0], [0, yb], [w, yb], [0, h], [w, h]], dtype=np.float64)


def render_plate(spec: PlateSpec, fonts=None, seed: int = 0):
    """Frontal plate image (H, W, 3) float32 in [0, 1] plus its vertex metadata.

    ``fonts`` optionally maps glyph -> font file, or is a single font path
    used for every glyph; missing entries fall back to procedural glyphs.
    """
    spec.validate()
    w, h = spec.size
    bg, fg = COLORS[spec.color]
    rng = np.random.default_rng(seed)
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = bg
    img += rng.normal(0, 0.015, size=img.shape).astype(np.float32)
    # inner rim
    r0, r1 = max(1, round(4 * spec.scale)), max(2, round(7 * spec.scale))
    rim = np.zeros((h, w), dtype=bool)
    rim[r0:h - r0, r0:w - r0] = True
    rim[r1:h - r1, r1:w - r1] = False
    img[rim] = fg

    for ch, (x0, y0, x1, y1) in zip(spec.glyphs, spec.boxes()):
        font = fonts.get(ch) if isinstance(fonts, dict) else fonts
        ix0, iy0 = int(round(x0)), int(round(y0))
        gw, gh = int(round(x1)) - ix0, int(round(y1)) - iy0
        cov = render_glyph(ch, gw, gh, font)[..., None]
        region = img[iy0:iy0 + gh, ix0:ix0 + gw]
        region[:] = region * (1 - cov) + np.asarray(fg, dtype=np.float32) * cov
    if spec.layout == "single":
        b = spec.boxes()
        cx = (b[1][2] + b[2][0]) / 2
        cy = h / 2
        rr = 4 * spec.scale
        yy, xx = np.ogrid[:h, :w]
        img[(xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= rr * rr] = fg
    np.clip(img, 0, 1, out=img)
    meta = {
        "vertices": template_vertices(spec.layout, (w, h)),
        "boxes": spec.boxes(),
        "size": (w, h),
    }
    return img, meta


# --- blur ----------------------------------------------------------------------


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """Oriented box kernel of the given length (pixels), normalized to sum 1."""
    radius = int(math.ceil(length / 2))
    k = np.zeros((2 * radius + 1, 2 * radius + 1))
    n = max(2, int(math.ceil(length * 4)))
    for t in np.linspace(-length / 2, length / 2, n):
        x = radius + t * math.cos(angle)
        y = radius + t * math.sin(angle)
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                yy, xx = min(y0 + dy, 2 * radius), min(x0 + dx, 2 * radius)
                k[yy, xx] += wx * wy
    return k / k.sum()


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3 * sigma)))
    ax = np.arange(-radius, radius + 1)
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def augment_blur(image: np.ndarray, kind: str, magnitude: float, seed: int = 0) -> np.ndarray:
    """Motion (box kernel of length ``magnitude``) or defocus (Gaussian sigma ``magnitude``) blur."""
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    if magnitude == 0:
        return image.copy()
    if kind == "motion":
        angle = np.random.default_rng(seed).uniform(0, math.pi)
        kernel = motion_kernel(max(magnitude, 1.0), angle)
    elif kind == "defocus":
        kernel = gaussian_kernel(magnitude)
    else:
        raise ValueError(f"unknown blur kind {kind!r}")
    out = np.empty_like(image)
    if image.ndim == 2:
        return ndimage.correlate(image, kernel.astype(image.dtype), mode="nearest")
    for c in range(image.shape[2]):
        out[..., c] = ndimage.correlate(image[..., c], kernel.astype(image.dtype), mode="nearest")
    return out


# --- samples and compositing ---------------------------------------------------


@dataclass
class PlateSample:
    image: str
    plate: str
    layout: str
    bbox: tuple[float, float, float, float]
    vertices: tuple[tuple[float, float], ...]
    seed: int
    width: int
    height: int
    split: str = ""
    category: str = "standard"
    clipped: bool = False

    def __post_init__(self):
        self.bbox = tuple(float(v) for v in self.bbox)
        self.vertices = tuple((float(x), float(y)) for x, y in self.vertices)
        want = 4 if self.layout == "single" else 6
        if len(self.vertices) != want:
            raise ValueError(f"{self.layout} plate needs {want} vertices, got {len(self.vertices)}")


def tight_bbox(vertices) -> tuple[float, float, float, float]:
    v = np.asarray(vertices, dtype=np.float64)
    return (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())


def _to_chw(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)


def _paste(canvas: torch.Tensor, template: torch.Tensor, src_rect, dst_quad_n) -> torch.Tensor:
    """Paste the ``src_rect`` region (normalized template coords) of ``template`` onto ``dst_quad_n``."""
    _, h, w = canvas.shape
    x0, y0, x1, y1 = src_rect
    src = torch.tensor([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=torch.float64)
    dst = torch.as_tensor(dst_quad_n, dtype=torch.float64)
    geo.check_quad(dst)
    theta = geo.solve_homography(src, dst)
    grid = geo.make_grid(theta, w, h)
    eps = 1e-9
    inside = (
        (grid[..., 0] >= x0 - eps) & (grid[..., 0] <= x1 + eps)
        & (grid[..., 1] >= y0 - eps) & (grid[..., 1] <= y1 + eps)
    )
    sampled = geo.bilinear_sample(template, grid)
    return torch.where(inside, sampled, canvas)


def composite(template: np.ndarray, background: np.ndarray, dst, layout: str = "single",
              plate: str = "", seed: int = 0, image: str = "", category: str = "standard"):
    """Warp a frontal plate onto ``background`` at pixel vertices ``dst``.

    ``dst`` holds 4 corners, or for double-line plates either 4 corners (the
    shared vertices then follow from the single plate homography) or a full
    hexad, in which case each row gets its own homography.
    Returns ``(scene, sample)`` with ``sample.vertices`` equal to the hexad/quad used.
    """
    h, w = background.shape[:2]
    dst = np.asarray(dst, dtype=np.float64)
    scale = np.array([w, h], dtype=np.float64)
    tpl = _to_chw(template)
    canvas = _to_chw(background)

    if layout == "double" and len(dst) == 4:
        # the plate is planar: carry the template's row boundary through its homography
        fwd = geo.solve_homography(torch.as_tensor(dst / scale), geo.unit_square())
        mids = geo.apply_homography(fwd, torch.tensor([[0.0, DOUBLE_SPLIT], [1.0, DOUBLE_SPLIT]], dtype=torch.float64))
        mids = mids.numpy() * scale
        dst = np.array([dst[0], dst[1], mids[0], mids[1], dst[3], dst[2]])

    if layout == "single":
        if len(dst) != 4:
            raise ValueError("single-line compositing needs 4 vertices")
        canvas = _paste(canvas, tpl, (0.0, 0.0, 1.0, 1.0), dst / scale)
    else:
        upper, lower = hexad_quads(torch.as_tensor(dst / scale))
        canvas = _paste(canvas, tpl, (0.0, 0.0, 1.0, DOUBLE_SPLIT), upper)
        canvas = _paste(canvas, tpl, (0.0, DOUBLE_SPLIT, 1.0, 1.0), lower)

    x1, y1, x2, y2 = tight_bbox(dst)
    clipped = bool(x1 < 0 or y1 < 0 or x2 > w or y2 > h)
    bbox = (max(x1, 0.0), max(y1, 0.0), min(x2, float(w)), min(y2, float(h)))
    scene = canvas.permute(1, 2, 0).numpy()
    sample = PlateSample(image=image, plate=plate, layout=layout, bbox=bbox,
                         vertices=tuple(map(tuple, dst)), seed=seed, width=w, height=h,
                         category=category, clipped=clipped)
    return scene, sample


def perturb_localization(sample: PlateSample, sigma: float = 4.0, seed: int = 0,
                         vertex_sigma: float | None = None) -> PlateSample:
    """Add independent Gaussian noise to both bbox corners and every vertex.

    Results are clipped to the image; the bbox is re-ordered so x2 > x1 and
    y2 > y1. The perturbed bbox need not contain the perturbed vertices.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    vertex_sigma = sigma if vertex_sigma is None else vertex_sigma
    if sigma == 0 and vertex_sigma == 0:
        return replace(sample)
    rng = np.random.default_rng(seed)
    box = np.asarray(sample.bbox) + rng.normal(0.0, sigma, size=4)
    verts = np.asarray(sample.vertices) + rng.normal(0.0, vertex_sigma, size=(len(sample.vertices), 2))
    lim = np.array([sample.width, sample.height], dtype=np.float64)
    box = np.clip(box, 0, np.tile(lim, 2))
    x1, x2 = sorted(box[[0, 2]])
    y1, y2 = sorted(box[[1, 3]])
    x2, y2 = max(x2, x1 + 1.0), max(y2, y1 + 1.0)
    verts = np.clip(verts, 0, lim)
    return replace(sample, bbox=(x1, y1, x2, y2), vertices=tuple(map(tuple, verts)))


# --- label audit ---------------------------------------------------------------


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes."""
    for box in (a, b):
        if not (box[2] > box[0] and box[3] > box[1]):
            raise ValueError(f"invalid box {tuple(box)}")
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def audit_labels(samples: Sequence[PlateSample], detections: Sequence[Sequence[float]], threshold: float = 0.6):
    """Split samples by whether the detector box agrees with the label (IoU > threshold)."""
    passed, failed = [], []
    for s, det in zip(samples, detections, strict=True):
        (passed if iou(s.bbox, det) > threshold else failed).append(s)
    return passed, failed


# --- manifest --------------------------------------------------------------------

# Field order of every manifest record (JSON object per line).
MANIFEST_FIELDS = ("image", "plate", "layout", "bbox", "vertices", "seed", "width", "height",
                   "split", "category", "clipped")


def split_of(key: str, seed: int = 0, ratios=(8, 1, 1)) -> str:
    """Deterministic train/valid/test bucket for a record key."""
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    bucket = int.from_bytes(digest[:8], "big") % sum(ratios)
    if bucket < ratios[0]:
        return "train"
    return "valid" if bucket < ratios[0] + ratios[1] else "test"


def write_manifest(samples: Iterable[PlateSample], path, split_seed: int | None = None) -> None:
    """Write one JSON record per line; ``split_seed`` (re)assigns 8:1:1 splits."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = asdict(s)
            if split_seed is not None:
                rec["split"] = split_of(s.image or s.plate, split_seed)
            rec["bbox"] = list(rec["bbox"])
            rec["vertices"] = [list(v) for v in rec["vertices"]]
            fh.write(json.dumps({k: rec[k] for k in MANIFEST_FIELDS}, ensure_ascii=False) + "\n")


def read_manifest(path) -> list[PlateSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"not JSON ({exc.msg})") from None
            missing = [k for k in MANIFEST_FIELDS[:8] if k not in rec]
            if missing:
                raise MalformedRecord(lineno, f"missing fields {missing}")
            if len(rec["bbox"]) != 4:
                raise MalformedRecord(lineno, "bbox needs 4 numbers")
            try:
                out.append(PlateSample(**{k: rec[k] for k in MANIFEST_FIELDS if k in rec}))
            except (TypeError, ValueError) as exc:
                raise MalformedRecord(lineno, str(exc)) from None
    return out


# --- random scenes -----------------------------------------------------------------


def procedural_background(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth colour gradient with a few random rectangles and pixel noise."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3)).astype(np.float32)
    t = (xx / width * rng.uniform(-1, 1) + yy / height * rng.uniform(-1, 1)) * 0.5 + 0.5
    img = c0 + (c1 - c0) * np.clip(t, 0, 1)[..., None]
    for _ in range(rng.integers(2, 6)):
        x0, y0 = rng.integers(0, width), rng.integers(0, height)
        x1, y1 = x0 + rng.integers(5, width // 2), y0 + rng.integers(5, height // 2)
        img[y0:y1, x0:x1] = rng.uniform(0, 1, size=3)
    img += rng.normal(0, 0.03, size=img.shape).astype(np.float32)
    return np.clip(img, 0, 1).astype(np.float32)


def random_plate(rng: np.random.Generator, province_weights=None, n: int = 7) -> str:
    provinces = np.array(PROVINCES)
    p = None if province_weights is None else np.asarray(province_weights, dtype=np.float64)
    if p is not None:
        p = p / p.sum()
    head = provinces[rng.choice(len(provinces), p=p)]
    tail = np.array(DIGITS + LETTERS)
    return head + LETTERS[rng.integers(len(LETTERS))] + "".join(rng.choice(tail, size=n - 2))


def random_quad(rng: np.random.Generator, scene=(240, 150), layout="single", distortion=1.0) -> np.ndarray:
    """A convex perspective quad for a plate placed near the scene centre."""
    sw, sh = scene
    aspect = SINGLE_SIZE[0] / SINGLE_SIZE[1] if layout == "single" else DOUBLE_SIZE[0] / DOUBLE_SIZE[1]
    for _ in range(100):
        pw = rng.uniform(0.55, 0.72) * sw
        ph = pw / aspect
        base = np.array([[-pw / 2, -ph / 2], [pw / 2, -ph / 2], [pw / 2, ph / 2], [-pw / 2, ph / 2]])
        ang = np.deg2rad(rng.uniform(-15, 15) * distortion)
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        q = base @ rot.T
        # keystone: shrink one side, plus independent corner jitter
        k = rng.uniform(-0.25, 0.25) * distortion
        if rng.random() < 0.5:
            q[[0, 3], 1] *= 1 - k
            q[[1, 2], 1] *= 1 + k
        else:
            q[[0, 1], 0] *= 1 - k
            q[[3, 2], 0] *= 1 + k
        q += rng.normal(0, 0.04 * ph * distortion, size=q.shape)
        q += np.array([sw / 2, sh / 2]) + rng.uniform(-0.08, 0.08, size=2) * np.array([sw, sh])
        inside = (q[:, 0] > 1).all() and (q[:, 0] < sw - 1).all() and (q[:, 1] > 1).all() and (q[:, 1] < sh - 1).all()
        if inside and bool(geo.quad_is_valid(torch.as_tensor(q))):
            return q
    raise RuntimeError("could not draw a valid quad")


@dataclass
class SceneConfig:
    layout: str = "single"
    scene_size: tuple[int, int] = (240, 150)
    template_scale: float = 0.5
    distortion: float = 1.0
    blur_prob: float = 0.5
    blur_max: float = 1.5
    province_weights: tuple[float, ...] | None = None
    colors: tuple[str, ...] = ("blue",)


def sample_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1)[0])


def make_scene(cfg: SceneConfig, seed: int, background: np.ndarray | None = None, fonts=None):
    """One composited scene and its ground-truth sample, a pure function of ``seed``."""
    rng = np.random.default_rng(seed)
    plate = random_plate(rng, cfg.province_weights)
    color = cfg.colors[rng.integers(len(cfg.colors))]
    spec = PlateSpec(plate, cfg.layout, color, cfg.template_scale)
    tpl, _ = render_plate(spec, fonts, seed=seed)
    if rng.random() < cfg.blur_prob:
        kind = "motion" if rng.random() < 0.5 else "defocus"
        tpl = augment_blur(tpl, kind, rng.uniform(0.3, cfg.blur_max), seed)
    if background is None:
        background = procedural_background(*cfg.scene_size, rng)
    quad = random_quad(rng, (background.shape[1], background.shape[0]), cfg.layout, cfg.distortion)
    return composite(tpl, background, quad, cfg.layout, plate=plate, seed=seed)


def generate(n: int, cfg: SceneConfig, seed: int = 0):
    """Yield ``(scene, sample)`` pairs; sample i depends only on (seed, i)."""
    for i in range(n):
        yield make_scene(cfg, sample_seed(seed, i))


# --- tensors for training ------------------------------------------------------------


def crop_theta(bbox, width: int, height: int) -> torch.Tensor:
    x1, y1, x2, y2 = bbox
    return geo.rect_theta(x1 / width, y1 / height, x2 / width, y2 / height)


def quad_in_crop(vertices, bbox) -> np.ndarray:
    """Vertices expressed in the normalized frame of ``bbox``."""
    x1, y1, x2, y2 = bbox
    v = np.asarray(vertices, dtype=np.float64)
    return (v - [x1, y1]) / [x2 - x1, y2 - y1]


def vertex_crop(scene: torch.Tensor, sample: PlateSample, out_size=(94, 24), upper_width: int = 27) -> torch.Tensor:
    """Rectify the scene with the sample's own vertices into the recognizer strip."""
    norm = torch.as_tensor(np.asarray(sample.vertices) / [sample.width, sample.height])
    ow, oh = out_size
    if sample.layout == "single":
        theta, _ = geo.solve_homography_batch(norm[None])
        return geo.warp(scene[None], theta, ow, oh)[0]
    upper, lower = hexad_quads(norm)
    tu, _ = geo.solve_homography_batch(upper[None])
    tl, _ = geo.solve_homography_batch(lower[None])
    return torch.cat([geo.warp(scene[None], tu, upper_width, oh)[0],
                      geo.warp(scene[None], tl, ow - upper_width, oh)[0]], dim=-1)


@dataclass
class PlateSet:
    """In-memory training tensors.

    ``crops``: bbox crops (N, 3, 64, 128) for the rectifier; ``strips``:
    vertex-rectified strips (N, 3, 24, 94); ``quads``: ground-truth vertices
    in each crop's frame; ``labels``: plate strings.
    """

    crops: torch.Tensor
    strips: torch.Tensor
    quads: torch.Tensor
    labels: list[str]
    layout: str = "single"
    categories: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "PlateSet":
        idx = list(idx)
        return PlateSet(self.crops[idx], self.strips[idx], self.quads[idx],
                        [self.labels[i] for i in idx], self.layout,
                        [self.categories[i] for i in idx] if self.categories else [])

    @classmethod
    def from_scenes(cls, pairs, sigma: float = 4.0, vertex_sigma: float | None = None, seed: int = 0,
                    crop_size=(128, 64), strip_size=(94, 24)) -> "PlateSet":
        crops, strips, quads, labels, cats = [], [], [], [], []
        layout = "single"
        for i, (scene, sample) in enumerate(pairs):
            layout = sample.layout
            noisy = perturb_localization(sample, sigma, sample_seed(seed, i), vertex_sigma)
            img = _to_chw(scene)
            crops.append(geo.warp(img, crop_theta(noisy.bbox, sample.width, sample.height), *crop_size))
            strips.append(vertex_crop(img, noisy, strip_size))
            quads.append(torch.as_tensor(quad_in_crop(sample.vertices, noisy.bbox)))
            labels.append(sample.plate)
            cats.append(sample.category)
        return cls(torch.stack(crops).float(), torch.stack(strips).float(), torch.stack(quads), labels, layout, cats)


def synthetic_set(n: int, cfg: SceneConfig = SceneConfig(), seed: int = 0, sigma: float = 4.0,
                  vertex_sigma: float | None = None) -> PlateSet:
    return PlateSet.from_scenes(generate(n, cfg, seed), sigma, vertex_sigma, seed)

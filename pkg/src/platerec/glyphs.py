"""Procedural glyph bitmaps for rendering plates without font files.

Digits and Latin letters use a 5x7 dot-matrix face. Chinese glyphs get a
fixed pseudo-random 9x9 stroke pattern derived from their code point: not
legible, but stable and distinct, which is all a synthetic recognizer needs.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_DOT_MATRIX = {
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    "A": "01110 10001 10001 11111 10001 10001 10001",
    "B": "11110 10001 10001 11110 10001 10001 11110",
    "C": "01110 10001 10000 10000 10000 10001 01110",
    "D": "11100 10010 10001 10001 10001 10010 11100",
    "E": "11111 10000 10000 11110 10000 10000 11111",
    "F": "11111 10000 10000 11110 10000 10000 10000",
    "G": "01110 10001 10000 10111 10001 10001 01111",
    "H": "10001 10001 10001 11111 10001 10001 10001",
    "J": "00111 00010 00010 00010 00010 10010 01100",
    "K": "10001 10010 10100 11000 10100 10010 10001",
    "L": "10000 10000 10000 10000 10000 10000 11111",
    "M": "10001 11011 10101 10101 10001 10001 10001",
    "N": "10001 10001 11001 10101 10011 10001 10001",
    "P": "11110 10001 10001 11110 10000 10000 10000",
    "Q": "01110 10001 10001 10001 10101 10010 01101",
    "R": "11110 10001 10001 11110 10100 10010 10001",
    "S": "01111 10000 10000 01110 00001 00001 11110",
    "T": "11111 00100 00100 00100 00100 00100 00100",
    "U": "10001 10001 10001 10001 10001 10001 01110",
    "V": "10001 10001 10001 10001 10001 01010 00100",
    "W": "10001 10001 10001 10101 10101 10101 01010",
    "X": "10001 10001 01010 00100 01010 10001 10001",
    "Y": "10001 10001 01010 00100 00100 00100 00100",
    "Z": "11111 00001 00010 00100 01000 10000 11111",
}


_NOT_A_GLYPH = "\U0010fffd"


class MissingGlyphFont(LookupError):
    pass


def _chinese_pattern(ch: str) -> np.ndarray:
    rng = np.random.default_rng(ord(ch))
    grid = np.zeros((9, 9), dtype=bool)
    # a few horizontal and vertical strokes plus scattered dots
    for row in rng.choice(9, size=3, replace=False):
        a, b = sorted(rng.choice(10, size=2, replace=False))
        grid[row, a:b] = True
    for col in rng.choice(9, size=3, replace=False):
        a, b = sorted(rng.choice(10, size=2, replace=False))
        grid[a:b, col] = True
    grid |= rng.random((9, 9)) < 0.12
    return grid


@lru_cache(maxsize=None)
def bitmap(ch: str) -> np.ndarray:
    """Boolean glyph bitmap; raises MissingGlyphFont for unsupported glyphs."""
    if ch in _DOT_MATRIX:
        rows = _DOT_MATRIX[ch].split()
        return np.array([[c == "1" for c in r] for r in rows], dtype=bool)
    if ord(ch) > 0x2E80:
        return _chinese_pattern(ch)
    raise MissingGlyphFont(ch)


def render_glyph(ch: str, width: int, height: int, font_path=None) -> np.ndarray:
    """Anti-aliased glyph coverage in [0, 1], shape (height, width)."""
    from PIL import Image, ImageDraw, ImageFont

    width, height = max(1, width), max(1, height)
    if font_path is not None:
        font = ImageFont.truetype(str(font_path), size=max(4, height))
        mask = font.getmask(ch)
        # fonts draw absent glyphs as their .notdef box; compare with a code point no font defines
        if mask.getbbox() is None or bytes(mask) == bytes(font.getmask(_NOT_A_GLYPH)):
            raise MissingGlyphFont(f"{ch!r} not in {font_path}")
        canvas = Image.new("L", (width * 2, height * 2), 0)
        ImageDraw.Draw(canvas).text((0, 0), ch, fill=255, font=font)
        box = canvas.getbbox() or (0, 0, 1, 1)
        img = canvas.crop(box).resize((width, height), Image.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.0
    bits = bitmap(ch).astype(np.uint8) * 255
    up = np.kron(bits, np.ones((8, 8), dtype=np.uint8))
    img = Image.fromarray(up).resize((width, height), Image.BOX)
    return np.asarray(img, dtype=np.float32) / 255.0

"""The 73-symbol plate alphabet and its text-file serialization."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

PROVINCES = (
    "京", "沪", "津", "渝", "冀", "晋", "蒙", "辽", "吉", "黑", "苏",
    "浙", "皖", "闽", "赣", "鲁", "豫", "鄂", "湘", "粤", "桂", "琼",
    "川", "贵", "云", "藏", "陕", "甘", "青", "宁", "新",
)
SPECIALS = ("学", "警", "港", "澳", "挂", "使", "领")
DIGITS = tuple("0123456789")
LETTERS = tuple("ABCDEFGHJKLMNPQRSTUVWXYZ")  # no I, O
BLANK = "-"

DEFAULT_SYMBOLS = PROVINCES + SPECIALS + DIGITS + LETTERS + (BLANK,)
FILE_HEADER = "#platerec-charset v1"


class UnknownGlyph(KeyError):
    pass


class CharsetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Charset:
    symbols: tuple[str, ...] = DEFAULT_SYMBOLS
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise CharsetFormatError("duplicate symbols in charset")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank_id(self) -> int:
        return len(self.symbols) - 1

    @property
    def chinese_ids(self) -> range:
        return range(len(PROVINCES) + len(SPECIALS))

    def encode(self, plate: str) -> list[int]:
        ids = []
        for ch in plate:
            i = self._index.get(ch)
            if i is None or i == self.blank_id:
                raise UnknownGlyph(ch)
            ids.append(i)
        if not ids:
            raise ValueError("empty plate string")
        return ids

    def decode_ids(self, ids) -> str:
        return "".join(self.symbols[int(i)] for i in ids)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.symbols).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        text = FILE_HEADER + "\n" + "\n".join(self.symbols) + "\n"
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Charset":
        """Read a charset file: a header line, then one glyph per line (ID = line - 2)."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != FILE_HEADER:
            raise CharsetFormatError(f"{path}: missing '{FILE_HEADER}' header")
        symbols = tuple(line for line in lines[1:] if line != "")
        return cls(symbols)


DEFAULT_CHARSET = Charset()

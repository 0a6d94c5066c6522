"""Plate-level metrics, error taxonomy, lexicon-page export and a latency probe."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .charset import DEFAULT_CHARSET, Charset
from .ctc import collapse


class EmptyEvalSet(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    gt: str
    pred: str
    layout: str = "single"
    category: str = "standard"  # or "special"

    @property
    def correct(self) -> bool:
        return self.gt == self.pred


@dataclass
class ErrorBreakdown:
    special: int = 0
    chinese: int = 0
    mis_increase: int = 0
    missing: int = 0
    confusion: int = 0

    @property
    def total(self) -> int:
        return self.special + self.chinese + self.mis_increase + self.missing + self.confusion

    def as_dict(self) -> dict:
        return {"special_category": self.special, "chinese_chars": self.chinese,
                "mis_increase": self.mis_increase, "missing_chars": self.missing,
                "confusion": self.confusion, "total": self.total}


def aligned_matches(gt: str, pred: str) -> int:
    """Correct characters of ``pred`` against ``gt``.

    Equal lengths compare position by position. Otherwise a minimum-edit
    alignment is used, preferring the alignment with the most matches.
    """
    if len(gt) == len(pred):
        return sum(a == b for a, b in zip(gt, pred))
    n, m = len(gt), len(pred)
    # cells hold (edits, -matches); lexicographic min
    dp = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = (i, 0)
    for j in range(1, m + 1):
        dp[0][j] = (j, 0)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            e, neg = dp[i - 1][j - 1]
            diag = (e, neg - 1) if gt[i - 1] == pred[j - 1] else (e + 1, neg)
            up = (dp[i - 1][j][0] + 1, dp[i - 1][j][1])
            left = (dp[i][j - 1][0] + 1, dp[i][j - 1][1])
            dp[i][j] = min(diag, up, left)
    return -dp[n][m][1]


def accuracy_metrics(records: Sequence[EvalRecord]) -> tuple[float, float, float]:
    """Return ``(accuracy_7c, accuracy_6c, cp)`` as fractions in [0, 1]."""
    if not records:
        raise EmptyEvalSet("no records to evaluate")
    n = len(records)
    acc7 = sum(r.gt == r.pred for r in records) / n
    acc6 = sum(r.gt[1:] == r.pred[1:] for r in records) / n
    cp = sum(aligned_matches(r.gt, r.pred) for r in records) / sum(len(r.gt) for r in records)
    return acc7, acc6, cp


def categorize(record: EvalRecord) -> str | None:
    """Error category of one record, or None when it is correct."""
    if record.correct:
        return None
    if record.category == "special":
        return "special"
    if len(record.pred) > len(record.gt):
        return "mis_increase"
    if len(record.pred) < len(record.gt):
        return "missing"
    if record.pred[:1] != record.gt[:1]:
        return "chinese"
    return "confusion"


def categorize_errors(records: Sequence[EvalRecord]) -> ErrorBreakdown:
    out = ErrorBreakdown()
    for r in records:
        cat = categorize(r)
        if cat is not None:
            setattr(out, cat, getattr(out, cat) + 1)
    return out


def write_report(records: Sequence[EvalRecord], path) -> dict:
    """CSV with the three accuracies and the error breakdown; returns the same values."""
    acc7, acc6, cp = accuracy_metrics(records)
    report = {"n": len(records), "accuracy_7c": acc7, "accuracy_6c": acc6, "cp": cp,
              **categorize_errors(records).as_dict()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in report.items():
            w.writerow([k, v])
    return report


# --- lexicon pages -----------------------------------------------------------------


def _label(i: int, charset: Charset) -> str:
    g = charset.symbols[i]
    return f"{i} {g}" if g.isascii() else str(i)


def export_pages(pages: torch.Tensor, out_dir, charset: Charset = DEFAULT_CHARSET,
                 select: Sequence[int] | None = None, stem: str = "pages") -> tuple[Path, Path]:
    """Write a heatmap grid PNG and a CSV of pooled frame logits for one plate.

    ``pages`` is (C, H, W). The CSV has one row per class with its W pooled
    values, then an ``argmax`` row of per-frame winning IDs and a ``decoded``
    row holding the collapsed ID sequence.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arr = pages.detach().cpu().double().numpy()
    pooled = arr.mean(axis=1)
    argmax = pooled.argmax(axis=0)
    decoded = collapse(argmax.tolist(), charset.blank_id)

    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "glyph"] + [f"f{t}" for t in range(pooled.shape[1])])
        for k, row in enumerate(pooled):
            w.writerow([k, charset.symbols[k]] + [repr(float(v)) for v in row])
        w.writerow(["argmax", ""] + [int(v) for v in argmax])
        w.writerow(["decoded", charset.decode_ids(decoded)] + decoded)

    idx = list(range(arr.shape[0])) if select is None else list(select)
    cols = min(8, len(idx))
    rows = (len(idx) + cols - 1) // cols
    lo, hi = float(arr[idx].min()), float(arr[idx].max())
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 0.9 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, k in zip(axes.flat, idx):
        ax.imshow(arr[k], cmap="viridis", vmin=lo, vmax=hi if hi > lo else lo + 1, aspect="auto")
        ax.set_title(_label(k, charset), fontsize=7)
    fig.tight_layout()
    png_path = out / f"{stem}.png"
    fig.savefig(png_path, dpi=80)
    plt.close(fig)
    return png_path, csv_path


# --- latency probe -------------------------------------------------------------------


@torch.no_grad()
def bench(model, inputs: torch.Tensor, repetitions: int = 5, warmup: int = 1, batch_size: int = 1,
          source: str = "crops") -> dict:
    """Per-image latency in milliseconds over ``repetitions`` timed passes (warmup excluded)."""
    if warmup < 1:
        raise ValueError("need at least one warmup pass")
    model.eval()

    def one_pass():
        for i in range(0, len(inputs), batch_size):
            model(inputs[i:i + batch_size], source)

    for _ in range(warmup):
        one_pass()
    per_image = []
    for _ in range(repetitions):
        t = time.perf_counter()
        one_pass()
        per_image.append((time.perf_counter() - t) * 1000 / len(inputs))
    ordered = sorted(per_image)
    p95 = ordered[min(len(ordered) - 1, int(np.ceil(0.95 * len(ordered))) - 1)]
    return {
        "repetitions": repetitions, "batch_size": batch_size, "images": len(inputs),
        "mean_ms": statistics.fmean(per_image), "median_ms": statistics.median(per_image),
        "p95_ms": p95, "stdev_ms": statistics.stdev(per_image) if len(per_image) > 1 else 0.0,
        "fps": 1000 / statistics.fmean(per_image),
    }

"""CTC loss, Focal CTC weighting and greedy decoding over frame logits.

Frame logits are laid out class-major, ``(C, T)`` for one plate or
``(N, C, T)`` for a batch, matching the pooled lexicon pages.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .charset import Charset

_NEG = -1e30
P_MIN = 1e-7


class InfeasibleTarget(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.5
    gamma: float = 2.0
    p_mode: str = "greedy-product"  # or "exp-neg-ctc"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.p_mode not in ("greedy-product", "exp-neg-ctc"):
            raise ValueError(f"unknown p_mode {self.p_mode!r}")


def min_frames(target: Sequence[int]) -> int:
    """Shortest frame count that can emit ``target`` (repeats need a blank between)."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _batched(logits: torch.Tensor, targets):
    if logits.dim() == 2:
        return logits.unsqueeze(0), [list(targets)], True
    return logits, [list(t) for t in targets], False


def ctc_loss(logits: torch.Tensor, targets, blank: int | None = None) -> torch.Tensor:
    """Negative log-probability of ``targets`` under CTC, via the forward algorithm.

    ``logits`` is (C, T) with one target sequence, or (N, C, T) with a list of
    N sequences; the result is a scalar or an (N,) tensor respectively.
    ``blank`` defaults to the last class.
    """
    logits, targets, single = _batched(logits, targets)
    n, c, t_len = logits.shape
    blank = c - 1 if blank is None else blank
    for tgt in targets:
        if not tgt:
            raise ValueError("empty target")
        if min_frames(tgt) > t_len:
            raise InfeasibleTarget(f"target of length {len(tgt)} cannot fit {t_len} frames")

    logp = torch.log_softmax(logits, dim=1)  # (N, C, T)
    s_max = 2 * max(len(tgt) for tgt in targets) + 1
    ext = torch.full((n, s_max), blank, dtype=torch.long, device=logits.device)
    lengths = torch.empty(n, dtype=torch.long)
    skip = torch.zeros((n, s_max), dtype=torch.bool)
    for i, tgt in enumerate(targets):
        lab = torch.tensor(tgt, dtype=torch.long)
        ext[i, 1 : 2 * len(tgt) : 2] = lab
        lengths[i] = 2 * len(tgt) + 1
        # a label may be reached directly from two states back unless it repeats
        for j in range(1, len(tgt)):
            skip[i, 2 * j + 1] = tgt[j] != tgt[j - 1]
    skip = skip.to(logits.device)

    # emission log-probs along the extended label: (N, T, S)
    emit = logp.gather(1, ext[:, :, None].expand(n, s_max, t_len)).transpose(1, 2)
    neg = torch.full((n, 1), _NEG, dtype=logp.dtype, device=logp.device)
    neg2 = torch.full((n, 2), _NEG, dtype=logp.dtype, device=logp.device)

    alpha = torch.full((n, s_max), _NEG, dtype=logp.dtype, device=logp.device)
    alpha = torch.cat([emit[:, 0, :2], alpha[:, 2:]], dim=1)
    for t in range(1, t_len):
        stay = alpha
        step = torch.cat([neg, alpha[:, :-1]], dim=1)
        jump = torch.cat([neg2, alpha[:, :-2]], dim=1)
        jump = torch.where(skip, jump, torch.full_like(jump, _NEG))
        alpha = torch.logsumexp(torch.stack([stay, step, jump]), dim=0) + emit[:, t]

    idx = lengths.to(logits.device)
    last = alpha.gather(1, (idx - 1)[:, None])
    prev = alpha.gather(1, (idx - 2)[:, None])
    loss = -torch.logsumexp(torch.cat([last, prev], dim=1), dim=1)
    return loss[0] if single else loss


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def ctc_bruteforce(logits, target: Sequence[int], blank: int | None = None) -> float:
    """Exact CTC loss by enumerating every frame path. For testing only."""
    logits = np.asarray(logits.detach() if torch.is_tensor(logits) else logits, dtype=np.float64)
    c, t_len = logits.shape
    blank = c - 1 if blank is None else blank
    if c**t_len > 10**7:
        raise TooLarge(f"{c}^{t_len} paths")
    z = logits - logits.max(axis=0)
    probs = np.exp(z) / np.exp(z).sum(axis=0)
    target = list(target)
    total = []
    for path in itertools.product(range(c), repeat=t_len):
        if collapse(path, blank) == target:
            total.append(math.prod(probs[k, t] for t, k in enumerate(path)))
    if not total:
        return math.inf
    return -math.log(math.fsum(total))


def greedy_ids(logits: torch.Tensor, blank: int | None = None):
    """Argmax per frame then CTC collapse; (C, T) -> list, (N, C, T) -> list of lists."""
    c = logits.shape[-2]
    blank = c - 1 if blank is None else blank
    best = logits.argmax(dim=-2)
    if best.dim() == 1:
        return collapse(best.tolist(), blank)
    return [collapse(row, blank) for row in best.tolist()]


def greedy_decode(logits: torch.Tensor, charset: Charset):
    ids = greedy_ids(logits, charset.blank_id)
    if logits.dim() == 2:
        return charset.decode_ids(ids)
    return [charset.decode_ids(row) for row in ids]


def plate_probability(logits: torch.Tensor, cfg: FocalConfig = FocalConfig(), ctc: torch.Tensor | None = None):
    """Probability that the plate is read correctly, clamped to [1e-7, 1].

    ``greedy-product`` multiplies, over frames, the softmax probability of the
    winning class. ``exp-neg-ctc`` scores the greedy-decoded string with CTC.
    """
    if cfg.p_mode == "greedy-product":
        probs = torch.softmax(logits, dim=-2)
        p = torch.exp(torch.log(probs.max(dim=-2).values).sum(dim=-1))
    else:
        decoded = greedy_ids(logits)
        batch = logits.dim() == 3
        rows = decoded if batch else [decoded]
        lg = logits if batch else logits.unsqueeze(0)
        vals = []
        for row, lgi in zip(rows, lg):
            vals.append(torch.exp(-ctc_loss(lgi, row)) if row else torch.exp(torch.log_softmax(lgi, 0)[-1].sum()))
        p = torch.stack(vals) if batch else vals[0]
    return p.clamp(P_MIN, 1.0)


def focal_weight(p, cfg: FocalConfig = FocalConfig()):
    return cfg.alpha * (1.0 - p) ** cfg.gamma


def focal_ctc_loss(logits: torch.Tensor, targets, cfg: FocalConfig = FocalConfig(), blank: int | None = None):
    """``alpha * (1 - p)**gamma * ctc``; the weight is treated as a constant."""
    loss = ctc_loss(logits, targets, blank)
    with torch.no_grad():
        p = plate_probability(logits, cfg)
    return focal_weight(p, cfg) * loss

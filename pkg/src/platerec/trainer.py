"""Three-stage weakly supervised training and checkpoint persistence.

Stage 1 trains the recognizer on vertex-rectified strips with the rectifier
frozen. Stage 2 freezes the recognizer and trains the rectifier on bbox crops,
its only signal being the recognition loss. Stage 3 fine-tunes both.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from . import geometry as geo
from .aflnet import AFLNet, AFLNetConfig
from .charset import DEFAULT_CHARSET, Charset
from .ctc import FocalConfig, ctc_loss, focal_ctc_loss, greedy_decode
from .datagen import PlateSet
from .ptr import PTR, PTRConfig

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
GROUPS = ("rectifier", "backbone", "head", "attention")
RECOGNIZER_GROUPS = ("backbone", "head", "attention")


class DivergenceGuard(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CharsetMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


class ConfigError(ValueError):
    pass


# --- model ---------------------------------------------------------------------


class PlateModel(nn.Module):
    """Rectifier followed by recognizer; either half can be switched off for ablations."""

    def __init__(self, ptr_cfg: PTRConfig = PTRConfig(), rec_cfg: AFLNetConfig = AFLNetConfig(), use_ptr: bool = True):
        super().__init__()
        self.ptr = PTR(ptr_cfg)
        self.recognizer = AFLNet(rec_cfg)
        self.use_ptr = use_ptr

    def group(self, name: str) -> nn.Module:
        return {
            "rectifier": self.ptr,
            "backbone": self.recognizer.backbone,
            "head": self.recognizer.head,
            "attention": self.recognizer.lpca,
        }[name]

    def rectify(self, crops: torch.Tensor) -> torch.Tensor:
        if self.use_ptr:
            return self.ptr(crops)[0]
        w, h = self.ptr.cfg.output_size
        return geo.resize(crops, w, h)

    def forward(self, x: torch.Tensor, source: str = "crops") -> torch.Tensor:
        """Frame logits for bbox ``crops`` or already rectified ``strips``."""
        if source == "crops":
            x = self.rectify(x)
        return self.recognizer(x)


def group_checksum(model: PlateModel, names=RECOGNIZER_GROUPS) -> str:
    import hashlib

    h = hashlib.sha256()
    for name in names:
        for key, t in sorted(model.group(name).state_dict().items()):
            h.update(key.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# --- plans -----------------------------------------------------------------------


@dataclass
class StagePlan:
    name: str
    frozen: tuple[str, ...]
    lr: float
    epochs: int
    source: str  # "strips" (vertex-rectified) or "crops" (bbox)
    loss: str = "focal"  # "ctc" or "focal"
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9


@dataclass
class TrainPlan:
    stages: list[StagePlan]
    focal: FocalConfig = FocalConfig()

    def stage(self, n: int) -> StagePlan:
        if not 1 <= n <= len(self.stages):
            raise ConfigError(f"no stage {n}; plan has {len(self.stages)}")
        return self.stages[n - 1]


def default_plan(epochs=(30, 30, 20), lrs=(1e-3, 1e-3, 5e-4), batch_size: int = 32,
                 loss: str = "focal", seed: int = 0, beta1: float = 0.9,
                 focal: FocalConfig = FocalConfig()) -> TrainPlan:
    common = dict(loss=loss, batch_size=batch_size, seed=seed, beta1=beta1)
    return TrainPlan([
        StagePlan("stage1", ("rectifier",), lrs[0], epochs[0], "strips", **common),
        StagePlan("stage2", RECOGNIZER_GROUPS, lrs[1], epochs[1], "crops", **common),
        StagePlan("stage3", (), lrs[2], epochs[2], "crops", **common),
    ], focal)


# --- config files ----------------------------------------------------------------

_ALIASES = {
    "batch": "batch_size", "batchsize": "batch_size", "epoch": "epochs",
    "learning_rate": "lr", "learningrate": "lr", "momentum": "beta1",
}


def parse_config(text: str) -> dict[str, str]:
    """``key = value`` (or ``key: value``) lines; '#' starts a comment; keys are case-insensitive."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split(sep, 1))
        key = key.lower().replace(" ", "_").replace("-", "_")
        out[_ALIASES.get(key, key)] = value
    return out


def _floats(value: str) -> list[float]:
    parts = value.replace(" and ", ",").replace(";", ",").split(",")
    return [float(p) for p in parts if p.strip()]


def plan_from_config(cfg: dict) -> TrainPlan:
    """Build a plan from parsed config; Table-1 style values such as
    ``Learning Rate = 0.001 and 0.0005`` are accepted (first rate for stages 1-2,
    second for stage 3)."""
    try:
        if cfg.get("optimizer", "adam").lower() != "adam":
            raise ConfigError(f"unsupported optimizer {cfg['optimizer']!r}")
        epochs = [int(e) for e in _floats(cfg.get("epochs", "30,30,20"))]
        if len(epochs) == 1:
            epochs *= 3
        lrs = _floats(cfg.get("lr", "0.001 and 0.0005"))
        lrs = {1: lrs * 3, 2: [lrs[0], lrs[0], lrs[1]], 3: lrs}.get(len(lrs))
        if lrs is None or len(epochs) != 3:
            raise ConfigError("expected 1-3 learning rates and 1 or 3 epoch counts")
        focal = FocalConfig(float(cfg.get("alpha", 0.5)), float(cfg.get("gamma", 2.0)),
                            cfg.get("p_mode", "greedy-product"))
        return default_plan(tuple(epochs), tuple(lrs), int(cfg.get("batch_size", 32)),
                            cfg.get("loss", "focal").lower(), int(cfg.get("seed", 0)),
                            float(cfg.get("beta1", 0.9)), focal)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


# --- training ------------------------------------------------------------------------


def set_frozen(model: PlateModel, frozen) -> list[nn.Parameter]:
    """Freeze the named groups (no grads, eval-mode BN/dropout); return trainable params."""
    model.train()
    trainable = []
    for name in GROUPS:
        mod = model.group(name)
        is_frozen = name in frozen or (name == "rectifier" and not model.use_ptr)
        for p in mod.parameters():
            p.requires_grad_(not is_frozen)
            if not is_frozen:
                trainable.append(p)
        if is_frozen:
            mod.eval()
    return trainable


def sequence_loss(logits, targets, kind: str, focal: FocalConfig) -> torch.Tensor:
    if kind == "ctc":
        return ctc_loss(logits, targets).mean()
    if kind == "focal":
        return focal_ctc_loss(logits, targets, focal).mean()
    raise ConfigError(f"unknown loss {kind!r}")


@torch.no_grad()
def predict(model: PlateModel, data: PlateSet, source: str = "crops", batch_size: int = 128,
            charset: Charset = DEFAULT_CHARSET) -> list[str]:
    was_training = model.training
    model.eval()
    x = data.crops if source == "crops" else data.strips
    out = []
    for i in range(0, len(data), batch_size):
        out += greedy_decode(model(x[i:i + batch_size], source), charset)
    model.train(was_training)
    return out


def sequence_accuracy(model, data: PlateSet, source: str = "crops") -> float:
    preds = predict(model, data, source)
    return sum(p == t for p, t in zip(preds, data.labels)) / max(1, len(data))


@torch.no_grad()
def corner_error(model: PlateModel, data: PlateSet, batch_size: int = 128) -> float:
    """Mean distance between predicted and ground-truth vertices, in crop-normalized units."""
    was_training = model.training
    model.eval()
    errs = []
    for i in range(0, len(data), batch_size):
        verts = model.ptr.vertices(data.crops[i:i + batch_size]).double()
        errs.append((verts - data.quads[i:i + batch_size]).norm(dim=-1).mean(dim=-1))
    model.train(was_training)
    return float(torch.cat(errs).mean())


def train_stage(model: PlateModel, stage: StagePlan, data: PlateSet, focal: FocalConfig = FocalConfig(),
                charset: Charset = DEFAULT_CHARSET, stop_at_accuracy: float | None = None,
                on_epoch: Callable[[dict], None] | None = None):
    """Run one stage in place. Returns ``(metrics, optimizer)``.

    With ``stop_at_accuracy`` the eval-mode training accuracy is measured after
    every epoch and the stage ends once it is reached.
    """
    torch.manual_seed(stage.seed)
    gen = torch.Generator().manual_seed(stage.seed)
    params = set_frozen(model, stage.frozen)
    opt = torch.optim.Adam(params, lr=stage.lr, betas=(stage.beta1, 0.999)) if params else None
    x_all = data.crops if stage.source == "crops" else data.strips
    targets_all = [charset.encode(s) for s in data.labels]
    metrics = []
    for epoch in range(1, stage.epochs + 1):
        order = torch.randperm(len(data), generator=gen).tolist()
        total, correct, seen = 0.0, 0, 0
        for i in range(0, len(order), stage.batch_size):
            idx = order[i:i + stage.batch_size]
            logits = model(x_all[idx], stage.source)
            targets = [targets_all[j] for j in idx]
            loss = sequence_loss(logits, targets, stage.loss, focal)
            if not torch.isfinite(loss):
                raise DivergenceGuard(f"{stage.name} epoch {epoch}: non-finite loss {loss.item()}")
            if opt is not None:
                opt.zero_grad()
                loss.backward()
                opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
            correct += sum(p == data.labels[j] for p, j in zip(greedy_decode(logits.detach(), charset), idx))
        row = {"epoch": epoch, "stage": stage.name, "loss": total / seen, "seq_acc": correct / seen}
        if stop_at_accuracy is not None:
            row["seq_acc"] = sequence_accuracy(model, data, stage.source)
            set_frozen(model, stage.frozen)
        metrics.append(row)
        log.info("%s epoch %d loss %.4f acc %.3f", stage.name, epoch, row["loss"], row["seq_acc"])
        if on_epoch:
            on_epoch(row)
        if stop_at_accuracy is not None and row["seq_acc"] >= stop_at_accuracy:
            break
    model.eval()
    return metrics, opt


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "stage", "loss", "seq_acc"], extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


# --- checkpoints -------------------------------------------------------------------------


@dataclass
class Checkpoint:
    groups: dict
    ptr_cfg: dict
    rec_cfg: dict
    use_ptr: bool = True
    charset: tuple[str, ...] = DEFAULT_CHARSET.symbols
    charset_hash: str = DEFAULT_CHARSET.digest()
    optimizer: dict | None = None
    stage: str = ""
    rng_state: torch.Tensor | None = None
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: PlateModel, opt=None, stage: str = "", charset: Charset = DEFAULT_CHARSET):
        groups = {name: {k: v.detach().clone() for k, v in model.group(name).state_dict().items()} for name in GROUPS}
        return cls(groups=groups, ptr_cfg=asdict(model.ptr.cfg), rec_cfg=asdict(model.recognizer.cfg),
                   use_ptr=model.use_ptr, charset=charset.symbols, charset_hash=charset.digest(),
                   optimizer=opt.state_dict() if opt is not None else None, stage=stage,
                   rng_state=torch.get_rng_state())

    def build_model(self) -> PlateModel:
        ptr_cfg = {**self.ptr_cfg, "input_size": tuple(self.ptr_cfg["input_size"]),
                   "output_size": tuple(self.ptr_cfg["output_size"])}
        rec_cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in self.rec_cfg.items()}
        model = PlateModel(PTRConfig(**ptr_cfg), AFLNetConfig(**rec_cfg), self.use_ptr)
        for name in GROUPS:
            model.group(name).load_state_dict(self.groups[name])
        model.eval()
        return model


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    payload = asdict(ckpt)
    payload["format"] = "platerec-checkpoint"
    payload["index"] = {name: sorted(ckpt.groups[name]) for name in GROUPS}
    torch.save(payload, path)


def load_checkpoint(path, charset: Charset | None = None) -> Checkpoint:
    """Load and validate; ``charset`` (if given) must hash to the stored charset."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch.load surfaces junk input as many unrelated types
        raise CorruptFile(f"{path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != "platerec-checkpoint":
        raise CorruptFile(f"{path}: not a checkpoint")
    if payload.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: version {payload.get('version')} != {FORMAT_VERSION}")
    if charset is not None and charset.digest() != payload["charset_hash"]:
        raise CharsetMismatch(f"{path}: charset hash differs from the checkpoint's")
    payload.pop("format")
    payload.pop("index", None)
    payload["charset"] = tuple(payload["charset"])
    return Checkpoint(**payload)


def train_full(plan: TrainPlan, data: PlateSet, model: PlateModel | None = None, out_dir=None,
               stages=(1, 2, 3), charset: Charset = DEFAULT_CHARSET):
    """Run the requested stages in order; writes a checkpoint per stage when ``out_dir`` is set.

    Returns ``(checkpoint, model, metrics)``.
    """
    model = model or PlateModel(PTRConfig(layout=data.layout))
    metrics, ckpt = [], None
    out = Path(out_dir) if out_dir else None
    for n in stages:
        stage = plan.stage(n)
        rows, opt = train_stage(model, stage, data, plan.focal, charset)
        metrics += rows
        ckpt = Checkpoint.from_model(model, opt, stage.name, charset)
        if out:
            save_checkpoint(out / f"{stage.name}.ckpt", ckpt)
    if out:
        write_metrics(metrics, out / "metrics.csv")
    return ckpt, model, metrics


def total_parameters(model: PlateModel) -> int:
    return sum(p.numel() for p in model.parameters())

"""Training objective (per-path losses, ordered and Hungarian assignment,
KL term) and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import nn_core as nc
from .model import Batch, ModelConfig, Prediction, SvgVAE, build_model
from .nn_core import OptimConfig, ParamStore, Tensor
from .svg_io import CommandKind
from .tensor_repr import SLOT_TABLE, SvgTensor

log = logging.getLogger(__name__)
K = CommandKind
ASSIGNMENTS = ("ordered", "hungarian")
LOG_COLUMNS = ("epoch", "step", "loss_total", "loss_vis", "loss_fill", "loss_cmd", "loss_args",
               "kl", "lr", "re_holdout")


@dataclass(frozen=True)
class LossWeights:
    w_vis: float = 1.0
    w_fill: float = 1.0
    w_cmd: float = 1.0
    w_args: float = 1.0
    w_kl: float = 0.01

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


# ---------------------------------------------------------------------------
# Assignment


def hungarian_assignment(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (Kuhn-Munkres with
    potentials, O(n^3)). Returns ``perm`` with ``perm[row] = column``."""
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix has non-finite entries")
    n = c.shape[0]
    # 1-based arrays; column 0 is a virtual start column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)   # match[col] = row
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    return perm


def ordered_assignment(gt: SvgTensor | Batch, index: int = 0) -> np.ndarray:
    """``perm[slot] = ground-truth path``: visible paths sorted by start
    (y, x), ties by original index, then invisible paths in index order."""
    if isinstance(gt, Batch):
        visible = gt.visible[index].numpy()
        starts = gt.args[index, :, 0].numpy()
    else:
        visible, starts = gt.visible, gt.args[:, 0]
    idx = np.arange(len(visible))
    vis = sorted(idx[visible], key=lambda i: (starts[i, 5], starts[i, 4], i))
    return np.array(vis + list(idx[~visible]), dtype=int)


# ---------------------------------------------------------------------------
# Losses


def args_term_count(kind: int) -> int:
    """Number of argument cross-entropy terms a ground-truth command adds."""
    return int(SLOT_TABLE[kind].sum())


def _ce_pairs(logits: Tensor, target: Tensor) -> Tensor:
    """Cross-entropy of every prediction slot against every ground-truth
    path. logits [B, P^, ..., n], target [B, P, ...] -> [B, P^, P, ...]."""
    logp = F.log_softmax(logits, -1)
    b, ph = logp.shape[:2]
    p = target.shape[1]
    rest = logp.shape[2:-1]
    lp = logp.unsqueeze(2).expand(b, ph, p, *rest, logp.shape[-1])
    tg = target.unsqueeze(1).expand(b, ph, p, *rest).unsqueeze(-1)
    return -lp.gather(-1, tg).squeeze(-1)


def pairwise_losses(pred: Prediction, gt: Batch, w: LossWeights) -> dict[str, Tensor]:
    """Per-path loss L[b, i_hat, i] and its weighted components.

    Visibility CE is always counted; fill, command and argument terms are
    multiplied by the ground-truth visibility.
    """
    vis = gt.visible.to(pred.cmd_logits.dtype)[:, None, :]          # [B, 1, P]
    ce_cmd = _ce_pairs(pred.cmd_logits, gt.cmd)                      # [B, P^, P, C]
    ce_args = _ce_pairs(pred.arg_logits, gt.args.clamp_max(256))     # [B, P^, P, C, 6]
    used = torch.from_numpy(SLOT_TABLE)[gt.cmd].to(ce_args.dtype)    # [B, P, C, 6]
    loss_cmd = w.w_cmd * ce_cmd.sum(-1) * vis
    loss_args = w.w_args * (ce_args * used.unsqueeze(1)).sum((-1, -2)) * vis
    out = {"cmd": loss_cmd, "args": loss_args}
    if pred.visible_logits is not None:
        out["vis"] = w.w_vis * _ce_pairs(pred.visible_logits, gt.visible.long())
        out["fill"] = w.w_fill * _ce_pairs(pred.fill_logits, gt.fill) * vis
    else:
        zero = torch.zeros_like(loss_cmd)
        out["vis"], out["fill"] = zero, zero
    out["total"] = out["vis"] + out["fill"] + out["cmd"] + out["args"]
    return out


def _single(pred: Prediction, gt: SvgTensor | Batch) -> tuple[Prediction, Batch]:
    if isinstance(gt, SvgTensor):
        gt = Batch.of([gt])
    return pred, gt


def path_loss(pred: Prediction, gt: SvgTensor | Batch, i_hat: int, i: int,
              w: LossWeights = LossWeights(), index: int = 0) -> Tensor:
    pred, gt = _single(pred, gt)
    return pairwise_losses(pred, gt, w)["total"][index, i_hat, i]


def args_loss(pred: Prediction, gt: SvgTensor | Batch, i_hat: int, i: int, j: int,
              index: int = 0) -> Tensor:
    """Argument CE for one command: endpoint terms for m/l/c, control-point
    terms for c only, nothing for z/EOS."""
    pred, gt = _single(pred, gt)
    logp = F.log_softmax(pred.arg_logits[index, i_hat, j], -1)     # [6, 257]
    target = gt.args[index, i, j].clamp_max(256)
    used = torch.from_numpy(SLOT_TABLE[int(gt.cmd[index, i, j])])
    terms = -logp.gather(-1, target[:, None]).squeeze(-1)
    return (terms * used.to(terms.dtype)).sum()


def kl_divergence(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, per sample."""
    return 0.5 * (mu ** 2 + sigma ** 2 - 1 - torch.log(sigma ** 2)).sum(-1)


def assignments(pairwise: Tensor, gt: Batch, mode: str) -> np.ndarray:
    if mode not in ASSIGNMENTS:
        raise ValueError(f"assignment must be one of {ASSIGNMENTS}, got {mode!r}")
    if mode == "ordered":
        return np.stack([ordered_assignment(gt, b) for b in range(len(gt))])
    cost = pairwise.detach().double().cpu().numpy()
    return np.stack([hungarian_assignment(c) for c in cost])


def total_loss(pred: Prediction, gt: Batch | SvgTensor, mode: str = "ordered",
               w: LossWeights = LossWeights()) -> tuple[Tensor, dict[str, float]]:
    """KL weight times the KL term plus the per-path losses summed over
    prediction slots under the chosen assignment; averaged over the batch.

    One-stage predictions (no visibility head) are scored against the
    flattened ground truth with the identity assignment.
    """
    pred, gt = _single(pred, gt)
    if pred.visible_logits is None:
        gt = gt.flattened(pred.cmd_logits.shape[2])
        mode = "ordered"
    parts = pairwise_losses(pred, gt, w)
    b, p = parts["total"].shape[:2]
    perm = torch.from_numpy(assignments(parts["total"], gt, mode))     # [B, P^]
    rows = torch.arange(b)[:, None], torch.arange(p)[None, :]
    picked = {k: v[rows[0], rows[1], perm].sum(1) for k, v in parts.items()}
    kl = kl_divergence(pred.mu, pred.sigma)
    loss = (w.w_kl * kl + picked["total"]).mean()
    stats = {f"loss_{k}": float(v.detach().mean()) for k, v in picked.items() if k != "total"}
    stats["kl"] = float(kl.detach().mean())
    stats["loss_total"] = float(loss.detach())
    return loss, stats


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    assignment: str = "ordered"
    seed: int = 0
    max_steps: int | None = None
    checkpoint_every: int = 0          # epochs; 0 disables periodic checkpoints
    holdout_every: int = 1             # epochs between held-out RE evaluations


@dataclass
class TrainResult:
    model: SvgVAE
    store: ParamStore
    history: list[dict] = field(default_factory=list)
    skipped: int = 0

    def epoch_means(self, key: str = "loss_total") -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for row in self.history:
            by_epoch.setdefault(row["epoch"], []).append(row[key])
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]


def _fits(t: SvgTensor, cfg: ModelConfig) -> bool:
    return t.shape == (cfg.n_paths, cfg.n_commands)


def train_steps(model: SvgVAE, store: ParamStore, data: Sequence[SvgTensor], optim: OptimConfig,
                w: LossWeights, tcfg: TrainConfig, start_step: int = 0,
                on_epoch: Callable[[int, TrainResult], None] | None = None,
                result: TrainResult | None = None, lr_override: float | None = None) -> TrainResult:
    """Run the optimization loop over already-built model state."""
    if not data:
        raise ValueError("empty training corpus")
    result = result or TrainResult(model, store)
    rng = np.random.default_rng(tcfg.seed)
    noise = torch.Generator().manual_seed(tcfg.seed + 2)
    model.rng.seed(tcfg.seed + 1)
    step = start_step
    n = len(data)
    for epoch in range(tcfg.epochs):
        model.train()
        order = rng.permutation(n)
        for lo in range(0, n, tcfg.batch_size):
            if tcfg.max_steps is not None and step >= tcfg.max_steps:
                break
            batch = Batch.of([data[i] for i in order[lo:lo + tcfg.batch_size]])
            store.zero_grad()
            pred = model(batch, generator=noise)
            loss, stats = total_loss(pred, batch, tcfg.assignment, w)
            nc.backward(loss)
            step += 1
            if lr_override is not None:
                info = nc.adamw_step(store, _constant(optim, lr_override), step, 0)
            else:
                info = nc.adamw_step(store, optim, step, epoch)
            result.history.append({"epoch": epoch, "step": step, **stats, "lr": info["lr"]})
        if on_epoch is not None:
            on_epoch(epoch, result)
        if tcfg.max_steps is not None and step >= tcfg.max_steps:
            break
    model.eval()
    return result


def _constant(cfg: OptimConfig, lr: float) -> OptimConfig:
    return replace(cfg, lr0=lr, warmup_steps=0, decay=1.0, decay_every=1)


def train(corpus: Sequence[SvgTensor], model_cfg: ModelConfig, optim: OptimConfig = OptimConfig(),
          w: LossWeights = LossWeights(), tcfg: TrainConfig = TrainConfig(),
          holdout: Sequence[SvgTensor] = (), log_path: str | Path | None = None,
          checkpoint_dir: str | Path | None = None, dtype: torch.dtype = torch.float32,
          meta: dict | None = None) -> TrainResult:
    """Train a fresh model. Writes the CSV metrics log and checkpoints when
    the corresponding paths are given; deterministic for a fixed seed in
    single-threaded mode."""
    from .metrics import reconstruction_error

    if not corpus:
        raise ValueError("empty training corpus")
    data = [t for t in corpus if _fits(t, model_cfg)]
    skipped = len(corpus) - len(data)
    if skipped:
        log.warning("dropped %d samples whose shape does not match the model capacity", skipped)
    if not data:
        raise ValueError("no training sample matches the model capacity")

    cfg = model_cfg if optim.dropout == model_cfg.dropout else \
        ModelConfig(**{**model_cfg.__dict__, "dropout": optim.dropout})
    model = build_model(cfg, tcfg.seed, dtype)
    store = ParamStore(model.named_parameters())
    result = TrainResult(model, store, skipped=skipped)

    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    written = 0

    def on_epoch(epoch: int, res: TrainResult):
        nonlocal written
        re = float("nan")
        if holdout and (epoch + 1) % max(tcfg.holdout_every, 1) == 0:
            re = reconstruction_error(model, holdout)
            model.train()
        for row in res.history[written:]:
            row["re_holdout"] = re if row["epoch"] == epoch else float("nan")
            if writer:
                writer.writerow(row)
        written = len(res.history)
        if fh:
            fh.flush()
        if ckpt_dir and tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0:
            save_model(ckpt_dir / f"epoch_{epoch + 1:04d}", model, store, optim, w, meta)

    try:
        train_steps(model, store, data, optim, w, tcfg, on_epoch=on_epoch, result=result)
    finally:
        if fh:
            fh.close()
    if ckpt_dir:
        save_model(ckpt_dir / "final", model, store, optim, w, meta)
    return result


# ---------------------------------------------------------------------------
# Checkpoint helpers


def save_model(prefix: str | Path, model: SvgVAE, store: ParamStore, optim: OptimConfig,
               w: LossWeights, meta: dict | None = None):
    info = {"model": model.cfg.__dict__, **nc.config_echo(optim, w), **(meta or {})}
    return nc.save_checkpoint(prefix, store, info)


def load_model(prefix: str | Path, dtype: torch.dtype = torch.float32) -> tuple[SvgVAE, ParamStore, dict]:
    meta = nc.read_manifest(prefix)["meta"]
    model = build_model(ModelConfig(**meta["model"]), 0, dtype)
    store = ParamStore(model.named_parameters())
    nc.load_checkpoint(prefix, store)
    model.eval()
    return model, store, meta

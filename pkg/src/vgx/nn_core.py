"""Differentiable building blocks on top of torch autograd.

Thin op wrappers validate shapes; the transformer block, AdamW with its
warmup/step-decay schedule, gradient clipping and the checkpoint format are
implemented here so their contracts are explicit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import torch
from torch import nn

Tensor = torch.Tensor

INIT_STD = 0.02


class ShapeError(ValueError):
    pass


def _shapes(*ts: Tensor) -> str:
    return " and ".join(str(tuple(t.shape)) for t in ts)


# ---------------------------------------------------------------------------
# Forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {_shapes(a, b)}")
    return a @ b


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(f"add shape mismatch: {_shapes(a, b)}") from None
    return a + b


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis; a constant input maps to zeros (before the
    affine part) thanks to ``eps``."""
    for p in (gain, bias):
        if p is not None and p.shape != x.shape[-1:]:
            raise ShapeError(f"layer_norm parameter shape mismatch: {_shapes(x, p)}")
    mean = x.mean(-1, keepdim=True)
    var = ((x - mean) ** 2).mean(-1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return torch.softmax(x, dim=axis)


ACTIVATIONS = {
    "gelu": nn.functional.gelu,
    "relu": torch.relu,
    "tanh": torch.tanh,
}


def activation(x: Tensor, kind: str = "gelu") -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None


def embedding_lookup(table: Tensor, idx: Tensor) -> Tensor:
    if table.dim() != 2:
        raise ShapeError(f"embedding table must be 2-D, got {tuple(table.shape)}")
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= table.shape[0]):
        raise IndexError(f"embedding index outside [0, {table.shape[0]})")
    return table[idx]


def mean_pool(x: Tensor, axis: int, mask: Tensor | None = None) -> Tensor:
    """Mean over ``axis``; with ``mask`` (shape of ``x`` without the feature
    axis) only positions where the mask is true are averaged."""
    if mask is None:
        return x.mean(axis)
    if mask.shape != x.shape[:-1]:
        raise ShapeError(f"mean_pool mask mismatch: {_shapes(x, mask)}")
    w = mask.to(x.dtype).unsqueeze(-1)
    return (x * w).sum(axis) / w.sum(axis).clamp_min(1.0)


def dropout(x: Tensor, p: float, training: bool, generator: torch.Generator | None = None) -> Tensor:
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


def backward(loss: Tensor) -> None:
    if loss.dim() != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


# ---------------------------------------------------------------------------
# Layers


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(d_out, d_in) * INIT_STD)
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise ShapeError(f"linear input mismatch: {_shapes(x, self.weight)}")
        y = x @ self.weight.T
        return y if self.bias is None else y + self.bias


class Embedding(nn.Module):
    def __init__(self, n: int, d: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(n, d) * INIT_STD)

    def forward(self, idx: Tensor) -> Tensor:
        return embedding_lookup(self.weight, idx)


class LayerNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(nn.Module):
    """Dropout drawing from a shared, explicitly seeded generator."""

    def __init__(self, p: float, rng: "SharedRng"):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, self.training, self.rng.generator)


class SharedRng:
    """Holder for a torch.Generator shared by the dropout layers of a model."""

    def __init__(self, seed: int = 0):
        self.generator = torch.Generator().manual_seed(seed)

    def seed(self, seed: int) -> None:
        self.generator.manual_seed(seed)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int, p_drop: float, rng: SharedRng):
        super().__init__()
        if d % heads:
            raise ValueError(f"d_e={d} not divisible by heads={heads}")
        self.heads = heads
        self.qkv = Linear(d, 3 * d)
        self.out = Linear(d, d)
        self.drop = Dropout(p_drop, rng)

    def forward(self, x: Tensor, key_mask: Tensor | None = None, causal: bool = False) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        q, k, v = self.qkv(x).reshape(b, n, 3, h, d // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], -1e9)
        if causal:
            future = torch.ones(n, n, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(future, -1e9)
        att = self.drop(softmax(scores, -1))
        return self.out((att @ v).transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    """Pre-norm transformer block.

    An optional conditioning vector is projected and added to every position
    between the attention and feed-forward sublayers.
    """

    def __init__(self, d: int, heads: int, ff_dim: int, p_drop: float, rng: SharedRng,
                 d_cond: int | None = None, act: str = "gelu"):
        super().__init__()
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, p_drop, rng)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, ff_dim)
        self.ff2 = Linear(ff_dim, d)
        self.drop = Dropout(p_drop, rng)
        self.cond = Linear(d_cond, d) if d_cond else None
        self.act = act

    def forward(self, x: Tensor, cond: Tensor | None = None, key_mask: Tensor | None = None,
                causal: bool = False) -> Tensor:
        x = x + self.drop(self.attn(self.norm1(x), key_mask, causal))
        if self.cond is not None:
            if cond is None:
                raise ValueError("conditioned block called without a conditioning vector")
            x = x + self.cond(cond).unsqueeze(1)
        return x + self.drop(self.ff2(activation(self.ff1(self.norm2(x)), self.act)))


class Transformer(nn.Module):
    def __init__(self, layers: int, d: int, heads: int, ff_dim: int, p_drop: float,
                 rng: SharedRng, d_cond: int | None = None, act: str = "gelu"):
        super().__init__()
        self.blocks = nn.ModuleList(Block(d, heads, ff_dim, p_drop, rng, d_cond, act)
                                    for _ in range(layers))
        self.norm = LayerNorm(d)

    def forward(self, x: Tensor, cond: Tensor | None = None, key_mask: Tensor | None = None,
                causal: bool = False) -> Tensor:
        for blk in self.blocks:
            x = blk(x, cond, key_mask, causal)
        return self.norm(x)


class MLP(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int, act: str = "gelu"):
        super().__init__()
        self.l1 = Linear(d_in, d_hidden)
        self.l2 = Linear(d_hidden, d_out)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        return self.l2(activation(self.l1(x), self.act))


# ---------------------------------------------------------------------------
# Optimization


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 1e-4
    decay: float = 0.9
    decay_every: int = 5
    warmup_steps: int = 500
    weight_decay: float = 1e-2
    clip_norm: float = 1.0
    dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.lr0, self.decay, self.decay_every, self.clip_norm, self.eps) <= 0:
            raise ValueError("lr0, decay, decay_every, clip_norm and eps must be positive")
        if self.warmup_steps < 0 or self.weight_decay < 0:
            raise ValueError("warmup_steps and weight_decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")


def learning_rate(cfg: OptimConfig, step: int, epoch: int) -> float:
    """lr0 * min(step / warmup, 1) * decay ** floor(epoch / decay_every)."""
    warm = 1.0 if cfg.warmup_steps == 0 else min(step / cfg.warmup_steps, 1.0)
    return cfg.lr0 * warm * cfg.decay ** (epoch // cfg.decay_every)


def global_grad_norm(params: Iterable[Tensor]) -> float:
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad.double() ** 2).sum())
    return math.sqrt(sq)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most ``max_norm``;
    returns the norm before clipping."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad.mul_(scale)
    return norm


def _decays(name: str, p: Tensor) -> bool:
    # biases and norm gains are left undecayed
    return p.dim() >= 2


class ParamStore:
    """Named parameters plus AdamW moment estimates."""

    def __init__(self, named: Iterable[tuple[str, nn.Parameter]]):
        self.params: dict[str, nn.Parameter] = {}
        for name, p in named:
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.params[name] = p
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.t = 0

    def __iter__(self) -> Iterator[tuple[str, nn.Parameter]]:
        return iter(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@torch.no_grad()
def adamw_step(store: ParamStore, cfg: OptimConfig, global_step: int, epoch: int) -> dict:
    """One AdamW update with warmup, step decay and global-norm clipping.

    ``global_step`` counts updates starting at 1. Raises when a trainable
    parameter has no gradient.
    """
    missing = [n for n, p in store if p.requires_grad and p.grad is None]
    if missing:
        raise RuntimeError(f"missing gradients for {len(missing)} parameters, e.g. {missing[0]}")
    params = [p for _, p in store if p.requires_grad]
    norm = clip_grad_norm(params, cfg.clip_norm)
    lr = learning_rate(cfg, global_step, epoch)
    store.t += 1
    bc1 = 1 - cfg.beta1 ** store.t
    bc2 = 1 - cfg.beta2 ** store.t
    for name, p in store:
        if not p.requires_grad:
            continue
        g = p.grad
        if _decays(name, p) and cfg.weight_decay:
            p.mul_(1 - lr * cfg.weight_decay)
        m, v = store.m[name], store.v[name]
        m.mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
        p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + cfg.eps))
    return {"lr": lr, "grad_norm": norm}


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(prefix: str | Path, store: ParamStore, meta: dict) -> tuple[Path, Path]:
    """Write ``prefix.json`` (manifest) and ``prefix.bin`` (little-endian f32).

    The blob holds every parameter followed by its two Adam moments.
    """
    prefix = Path(prefix)
    entries, chunks, offset = [], [], 0
    for name, p in store:
        for key, t in ((name, p), (f"adam.m.{name}", store.m[name]), (f"adam.v.{name}", store.v[name])):
            arr = t.detach().cpu().numpy().astype("<f4")
            entries.append({"name": key, "shape": list(arr.shape), "offset": offset, "dtype": "f32"})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    manifest = {"format": "vgx-checkpoint", "version": 1, "adam_step": store.t,
                "tensors": entries, "meta": meta}
    json_path, bin_path = prefix.with_suffix(".json"), prefix.with_suffix(".bin")
    bin_path.write_bytes(b"".join(chunks))
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return json_path, bin_path


def read_manifest(prefix: str | Path) -> dict:
    return json.loads(Path(prefix).with_suffix(".json").read_text())


@torch.no_grad()
def load_checkpoint(prefix: str | Path, store: ParamStore) -> dict:
    """Restore parameters and optimizer state in place; returns the meta dict."""
    prefix = Path(prefix)
    manifest = read_manifest(prefix)
    blob = prefix.with_suffix(".bin").read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, "<f4", count=n, offset=e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy())
    for name, p in store:
        if name not in tensors:
            raise KeyError(f"checkpoint lacks parameter {name!r}")
        if tuple(tensors[name].shape) != tuple(p.shape):
            raise ShapeError(f"checkpoint shape mismatch for {name}: {_shapes(tensors[name], p)}")
        p.copy_(tensors[name].to(p.dtype))
        store.m[name].copy_(tensors[f"adam.m.{name}"].to(p.dtype))
        store.v[name].copy_(tensors[f"adam.v.{name}"].to(p.dtype))
    store.t = manifest["adam_step"]
    return manifest["meta"]


def config_echo(*configs) -> dict:
    return {type(c).__name__: asdict(c) for c in configs}

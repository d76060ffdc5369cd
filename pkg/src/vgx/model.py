"""Hierarchical set-of-sequences VAE and its one-stage ablations."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from . import nn_core as nc
from .nn_core import MLP, Embedding, Linear, SharedRng, Tensor, Transformer
from .svg_io import CommandKind, SvgDocument
from .tensor_repr import (
    N_ARGS, N_BINS, SLOT_TABLE, UNUSED_BIN, CapacityError, ReprConfig, SvgTensor, detensorize,
)

K = CommandKind
N_CMD = len(CommandKind)
N_FILL = 3
MODES = ("hierarchical", "one_stage_feedforward", "one_stage_autoregressive")
SIGMA_MIN, SIGMA_MAX = 1e-4, 1e2


@dataclass(frozen=True)
class ModelConfig:
    d_e: int = 256
    layers: int = 4
    ff_dim: int = 512
    heads: int = 8
    d_z: int = 256
    arg_dim: int = 64          # width of each argument embedding before W_coord
    n_paths: int = 8
    n_commands: int = 30
    mode: str = "hierarchical"
    activation: str = "gelu"
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_e % self.heads:
            raise ValueError(f"d_e={self.d_e} not divisible by heads={self.heads}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.d_e, self.layers, self.ff_dim, self.d_z, self.arg_dim,
               self.n_paths, self.n_commands) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def n_seq(self) -> int:
        return self.n_commands

    @property
    def one_stage(self) -> bool:
        return self.mode != "hierarchical"

    @property
    def seq_len(self) -> int:
        """Sequence length seen by the path-level encoder/decoder."""
        return self.n_paths * self.n_commands if self.one_stage else self.n_commands

    @property
    def repr_config(self) -> ReprConfig:
        return ReprConfig(n_paths=self.n_paths, n_commands=self.n_commands)

    @classmethod
    def from_repr(cls, repr_cfg: ReprConfig, **kw) -> ModelConfig:
        return cls(n_paths=repr_cfg.n_paths, n_commands=repr_cfg.n_commands, **kw)


class Batch(NamedTuple):
    cmd: Tensor      # long [B, P, C]
    args: Tensor     # long [B, P, C, 6]
    visible: Tensor  # bool [B, P]
    fill: Tensor     # long [B, P]

    @classmethod
    def of(cls, tensors: Sequence[SvgTensor]) -> Batch:
        return cls(torch.from_numpy(np.stack([t.cmd for t in tensors])).long(),
                   torch.from_numpy(np.stack([t.args for t in tensors])).long(),
                   torch.from_numpy(np.stack([t.visible for t in tensors])).bool(),
                   torch.from_numpy(np.stack([t.fill for t in tensors])).long())

    def __len__(self) -> int:
        return self.cmd.shape[0]

    def index(self, idx) -> Batch:
        return Batch(*(t[idx] for t in self))

    def flattened(self, seq_len: int) -> Batch:
        """Concatenate the visible paths of each sample into one sequence of
        ``seq_len`` commands (EOS terminated and padded)."""
        b = len(self)
        cmd = torch.full((b, 1, seq_len), int(K.EOS), dtype=torch.long)
        args = torch.full((b, 1, seq_len, N_ARGS), UNUSED_BIN, dtype=torch.long)
        for i in range(b):
            rows = []
            for p in range(self.cmd.shape[1]):
                if not self.visible[i, p]:
                    continue
                c = self.cmd[i, p]
                n = int((c != K.EOS).cumprod(0).sum())
                rows.append((c[:n], self.args[i, p, :n]))
            if rows:
                cc = torch.cat([r[0] for r in rows])
                aa = torch.cat([r[1] for r in rows])
                if len(cc) > seq_len - 1:
                    raise CapacityError(f"sample {i}: {len(cc)} concatenated commands exceed "
                                        f"the one-stage limit {seq_len - 1}")
                cmd[i, 0, :len(cc)] = cc
                args[i, 0, :len(cc)] = aa
        return Batch(cmd, args, torch.ones(b, 1, dtype=torch.bool),
                     torch.ones(b, 1, dtype=torch.long))


@dataclass
class Prediction:
    visible_logits: Tensor | None   # [B, P, 2]; None for one-stage models
    fill_logits: Tensor | None      # [B, P, 3]
    cmd_logits: Tensor              # [B, P, C, 6]
    arg_logits: Tensor              # [B, P, C, 6, 257]
    mu: Tensor                      # [B, d_z]
    sigma: Tensor                   # [B, d_z]
    z: Tensor                       # [B, d_z]
    path_encodings: Tensor | None = None  # decoder-side u_hat [B, P, d_e]

    def detach(self) -> Prediction:
        return Prediction(*(None if t is None else t.detach() for t in
                            (self.visible_logits, self.fill_logits, self.cmd_logits,
                             self.arg_logits, self.mu, self.sigma, self.z, self.path_encodings)))


def sequence_mask(cmd: Tensor) -> Tensor:
    """True for positions up to and including the first EOS."""
    is_eos = (cmd == K.EOS).long()
    before = is_eos.cumsum(-1) - is_eos
    return before == 0


def reparametrize(mu: Tensor, sigma: Tensor, eps: Tensor) -> Tensor:
    if not (mu.shape == sigma.shape == eps.shape):
        raise nc.ShapeError(f"reparametrize shape mismatch: {tuple(mu.shape)}, "
                            f"{tuple(sigma.shape)}, {tuple(eps.shape)}")
    return mu + sigma * eps


class CommandEmbedding(nn.Module):
    """e = W_cmd onehot(kind) + W_coord vec(W_X onehot(args)) + W_ind onehot(j)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cmd = Embedding(N_CMD, cfg.d_e)
        self.arg = Embedding(N_BINS, cfg.arg_dim)
        self.coord = Linear(N_ARGS * cfg.arg_dim, cfg.d_e, bias=False)
        self.index = Embedding(cfg.seq_len, cfg.d_e)

    def forward(self, cmd: Tensor, args: Tensor) -> Tensor:
        n = cmd.shape[-1]
        if n > self.index.weight.shape[0]:
            raise IndexError(f"sequence length {n} exceeds the index table size "
                             f"{self.index.weight.shape[0]}")
        e_arg = self.arg(args).flatten(-2)
        idx = torch.arange(n, device=cmd.device)
        return self.cmd(cmd) + self.coord(e_arg) + self.index(idx)


class SvgVAE(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.cfg = cfg
        self.rng = SharedRng(seed + 1)
        d, act, p = cfg.d_e, cfg.activation, cfg.dropout
        stack = lambda d_cond=None: Transformer(cfg.layers, d, cfg.heads, cfg.ff_dim, p,
                                                self.rng, d_cond, act)
        self.embed = CommandEmbedding(cfg)
        self.enc1 = stack()
        self.latent = Linear(d, 2 * cfg.d_z)
        if cfg.one_stage:
            self.dec1_const = Embedding(cfg.seq_len, d)
            self.dec1 = stack(cfg.d_z)
            self.causal = cfg.mode == "one_stage_autoregressive"
        else:
            self.enc2 = stack()
            self.dec2_const = Embedding(cfg.n_paths, d)
            self.dec2 = stack(cfg.d_z)
            self.head_u = Linear(d, d)
            self.head_vis = MLP(d, d, 2, act)
            self.head_fill = MLP(d, d, N_FILL, act)
            self.dec1_const = Embedding(cfg.n_commands, d)
            self.dec1 = stack(d)
            self.causal = False
        self.head_cmd = MLP(d, d, N_CMD, act)
        self.head_args = MLP(d, d, N_ARGS * N_BINS, act)

    # -- encoder --------------------------------------------------------------

    def encode_paths(self, cmd: Tensor, args: Tensor) -> Tensor:
        """Path encoder: [B, P, C] -> u [B, P, d_e] (masked mean over commands)."""
        b, p, c = cmd.shape
        flat_cmd, flat_args = cmd.reshape(b * p, c), args.reshape(b * p, c, N_ARGS)
        mask = sequence_mask(flat_cmd)
        h = self.enc1(self.embed(flat_cmd, flat_args), key_mask=mask)
        return nc.mean_pool(h, 1, mask).reshape(b, p, -1)

    def encode(self, batch: Batch) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (mu, sigma, u) where u are the per-path encodings."""
        if self.cfg.one_stage:
            flat = batch.flattened(self.cfg.seq_len)
            u = self.encode_paths(flat.cmd, flat.args)
            pooled = u[:, 0]
        else:
            u = self.encode_paths(batch.cmd, batch.args)
            vis = batch.visible.clone()
            vis[~vis.any(1)] = True  # an empty document pools over its padding
            h = self.enc2(u, key_mask=vis)
            pooled = nc.mean_pool(h, 1, vis)
        mu, half_logvar = self.latent(pooled).chunk(2, -1)
        sigma = torch.exp(half_logvar).clamp(SIGMA_MIN, SIGMA_MAX)
        return mu, sigma, u

    # -- decoder --------------------------------------------------------------

    def _heads(self, h: Tensor, b: int, p: int) -> tuple[Tensor, Tensor]:
        c = h.shape[1]
        cmd = self.head_cmd(h).reshape(b, p, c, N_CMD)
        args = self.head_args(h).reshape(b, p, c, N_ARGS, N_BINS)
        return cmd, args

    def decode_paths(self, u_hat: Tensor) -> tuple[Tensor, Tensor]:
        """Path decoder: each u_hat [B, P, d_e] independently to command and
        argument logits."""
        b, p, d = u_hat.shape
        c = self.cfg.n_commands
        const = self.dec1_const.weight.unsqueeze(0).expand(b * p, c, d)
        h = self.dec1(const, cond=u_hat.reshape(b * p, d))
        return self._heads(h, b, p)

    def decode_groups(self, z: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        b = z.shape[0]
        const = self.dec2_const.weight.unsqueeze(0).expand(b, -1, -1)
        h = self.dec2(const, cond=z)
        return self.head_u(h), self.head_vis(h), self.head_fill(h)

    def decode(self, z: Tensor, mu: Tensor | None = None, sigma: Tensor | None = None,
               teacher: Batch | None = None) -> Prediction:
        """One forward pass from z to all logits. ``teacher`` (flattened ground
        truth) is only used by the autoregressive ablation during training."""
        mu = z if mu is None else mu
        sigma = torch.zeros_like(z) if sigma is None else sigma
        if not self.cfg.one_stage:
            u_hat, vis, fill = self.decode_groups(z)
            cmd, args = self.decode_paths(u_hat)
            return Prediction(vis, fill, cmd, args, mu, sigma, z, u_hat)
        b, n = z.shape[0], self.cfg.seq_len
        x = self.dec1_const.weight.unsqueeze(0).expand(b, n, -1)
        if self.causal:
            if teacher is None:
                raise ValueError("the autoregressive decoder needs teacher inputs; use generate()")
            x = x + self._shifted_embedding(teacher.cmd[:, 0], teacher.args[:, 0])
        h = self.dec1(x, cond=z, causal=self.causal)
        cmd, args = self._heads(h, b, 1)
        return Prediction(None, None, cmd, args, mu, sigma, z, None)

    def _shifted_embedding(self, cmd: Tensor, args: Tensor) -> Tensor:
        b = cmd.shape[0]
        sos_cmd = torch.full((b, 1), int(K.SOS), dtype=torch.long, device=cmd.device)
        sos_args = torch.full((b, 1, N_ARGS), UNUSED_BIN, dtype=torch.long, device=cmd.device)
        shifted_cmd = torch.cat([sos_cmd, cmd[:, :-1]], 1)
        shifted_args = torch.cat([sos_args, args[:, :-1]], 1)
        return self.embed(shifted_cmd, shifted_args)

    def forward(self, batch: Batch, sample: bool = True,
                generator: torch.Generator | None = None) -> Prediction:
        mu, sigma, _ = self.encode(batch)
        if sample and self.training:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        else:
            eps = torch.zeros_like(mu)
        z = reparametrize(mu, sigma, eps)
        teacher = batch.flattened(self.cfg.seq_len) if self.causal else None
        return self.decode(z, mu, sigma, teacher)

    @torch.no_grad()
    def generate(self, z: Tensor) -> Prediction:
        """Decode without teacher inputs. For the autoregressive ablation the
        sequence is produced step by step from its own argmax outputs, stopping
        at EOS or the length cap."""
        if not self.causal:
            return self.decode(z)
        b, n = z.shape[0], self.cfg.seq_len
        cmd = torch.full((b, n), int(K.EOS), dtype=torch.long)
        args = torch.full((b, n, N_ARGS), UNUSED_BIN, dtype=torch.long)
        const = self.dec1_const.weight.unsqueeze(0).expand(b, n, -1)
        cmd_logits = torch.zeros(b, 1, n, N_CMD, dtype=z.dtype)
        arg_logits = torch.zeros(b, 1, n, N_ARGS, N_BINS, dtype=z.dtype)
        done = torch.zeros(b, dtype=torch.bool)
        for j in range(n):
            x = const[:, :j + 1] + self._shifted_embedding(cmd[:, :j + 1], args[:, :j + 1])
            h = self.dec1(x, cond=z, causal=True)[:, j:j + 1]
            c_log, a_log = self._heads(h, b, 1)
            cmd_logits[:, :, j], arg_logits[:, :, j] = c_log[:, :, 0], a_log[:, :, 0]
            k = c_log[:, 0, 0].argmax(-1)
            a = a_log[:, 0, 0].argmax(-1)
            a = torch.where(torch.from_numpy(SLOT_TABLE)[k], a, torch.full_like(a, UNUSED_BIN))
            cmd[:, j] = torch.where(done, cmd[:, j], k)
            args[:, j] = torch.where(done[:, None], args[:, j], a)
            done |= k == K.EOS
            if bool(done.all()):
                break
        return Prediction(None, None, cmd_logits, arg_logits, z, torch.zeros_like(z), z, None)


# ---------------------------------------------------------------------------
# Readout


def greedy_readout(pred: Prediction, index: int = 0) -> SvgTensor:
    """Argmax of every factor for one batch item; ties go to the lower class.

    Slots unused by the chosen command are set to the unused bin, and each
    sequence is EOS-filled after its first EOS. One-stage predictions come
    back as a single always-visible path.
    """
    cmd = pred.cmd_logits[index].detach().argmax(-1).cpu().numpy()
    args = pred.arg_logits[index].detach().argmax(-1).cpu().numpy()
    p = cmd.shape[0]
    if pred.visible_logits is None:
        visible = np.ones(p, bool)
        fill = np.ones(p, np.int64)
    else:
        visible = pred.visible_logits[index].detach().argmax(-1).cpu().numpy().astype(bool)
        fill = pred.fill_logits[index].detach().argmax(-1).cpu().numpy()
    after_eos = np.cumsum(cmd == K.EOS, axis=1) - (cmd == K.EOS) > 0
    cmd = np.where(after_eos, int(K.EOS), cmd)
    args = np.where(SLOT_TABLE[cmd], args, UNUSED_BIN)
    cmd[~visible] = int(K.EOS)
    args[~visible] = UNUSED_BIN
    return SvgTensor(cmd.astype(np.int64), args.astype(np.int64), visible, fill.astype(np.int64))


def split_subpaths(doc: SvgDocument) -> SvgDocument:
    """One path per subpath (used for one-stage outputs)."""
    paths = [replace(sub, visible=True) for p in doc.paths for sub in p.subpaths()]
    return SvgDocument(paths, doc.viewbox)


def build_model(cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> SvgVAE:
    return SvgVAE(cfg, seed).to(dtype)


@torch.no_grad()
def encode_mean(model: SvgVAE, tensors: Sequence[SvgTensor]) -> Tensor:
    """Posterior means [N, d_z] (z = mu, no sampling)."""
    model.eval()
    mu, _, _ = model.encode(Batch.of(tensors))
    return mu


@torch.no_grad()
def decode_documents(model: SvgVAE, z: Tensor) -> list[SvgDocument]:
    """Greedy decode of each latent row into a repaired document."""
    model.eval()
    pred = model.generate(z)
    rcfg = model.cfg.repr_config
    docs = []
    for i in range(z.shape[0]):
        doc = detensorize(greedy_readout(pred, i), rcfg)
        docs.append(split_subpaths(doc) if model.cfg.one_stage else doc)
    return docs

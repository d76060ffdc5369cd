"""Latent-space operations on a trained model: encoding, interpolation with
optional keyframe finetuning, global and path-level directions, and random
sampling."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .metrics import frame_alphas, path_samples
from .model import SvgVAE, decode_documents, encode_mean, greedy_readout
from .nn_core import OptimConfig, ParamStore, Tensor
from .preprocess import PreprocessConfig, preprocess_document
from .svg_io import SvgDocument, serialize_svg
from .tensor_repr import SvgTensor, detensorize, tensorize
from .training import LossWeights, TrainConfig, train_steps

FINETUNE_STEPS = 1000
FINETUNE_LR = 1e-4

DocLike = SvgDocument | SvgTensor


def to_tensor(model: SvgVAE, doc: DocLike, pre: PreprocessConfig | None = PreprocessConfig()) -> SvgTensor:
    """Tensorize ``doc`` for ``model``. Raw documents go through the
    preprocessing pipeline first unless ``pre`` is None."""
    if isinstance(doc, SvgTensor):
        return doc
    if pre is not None:
        doc = preprocess_document(doc, pre)
    return tensorize(doc, model.cfg.repr_config)


def encode_doc(model: SvgVAE, doc: DocLike, pre: PreprocessConfig | None = PreprocessConfig()) -> Tensor:
    """z = mu for one document, shape [d_z]. Capacity errors propagate."""
    return encode_mean(model, [to_tensor(model, doc, pre)])[0]


def decode_latent(model: SvgVAE, z: Tensor) -> SvgDocument:
    return decode_documents(model, z.reshape(1, -1))[0]


def _slerp(z1: Tensor, z2: Tensor, a: float) -> Tensor:
    n1, n2 = z1.norm(), z2.norm()
    cos = torch.dot(z1, z2) / (n1 * n2) if n1 > 0 and n2 > 0 else torch.tensor(1.0)
    omega = math.acos(float(cos.clamp(-1, 1)))
    if omega < 1e-7:
        return (1 - a) * z1 + a * z2
    s = math.sin(omega)
    return (math.sin((1 - a) * omega) / s) * z1 + (math.sin(a * omega) / s) * z2


def latent_path(z1: Tensor, z2: Tensor, frames: int, spherical: bool = False) -> list[Tensor]:
    """z(alpha_k) for alpha_k = k / frames, k = 0..frames. The endpoints are
    returned as the inputs themselves."""
    if frames < 2:
        raise ValueError(f"need at least 2 frame intervals, got {frames}")
    if not (torch.isfinite(z1).all() and torch.isfinite(z2).all()):
        raise ValueError("interpolation endpoints must be finite")
    out = []
    for k, a in enumerate(frame_alphas(frames)):
        if k == 0:
            out.append(z1)
        elif k == frames:
            out.append(z2)
        elif spherical:
            out.append(_slerp(z1, z2, a))
        else:
            out.append((1 - a) * z1 + a * z2)
    return out


def interpolate(model: SvgVAE, z1: Tensor, z2: Tensor, frames: int = 10,
                spherical: bool = False) -> list[SvgDocument]:
    """Decode frames + 1 documents along the latent segment. Each frame is
    decoded on its own so the endpoints match a direct decode bit for bit."""
    return [decode_latent(model, z) for z in latent_path(z1, z2, frames, spherical)]


def finetune(model: SvgVAE, keyframes: Sequence[SvgTensor], steps: int = FINETUNE_STEPS,
             lr: float = FINETUNE_LR, seed: int = 0) -> SvgVAE:
    """Reconstruction-only training (KL off, ordered assignment, constant
    learning rate) of a copy of ``model`` on the keyframes."""
    tuned = copy.deepcopy(model)
    store = ParamStore(tuned.named_parameters())
    tcfg = TrainConfig(epochs=steps, batch_size=len(keyframes), assignment="ordered",
                       seed=seed, max_steps=steps)
    train_steps(tuned, store, list(keyframes), OptimConfig(lr0=lr), LossWeights(w_kl=0.0), tcfg,
                lr_override=lr)
    tuned.eval()
    return tuned


def interpolate_keyframes(model: SvgVAE, doc_a: DocLike, doc_b: DocLike, frames: int = 10,
                          finetune_steps: int = 0, lr: float = FINETUNE_LR, spherical: bool = False,
                          pre: PreprocessConfig | None = PreprocessConfig(), seed: int = 0
                          ) -> tuple[list[SvgDocument], SvgVAE]:
    """Interpolate between two documents, optionally finetuning on them
    first. Returns the frames and the model that decoded them."""
    ta, tb = to_tensor(model, doc_a, pre), to_tensor(model, doc_b, pre)
    if finetune_steps > 0:
        model = finetune(model, [ta, tb], finetune_steps, lr, seed)
    z1, z2 = encode_mean(model, [ta, tb])
    return interpolate(model, z1, z2, frames, spherical), model


# ---------------------------------------------------------------------------
# Directions


@dataclass(frozen=True)
class LatentDirection:
    delta: Tensor
    label: str = ""

    def __post_init__(self):
        if not torch.isfinite(self.delta).all():
            raise ValueError("direction must be finite")

    def __add__(self, other: LatentDirection) -> LatentDirection:
        return LatentDirection(self.delta + other.delta, _join(self.label, "+", other.label))

    def __neg__(self) -> LatentDirection:
        return LatentDirection(-self.delta, f"-{self.label}" if self.label else "")

    def __sub__(self, other: LatentDirection) -> LatentDirection:
        return self + (-other)

    def __mul__(self, k: float) -> LatentDirection:
        return LatentDirection(self.delta * k, self.label)

    __rmul__ = __mul__


def _join(a: str, op: str, b: str) -> str:
    return f"{a}{op}{b}" if a and b else a or b


def apply_direction(z: Tensor, *directions: LatentDirection) -> Tensor:
    """z plus the sum of the directions. The directions are combined first,
    so applying d and then -d in one call returns z exactly."""
    if not directions:
        return z
    total = directions[0]
    for d in directions[1:]:
        total = total + d
    return z + total.delta


def direction_between(model: SvgVAE, doc_a: DocLike, doc_b: DocLike, label: str = "",
                      pre: PreprocessConfig | None = PreprocessConfig()) -> LatentDirection:
    """Delta = z_b - z_a."""
    za, zb = encode_mean(model, [to_tensor(model, doc_a, pre), to_tensor(model, doc_b, pre)])
    return LatentDirection(zb - za, label)


def averaged_direction(model: SvgVAE, pairs: Sequence[tuple[DocLike, DocLike]], label: str = "",
                       pre: PreprocessConfig | None = PreprocessConfig()) -> LatentDirection:
    if not pairs:
        raise ValueError("no document pairs")
    deltas = [direction_between(model, a, b, pre=pre).delta for a, b in pairs]
    return LatentDirection(torch.stack(deltas).sum(0) / len(pairs), label)


@dataclass(frozen=True)
class PathDirection:
    delta_u: Tensor

    def __post_init__(self):
        if not torch.isfinite(self.delta_u).all():
            raise ValueError("direction must be finite")


@torch.no_grad()
def path_encodings(model: SvgVAE, doc: DocLike, pre: PreprocessConfig | None = PreprocessConfig()
                   ) -> Tensor:
    """Decoder-side path codes u_hat [N_P, d_e] at z = mu."""
    if model.cfg.one_stage:
        raise ValueError("path-level operations need the hierarchical model")
    z = encode_doc(model, doc, pre)
    u_hat, _, _ = model.decode_groups(z[None])
    return u_hat[0]


def path_direction_between(model: SvgVAE, doc_a: DocLike, doc_b: DocLike, index_a: int = 0,
                           index_b: int = 0, pre: PreprocessConfig | None = PreprocessConfig()
                           ) -> PathDirection:
    ua = path_encodings(model, doc_a, pre)[index_a]
    ub = path_encodings(model, doc_b, pre)[index_b]
    return PathDirection(ub - ua)


@torch.no_grad()
def path_edit_tensor(model: SvgVAE, doc: DocLike, path_index: int, d: PathDirection,
                     pre: PreprocessConfig | None = PreprocessConfig()) -> tuple[SvgTensor, SvgTensor]:
    """(plain reconstruction, edited reconstruction) as tensors. Only the
    targeted slot is run through the path decoder again."""
    if model.cfg.one_stage:
        raise ValueError("path-level operations need the hierarchical model")
    model.eval()
    z = encode_doc(model, doc, pre)
    pred = model.decode(z[None])
    plain = greedy_readout(pred)
    if not 0 <= path_index < model.cfg.n_paths:
        raise IndexError(f"path index {path_index} outside 0..{model.cfg.n_paths - 1}")
    if not plain.visible[path_index]:
        raise IndexError(f"path {path_index} is not visible in the reconstruction")
    u = pred.path_encodings[:, path_index:path_index + 1] + d.delta_u.to(pred.path_encodings.dtype)
    cmd, args = model.decode_paths(u)
    pred.cmd_logits = pred.cmd_logits.clone()
    pred.arg_logits = pred.arg_logits.clone()
    pred.cmd_logits[:, path_index] = cmd[:, 0]
    pred.arg_logits[:, path_index] = args[:, 0]
    return plain, greedy_readout(pred)


def apply_path_direction(model: SvgVAE, doc: DocLike, path_index: int, d: PathDirection,
                         pre: PreprocessConfig | None = PreprocessConfig()) -> SvgDocument:
    _, edited = path_edit_tensor(model, doc, path_index, d, pre)
    return detensorize(edited, model.cfg.repr_config)


# ---------------------------------------------------------------------------
# Sampling and output


def sample_latents(model: SvgVAE, n: int, sigma_scale: float = 0.5, seed: int = 0) -> Tensor:
    if sigma_scale < 0:
        raise ValueError("sigma_scale must be >= 0")
    gen = torch.Generator().manual_seed(seed)
    dtype = next(model.parameters()).dtype
    return sigma_scale * torch.randn(n, model.cfg.d_z, generator=gen, dtype=dtype)


def sample(model: SvgVAE, sigma_scale: float = 0.5, seed: int = 0, n: int = 1) -> list[SvgDocument]:
    """Decode ``n`` draws of z ~ N(0, sigma_scale^2 I)."""
    return decode_documents(model, sample_latents(model, n, sigma_scale, seed))


def write_frames(frames: Sequence[SvgDocument], out_dir: str | Path, alphas: Sequence[float] | None = None,
                 config_hash: str | None = None, precision: int = 3) -> list[Path]:
    """frame_0000.svg, frame_0001.svg, ... and a manifest.json listing the
    alpha of each frame."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if alphas is None:
        alphas = frame_alphas(len(frames) - 1) if len(frames) > 1 else [0.0]
    if len(alphas) != len(frames):
        raise ValueError(f"{len(frames)} frames but {len(alphas)} alpha values")
    comment = f"config {config_hash}" if config_hash else None
    files = []
    for k, doc in enumerate(frames):
        f = out / f"frame_{k:04d}.svg"
        f.write_text(serialize_svg(doc, precision, comment))
        files.append(f)
    manifest = {"config_hash": config_hash,
                "frames": [{"file": f.name, "alpha": a} for f, a in zip(files, alphas)]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return files


def centroid(doc: SvgDocument, path_index: int | None = None, n: int = 100) -> np.ndarray:
    """Mean of uniformly spaced samples along the drawn paths."""
    if path_index is not None:
        doc = SvgDocument([doc.paths[path_index]], doc.viewbox)
    pts = path_samples(doc, n)
    if not pts:
        raise ValueError("document draws nothing")
    return np.concatenate(pts).mean(0)

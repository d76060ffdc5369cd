"""Chamfer distance between documents, reconstruction error and
interpolation smoothness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import geometry as geo
from .svg_io import SvgDocument, SvgPath


@dataclass(frozen=True)
class MetricConfig:
    samples_per_path: int = 100
    frames_M: int = 10

    def __post_init__(self):
        if self.samples_per_path < 2 or self.frames_M < 2:
            raise ValueError("samples_per_path and frames_M must be >= 2")


def _drawable(doc: SvgDocument) -> list[SvgPath]:
    return [p for p in doc.paths if p.visible and p.n_drawing() > 0]


def path_samples(doc: SvgDocument, n: int, normalize: bool = False) -> list[np.ndarray]:
    scale = 1.0 / max(doc.viewbox) if normalize else 1.0
    return [geo.sample_segments(p.segments(), n, closed=p.is_closed) * scale
            for p in _drawable(doc)]


def chamfer_samples(a: list[np.ndarray], b: list[np.ndarray]) -> float:
    """Mean over paths of ``a`` of the best-matching path of ``b``, where a
    pair scores the mean distance from each point of the first to the
    nearest point of the second."""
    total = 0.0
    for pa in a:
        best = math.inf
        for pb in b:
            d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)).min(axis=1).mean()
            best = min(best, float(d))
        total += best
    return total / len(a)


def chamfer_svg(v: SvgDocument, w: SvgDocument, cfg: MetricConfig = MetricConfig(),
                normalize: bool = False) -> float:
    """Asymmetric Chamfer distance from ``v`` to ``w``.

    Two documents that both draw nothing are at distance 0; if only one
    side is empty the result is the viewbox diagonal (``sqrt(2)`` when
    ``normalize`` divides coordinates by the viewbox).
    """
    a = path_samples(v, cfg.samples_per_path, normalize)
    b = path_samples(w, cfg.samples_per_path, normalize)
    if not a and not b:
        return 0.0
    if not a or not b:
        return empty_sentinel(v, normalize)
    return chamfer_samples(a, b)


def empty_sentinel(doc: SvgDocument, normalize: bool = False) -> float:
    if normalize:
        return math.sqrt(2.0)
    return math.hypot(*doc.viewbox)


def reconstruction_error(model, corpus, cfg: MetricConfig = MetricConfig(),
                         batch_size: int = 64, report: dict | None = None) -> float:
    """Mean normalized Chamfer distance from each ground-truth icon to its
    greedy reconstruction at z = mu. Samples that decode to nothing score the
    sentinel; their count goes to ``report["sentinel"]``."""
    from .model import decode_documents, encode_mean
    from .tensor_repr import detensorize

    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    rcfg = model.cfg.repr_config
    total, sentinel = 0.0, 0
    for lo in range(0, len(corpus), batch_size):
        chunk = corpus[lo:lo + batch_size]
        recon = decode_documents(model, encode_mean(model, chunk))
        for t, doc in zip(chunk, recon):
            gt = detensorize(t, rcfg)
            if not _drawable(doc):
                sentinel += 1
            total += chamfer_svg(gt, doc, cfg, normalize=True)
    if report is not None:
        report["sentinel"] = sentinel
        report["n_samples"] = len(corpus)
    return total / len(corpus)


def frame_alphas(m: int) -> list[float]:
    return [k / m for k in range(m + 1)]


def smoothness_of_frames(frames: list[SvgDocument], cfg: MetricConfig = MetricConfig()) -> float:
    return sum(chamfer_svg(a, b, cfg, normalize=True) for a, b in zip(frames, frames[1:]))


def interpolation_smoothness(model, pairs, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean over pairs of the summed frame-to-frame normalized Chamfer along
    the linear latent path at alpha_k = k / M."""
    from .model import decode_documents, encode_mean

    pairs = list(pairs)
    if not pairs:
        raise ValueError("no interpolation pairs")
    alphas = torch.tensor(frame_alphas(cfg.frames_M))
    total = 0.0
    for a, b in pairs:
        z1, z2 = encode_mean(model, [a, b])
        zs = (1 - alphas)[:, None].to(z1.dtype) * z1 + alphas[:, None].to(z1.dtype) * z2
        total += smoothness_of_frames(decode_documents(model, zs), cfg)
    return total / len(pairs)

"""Fixed-shape, 8-bit quantized tensor form of canonical documents and its
on-disk record format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .svg_io import SLOT_MASK, CommandKind, DrawCommand, FillMode, SvgDocument, SvgPath, UNUSED

K = CommandKind
N_ARGS = 6
UNUSED_BIN = 256
N_BINS = 257

# [6, 6] boolean table: SLOT_TABLE[kind, slot] is True when the slot is used
SLOT_TABLE = np.array([SLOT_MASK[k] for k in CommandKind], dtype=bool)

MAGIC = b"VGXT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHHI")


class CapacityError(ValueError):
    """A document does not fit the configured number of paths or commands."""


class QuantizationError(ValueError):
    pass


@dataclass(frozen=True)
class ReprConfig:
    n_paths: int = 8
    n_commands: int = 30
    quant_bits: int = 8
    viewbox: float = 256.0

    def __post_init__(self):
        if self.n_paths < 1 or self.n_commands < 1:
            raise ValueError("n_paths and n_commands must be >= 1")
        if self.quant_bits != 8:
            raise ValueError("only 8-bit quantization (257 argument classes) is supported")
        if self.viewbox <= 0:
            raise ValueError("viewbox must be positive")

    @property
    def n_seq(self) -> int:
        """Size of the command-index embedding table (equal to N_C)."""
        return self.n_commands


def quantize_coord(x: float, viewbox: float = 256.0, tol: float = 1e-6) -> int:
    if x == UNUSED:
        return UNUSED_BIN
    if not math.isfinite(x) or x < -1.0 or x > viewbox * (1 + tol):
        raise QuantizationError(f"coordinate {x} outside [0, {viewbox}]")
    return min(max(math.floor(x / viewbox * 256), 0), 255)


def dequantize_coord(b: int, viewbox: float = 256.0) -> float:
    if b == UNUSED_BIN:
        return UNUSED
    if not 0 <= b < UNUSED_BIN:
        raise QuantizationError(f"bin {b} outside [0, 256]")
    return (b + 0.5) * viewbox / 256


def quantize_array(x: np.ndarray, viewbox: float = 256.0) -> np.ndarray:
    """Vectorized quantization of in-range coordinates (no sentinel handling)."""
    return np.clip(np.floor(np.asarray(x, float) / viewbox * 256), 0, 255).astype(np.int64)


def dequantize_array(b: np.ndarray, viewbox: float = 256.0) -> np.ndarray:
    b = np.asarray(b)
    return np.where(b == UNUSED_BIN, UNUSED, (b + 0.5) * viewbox / 256)


@dataclass
class SvgTensor:
    cmd: np.ndarray      # int64 [N_P, N_C], CommandKind values
    args: np.ndarray     # int64 [N_P, N_C, 6], bins in 0..256
    visible: np.ndarray  # bool [N_P]
    fill: np.ndarray     # int64 [N_P], FillMode values

    @classmethod
    def empty(cls, cfg: ReprConfig) -> SvgTensor:
        p, c = cfg.n_paths, cfg.n_commands
        return cls(np.full((p, c), int(K.EOS), np.int64),
                   np.full((p, c, N_ARGS), UNUSED_BIN, np.int64),
                   np.zeros(p, bool), np.zeros(p, np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cmd.shape

    def copy(self) -> SvgTensor:
        return SvgTensor(self.cmd.copy(), self.args.copy(), self.visible.copy(), self.fill.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SvgTensor):
            return NotImplemented
        return (np.array_equal(self.cmd, other.cmd) and np.array_equal(self.args, other.args)
                and np.array_equal(self.visible, other.visible)
                and np.array_equal(self.fill, other.fill))

    def start_key(self, p: int) -> tuple[int, int]:
        """Quantized (y, x) of a path's first endpoint."""
        return int(self.args[p, 0, 5]), int(self.args[p, 0, 4])


def slot_mask(cmd: np.ndarray) -> np.ndarray:
    """Boolean [..., 6] mask of used argument slots for a command grid."""
    return SLOT_TABLE[np.asarray(cmd)]


def _path_rows(path: SvgPath, viewbox: float) -> tuple[list[int], list[list[int]]]:
    kinds, rows = [], []
    for c in path.commands:
        row = []
        for used, v in zip(SLOT_MASK[c.kind], c.args):
            # augmentation can push content slightly past the canvas
            row.append(quantize_coord(min(max(v, 0.0), viewbox), viewbox) if used else UNUSED_BIN)
        kinds.append(int(c.kind))
        rows.append(row)
    return kinds, rows


def tensorize(doc: SvgDocument, cfg: ReprConfig = ReprConfig()) -> SvgTensor:
    """Pack a canonical document.

    Paths are sorted by the quantized (y, x) of their start point (stable),
    each sequence is terminated by EOS and padded with EOS, and padding
    paths are invisible. Coordinates outside the canvas are clamped.
    """
    if tuple(doc.viewbox) != (cfg.viewbox, cfg.viewbox):
        raise ValueError(f"document viewbox {doc.viewbox} is not the normalized "
                         f"{cfg.viewbox}x{cfg.viewbox}; run preprocessing first")
    paths = [p for p in doc.paths if p.visible and p.commands]
    if len(paths) > cfg.n_paths:
        raise CapacityError(f"{len(paths)} paths exceed N_P={cfg.n_paths}")
    packed = []
    for i, p in enumerate(paths):
        if len(p.commands) > cfg.n_commands - 1:
            raise CapacityError(
                f"path {i} has {len(p.commands)} commands, more than N_C-1={cfg.n_commands - 1}")
        kinds, rows = _path_rows(p, cfg.viewbox)
        packed.append((kinds, rows, p.fill))
    packed.sort(key=lambda k: (k[1][0][5], k[1][0][4]))

    t = SvgTensor.empty(cfg)
    for i, (kinds, rows, fill) in enumerate(packed):
        n = len(kinds)
        t.cmd[i, :n] = kinds
        t.args[i, :n] = rows
        t.visible[i] = True
        t.fill[i] = int(fill)
    return t


def _repair(cmds: list[DrawCommand]) -> list[DrawCommand]:
    out: list[DrawCommand] = []
    for c in cmds:
        if not out:
            if c.kind == K.Z:
                continue
            if c.kind in (K.L, K.C):
                c = DrawCommand.move(c.end)
        elif c.kind == K.Z and out[-1].kind == K.Z:
            continue
        out.append(c)
    return out


def _decode_row(kind: CommandKind, bins: np.ndarray, cur: tuple[float, float],
                viewbox: float) -> DrawCommand:
    args = []
    for k, (used, b) in enumerate(zip(SLOT_MASK[kind], bins)):
        if not used:
            args.append(UNUSED)
        elif b == UNUSED_BIN:
            args.append(cur[k % 2])  # a used slot left empty falls back to the current point
        else:
            args.append(dequantize_coord(int(b), viewbox))
    return DrawCommand(kind, tuple(args))


def detensorize(t: SvgTensor, cfg: ReprConfig = ReprConfig()) -> SvgDocument:
    """Decode a tensor, repairing rather than rejecting invalid content.

    Invisible paths are dropped, each sequence stops at its first EOS, unused
    slots are ignored whatever their bins, used slots holding the unused bin
    take the current point, a leading non-move command becomes a move, and
    paths left empty are dropped.
    """
    paths = []
    for p in range(t.cmd.shape[0]):
        if not t.visible[p]:
            continue
        cmds: list[DrawCommand] = []
        cur = start = (0.0, 0.0)
        for j in range(t.cmd.shape[1]):
            kind = K(int(t.cmd[p, j]))
            if kind == K.EOS:
                break
            if kind == K.SOS:
                continue
            c = _decode_row(kind, t.args[p, j], cur, cfg.viewbox)
            if kind == K.Z:
                cur = start
            else:
                cur = tuple(c.end)
                if kind == K.M:
                    start = cur
            cmds.append(c)
        cmds = _repair(cmds)
        if cmds:
            fill = int(t.fill[p])
            paths.append(SvgPath(cmds, FillMode(fill) if 0 <= fill <= 2 else FillMode.FILL))
    return SvgDocument(paths, (cfg.viewbox, cfg.viewbox))


def check_slot_mask(t: SvgTensor) -> bool:
    """True when exactly the slots unused by each command hold bin 256."""
    return bool(np.array_equal(t.args != UNUSED_BIN, slot_mask(t.cmd)))


# ---------------------------------------------------------------------------
# Dataset file


def write_records(fh: BinaryIO, tensors: Sequence[SvgTensor], cfg: ReprConfig) -> None:
    fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, cfg.n_paths, cfg.n_commands, len(tensors)))
    for t in tensors:
        if t.shape != (cfg.n_paths, cfg.n_commands):
            raise CapacityError(f"record shape {t.shape} does not match header")
        fh.write(t.cmd.astype("<u1").tobytes())
        fh.write(t.args.astype("<u2").tobytes())
        fh.write(t.visible.astype("<u1").tobytes())
        fh.write(t.fill.astype("<u1").tobytes())


def read_records(fh: BinaryIO, viewbox: float = 256.0) -> tuple[ReprConfig, list[SvgTensor]]:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated dataset header")
    magic, version, n_p, n_c, count = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    cfg = ReprConfig(n_paths=n_p, n_commands=n_c, viewbox=viewbox)
    sizes = (n_p * n_c, n_p * n_c * N_ARGS * 2, n_p, n_p)
    out = []
    for _ in range(count):
        raw = [fh.read(s) for s in sizes]
        if any(len(r) != s for r, s in zip(raw, sizes)):
            raise ValueError("truncated dataset record")
        out.append(SvgTensor(
            np.frombuffer(raw[0], "<u1").reshape(n_p, n_c).astype(np.int64),
            np.frombuffer(raw[1], "<u2").reshape(n_p, n_c, N_ARGS).astype(np.int64),
            np.frombuffer(raw[2], "<u1").astype(bool),
            np.frombuffer(raw[3], "<u1").astype(np.int64)))
    return cfg, out


def save_dataset(path: str | Path, tensors: Iterable[SvgTensor], cfg: ReprConfig) -> None:
    with open(path, "wb") as fh:
        write_records(fh, list(tensors), cfg)


def load_dataset(path: str | Path, viewbox: float = 256.0) -> tuple[ReprConfig, list[SvgTensor]]:
    with open(path, "rb") as fh:
        return read_records(fh, viewbox)

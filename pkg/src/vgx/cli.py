"""``vgx`` command-line interface."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import torch

from . import latent_ops as lo
from .config import ConfigError, RunConfig, config_hash, load_config, write_config
from .metrics import interpolation_smoothness, reconstruction_error
from .preprocess import augment, normalize_viewbox, preprocess_document
from .svg_io import FillMode, SvgDocument, SvgParseError, parse_svg, serialize_svg
from .tensor_repr import CapacityError, SvgTensor, load_dataset, save_dataset, tensorize
from .training import TrainConfig, load_model, train

log = logging.getLogger("vgx")

EXIT_OK, EXIT_INPUT, EXIT_EMPTY, EXIT_CHECKPOINT, EXIT_CAPACITY = 0, 2, 3, 4, 5
INDEX_COLUMNS = ("record", "file", "augmentation", "category", "split")
FILL_TAGS = {"outline": FillMode.OUTLINE, "fill": FillMode.FILL, "erase": FillMode.ERASE}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Helpers


def split_of(name: str, cfg: RunConfig) -> str:
    """Stable train/val/test assignment from a hash of the file name."""
    u = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big") / 2 ** 64
    if u < cfg.run.train_fraction:
        return "train"
    if u < cfg.run.train_fraction + cfg.run.val_fraction:
        return "val"
    return "test"


def augmentation_seed(seed: int, name: str, k: int) -> int:
    return zlib.crc32(f"{seed}:{name}:{k}".encode())


def index_path(dataset: Path) -> Path:
    return dataset.with_name(dataset.name + ".index.csv")


def read_metadata(corpus: Path) -> dict[str, dict]:
    """Optional sidecar ``metadata.csv`` with columns filename, category and
    fills (space-separated outline/fill/erase tags, one per path)."""
    f = corpus / "metadata.csv"
    if not f.exists():
        return {}
    out = {}
    with f.open(newline="") as fh:
        for row in csv.DictReader(fh):
            name = (row.get("filename") or "").strip()
            if not name:
                continue
            tags = (row.get("fills") or "").split()
            bad = [t for t in tags if t not in FILL_TAGS]
            if bad:
                raise CliError(f"metadata.csv: unknown fill tag {bad[0]!r} for {name}", EXIT_INPUT)
            out[name] = {"category": (row.get("category") or "").strip(),
                         "fills": [FILL_TAGS[t] for t in tags] or None}
    return out


def read_svg(path: Path, strict: bool = False, fills=None) -> SvgDocument:
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_INPUT) from None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return parse_svg(text, strict=strict, fill_overrides=fills)
    except SvgParseError as exc:
        raise CliError(f"{path.name}: {exc}", EXIT_INPUT) from None


def resolve_checkpoint(ckpt: str) -> Path:
    p = Path(ckpt)
    candidates = [p, p / "checkpoints" / "final", p / "final"]
    if p.suffix in (".json", ".bin"):
        candidates.insert(0, p.with_suffix(""))
    for c in candidates:
        if c.with_name(c.name + ".json").is_file() and c.with_name(c.name + ".bin").is_file():
            return c
    raise CliError(f"checkpoint not found: {ckpt}", EXIT_CHECKPOINT)


@dataclass
class Loaded:
    model: torch.nn.Module
    cfg: RunConfig
    hash: str


def open_checkpoint(ckpt: str) -> Loaded:
    prefix = resolve_checkpoint(ckpt)
    try:
        model, _, meta = load_model(prefix)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"unusable checkpoint {prefix}: {exc}", EXIT_CHECKPOINT) from None
    cfg = RunConfig.from_dict(meta["run_config"]) if "run_config" in meta else \
        RunConfig().with_capacity(model.cfg.n_paths, model.cfg.n_commands)
    return Loaded(model, cfg, meta.get("config_hash", config_hash(cfg)))


def to_model_tensor(loaded: Loaded, path: Path) -> SvgTensor:
    doc = read_svg(path)
    try:
        return tensorize(preprocess_document(doc, loaded.cfg.preprocess), loaded.cfg.repr)
    except CapacityError as exc:
        raise CliError(f"{path.name}: {exc}", EXIT_CAPACITY) from None


def write_svg(doc: SvgDocument, path: Path, chash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_svg(doc, comment=f"config {chash}"))


def load_split(dataset: Path, split: str | None, originals_only: bool) -> tuple[list[SvgTensor], list[dict]]:
    try:
        _, records = load_dataset(dataset)
    except OSError as exc:
        raise CliError(f"cannot read dataset {dataset}: {exc.strerror}", EXIT_INPUT) from None
    except ValueError as exc:
        raise CliError(f"{dataset}: {exc}", EXIT_INPUT) from None
    idx = index_path(dataset)
    if idx.exists():
        rows = list(csv.DictReader(idx.open(newline="")))
    else:
        rows = [{"record": str(i), "file": f"record_{i}", "augmentation": "0", "category": "",
                 "split": "train"} for i in range(len(records))]
    keep = [r for r in rows if (split is None or r["split"] == split)
            and (not originals_only or r["augmentation"] == "0")]
    return [records[int(r["record"])] for r in keep], keep


# ---------------------------------------------------------------------------
# Subcommands


def cmd_init_config(args, cfg: RunConfig) -> int:
    write_config(cfg, args.out)
    print(f"wrote {args.out} (config {config_hash(cfg)})")
    return EXIT_OK


def cmd_preprocess(args, cfg: RunConfig) -> int:
    corpus = Path(args.corpus_dir)
    if not corpus.is_dir() or not os.access(corpus, os.R_OK):
        raise CliError(f"cannot read corpus directory {corpus}", EXIT_INPUT)
    n_aug = cfg.run.augmentations_per_svg if args.augmentations is None else args.augmentations
    meta = read_metadata(corpus)
    report = {"config_hash": config_hash(cfg), "files": 0, "parsed": 0, "skipped": {},
              "over_capacity": [], "augmentations_over_capacity": 0, "records": 0}
    records, index = [], []
    for path in sorted(corpus.glob("*.svg")):
        report["files"] += 1
        info = meta.get(path.name, {})
        try:
            doc = read_svg(path, args.strict, info.get("fills"))
        except CliError as exc:
            report["skipped"][path.name] = str(exc)
            continue
        report["parsed"] += 1
        base = normalize_viewbox(doc, cfg.preprocess.viewbox)
        split = split_of(path.name, cfg)
        for k in range(n_aug + 1):
            variant = base if k == 0 else augment(base, augmentation_seed(cfg.run.seed, path.name, k))
            try:
                t = tensorize(preprocess_document(variant, cfg.preprocess), cfg.repr)
            except CapacityError as exc:
                if k == 0:
                    report["over_capacity"].append(f"{path.name}: {exc}")
                    break
                report["augmentations_over_capacity"] += 1
                continue
            index.append({"record": len(records), "file": path.name, "augmentation": k,
                          "category": info.get("category", ""), "split": split})
            records.append(t)
    report["records"] = len(records)
    out = Path(args.out_file)
    if not records:
        print(json.dumps(report, indent=2))
        raise CliError(f"no usable SVG files in {corpus}", EXIT_EMPTY)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, records, cfg.repr)
    with index_path(out).open("w", newline="") as fh:
        w = csv.DictWriter(fh, INDEX_COLUMNS)
        w.writeheader()
        w.writerows(index)
    out.with_name(out.name + ".report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    dataset = Path(args.dataset)
    try:
        repr_cfg, _ = load_dataset(dataset)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load dataset {dataset}: {exc}", EXIT_INPUT) from None
    if (repr_cfg.n_paths, repr_cfg.n_commands) != (cfg.repr.n_paths, cfg.repr.n_commands):
        log.warning("using the dataset capacity N_P=%d N_C=%d", repr_cfg.n_paths, repr_cfg.n_commands)
        cfg = cfg.with_capacity(repr_cfg.n_paths, repr_cfg.n_commands)
    ts = cfg.train
    if args.epochs is not None:
        ts = replace(ts, epochs=args.epochs)
    if args.max_steps is not None:
        ts = replace(ts, max_steps=args.max_steps)
    cfg = replace(cfg, train=ts)
    data, _ = load_split(dataset, "train", originals_only=False)
    holdout, _ = load_split(dataset, "val", originals_only=True)
    if not data:
        raise CliError("the train split is empty", EXIT_EMPTY)
    work = Path(args.out)
    work.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    write_config(cfg, work / "config.toml")
    tcfg = TrainConfig(epochs=ts.epochs, batch_size=ts.batch_size, assignment=ts.assignment,
                       seed=cfg.run.seed, max_steps=ts.max_steps,
                       checkpoint_every=ts.checkpoint_every, holdout_every=ts.holdout_every)
    res = train(data, cfg.model, cfg.optim, cfg.loss, tcfg, holdout=holdout,
                log_path=work / "log.csv", checkpoint_dir=work / "checkpoints",
                meta={"run_config": cfg.to_dict(), "config_hash": chash})
    last = res.history[-1] if res.history else {}
    print(f"trained {len(res.history)} steps on {len(data)} records "
          f"(skipped {res.skipped}); final loss {last.get('loss_total', float('nan')):.4f}; "
          f"config {chash}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    loaded = open_checkpoint(args.ckpt)
    data, _ = load_split(Path(args.data), args.split, originals_only=True)
    data = [t for t in data if t.shape == (loaded.model.cfg.n_paths, loaded.model.cfg.n_commands)]
    if not data:
        raise CliError(f"no usable records in split {args.split!r}", EXIT_EMPTY)
    report = {}
    re = reconstruction_error(loaded.model, data, loaded.cfg.metric, report=report)
    pairs = list(zip(data[0::2], data[1::2]))
    smooth = interpolation_smoothness(loaded.model, pairs, loaded.cfg.metric) if pairs else float("nan")
    row = {"config_hash": loaded.hash, "split": args.split, "n_samples": len(data),
           "re": f"{re:.6f}", "is": f"{smooth:.6f}", "sentinel": report["sentinel"]}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, list(row))
        w.writeheader()
        w.writerow(row)
    print(",".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    loaded = open_checkpoint(args.ckpt)
    out = Path(args.out)
    for name in args.inputs:
        path = Path(name)
        t = to_model_tensor(loaded, path)
        doc = lo.decode_latent(loaded.model, lo.encode_doc(loaded.model, t))
        write_svg(doc, out / f"{path.stem}_recon.svg", loaded.hash)
    print(f"wrote {len(args.inputs)} reconstructions to {out}")
    return EXIT_OK


def cmd_interpolate(args, cfg: RunConfig) -> int:
    loaded = open_checkpoint(args.ckpt)
    a = to_model_tensor(loaded, Path(args.source))
    b = to_model_tensor(loaded, Path(args.target))
    frames, _ = lo.interpolate_keyframes(loaded.model, a, b, args.frames, args.finetune_steps,
                                         spherical=args.spherical, seed=loaded.cfg.run.seed)
    files = lo.write_frames(frames, args.out, config_hash=loaded.hash)
    print(f"wrote {len(files)} frames to {args.out}")
    return EXIT_OK


def cmd_sample(args, cfg: RunConfig) -> int:
    loaded = open_checkpoint(args.ckpt)
    docs = lo.sample(loaded.model, args.sigma, args.seed, args.n)
    out = Path(args.out)
    for k, doc in enumerate(docs):
        write_svg(doc, out / f"sample_{k:04d}.svg", loaded.hash)
    print(f"wrote {len(docs)} samples to {out}")
    return EXIT_OK


def cmd_simplify(args, cfg: RunConfig) -> int:
    doc = preprocess_document(read_svg(Path(args.input)), cfg.preprocess)
    out = Path(args.output)
    write_svg(doc, out, config_hash(cfg))
    print(f"{args.input}: {len(doc.paths)} paths, "
          f"{sum(len(p.commands) for p in doc.paths)} commands -> {out}")
    return EXIT_OK


def format_record(t: SvgTensor) -> str:
    names = {0: "SOS", 1: "M", 2: "L", 3: "C", 4: "Z", 5: "EOS"}
    lines = []
    for i in range(t.shape[0]):
        lines.append(f"path {i}: visible={bool(t.visible[i])} fill={FillMode(int(t.fill[i])).name}")
        if not t.visible[i]:
            continue
        for j in range(t.shape[1]):
            k = int(t.cmd[i, j])
            lines.append(f"  {j:3d} {names[k]:<3} " + " ".join(f"{int(v):3d}" for v in t.args[i, j]))
            if k == 5:
                break
    return "\n".join(lines)


def cmd_inspect(args, cfg: RunConfig) -> int:
    path = Path(args.dataset)
    try:
        repr_cfg, records = load_dataset(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load dataset {path}: {exc}", EXIT_INPUT) from None
    print(f"{path}: {len(records)} records, N_P={repr_cfg.n_paths}, N_C={repr_cfg.n_commands}")
    if args.record is not None:
        if not 0 <= args.record < len(records):
            raise CliError(f"record {args.record} out of range", EXIT_INPUT)
        print(format_record(records[args.record]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vgx", description="Vector icon VAE toolkit")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init-config", help="write the default configuration")
    s.add_argument("out")
    s.set_defaults(func=cmd_init_config)

    s = sub.add_parser("preprocess", help="build a tensor dataset from a directory of SVGs")
    s.add_argument("corpus_dir")
    s.add_argument("out_file")
    s.add_argument("--augmentations", type=int, help="per file; overrides the config")
    s.add_argument("--strict", action="store_true", help="reject unsupported SVG features")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model on a dataset")
    s.add_argument("dataset")
    s.add_argument("--out", required=True, help="work directory")
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-steps", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="reconstruction error and interpolation smoothness")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--out", default="metrics.csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("reconstruct", help="encode and decode SVG files")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("inputs", nargs="+")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("interpolate", help="latent interpolation between two SVGs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--from", dest="source", required=True)
    s.add_argument("--to", dest="target", required=True)
    s.add_argument("--frames", type=int, default=10, help="number of intervals M")
    s.add_argument("--finetune-steps", type=int, default=0)
    s.add_argument("--spherical", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("sample", help="decode random latents")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--sigma", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("simplify", help="run one SVG through the preprocessing pipeline")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_simplify)

    s = sub.add_parser("inspect", help="print a dataset summary or one record")
    s.add_argument("dataset")
    s.add_argument("--record", type=int)
    s.set_defaults(func=cmd_inspect)
    return p


def set_threads(cfg: RunConfig) -> None:
    env = os.environ.get("VGX_THREADS")
    n = cfg.run.threads
    if env:
        try:
            n = max(1, int(env))
        except ValueError:
            raise CliError(f"VGX_THREADS must be an integer, got {env!r}", EXIT_INPUT) from None
    torch.set_num_threads(n)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        set_threads(cfg)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"vgx: config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CliError as exc:
        print(f"vgx: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration: every module config plus run plumbing, read from and
written to a sectioned TOML file."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .metrics import MetricConfig
from .model import ModelConfig
from .nn_core import OptimConfig
from .preprocess import PreprocessConfig
from .tensor_repr import ReprConfig
from .training import ASSIGNMENTS, LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 100
    batch_size: int = 100
    assignment: str = "ordered"
    max_steps: int | None = None
    checkpoint_every: int = 5
    holdout_every: int = 1

    def __post_init__(self):
        if self.assignment not in ASSIGNMENTS:
            raise ValueError(f"assignment must be one of {ASSIGNMENTS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    corpus_dir: str = ""
    work_dir: str = ""
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    augmentations_per_svg: int = 20
    threads: int = 1

    def __post_init__(self):
        if not (0 < self.train_fraction and 0 <= self.val_fraction
                and self.train_fraction + self.val_fraction <= 1):
            raise ValueError("split fractions must be non-negative and sum to at most 1")
        if self.augmentations_per_svg < 0 or self.threads < 1:
            raise ValueError("augmentations_per_svg must be >= 0 and threads >= 1")


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    repr: ReprConfig = field(default_factory=ReprConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainSettings = field(default_factory=TrainSettings)
    metric: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        if (self.model.n_paths, self.model.n_commands) != (self.repr.n_paths, self.repr.n_commands):
            raise ConfigError("model n_paths/n_commands must match repr "
                              f"({self.model.n_paths}, {self.model.n_commands}) vs "
                              f"({self.repr.n_paths}, {self.repr.n_commands})")
        if self.preprocess.viewbox != self.repr.viewbox:
            raise ConfigError("preprocess.viewbox and repr.viewbox differ")

    def to_dict(self) -> dict:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        parts = {}
        for f in fields(cls):
            section = data.get(f.name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"[{f.name}] must be a table")
            kind = type(f.default_factory())
            known = {g.name for g in fields(kind)}
            unknown = set(section) - known
            if unknown:
                raise ConfigError(f"unknown keys in [{f.name}]: {', '.join(sorted(unknown))}")
            try:
                parts[f.name] = kind(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{f.name}]: {exc}") from None
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
        return cls(**parts)

    def with_capacity(self, n_paths: int, n_commands: int) -> RunConfig:
        return replace(self, repr=replace(self.repr, n_paths=n_paths, n_commands=n_commands),
                       model=replace(self.model, n_paths=n_paths, n_commands=n_commands))


def config_hash(cfg: RunConfig) -> str:
    """Stable 12-hex-digit digest of the configuration."""
    text = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def load_config(path: str | Path | None, check_dirs: bool = True) -> RunConfig:
    """Read a TOML run config; missing keys take their defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        data = tomli.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    # an explicit "none" spells an unset optional value
    for section in data.values():
        if isinstance(section, dict):
            for k, v in section.items():
                if v == "none":
                    section[k] = None
    cfg = RunConfig.from_dict(data)
    if check_dirs:
        for name in ("corpus_dir", "work_dir"):
            d = getattr(cfg.run, name)
            if d and not Path(d).is_dir():
                raise ConfigError(f"run.{name} {d!r} is not a directory")
    return cfg


# Notes written next to keys whose values follow the published setup.
_NOTES = {
    ("preprocess", "eta"): "sharp-angle split threshold in degrees",
    ("preprocess", "delta"): "maximum segment length after subdivision",
    ("preprocess", "schneider_max_error"): "squared fitting tolerance",
    ("repr", "n_paths"): "N_P",
    ("repr", "n_commands"): "N_C, including the EOS terminator",
    ("model", "d_e"): "published: 256",
    ("model", "layers"): "published: 4",
    ("model", "ff_dim"): "published: 512",
    ("model", "heads"): "published: 8",
    ("model", "d_z"): "published: 256",
    ("model", "dropout"): "published: 0.1",
    ("optim", "lr0"): "published: 1e-4",
    ("optim", "decay"): "published: 0.9 every 5 epochs",
    ("optim", "warmup_steps"): "published: 500",
    ("optim", "clip_norm"): "published: 1.0",
    ("loss", "w_kl"): "published: 0.01",
    ("train", "batch_size"): "published: 100",
    ("train", "max_steps"): "\"none\" for no cap",
    ("run", "augmentations_per_svg"): "published: 20",
    ("run", "threads"): "overridden by VGX_THREADS",
}


def _toml_value(v) -> str:
    if v is None:
        return '"none"'
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return json.dumps(str(v))


def dump_config(cfg: RunConfig) -> str:
    lines = [f"# vgx run configuration (hash {config_hash(cfg)})"]
    for section, values in cfg.to_dict().items():
        lines += ["", f"[{section}]"]
        for k, v in values.items():
            note = _NOTES.get((section, k))
            line = f"{k} = {_toml_value(v)}"
            lines.append(f"{line:<32}# {note}" if note else line)
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))

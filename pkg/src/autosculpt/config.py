"""Run configuration: a flat key=value text format plus typed defaults.

Every hyperparameter default is overridable from a config file and again
from CLI flags, so one file can pin an experiment exactly. Unknown keys
are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "run"
    # model: demo_cnn | demo_transformer | base path of a saved model
    model: str = "demo_cnn"
    model_seed: int = 0
    # pattern library: size built from the catalog, or an explicit file
    patterns: int = 6
    library_path: str = ""
    # search constraints
    flops_target: float = 0.5
    acc_floor: float = -1.0  # < 0 means: derive as dense val acc - acc_drop
    acc_drop: float = 0.10
    max_inner_steps: int = 50
    episodes: int = 100
    # policy optimization
    actor_lr: float = 3e-3
    critic_lr: float = 1e-3
    gamma: float = 0.9
    clip_epsilon: float = 0.2
    buffer_size: int = 32
    update_iters: int = 15
    tau: float = 0.5
    alpha_mode: str = "constant"
    alpha_start: float = 0.5
    alpha_end: float = 0.5
    alpha_episodes: int = 100
    per_kernel: bool = False
    # dense training and fine-tuning (shared schedule shape)
    train_epochs: int = 20
    ft_epochs: int = 20
    ft_lr: float = 3e-2
    ft_momentum: float = 0.9
    ft_weight_decay: float = 4e-5
    ft_decay: float = 0.1
    ft_milestones: tuple = (10, 16)
    ft_batch: int = 32
    # dataset: synth | cifar10
    dataset: str = "synth"
    data_dir: str = ""
    data_seed: int = 0
    samples: int = 2000
    classes: int = 4
    image_size: int = 16
    channels: int = 1
    sigma: float = 0.5

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    """String-to-field-type conversion, typed by the field's default."""
    default = _FIELDS[name].default
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            raw = raw.strip()
            return tuple(int(p) for p in raw.split(",")) if raw else ()
        return raw.strip()
    except ValueError as e:
        raise ValueError(f"config key {name}: {e}") from None


def parse_kv(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment; blanks ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key = value, "
                             f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then overrides (already-typed values
    pass through; strings are coerced)."""
    cfg = RunConfig()
    sources = []
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            sources.append(parse_kv(fh.read()))
    if overrides:
        sources.append(overrides)
    for src in sources:
        for key, value in src.items():
            if key not in _FIELDS:
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(value, str):
                value = _coerce(key, value)
            setattr(cfg, key, value)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.episodes < 1 or cfg.train_epochs < 0 or cfg.ft_epochs < 0:
        raise ValueError("episodes must be >= 1 and epoch counts >= 0")
    if not 0.0 <= cfg.flops_target <= 1.0:
        raise ValueError(f"flops_target {cfg.flops_target} outside [0, 1]")
    if cfg.acc_floor > 1.0:
        raise ValueError(f"acc_floor {cfg.acc_floor} above 1")
    if cfg.dataset not in ("synth", "cifar10"):
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    if cfg.dataset == "cifar10" and not cfg.data_dir:
        raise ValueError("dataset cifar10 requires data_dir")
    if not (cfg.patterns >= 2 or cfg.library_path):
        raise ValueError("patterns must be >= 2 unless library_path is set")


def config_echo(cfg: RunConfig) -> str:
    """Canonical key=value text of the resolved config, field order."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"

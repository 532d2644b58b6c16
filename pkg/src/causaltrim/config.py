"""Flat key=value experiment configs and run manifests.

A config file is plain text: one ``key=value`` per line, ``#`` comments,
blank lines ignored.  Unknown keys are fatal so that typos in experiment
sweeps surface immediately.  The single ``seed`` key feeds every random
stream in a run; there is no ambient entropy anywhere.

A run manifest is itself a valid config file: it echoes every resolved
key and adds ``run.*`` metadata entries (tool version, command, paths,
timestamps), which the parser ignores on load.  Re-running a command with
its manifest as the config therefore reproduces the run.
"""

from __future__ import annotations

import datetime
from pathlib import Path

from .data import GeneratorConfig
from .errors import ConfigError
from .training import TrainConfig

# key -> (section, python type, help)
CONFIG_KEYS: dict[str, tuple[str, type, str]] = {
    "seed": ("shared", int, "master seed for every random stream"),
    # synthetic benchmark
    "backgrounds": ("generator", int, "number of anatomical background prototypes (G)"),
    "lesions": ("generator", int, "number of lesion signature types (L)"),
    "regions": ("generator", int, "feature regions per image (N), one lesion region"),
    "raw_dim": ("generator", int, "raw per-region feature dimension"),
    "noise_sigma": ("generator", float, "Gaussian noise level on region features"),
    "train_bias": ("generator", float, "P(paired background | lesion) on train and iid_test"),
    "ood_bias": ("generator", float, "P(paired background | lesion) on ood_test"),
    "train_count": ("generator", int, "training instances"),
    "iid_count": ("generator", int, "iid_test instances"),
    "ood_count": ("generator", int, "ood_test instances"),
    # model and optimization
    "epochs": ("trainer", int, "training epochs"),
    "batch_size": ("trainer", int, "instances per batch"),
    "lr": ("trainer", float, "learning rate"),
    "lambda_orth": ("trainer", float, "weight of the orthogonality loss"),
    "beta1": ("trainer", float, "first-moment decay"),
    "beta2": ("trainer", float, "second-moment decay"),
    "epsilon": ("trainer", float, "optimizer epsilon"),
    "weight_decay": ("trainer", float, "decoupled weight decay"),
    "bank_size": ("trainer", int, "prototype bank size (K)"),
    "momentum": ("trainer", float, "bank momentum coefficient (m)"),
    "tau": ("trainer", float, "relevance softmax temperature"),
    "feature_dim": ("trainer", int, "encoded feature dimension (D)"),
    "hidden_dim": ("trainer", int, "fusion hidden width (H)"),
    "use_bank": ("trainer", bool, "maintain the prototype bank"),
    "use_trim": ("trainer", bool, "apply the trimming module"),
    "checkpoint_every": ("trainer", int, "epochs between checkpoints (0 = final only)"),
    "num_seeds": ("trainer", int, "seeds for median reporting in ablations"),
}


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = raw.strip()
    return values


def build_configs(values: dict[str, str]) -> tuple[GeneratorConfig, TrainConfig]:
    """Type-check raw values and materialize both config dataclasses."""
    gen_kwargs: dict[str, object] = {}
    train_kwargs: dict[str, object] = {}
    for key, raw in values.items():
        if key.startswith("run."):
            continue  # manifest metadata namespace
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, typ, _ = CONFIG_KEYS[key]
        try:
            value = _parse_bool(key, raw) if typ is bool else typ(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None
        if section in ("generator", "shared"):
            gen_kwargs[key] = value
        if section in ("trainer", "shared"):
            train_kwargs[key] = value
    gen = GeneratorConfig(**gen_kwargs)
    train = TrainConfig(**train_kwargs)
    gen.validate()
    train.validate()
    return gen, train


def load_config(path, seed_override: int | None = None) -> tuple[GeneratorConfig, TrainConfig]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text())
    if seed_override is not None:
        values["seed"] = str(seed_override)
    return build_configs(values)


def default_configs(seed_override: int | None = None) -> tuple[GeneratorConfig, TrainConfig]:
    values = {} if seed_override is None else {"seed": str(seed_override)}
    return build_configs(values)


def config_lines(gen: GeneratorConfig, train: TrainConfig) -> list[str]:
    """All keys with their resolved values, in declaration order."""
    lines = []
    for key, (section, typ, _) in CONFIG_KEYS.items():
        source = gen if section in ("generator", "shared") else train
        value = getattr(source, key)
        lines.append(f"{key}={value!r}" if typ is float else f"{key}={value}")
    return lines


def write_manifest(path, gen: GeneratorConfig, train: TrainConfig, *,
                   command: str, version: str, paths: dict[str, str],
                   started_at: str, finished_at: str = "pending") -> None:
    """Write the resolved run manifest (loadable as a config file)."""
    lines = ["# run manifest: pass this file back as --config to reproduce the run"]
    lines.extend(config_lines(gen, train))
    lines.append(f"run.version={version}")
    lines.append(f"run.command={command}")
    for name, value in paths.items():
        lines.append(f"run.{name}={value}")
    lines.append(f"run.started_at={started_at}")
    lines.append(f"run.finished_at={finished_at}")
    Path(path).write_text("\n".join(lines) + "\n")


def timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def key_documentation() -> str:
    """One line per config key, for --help and the README."""
    width = max(len(k) for k in CONFIG_KEYS)
    return "\n".join(
        f"{key:<{width}s}  {help_}" for key, (_, _, help_) in CONFIG_KEYS.items()
    )

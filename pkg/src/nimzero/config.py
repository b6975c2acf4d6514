"""Run configuration: defaults, then an INI file, then command-line flags.

The file format is standard INI with four sections; every key is optional::

    [run]
    board = 1,3,5,7,9
    seed = 0
    out = runs/five-heaps
    workers = 8

    [search]
    simulations = 50        ; blank = 50/60/100 for 5/6/7 heaps
    c1 = 0.25
    c2 = 19652
    alpha = 0.35
    epsilon = 0.25
    temperature_plies = 3
    c_puct =                ; set to use the plain pUCT bonus
    reuse_tree = false

    [train]
    iterations = 500
    episodes = 100
    batch_size = 128
    replay_window = 5
    batches_per_iteration =  ; blank = one epoch over the newest iteration
    lr = 0.001
    ...

    [supervised]
    length = 20
    heaps = 7
    steps =                 ; blank = 1e6 for parity, 1e5 for nim-sum
    ...

``;`` and ``#`` start comments. Blank values mean "use the default".
:func:`dump_config` writes the fully resolved configuration in the same format.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from nimzero.game import format_heaps, parse_heaps
from nimzero.parity_lab import SupervisedConfig
from nimzero.selfplay import TrainConfig

DEFAULT_OUT_ROOT = "runs"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(cast: Callable) -> Callable:
    return lambda text: None if str(text).strip() == "" else cast(text)


def _float_int(text) -> int:
    # accepts "1e5" as well as "100000"
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


# (section, key) -> (target, attribute, parser). Target "run" is RunConfig itself.
KEYS: dict[tuple[str, str], tuple[str, str, Callable]] = {
    ("run", "board"): ("run", "board", parse_heaps),
    ("run", "seed"): ("run", "seed", int),
    ("run", "out"): ("run", "out", _optional(str)),
    ("run", "workers"): ("train", "workers", int),
    ("search", "simulations"): ("train", "simulations", _optional(int)),
    ("search", "c1"): ("train", "c1", float),
    ("search", "c2"): ("train", "c2", float),
    ("search", "alpha"): ("train", "dirichlet_alpha", float),
    ("search", "epsilon"): ("train", "dirichlet_epsilon", float),
    ("search", "temperature_plies"): ("train", "temperature_plies", int),
    ("search", "c_puct"): ("train", "c_puct", _optional(float)),
    ("search", "reuse_tree"): ("train", "reuse_tree", _bool),
    ("train", "iterations"): ("train", "iterations", int),
    ("train", "episodes"): ("train", "episodes_per_iteration", int),
    ("train", "batch_size"): ("train", "batch_size", int),
    ("train", "replay_window"): ("train", "replay_window", int),
    ("train", "batches_per_iteration"): ("train", "batches_per_iteration", _optional(int)),
    ("train", "lr"): ("train", "learning_rate", float),
    ("train", "max_grad_norm"): ("train", "max_grad_norm", _optional(float)),
    ("train", "hidden_size"): ("train", "hidden_size", int),
    ("train", "layers"): ("train", "layers", int),
    ("train", "elo_every"): ("train", "elo_every", int),
    ("train", "games_per_pairing"): ("train", "games_per_pairing", int),
    ("train", "k_threshold"): ("train", "k_threshold", int),
    ("train", "k_veteran"): ("train", "k_veteran", float),
    ("train", "k_novice"): ("train", "k_novice", float),
    ("train", "eval_sample"): ("train", "eval_sample", int),
    ("train", "elo_cache_mb"): ("train", "elo_cache_mb", float),
    ("supervised", "length"): ("supervised", "length", int),
    ("supervised", "heaps"): ("supervised", "heaps", int),
    ("supervised", "steps"): ("supervised", "steps", _optional(_float_int)),
    ("supervised", "batch_size"): ("supervised", "batch_size", int),
    ("supervised", "lr"): ("supervised", "learning_rate", float),
    ("supervised", "layers"): ("supervised", "layers", int),
    ("supervised", "hidden_size"): ("supervised", "hidden_size", int),
    ("supervised", "eval_every"): ("supervised", "eval_every", int),
    ("supervised", "eval_samples"): ("supervised", "eval_samples", int),
    ("supervised", "stop_when_converged"): ("supervised", "stop_when_converged", _bool),
}

# command-line flag name -> keys it sets
FLAG_KEYS = {
    "board": [("run", "board")],
    "seed": [("run", "seed")],
    "out": [("run", "out")],
    "workers": [("run", "workers")],
    "sims": [("search", "simulations")],
    "alpha": [("search", "alpha")],
    "epsilon": [("search", "epsilon")],
    "c1": [("search", "c1")],
    "c2": [("search", "c2")],
    "iterations": [("train", "iterations")],
    "episodes": [("train", "episodes")],
    "lr": [("train", "lr"), ("supervised", "lr")],
}


@dataclass(frozen=True)
class RunConfig:
    board: tuple[int, ...] = (1, 3, 5, 7, 9)
    seed: int = 0
    out: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    supervised: SupervisedConfig = field(default_factory=SupervisedConfig)

    def resolved_train(self) -> TrainConfig:
        return replace(self.train, board=self.board, seed=self.seed)

    def resolved_supervised(self) -> SupervisedConfig:
        return replace(self.supervised, seed=self.seed)

    def output_dir(self, default_name: str) -> Path:
        if self.out:
            return Path(self.out)
        return Path(os.environ.get("NIMZERO_OUT", DEFAULT_OUT_ROOT)) / default_name


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip().lower()
        elif current == section and stripped.split("=", 1)[0].strip().lower() == key:
            return number
    return None


def _apply(values: dict[str, dict[str, Any]], target, attr, value):
    values.setdefault(target, {})[attr] = value


def load_config(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then ``path`` (if given), then ``overrides`` keyed by flag name.

    Raises :class:`ConfigError` naming the file and line of a bad entry.
    """
    values: dict[str, dict[str, Any]] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                           interpolation=None)
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                where = f"{path}:{_line_of(text, section.lower(), key)}"
                spec = KEYS.get((section.lower(), key))
                if spec is None:
                    raise ConfigError(f"{where}: unknown setting [{section}] {key}")
                target, attr, cast = spec
                try:
                    _apply(values, target, attr, cast(raw))
                except ValueError as exc:
                    raise ConfigError(f"{where}: bad value for {key}: {exc}") from exc
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in FLAG_KEYS:
            raise ConfigError(f"unknown override {flag!r}")
        for key in FLAG_KEYS[flag]:
            target, attr, cast = KEYS[key]
            _apply(values, target, attr, cast(value) if isinstance(value, str) else value)
    try:
        run = values.get("run", {})
        # the board decides the default simulation count, so it goes in first
        train = TrainConfig(board=run.get("board", RunConfig.board), **values.get("train", {}))
        supervised = SupervisedConfig(**values.get("supervised", {}))
        config = RunConfig(train=train, supervised=supervised, **run)
        config.resolved_train()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return config


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return format_heaps(value)
    return str(value)


def dump_config(config: RunConfig) -> str:
    """The resolved configuration in the INI format :func:`load_config` reads."""
    parser = configparser.ConfigParser(interpolation=None)
    sources = {"run": config, "train": config.resolved_train(),
               "supervised": config.resolved_supervised()}
    for (section, key), (target, attr, _) in KEYS.items():
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, _render(getattr(sources[target], attr)))
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser.items(section)]
        lines.append("")
    return "\n".join(lines)


def write_config(config: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.ini"
    path.write_text(dump_config(config))
    return path


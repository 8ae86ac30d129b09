"""Plain-text run configuration: one `key = value` per line, '#' comments.

Unknown keys are rejected; every value is validated against the training
and corpus invariants.  The BGRU_SEED environment variable overrides the
configured seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .dataset import NOISE_KINDS, CorpusSpec
from .errors import ConfigError
from .trainer import TrainConfig


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _parse_names(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# key -> (parser, default); None default means the key is required
_FIELDS = {
    "seed": (int, 1234),
    "units": (int, 1024),
    "layers": (int, 1),
    "T": (int, 50),
    "rho": (float, 0.8),
    "adam_beta1": (float, 0.4),
    "adam_beta2": (float, 0.9),
    "learning_rate": (float, None),
    "lr_damping": (float, 0.5),
    "damp_from_pi": (float, 0.8),
    "minibatch": (int, 10),
    "dropout_input": (float, 0.05),
    "dropout_hidden": (float, 0.2),
    "pi_schedule": (_parse_floats, (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)),
    "epochs_round1": (int, 100),
    "epochs_per_pi": (int, 1000),
    "epochs_final_pi": (int, 100),
    "eval_every": (int, 10),
    "early_stop_patience": (int, 3),
    "grad_clip": (float, 5.0),
    "round1_binary_states": (_parse_bool, False),
    "mask_scope": (str, "per_matrix"),
    "corpus_mode": (str, "synthetic"),
    "train_utterances": (int, 5),
    "test_utterances": (int, 2),
    "noise_kinds": (_parse_names, NOISE_KINDS),
    "duration_s": (float, 1.5),
    "sample_rate": (int, 16000),
    "speech_dir": (str, ""),
    "noise_dir": (str, ""),
    "train_list": (str, ""),
    "test_list": (str, ""),
    "out_dir": (str, None),
}

_TRAIN_KEYS = (
    "T", "rho", "adam_beta1", "adam_beta2", "learning_rate", "lr_damping",
    "damp_from_pi", "minibatch", "dropout_input", "dropout_hidden",
    "pi_schedule", "epochs_round1", "epochs_per_pi", "epochs_final_pi",
    "eval_every", "early_stop_patience", "grad_clip", "round1_binary_states",
    "mask_scope", "units", "layers", "seed",
)

_CORPUS_KEYS = (
    "corpus_mode", "train_utterances", "test_utterances", "noise_kinds",
    "duration_s", "sample_rate", "seed", "speech_dir", "noise_dir",
    "train_list", "test_list",
)


@dataclass
class RunConfig:
    values: dict

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    def train_config(self) -> TrainConfig:
        kwargs = {k: self.values[k] for k in _TRAIN_KEYS}
        return TrainConfig(**kwargs).validate()

    def corpus_spec(self) -> CorpusSpec:
        v = self.values
        return CorpusSpec(
            mode=v["corpus_mode"],
            train_utterances=v["train_utterances"],
            test_utterances=v["test_utterances"],
            noise_kinds=v["noise_kinds"],
            duration_s=v["duration_s"],
            sample_rate=v["sample_rate"],
            seed=v["seed"],
            speech_dir=v["speech_dir"],
            noise_dir=v["noise_dir"],
            train_list=v["train_list"],
            test_list=v["test_list"],
        ).validate()


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        parser, _ = _FIELDS[key]
        try:
            values[key] = parser(val)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from e

    for key, (_, default) in _FIELDS.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"missing required config key {key!r} in {source}")
            values[key] = default

    env_seed = os.environ.get("BGRU_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"BGRU_SEED must be an integer, got {env_seed!r}") from e

    cfg = RunConfig(values=values)
    cfg.train_config()
    cfg.corpus_spec()
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text, source=str(path))

"""
Flat ``key=value`` run configuration.

One key per line, ``#`` starts a comment line, blank lines are ignored.
Values are typed by the schema below; unknown or repeated keys are errors.
``dump`` writes every resolved key in sorted order, and loading that text
back yields the same configuration.
"""

import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, Mapping, Optional, Tuple, Union

from gradreg.errors import ConfigError, InvalidParameterError
from gradreg.perturb import PerturbSpec
from gradreg.train import TrainConfig

logger = logging.getLogger(__name__)

RESOLVED_NAME = "resolved.cfg"
DATASETS = ("mnist", "synthetic")
STATS_SPLITS = ("train", "test")


def _opt(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse_optional(text: str):
        return None if text == "" else parse(text)

    return parse_optional


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _p(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _choice(options: Tuple[str, ...]) -> Callable[[str], str]:
    def parse_choice(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse_choice


# key -> (parser, default)
SCHEMA: Dict[str, Tuple[Callable[[str], Any], Any]] = {
    "dataset": (_choice(DATASETS), "synthetic"),
    "mnist_dir": (_opt(str), None),
    "train_images": (_opt(str), None),
    "train_labels": (_opt(str), None),
    "test_images": (_opt(str), None),
    "test_labels": (_opt(str), None),
    "train_subset": (_opt(int), None),
    "test_subset": (_opt(int), None),
    "synthetic_per_class": (int, 200),
    "synthetic_dim": (int, 16),
    "synthetic_classes": (int, 3),
    "synthetic_spread": (float, 0.05),
    "synthetic_train_fraction": (float, 0.8),
    "hidden": (_ints, ()),
    "p": (_p, 2.0),
    "sigma": (float, 1.0),
    "inject": (_bool, False),
    "lambda": (float, 0.0),
    "max_norm": (_opt(float), None),
    "lr": (float, 0.1),
    "epochs": (int, 5),
    "batch": (int, 100),
    "momentum": (float, 0.5),
    "seed": (int, 0),
    "two_stage_first": (_opt(int), None),
    "stage2_cap": (_opt(int), None),
    "noise_levels": (_floats, (0.0, 0.1, 0.3)),
    "noise_trials": (int, 1),
    "n_directions": (int, 1),
    "density_noise": (float, 0.01),
    "density_cutoff": (float, 0.1),
    "ls_step": (float, 0.01),
    "ls_t_max": (float, 20.0),
    "bin_width": (float, 0.01),
    "stats_split": (_choice(STATS_SPLITS), "test"),
    "attack_examples": (int, 20),
    "magnify": (float, 10.0),
    "grid_cols": (int, 10),
    "out_dir": (_opt(str), None),
}

DEFAULTS: Dict[str, Any] = {key: default for key, (_, default) in SCHEMA.items()}


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return "inf" if value == math.inf else repr(value)
    return str(value)


class RunConfig(Mapping[str, Any]):
    """Resolved run configuration: schema defaults, then config defaults, then the file."""

    def __init__(self, values: Mapping[str, Any]):
        unknown = sorted(set(values) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        self._values = {**DEFAULTS, **values}

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    @classmethod
    def parse(
        cls,
        text: str,
        defaults: Optional[Mapping[str, Any]] = None,
        limits: Optional[Mapping[str, int]] = None,
        source: str = "<config>",
    ) -> "RunConfig":
        values: Dict[str, Any] = dict(defaults or {})
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
            if key not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
            seen.add(key)
            parse, _ = SCHEMA[key]
            try:
                values[key] = parse(value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
        config = cls(values)
        config.check(limits or {})
        return config

    @classmethod
    def load(
        cls,
        path: Union[str, Path],
        defaults: Optional[Mapping[str, Any]] = None,
        limits: Optional[Mapping[str, int]] = None,
    ) -> "RunConfig":
        text = Path(path).read_text()
        logger.debug("Loaded run config %s", path)
        return cls.parse(text, defaults, limits, source=str(path))

    def replace(self, **changes: Any) -> "RunConfig":
        return RunConfig({**self._values, **changes})

    def check(self, limits: Mapping[str, int]) -> None:
        if self["epochs"] > limits.get("max_epochs", math.inf):
            raise ConfigError(f"epochs={self['epochs']} exceeds the limit of {limits['max_epochs']}")
        if self["noise_trials"] > limits.get("max_noise_trials", math.inf):
            raise ConfigError(f"noise_trials={self['noise_trials']} exceeds the limit of {limits['max_noise_trials']}")
        if self["attack_examples"] > limits.get("max_attack_examples", math.inf):
            raise ConfigError(
                f"attack_examples={self['attack_examples']} exceeds the limit of {limits['max_attack_examples']}"
            )
        if not self["noise_levels"]:
            raise ConfigError("noise_levels must name at least one level")

    def dump(self) -> str:
        return "".join(f"{key}={format_value(self[key])}\n" for key in sorted(self))

    def write_resolved(self, out_dir: Union[str, Path]) -> Path:
        path = Path(out_dir) / RESOLVED_NAME
        path.write_text(self.dump())
        return path

    def perturb_spec(self) -> PerturbSpec:
        return PerturbSpec(self["p"], self["sigma"])

    def train_config(self, progress: bool = False) -> TrainConfig:
        try:
            spec = self.perturb_spec() if self["inject"] else None
        except InvalidParameterError as exc:
            raise InvalidParameterError(f"inject=true needs a valid p and sigma: {exc}") from exc
        return TrainConfig(
            learning_rate=self["lr"],
            epochs=self["epochs"],
            batch_size=self["batch"],
            seed=self["seed"],
            spec=spec,
            weight_decay=self["lambda"],
            max_norm=self["max_norm"],
            momentum=self["momentum"],
            progress=progress,
        )

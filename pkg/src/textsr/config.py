"""Run configuration: one structured file driving every command.

Sections mirror the subsystems (diffusion, denoiser, latent, guidance,
dataset, eval, train).  Every field is validated before any work starts
and unknown keys are rejected.  Override precedence is

    CLI  >  environment  >  config file  >  defaults

Environment overrides use ``DTPSR_<SECTION>__<FIELD>`` (values parsed by
the field's type; lists as JSON), and ``DTPSR_CONFIG`` names the default
config file path.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .degradation import DegradationParams
from .denoiser import DenoiserConfig
from .guidance import (DEFAULT_LAMBDA_S, DEFAULT_NEG_GLOBAL, DEFAULT_NEG_HF,
                       DEFAULT_NEG_LF, GUIDANCE_MODES, GuidanceSpec)

ENV_CONFIG_PATH = "DTPSR_CONFIG"
ENV_PREFIX = "DTPSR_"

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration (maps to CLI exit code 1)."""


@dataclass
class DiffusionSection:
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sampling_steps: int = 50
    variance: str = "posterior"

    def validate(self):
        if self.train_steps < 1:
            raise ConfigError("diffusion.train_steps must be >= 1")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError("diffusion betas must satisfy 0 < start <= end < 1")
        if not 1 <= self.sampling_steps <= self.train_steps:
            raise ConfigError("diffusion.sampling_steps must be in [1, train_steps]")
        if self.variance not in ("posterior", "beta"):
            raise ConfigError("diffusion.variance must be 'posterior' or 'beta'")


@dataclass
class LatentSection:
    coder: str = "conv"
    channels: int = 12
    hidden: int = 24

    def validate(self):
        if self.coder not in ("conv", "pixel_shuffle"):
            raise ConfigError("latent.coder must be 'conv' or 'pixel_shuffle'")
        if self.channels < 1 or self.hidden < 1:
            raise ConfigError("latent channel counts must be positive")


@dataclass
class GuidanceSection:
    mode: str = "multi"
    lambda_s: float = DEFAULT_LAMBDA_S
    neg_global: str = DEFAULT_NEG_GLOBAL
    neg_lf: list[str] = field(default_factory=lambda: list(DEFAULT_NEG_LF))
    neg_hf: list[str] = field(default_factory=lambda: list(DEFAULT_NEG_HF))

    def validate(self):
        if self.mode not in GUIDANCE_MODES:
            raise ConfigError(f"guidance.mode must be one of {GUIDANCE_MODES}")
        if not (isinstance(self.lambda_s, (int, float)) and self.lambda_s >= 0):
            raise ConfigError("guidance.lambda_s must be non-negative")

    def to_spec(self) -> GuidanceSpec:
        return GuidanceSpec(mode=self.mode, lambda_s=float(self.lambda_s),
                            neg_global=self.neg_global, neg_lf=list(self.neg_lf),
                            neg_hf=list(self.neg_hf))


@dataclass
class DatasetSection:
    canvas: int = 64
    min_objects: int = 1
    max_objects: int = 4
    blur_sigma: float = 1.2
    noise_sigma: float = 0.015
    quantization_levels: int = 256
    downscale_factor: int = 4
    corrupt_p: float = 0.0
    top_k: int = 3
    seed: int = 0

    def validate(self):
        if self.canvas < 16 or self.canvas % self.downscale_factor:
            raise ConfigError("dataset.canvas must be >= 16 and divisible by the factor")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError("dataset object counts must satisfy 0 <= min <= max")
        if not 0.0 <= self.corrupt_p <= 1.0:
            raise ConfigError("dataset.corrupt_p must lie in [0, 1]")
        if self.top_k < 1:
            raise ConfigError("dataset.top_k must be >= 1")
        self.degradation().validate()

    def degradation(self) -> DegradationParams:
        return DegradationParams(blur_sigma=self.blur_sigma,
                                 downscale_factor=self.downscale_factor,
                                 noise_sigma=self.noise_sigma,
                                 quantization_levels=self.quantization_levels)


@dataclass
class EvalSection:
    limit: int = 8
    robustness_corrupt_p: float = 0.3
    seed: int = 0

    def validate(self):
        if self.limit < 1:
            raise ConfigError("eval.limit must be >= 1")
        if not 0.0 <= self.robustness_corrupt_p <= 1.0:
            raise ConfigError("eval.robustness_corrupt_p must lie in [0, 1]")


@dataclass
class TrainSection:
    batch_size: int = 8
    learning_rate: float = 2e-3
    iterations: int = 200
    seed: int = 0
    recon_weight: float = 1.0
    cond_dropout_p: float = 0.1
    weight_decay: float = 0.0
    log_every: int = 25

    def validate(self):
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("train.batch_size must be >= 1 and iterations >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be positive")
        if not 0.0 <= self.cond_dropout_p <= 1.0:
            raise ConfigError("train.cond_dropout_p must lie in [0, 1]")
        if self.log_every < 1:
            raise ConfigError("train.log_every must be >= 1")


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    latent: LatentSection = field(default_factory=LatentSection)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    eval: EvalSection = field(default_factory=EvalSection)
    train: TrainSection = field(default_factory=TrainSection)

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {self.schema_version}")
        for section in ("diffusion", "latent", "guidance", "dataset", "eval", "train"):
            getattr(self, section).validate()
        try:
            self.denoiser.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.denoiser.latent_channels != effective_latent_channels(self):
            raise ConfigError("denoiser.latent_channels must match the latent coder "
                              f"({effective_latent_channels(self)} channels)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def effective_latent_channels(config: RunConfig) -> int:
    return 48 if config.latent.coder == "pixel_shuffle" else config.latent.channels


_SECTION_TYPES = {
    "diffusion": DiffusionSection,
    "denoiser": DenoiserConfig,
    "latent": LatentSection,
    "guidance": GuidanceSection,
    "dataset": DatasetSection,
    "eval": EvalSection,
    "train": TrainSection,
}


def _build_section(cls, data: dict, path: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {path}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path} section: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - (set(_SECTION_TYPES) | {"schema_version"})
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {"schema_version": data.get("schema_version", SCHEMA_VERSION)}
    for name, cls in _SECTION_TYPES.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        kwargs[name] = _build_section(cls, section, name)
    return RunConfig(**kwargs).validate()


def load_config_file(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config_file(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_override_value(raw: str, current):
    if isinstance(current, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        value = json.loads(raw)
        if not isinstance(value, list):
            raise ConfigError(f"expected a JSON list for {raw!r}")
        return value
    return raw


def apply_override(data: dict, dotted_key: str, raw_value: str,
                   defaults: RunConfig | None = None) -> None:
    """Apply one 'section.field=value' override onto a config dict."""
    if "." not in dotted_key:
        raise ConfigError(f"override key must look like section.field, got {dotted_key!r}")
    section, key = dotted_key.split(".", 1)
    if section not in _SECTION_TYPES:
        raise ConfigError(f"unknown config section {section!r}")
    ref = defaults if defaults is not None else RunConfig()
    section_obj = getattr(ref, section)
    if not hasattr(section_obj, key):
        raise ConfigError(f"unknown config key {dotted_key!r}")
    current = data.setdefault(section, {}).get(key, getattr(section_obj, key))
    data[section][key] = _parse_override_value(raw_value, current)


def env_overrides(environ=None) -> list[tuple[str, str]]:
    """(section.field, raw value) pairs from DTPSR_SECTION__FIELD vars."""
    environ = os.environ if environ is None else environ
    out = []
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX) or name == ENV_CONFIG_PATH:
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            continue
        section, key = rest.split("__", 1)
        out.append((f"{section.lower()}.{key.lower()}", value))
    return out


def resolve_config(path=None, cli_overrides=(), environ=None) -> RunConfig:
    """Defaults -> file -> environment -> CLI, validated at the end."""
    environ = os.environ if environ is None else environ
    if path is None:
        path = environ.get(ENV_CONFIG_PATH)
    data = {}
    if path:
        data = load_config_file(path).to_dict()
    for dotted, raw in env_overrides(environ):
        apply_override(data, dotted, raw)
    for dotted, raw in cli_overrides:
        apply_override(data, dotted, raw)
    return config_from_dict(data)

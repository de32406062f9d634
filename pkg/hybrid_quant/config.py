"""
Configuration management for the hybrid-grained quantized retrieval engine.

Three layers:
- EngineConfig: model hyperparameters, stored inside every checkpoint.
- TrainerConfig: epochs, early stopping and validation split.
- RuntimeConfig: process-level knobs (threads, Temporal connection), read
  from the environment.

Engine and trainer settings come from a flat key=value file whose keys are the
dataclass field names, optionally on top of a dataset preset (mapping pattern).
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from dataclasses_json import dataclass_json
from dotenv import dotenv_values, load_dotenv

from .constants import (
    DEFAULT_ACTIVE_CLUSTERS,
    DEFAULT_ALPHA,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHECKPOINT_EVERY_EPOCHS,
    DEFAULT_CODEWORDS,
    DEFAULT_EMBEDDING_DIM,
    DEFAULT_EXPERTS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LR_DECAY_EVERY_STEPS,
    DEFAULT_LR_DECAY_FACTOR,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
    DEFAULT_SUBCODEBOOKS,
    DEFAULT_TASK_QUEUE,
    DEFAULT_TAU,
    DEFAULT_TEXT_TOKEN_DIM,
    DEFAULT_VAL_FRACTION,
    LEVEL_CHOICES,
    LEVELS_HYBRID,
    TEMPORAL_UI_BASE_URL,
)
from .errors import ConfigError

# Load .env file if present
load_dotenv()

logger = logging.getLogger(__name__)


@dataclass_json
@dataclass(frozen=True)
class EngineConfig:
    """Model hyperparameters shared by training, indexing and search."""
    D: int = DEFAULT_EMBEDDING_DIM
    Dt: int = DEFAULT_TEXT_TOKEN_DIM
    M: int = DEFAULT_SUBCODEBOOKS
    K: int = DEFAULT_CODEWORDS
    L: int = DEFAULT_ACTIVE_CLUSTERS
    N_E: int = DEFAULT_EXPERTS
    alpha: float = DEFAULT_ALPHA
    tau: float = DEFAULT_TAU
    learning_rate: float = DEFAULT_LEARNING_RATE
    lr_decay_every_steps: int = DEFAULT_LR_DECAY_EVERY_STEPS
    lr_decay_factor: float = DEFAULT_LR_DECAY_FACTOR
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    levels: str = LEVELS_HYBRID  # hybrid, coarse, fine
    quantized_keys: bool = True  # False trains against raw keys

    @property
    def d(self) -> int:
        """Sub-space dimension."""
        return self.D // self.M

    @property
    def bits_per_index(self) -> int:
        return self.K.bit_length() - 1

    @property
    def num_levels(self) -> int:
        """Coarse level plus L fine levels."""
        return self.L + 1

    @property
    def code_bits_per_level(self) -> int:
        return self.M * self.bits_per_index

    @property
    def code_bytes_per_item(self) -> int:
        """Packed HardCode size, rounded up to whole bytes."""
        return (self.num_levels * self.code_bits_per_level + 7) // 8

    def validate(self) -> "EngineConfig":
        """Raise ConfigError if any invariant is violated; return self."""
        for name in ("D", "Dt", "M", "K", "L", "N_E", "batch_size", "lr_decay_every_steps"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.D % self.M != 0:
            raise ConfigError(f"D={self.D} is not divisible by M={self.M}")
        if self.K < 2 or self.K & (self.K - 1):
            raise ConfigError(f"K={self.K} must be a power of two >= 2")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if self.levels not in LEVEL_CHOICES:
            raise ConfigError(f"levels must be one of {LEVEL_CHOICES}, got {self.levels!r}")
        return self


@dataclass_json
@dataclass(frozen=True)
class TrainerConfig:
    """Training loop settings that are not model hyperparameters."""
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE  # 0 disables early stopping
    val_fraction: float = DEFAULT_VAL_FRACTION
    val_max_pairs: int = 0  # 0 means no cap
    checkpoint_every_epochs: int = DEFAULT_CHECKPOINT_EVERY_EPOCHS
    log_every_steps: int = 1
    grad_clip: float = 0.0  # 0 disables clipping
    max_steps: int = 0  # 0 means no cap

    def validate(self) -> "TrainerConfig":
        if self.max_epochs <= 0:
            raise ConfigError(f"max_epochs must be positive, got {self.max_epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be non-negative, got {self.patience}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.log_every_steps <= 0 or self.checkpoint_every_epochs <= 0:
            raise ConfigError("log_every_steps and checkpoint_every_epochs must be positive")
        if self.grad_clip < 0 or self.max_steps < 0 or self.val_max_pairs < 0:
            raise ConfigError("grad_clip, max_steps and val_max_pairs must be non-negative")
        return self


# Dataset-specific engine settings using mapping pattern
ENGINE_PRESETS = {
    "msrvtt": EngineConfig(tau=0.05, batch_size=128, N_E=7),
    "lsmdc": EngineConfig(tau=0.05, batch_size=128, N_E=6),  # no speech expert
    "activitynet": EngineConfig(tau=0.07, batch_size=32, N_E=2),  # motion + audio
    "desk": EngineConfig(
        D=32, Dt=48, M=8, K=16, L=2, N_E=2,
        learning_rate=1e-3, batch_size=64, lr_decay_every_steps=500,
    ),
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS = {int: int, float: float, bool: _parse_bool, str: str}


def _coerce(name: str, field_type: Any, raw: Any) -> Any:
    """Convert a raw config value to the declared field type."""
    if not isinstance(raw, str):
        return raw
    parser = _PARSERS.get(field_type)
    if parser is None:
        raise ConfigError(f"unsupported config field type for {name}: {field_type}")
    try:
        return parser(raw.strip())
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {raw!r} ({e})") from e


def get_preset(name: str) -> EngineConfig:
    try:
        return ENGINE_PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; expected one of {sorted(ENGINE_PRESETS)}"
        ) from None


def build_configs(
    values: dict[str, Any],
    preset: Optional[str] = None,
) -> tuple[EngineConfig, TrainerConfig]:
    """
    Build validated engine and trainer configs from flat key-value pairs.

    Args:
        values: Field name -> value (strings are parsed by field type).
            A "preset" key selects the base engine config.
        preset: Base preset when the values do not name one.

    Returns:
        (EngineConfig, TrainerConfig)

    Raises:
        ConfigError: On unknown keys, unparsable values or invariant violations.
    """
    values = dict(values)
    preset_name = values.pop("preset", None) or preset
    engine_base = get_preset(preset_name) if preset_name else EngineConfig()

    engine_fields = {f.name: f.type for f in dataclasses.fields(EngineConfig)}
    trainer_fields = {f.name: f.type for f in dataclasses.fields(TrainerConfig)}

    engine_updates: dict[str, Any] = {}
    trainer_updates: dict[str, Any] = {}
    for key, raw in values.items():
        if raw is None:
            raise ConfigError(f"config key {key!r} has no value")
        if key in engine_fields:
            engine_updates[key] = _coerce(key, engine_fields[key], raw)
        elif key in trainer_fields:
            trainer_updates[key] = _coerce(key, trainer_fields[key], raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")

    engine = dataclasses.replace(engine_base, **engine_updates).validate()
    trainer = TrainerConfig(**trainer_updates).validate()
    return engine, trainer


def load_engine_config(
    path: Optional[Union[str, Path]] = None,
    preset: Optional[str] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> tuple[EngineConfig, TrainerConfig]:
    """
    Load engine and trainer configuration from a flat key=value file.

    Args:
        path: Config file; None uses the preset (or defaults) alone.
        preset: Base preset name, overridden by a "preset" key in the file.
        overrides: Values applied after the file (e.g. --seed from the CLI).
    """
    values: dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file does not exist: {config_path}")
        values.update(dotenv_values(config_path, interpolate=False))
        logger.debug(f"Loaded {len(values)} config keys from {config_path}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return build_configs(values, preset=preset)


def dump_engine_config(engine: EngineConfig, trainer: Optional[TrainerConfig] = None) -> str:
    """Render configs in the flat key=value format accepted by load_engine_config."""
    lines = [f"{k}={_format_value(v)}" for k, v in dataclasses.asdict(engine).items()]
    if trainer is not None:
        lines += [f"{k}={_format_value(v)}" for k, v in dataclasses.asdict(trainer).items()]
    return "\n".join(lines) + "\n"


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class TemporalConfig:
    """Temporal server connection settings."""
    address: str = "localhost:7233"
    namespace: str = "default"
    task_queue: str = DEFAULT_TASK_QUEUE
    ui_base_url: str = TEMPORAL_UI_BASE_URL


@dataclass
class RuntimeConfig:
    """Process-level settings read from the environment."""
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    threads: int = 1
    log_level: str = "INFO"
    run_metrics_file: str = "/tmp/hybrid-quant-runs.jsonl"


def _parse_int(value: Optional[str], default: int) -> int:
    """Safely parse an integer from environment variable."""
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default


def load_temporal_config() -> TemporalConfig:
    """Load Temporal configuration from environment."""
    return TemporalConfig(
        address=os.getenv("TEMPORAL_ADDRESS", "localhost:7233"),
        namespace=os.getenv("TEMPORAL_NAMESPACE", "default"),
        task_queue=os.getenv("HYBRID_QUANT_TASK_QUEUE", DEFAULT_TASK_QUEUE),
        ui_base_url=os.getenv("TEMPORAL_UI_BASE_URL", TEMPORAL_UI_BASE_URL),
    )


def load_config() -> RuntimeConfig:
    """Load runtime configuration from the environment."""
    return RuntimeConfig(
        temporal=load_temporal_config(),
        threads=max(1, _parse_int(os.getenv("HYBRID_QUANT_THREADS"), 1)),
        log_level=os.getenv("HYBRID_QUANT_LOG_LEVEL", "INFO").upper(),
        run_metrics_file=os.getenv(
            "HYBRID_QUANT_RUN_METRICS", "/tmp/hybrid-quant-runs.jsonl"
        ),
    )


# Global config instance
_config: Optional[RuntimeConfig] = None


def get_config() -> RuntimeConfig:
    """Get the global runtime configuration instance."""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def reset_config() -> None:
    """Reset the global configuration (useful for testing)."""
    global _config
    _config = None

"""
Configuration Management System

Provides a layered configuration system with support for:
- Multiple configuration sources (files, env vars, CLI overrides)
- Schema validation with field-level errors
- Configuration templating
- A typed ExperimentConfig view of the validated tree
"""

import copy
import hashlib
import json
import logging
import os
import re
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import yaml

from .errors import ConfigValidationError

logger = logging.getLogger(__name__)

ENV_PREFIX = "DISTILL_LAB_"
ENV_SEPARATOR = "__"


class ConfigSource(ABC):
    """Abstract base class for configuration sources"""

    @abstractmethod
    async def load(self) -> Dict[str, Any]:
        """Load configuration from source"""
        pass

    async def save(self, config: Dict[str, Any]) -> None:
        """Save configuration to source"""
        raise NotImplementedError(f"{self.__class__.__name__} is read-only")

    @abstractmethod
    def get_priority(self) -> int:
        """Get source priority (lower = higher priority)"""
        pass


class CliConfigSource(ConfigSource):
    """Overrides given on the command line"""

    def __init__(self, overrides: Optional[Dict[str, Any]] = None):
        self.overrides = overrides or {}

    async def load(self) -> Dict[str, Any]:
        return copy.deepcopy(self.overrides)

    def get_priority(self) -> int:
        return 5  # Highest priority


class EnvConfigSource(ConfigSource):
    """Load configuration from environment variables"""

    def __init__(self, prefix: str = ENV_PREFIX, environ: Optional[Dict[str, str]] = None):
        self.prefix = prefix
        self.environ = environ

    async def load(self) -> Dict[str, Any]:
        """Load configuration from environment"""
        environ = os.environ if self.environ is None else self.environ
        config = {}

        for key, value in environ.items():
            if key.startswith(self.prefix):
                # DISTILL_LAB_DATA__K -> data.k
                config_key = key[len(self.prefix):].lower().replace(ENV_SEPARATOR, ".")
                try:
                    config[config_key] = yaml.safe_load(value)
                except yaml.YAMLError:
                    config[config_key] = value

        return self._unflatten_dict(config)

    def get_priority(self) -> int:
        return 10  # High priority

    def _unflatten_dict(self, flat_dict: Dict[str, Any]) -> Dict[str, Any]:
        """Convert flat.key.notation to nested dict"""
        result = {}

        for key, value in flat_dict.items():
            parts = key.split(".")
            current = result

            for part in parts[:-1]:
                if part not in current:
                    current[part] = {}
                current = current[part]

            current[parts[-1]] = value

        return result


class FileConfigSource(ConfigSource):
    """Load configuration from file (JSON/YAML)"""

    def __init__(self, file_path: Union[str, Path], required: bool = True):
        self.file_path = Path(file_path)
        self.required = required

    async def load(self) -> Dict[str, Any]:
        """Load configuration from file"""
        if not self.file_path.exists():
            if self.required:
                raise ConfigValidationError([f"Configuration file not found: {self.file_path}"])
            logger.warning(f"Configuration file not found: {self.file_path}")
            return {}

        try:
            with open(self.file_path, "r") as f:
                if self.file_path.suffix in [".yaml", ".yml"]:
                    config = yaml.safe_load(f) or {}
                else:
                    config = json.load(f)
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigValidationError([f"{self.file_path}: cannot parse ({e})"])

        if not isinstance(config, dict):
            raise ConfigValidationError([f"{self.file_path}: top level must be a mapping"])
        return config

    async def save(self, config: Dict[str, Any]) -> None:
        """Save configuration to file"""
        self.file_path.parent.mkdir(parents=True, exist_ok=True)

        with open(self.file_path, "w") as f:
            if self.file_path.suffix in [".yaml", ".yml"]:
                f.write(dump_yaml(config))
            else:
                json.dump(config, f, indent=2, sort_keys=True)

    def get_priority(self) -> int:
        return 50  # Medium priority


Validator = Callable[[Any], Optional[str]]


@dataclass
class ConfigSchema:
    """Schema definition for configuration validation"""
    name: str
    type: Union[type, Tuple[type, ...]]
    required: bool = True
    default: Any = None
    description: str = ""
    validator: Optional[Validator] = None
    choices: Optional[List[Any]] = None
    children: Dict[str, "ConfigSchema"] = field(default_factory=dict)
    item: Optional["ConfigSchema"] = None


def dump_yaml(config: Dict[str, Any]) -> str:
    """Canonical YAML text of a config tree"""
    return yaml.safe_dump(config, default_flow_style=False, sort_keys=True)


def config_hash(text: str) -> str:
    """SHA-256 of the stored config bytes"""
    return hashlib.sha256(text.encode()).hexdigest()


class ConfigManager:
    """
    Central configuration management system.

    Features:
    - Multiple configuration sources with priority
    - Schema validation (unknown keys are errors)
    - Configuration templating
    """

    def __init__(self):
        self._sources: List[ConfigSource] = []
        self._config: Dict[str, Any] = {}
        self._schema: Dict[str, ConfigSchema] = {}
        self._loaded = False

    def add_source(self, source: ConfigSource) -> None:
        """Add a configuration source"""
        self._sources.append(source)
        # Sort by priority
        self._sources.sort(key=lambda s: s.get_priority())

    def define_schema(self, schema: Dict[str, ConfigSchema]) -> None:
        """Define configuration schema"""
        self._schema = schema

    async def load(self) -> None:
        """Load configuration from all sources"""
        logger.info("Loading configuration...")

        merged_config: Dict[str, Any] = {}

        # Load from sources in reverse priority order
        # (so higher priority sources override)
        for source in reversed(self._sources):
            config = await source.load()
            merged_config = self._deep_merge(merged_config, config)

        self._config = merged_config
        self._config = self._apply_templates(merged_config)

        if self._schema:
            self._validate_config()

        self._loaded = True
        logger.info("Configuration loaded successfully")

    async def reload(self) -> None:
        """Reload configuration from all sources"""
        await self.load()

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value by key.

        Supports dot notation: config.get("data.k")
        """
        parts = key.split(".")
        value = self._config

        for part in parts:
            if isinstance(value, dict) and part in value:
                value = value[part]
            else:
                return default

        return value

    def set(self, key: str, value: Any) -> None:
        """Set a runtime configuration value"""
        parts = key.split(".")
        config = self._config

        for part in parts[:-1]:
            if part not in config:
                config[part] = {}
            config = config[part]

        config[parts[-1]] = value

    async def save(self, source_index: int = 0) -> None:
        """Save configuration to a specific source"""
        if source_index >= len(self._sources):
            raise ValueError(f"Invalid source index: {source_index}")

        source = self._sources[source_index]
        await source.save(self._config)

    def get_all(self) -> Dict[str, Any]:
        """Get entire configuration"""
        return copy.deepcopy(self._config)

    def _deep_merge(self, base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
        """Deep merge two dictionaries"""
        result = base.copy()

        for key, value in update.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._deep_merge(result[key], value)
            else:
                result[key] = value

        return result

    def _apply_templates(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """Apply ${VAR} / ${VAR:default} substitution to string values"""
        pattern = re.compile(r"\$\{([^}]+)\}")

        def substitute(value: Any) -> Any:
            if isinstance(value, str):
                def replacer(match):
                    var_name = match.group(1)
                    name, _, default = var_name.partition(":")
                    if name in os.environ:
                        return os.environ[name]
                    if ":" in var_name:
                        return str(self.get(name, default))
                    return str(self.get(name, match.group(0)))

                substituted = pattern.sub(replacer, value)
                if substituted != value:
                    # a fully templated value keeps its YAML type
                    try:
                        return yaml.safe_load(substituted) if pattern.fullmatch(value) else substituted
                    except yaml.YAMLError:
                        return substituted
                return value

            elif isinstance(value, dict):
                return {k: substitute(v) for k, v in value.items()}

            elif isinstance(value, list):
                return [substitute(v) for v in value]

            return value

        return substitute(config)

    def _validate_config(self) -> None:
        """Validate configuration against schema, filling defaults"""
        errors: List[str] = []
        self._config = _validate_mapping(self._schema, self._config, "", errors)
        if errors:
            raise ConfigValidationError(errors)


def _type_name(expected: Union[type, Tuple[type, ...]]) -> str:
    if isinstance(expected, tuple):
        return " or ".join(t.__name__ for t in expected)
    return expected.__name__


def _check_type(value: Any, expected: Union[type, Tuple[type, ...]]) -> Tuple[bool, Any]:
    types = expected if isinstance(expected, tuple) else (expected,)
    if isinstance(value, bool):
        return (bool in types), value
    if float in types and isinstance(value, int):
        return True, value if int in types else float(value)
    return isinstance(value, types), value


def _validate_value(schema: ConfigSchema, value: Any, path: str, errors: List[str]) -> Any:
    ok, value = _check_type(value, schema.type)
    if not ok:
        errors.append(f"{path}: expected {_type_name(schema.type)}, got {type(value).__name__}")
        return value

    if schema.choices is not None and value not in schema.choices:
        errors.append(f"{path}: must be one of {schema.choices}, got {value!r}")
        return value

    if schema.children and isinstance(value, dict):
        value = _validate_mapping(schema.children, value, path + ".", errors)
    elif schema.item is not None and isinstance(value, list):
        value = [_validate_value(schema.item, v, f"{path}[{i}]", errors) for i, v in enumerate(value)]

    if schema.validator is not None:
        message = schema.validator(value)
        if message:
            errors.append(f"{path}: {message}")
    return value


def _validate_mapping(schema: Dict[str, ConfigSchema], config: Dict[str, Any], prefix: str, errors: List[str]) -> Dict[str, Any]:
    result: Dict[str, Any] = {}
    for key in config:
        if key not in schema:
            errors.append(f"{prefix + key}: unknown key")

    for key, node in schema.items():
        path = prefix + key
        if key in config and config[key] is not None:
            result[key] = _validate_value(node, config[key], path, errors)
        elif node.children:
            result[key] = _validate_mapping(node.children, {}, path + ".", errors)
        elif node.default is not None:
            result[key] = _validate_value(node, copy.deepcopy(node.default), path, errors)
        elif not node.required:
            result[key] = None
        else:
            errors.append(f"{path}: required")
    return result


def _at_least(minimum: float) -> Validator:
    return lambda v: None if v >= minimum else f"must be >= {minimum}"


def _in_range(lo: float, hi: float, lo_open: bool = False, hi_open: bool = False) -> Validator:
    def check(v):
        if (v <= lo if lo_open else v < lo) or (v >= hi if hi_open else v > hi):
            return f"must lie in {'(' if lo_open else '['}{lo}, {hi}{')' if hi_open else ']'}"
        return None
    return check


def _nonempty(v) -> Optional[str]:
    return None if len(v) else "must not be empty"


def _positive_ints(v) -> Optional[str]:
    if not v:
        return "must not be empty"
    if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in v):
        return "must contain non-negative integers"
    return None


def _sparsity_k(v) -> Optional[str]:
    if v == "all" or (isinstance(v, int) and v >= 1):
        return None
    return "must be a positive integer or 'all'"


def _section(name: str, description: str, children: Dict[str, ConfigSchema]) -> ConfigSchema:
    for key, child in children.items():
        child.name = key
    return ConfigSchema(name=name, type=dict, description=description, children=children)


def _field(type_, default=None, description="", **kwargs) -> ConfigSchema:
    return ConfigSchema(name="", type=type_, default=default, description=description, **kwargs)


ARM_SCHEMA = _section("arm", "Student training arm", {
    "name": _field(str, description="Arm name used in artifact paths"),
    "alpha": _field(float, 0.0, "Weight of the distillation term", validator=_in_range(0.0, 1.0)),
    "temperature": _field(float, 2.0, "Teacher temperature", validator=lambda v: None if v > 0 else "must be > 0"),
    "routing_fraction": _field(float, 0.0, "Fraction of lowest-entropy positions routed", validator=_in_range(0.0, 1.0)),
    "sparsity_mode": _field(str, "dense", "Soft-label sparsification", choices=["dense", "top-k-deterministic", "sample-k"]),
    "sparsity_k": _field((int, str), "all", "Tokens kept per position", validator=_sparsity_k),
    "classical": _field(bool, False, "Temper the student and scale the soft term by T^2"),
    "rescale_routed": _field(bool, False, "Give routed positions full hard-label weight"),
})


DEFAULT_ARMS = [
    {"name": "ce", "alpha": 0.0},
    {"name": "kd", "alpha": 0.5, "temperature": 2.0},
    {"name": "kd_routed", "alpha": 0.5, "temperature": 2.0, "routing_fraction": 0.15},
]


def _model_section(name: str, d_model: int) -> ConfigSchema:
    return _section(name, f"{name} architecture", {
        "d_model": _field(int, d_model, "Embedding width", validator=_at_least(1)),
        "n_layers": _field(int, 2, "Transformer blocks", validator=_in_range(1, 4)),
        "n_heads": _field(int, 4, "Attention heads", validator=_at_least(1)),
    })


DEFAULT_SCHEMA: Dict[str, ConfigSchema] = {
    "experiment": _section("experiment", "Experiment identity", {
        "name": _field(str, "distill-lab", "Experiment name"),
        "seeds": _field(list, [0, 1, 2], "Replicate seeds", validator=_positive_ints),
        "out_dir": _field(str, "runs/default", "Output directory"),
    }),
    "data": _section("data", "Markov sandbox data", {
        "k": _field(int, 64, "Vocabulary size", validator=_at_least(2)),
        "length": _field(int, 64, "Sequence length", validator=_at_least(2)),
        "matrix_seed": _field(int, 1234, "Seed for the transition matrix and trigger set", validator=_at_least(0)),
        "entropy_plan": _section("entropy_plan", "Fraction of rows per entropy class", {
            "low": _field(float, 1.0 / 3.0, validator=_in_range(0.0, 1.0)),
            "medium": _field(float, 1.0 / 3.0, validator=_in_range(0.0, 1.0)),
            "high": _field(float, 1.0 / 3.0, validator=_in_range(0.0, 1.0)),
        }),
        "thresholds": _section("thresholds", "Entropy class boundaries as fractions of log k", {
            "low": _field(float, 1.0 / 3.0, validator=_in_range(0.0, 1.0, lo_open=True, hi_open=True)),
            "high": _field(float, 2.0 / 3.0, validator=_in_range(0.0, 1.0, lo_open=True, hi_open=True)),
        }),
        "low_support": _field(list, [3, 5], "Support size range of low-entropy rows", validator=_positive_ints),
        "medium_ratio": _field(float, 0.7, "Geometric ratio of medium rows", validator=_in_range(0.0, 1.0, lo_open=True, hi_open=True)),
        "high_concentration": _field(float, 50.0, "Dirichlet concentration of high rows", validator=lambda v: None if v > 0 else "must be > 0"),
        "triggers": _field(int, 10, "Number of trigger tokens", choices=[5, 10, 20]),
        "per_trigger_targets": _field(bool, False, "Draw one copy target per trigger instead of per sequence"),
        "trigger_boost": _field(float, 0.0, "Extra mass moved onto triggers in non-trigger rows", validator=_in_range(0.0, 1.0, hi_open=True)),
        "teacher_sequences": _field(int, 16000, "Teacher training sequences", validator=_at_least(1)),
        "student_sequences": _field(int, 8000, "Student training sequences (prefix of the teacher set)", validator=_at_least(1)),
        "eval_sequences": _field(int, 4000, "Held-out evaluation sequences", validator=_at_least(1)),
    }),
    "teacher": _model_section("teacher", 128),
    "student": _model_section("student", 64),
    "students": ConfigSchema(
        name="students", type=list, default=DEFAULT_ARMS, description="Student arms",
        item=ARM_SCHEMA, validator=_nonempty,
    ),
    "training": _section("training", "Optimisation", {
        "batch_size": _field(int, 64, validator=_at_least(1)),
        "lr": _field(float, 3e-4, validator=lambda v: None if v > 0 else "must be > 0"),
        "warmup_fraction": _field(float, 0.01, validator=_in_range(0.0, 1.0, hi_open=True)),
        "teacher_epochs": _field(int, 8, validator=_at_least(1)),
        "student_epochs": _field(int, 8, validator=_at_least(1)),
        "checkpoints": _field(int, 8, "Evaluation snapshots per student run", validator=_at_least(0)),
        "log_every": _field(int, 50, validator=_at_least(0)),
    }),
    "eval": _section("eval", "Evaluation", {
        "batch_size": _field(int, 256, validator=_at_least(1)),
    }),
    "passk": _section("passk", "pass@k analysis", {
        "epsilon": _field(float, 0.1, validator=_in_range(0.0, 0.5, lo_open=True, hi_open=True)),
        "curve_ks": _field(list, [1, 2, 4, 8, 16, 32], validator=_positive_ints),
        "ks": _field(list, [1, 2, 4, 8, 16], validator=_positive_ints),
        "n": _field(int, 16, "Samples per item", validator=_at_least(1)),
        "temperature_max": _field(float, 1.5, validator=_at_least(0.0)),
        "temperature_step": _field(float, 0.1, validator=lambda v: None if v > 0 else "must be > 0"),
        "max_items": _field(int, 256, "Items per kind", validator=_at_least(1)),
        "seed": _field(int, 0, validator=_at_least(0)),
    }),
    "complexity": _section("complexity", "Estimator sample-complexity sweep", {
        "k": _field(int, 64, validator=_at_least(2)),
        "p_values": _field(list, [64, 1], "Row sparsities to sweep", validator=_positive_ints),
        "epsilon": _field(float, 0.2, validator=_in_range(0.0, 1.0, lo_open=True)),
        "delta": _field(float, 0.1, validator=_in_range(0.0, 1.0, lo_open=True, hi_open=True)),
        "sample_grid": _field(list, [256, 512, 1024, 4096, 16384, 65536], validator=_positive_ints),
        "trials": _field(int, 20, validator=_at_least(1)),
        "coupon_trials": _field(int, 10000, validator=_at_least(1)),
        "seed": _field(int, 0, validator=_at_least(0)),
    }),
    "logging": _section("logging", "Logging", {
        "level": _field(str, "INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]),
        "format": _field(str, "%(asctime)s - %(name)s - %(levelname)s - %(message)s"),
        "file": ConfigSchema(name="file", type=str, required=False, description="Log file relative to the output directory"),
    }),
    "plugins": _section("plugins", "Built-in middleware", {
        "logging": _section("logging", "Stage logging middleware", {
            "enabled": _field(bool, True),
            "level": _field(str, "INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]),
            "include_params": _field(bool, False),
        }),
        "resume_cache": _section("resume_cache", "Skip stages whose outputs exist", {
            "enabled": _field(bool, True),
        }),
    }),
}

for _name, _node in DEFAULT_SCHEMA.items():
    _node.name = _name


@dataclass
class DataConfig:
    k: int
    length: int
    matrix_seed: int
    entropy_plan: Dict[str, float]
    thresholds: Dict[str, float]
    low_support: List[int]
    medium_ratio: float
    high_concentration: float
    triggers: int
    per_trigger_targets: bool
    trigger_boost: float
    teacher_sequences: int
    student_sequences: int
    eval_sequences: int


@dataclass
class ModelSection:
    d_model: int
    n_layers: int
    n_heads: int


@dataclass
class ArmConfig:
    name: str
    alpha: float
    temperature: float
    routing_fraction: float
    sparsity_mode: str
    sparsity_k: Union[int, str]
    classical: bool
    rescale_routed: bool


@dataclass
class TrainingSection:
    batch_size: int
    lr: float
    warmup_fraction: float
    teacher_epochs: int
    student_epochs: int
    checkpoints: int
    log_every: int


@dataclass
class EvalSection:
    batch_size: int


@dataclass
class PassKSection:
    epsilon: float
    curve_ks: List[int]
    ks: List[int]
    n: int
    temperature_max: float
    temperature_step: float
    max_items: int
    seed: int


@dataclass
class ComplexitySection:
    k: int
    p_values: List[int]
    epsilon: float
    delta: float
    sample_grid: List[int]
    trials: int
    coupon_trials: int
    seed: int


@dataclass
class ExperimentSection:
    name: str
    seeds: List[int]
    out_dir: str


@dataclass
class LoggingSection:
    level: str
    format: str
    file: Optional[str] = None


@dataclass
class ExperimentConfig:
    """Typed view of a validated configuration tree"""
    experiment: ExperimentSection
    data: DataConfig
    teacher: ModelSection
    student: ModelSection
    students: List[ArmConfig]
    training: TrainingSection
    eval: EvalSection
    passk: PassKSection
    complexity: ComplexitySection
    logging: LoggingSection
    plugins: Dict[str, Dict[str, Any]]

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "ExperimentConfig":
        result = cls(
            experiment=ExperimentSection(**config["experiment"]),
            data=DataConfig(**config["data"]),
            teacher=ModelSection(**config["teacher"]),
            student=ModelSection(**config["student"]),
            students=[ArmConfig(**arm) for arm in config["students"]],
            training=TrainingSection(**config["training"]),
            eval=EvalSection(**config["eval"]),
            passk=PassKSection(**config["passk"]),
            complexity=ComplexitySection(**config["complexity"]),
            logging=LoggingSection(**config["logging"]),
            plugins=copy.deepcopy(config["plugins"]),
        )
        result.validate()
        return result

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def definition(self) -> Dict[str, Any]:
        """The config without experiment.out_dir, which only says where results go"""
        tree = self.to_dict()
        del tree["experiment"]["out_dir"]
        return tree

    def to_yaml(self) -> str:
        return dump_yaml(self.to_dict())

    def definition_yaml(self) -> str:
        return dump_yaml(self.definition())

    @property
    def config_hash(self) -> str:
        return config_hash(self.definition_yaml())

    @property
    def out_dir(self) -> Path:
        return Path(self.experiment.out_dir)

    def arm(self, name: str) -> ArmConfig:
        for arm in self.students:
            if arm.name == name:
                return arm
        raise KeyError(f"Unknown student arm '{name}'")

    def validate(self) -> None:
        """Checks that span several fields"""
        errors: List[str] = []
        data = self.data
        if data.student_sequences > data.teacher_sequences:
            errors.append("data.student_sequences: must not exceed data.teacher_sequences")
        if data.triggers >= data.k:
            errors.append(f"data.triggers: must be smaller than data.k={data.k}")
        plan_total = sum(data.entropy_plan.values())
        if abs(plan_total - 1.0) > 1e-9:
            errors.append(f"data.entropy_plan: fractions must sum to 1, got {plan_total}")
        if data.thresholds["low"] >= data.thresholds["high"]:
            errors.append("data.thresholds: low must be below high")
        if len(data.low_support) != 2 or not 1 <= data.low_support[0] <= data.low_support[1]:
            errors.append("data.low_support: must be [lo, hi] with 1 <= lo <= hi")
        for name, section in (("teacher", self.teacher), ("student", self.student)):
            if section.d_model % section.n_heads:
                errors.append(f"{name}.d_model: must be divisible by {name}.n_heads={section.n_heads}")
        names = [arm.name for arm in self.students]
        if len(set(names)) != len(names):
            errors.append(f"students: arm names must be unique, got {names}")
        for i, arm in enumerate(self.students):
            if isinstance(arm.sparsity_k, int) and arm.sparsity_k > data.k:
                errors.append(f"students[{i}].sparsity_k: must not exceed data.k={data.k}")
        if any(k > self.passk.n for k in self.passk.ks):
            errors.append(f"passk.ks: every k must be <= passk.n={self.passk.n}")
        if any(p < 1 or p > self.complexity.k for p in self.complexity.p_values):
            errors.append(f"complexity.p_values: must lie in [1, complexity.k={self.complexity.k}]")
        if errors:
            raise ConfigValidationError(errors)


async def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    environ: Optional[Dict[str, str]] = None,
) -> ExperimentConfig:
    """Load defaults ← file ← environment ← overrides and validate"""
    manager = ConfigManager()
    manager.define_schema(DEFAULT_SCHEMA)
    if path is not None:
        manager.add_source(FileConfigSource(path))
    manager.add_source(EnvConfigSource(environ=environ))
    if overrides:
        manager.add_source(CliConfigSource(overrides))
    await manager.load()
    return ExperimentConfig.from_dict(manager.get_all())

"""Run configuration loading, validation and master-seed resolution."""

import json
import os
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import DEFAULT_MISSING_MARKERS

SEED_ENV_VAR = "XAIEVAL_SEED"
DEFAULT_BIN_EDGES = [50.0 + 5.0 * i for i in range(11)]

Family = Literal["logistic", "forest", "boosted"]
Technique = Literal["lime", "kernel_shap", "feature_ablation"]


class ConfigError(Exception):
    """Exception raised for unreadable or invalid run configurations."""

    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetSpec(_Strict):
    """One input dataset."""

    path: Path
    target_name: str = Field(min_length=1)
    name: str | None = None
    missing_markers: list[str] | None = None

    @property
    def dataset_id(self) -> str:
        return self.name or self.path.stem


class ExplainSettings(_Strict):
    """Explainer settings shared by all techniques."""

    n_samples: int = Field(default=200, ge=1)
    kernel_width: float = Field(default=0.1, gt=0)
    ridge_lambda: float = Field(default=1.0, ge=0)
    group_ablation: bool = False


class MetricSettings(_Strict):
    """Sensitivity perturbation settings.

    ``inner_n_samples`` lowers the explainer sample count used inside the
    sensitivity metrics (desk-scale runs); ``None`` keeps ``explain.n_samples``.
    """

    n_perturb: int = Field(default=20, ge=1)
    lower_bound: float = Field(default=0.01, gt=0)
    upper_bound: float = Field(default=0.05, gt=0)
    zero_norm_tolerance: float = Field(default=1e-12, gt=0)
    inner_n_samples: int | None = Field(default=None, ge=2)

    @model_validator(mode="after")
    def _bounds_ordered(self) -> "MetricSettings":
        if self.lower_bound > self.upper_bound:
            raise ValueError("lower_bound must not exceed upper_bound")
        return self


class RunConfig(_Strict):
    """Complete benchmark configuration."""

    datasets: list[DatasetSpec] = Field(min_length=1)
    seed: int | None = None
    per_class: int = Field(default=5, ge=1)
    bin_edges: list[float] = Field(default_factory=lambda: list(DEFAULT_BIN_EDGES))
    split_ratio: float = Field(default=0.8, gt=0, lt=1)
    n_trials: int = Field(default=30, ge=1)
    models: list[Family] = Field(default_factory=lambda: ["logistic", "forest", "boosted"])
    techniques: list[Technique] = Field(
        default_factory=lambda: ["lime", "kernel_shap", "feature_ablation"]
    )
    model_params: dict[Family, dict[str, Any]] = Field(default_factory=dict)
    missing_markers: list[str] = Field(default_factory=lambda: list(DEFAULT_MISSING_MARKERS))
    explain: ExplainSettings = Field(default_factory=ExplainSettings)
    metric: MetricSettings = Field(default_factory=MetricSettings)
    parallelism: int = Field(default=1, ge=1)

    @field_validator("bin_edges")
    @classmethod
    def _edges_increasing(cls, edges: list[float]) -> list[float]:
        if len(edges) < 2:
            raise ValueError("at least two bin edges are required")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin edges must be strictly increasing")
        return edges

    @field_validator("models", "techniques")
    @classmethod
    def _nonempty_unique(cls, items: list[str]) -> list[str]:
        if not items:
            raise ValueError("must not be empty")
        if len(set(items)) != len(items):
            raise ValueError("must not contain duplicates")
        return items

    @model_validator(mode="after")
    def _unique_dataset_ids(self) -> "RunConfig":
        ids = [spec.dataset_id for spec in self.datasets]
        if len(set(ids)) != len(ids):
            raise ValueError("dataset names must be unique")
        return self

    @property
    def master_seed(self) -> int:
        return self.seed if self.seed is not None else 0


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "; ".join(lines)


def parse_run_config(data: Any, base_dir: str | Path | None = None) -> RunConfig:
    """Validate a decoded config document; relative dataset paths resolve against ``base_dir``.

    Raises:
        ConfigError: If the document does not match RunConfig
    """
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {_format_validation_error(e)}")
    if base_dir is None:
        return config
    base = Path(base_dir)
    datasets = [
        spec if spec.path.is_absolute() else spec.model_copy(update={"path": base / spec.path})
        for spec in config.datasets
    ]
    return config.model_copy(update={"datasets": datasets})


def resolve_seed(
    seed: int | None = None,
    config_seed: int | None = None,
    env_file: str | Path | None = None,
) -> int:
    """Resolve the master seed.

    Sources are checked in order of priority:
    1. Explicitly provided argument (``--seed``)
    2. ``seed`` in the run configuration
    3. ``XAIEVAL_SEED`` environment variable (optionally from a .env file)
    4. 0

    Raises:
        ConfigError: If the env file is missing or the variable is not an integer
    """
    if seed is not None:
        return seed
    if config_seed is not None:
        return config_seed
    if env_file:
        env_path = Path(env_file)
        if not env_path.exists():
            raise ConfigError(f"Environment file not found: {env_file}")
        load_dotenv(env_path)
    else:
        load_dotenv()
    raw = os.getenv(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{raw}'")


def load_run_config(
    path: str | Path,
    seed: int | None = None,
    env_file: str | Path | None = None,
) -> RunConfig:
    """Read, validate and seed a JSON run configuration.

    Args:
        path: Path to the JSON document
        seed: Explicit master seed overriding every other source
        env_file: Optional .env file providing ``XAIEVAL_SEED``

    Returns:
        RunConfig with ``seed`` resolved and dataset paths made absolute

    Raises:
        ConfigError: If the file is unreadable, not valid JSON (message carries
            line and column), or fails validation
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    config = parse_run_config(data, base_dir=path.parent)
    resolved = resolve_seed(seed, config.seed, env_file)
    return config.model_copy(update={"seed": resolved})

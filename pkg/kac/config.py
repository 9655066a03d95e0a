"""
Experiment configuration: TOML or YAML files, `.env` and `KAC_*` overrides.
"""

import hashlib
import json
import logging
import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import psutil
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from kac.errors import ConfigError, KacError
from kac.kernels import DEFAULT_KNOTS, AngularForm, KernelSpec
from kac.particle import InitialDistribution

logger = logging.getLogger(__name__)

ENV_PREFIX = "KAC_"
SECTIONS = ("kernel", "sim", "ensemble", "experiment")


class ExperimentKind(str, Enum):
    CONSERVE = "conserve"
    MOMENTS = "moments"
    COUPLE_SCAN = "couple_scan"
    CHAOS_SCAN = "chaos_scan"
    EQUILIBRATE = "equilibrate"
    G_PROPERTIES = "g_properties"
    BRANCH = "branch"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelSection(_Section):
    d: int = Field(3, ge=3)
    gamma: float = Field(0.5, ge=0.0, le=1.0)
    nu: float = Field(0.5, gt=0.0, lt=1.0)
    b_form: AngularForm = AngularForm.CANONICAL_HARD
    user_x: Optional[List[float]] = None
    user_b: Optional[List[float]] = None
    knots: int = Field(DEFAULT_KNOTS, ge=16)

    def to_spec(self) -> KernelSpec:
        try:
            return KernelSpec(d=self.d, gamma=self.gamma, nu=self.nu, b_form=self.b_form,
                              user_x=tuple(self.user_x) if self.user_x else None,
                              user_b=tuple(self.user_b) if self.user_b else None)
        except KacError as e:
            raise ConfigError(f"kernel section: {e}") from e


class SimSection(_Section):
    N: int = Field(256, ge=2)
    K: float = Field(64.0, gt=0.0)
    K_prime: float = Field(2.0 ** 14, gt=0.0)
    t_final: float = Field(1.0, ge=0.0)
    p: float = Field(8.0, ge=0.0)
    snapshots: int = Field(64, ge=1)
    initial: InitialDistribution = InitialDistribution.GAUSSIAN_ISO
    temperature_ratio: float = Field(4.0, gt=0.0)
    track_moments: List[float] = Field(default_factory=lambda: [4.0, 6.0])

    @model_validator(mode="after")
    def _check_levels(self):
        if self.K > self.K_prime:
            raise ValueError(f"K ({self.K}) must not exceed K_prime ({self.K_prime})")
        if any(k < 2 for k in self.track_moments):
            raise ValueError("tracked moment orders must be >= 2")
        return self

    @property
    def dt(self) -> float:
        return self.t_final / self.snapshots if self.t_final > 0 else 1.0


class EnsembleSection(_Section):
    replicas: int = Field(1, ge=1)
    master_seed: int = Field(0, ge=0)
    threads: Optional[int] = Field(None, ge=1)

    def resolved_threads(self) -> int:
        return self.threads or psutil.cpu_count(logical=True) or 1


class ExperimentSection(_Section):
    kind: ExperimentKind = ExperimentKind.CONSERVE
    K_list: List[float] = Field(default_factory=list)
    N_list: List[int] = Field(default_factory=list)
    p_list: List[float] = Field(default_factory=lambda: [4.0, 8.0, 12.0])
    moment_p: float = Field(4.0, ge=4.0)
    b: Optional[float] = Field(None, gt=1.0)
    b_factor: Optional[float] = Field(8.0, gt=0.0)
    epsilon: float = Field(0.5, gt=0.0)
    window_start: Optional[float] = Field(None, ge=0.0)
    branch_K_list: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    branch_t_list: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0])
    population_cap: int = Field(10 ** 6, ge=1)
    tanaka_samples: int = Field(10 ** 5, ge=1)
    g_samples: int = Field(10 ** 4, ge=10)
    event_log: bool = True

    @model_validator(mode="after")
    def _check_lists(self):
        for name in ("K_list", "N_list", "branch_K_list", "branch_t_list"):
            values = getattr(self, name)
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        if self.kind is ExperimentKind.COUPLE_SCAN and not self.K_list:
            raise ValueError("couple_scan needs a non-empty K_list")
        if self.kind is ExperimentKind.CHAOS_SCAN and not self.N_list:
            raise ValueError("chaos_scan needs a non-empty N_list")
        return self


class ExperimentConfig(_Section):
    kernel: KernelSection = Field(default_factory=KernelSection)
    sim: SimSection = Field(default_factory=SimSection)
    ensemble: EnsembleSection = Field(default_factory=EnsembleSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output_dir: Path = Path("runs/latest")

    @model_validator(mode="after")
    def _check_scan_levels(self):
        if any(k > self.sim.K_prime for k in self.experiment.K_list):
            raise ValueError(f"K_list entries must not exceed K_prime ({self.sim.K_prime})")
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _read_file(path: Path) -> Dict[str, Any]:
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        if suffix in (".yml", ".yaml"):
            with open(path, "r") as f:
                return yaml.safe_load(f) or {}
    except (OSError, tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    raise ConfigError(f"unsupported config format {suffix!r}; use .toml, .yml or .yaml")


def _parse_env_value(raw: str) -> Any:
    # lists and numbers arrive as JSON; anything else stays a string for pydantic
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(data: Dict[str, Any], environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """Override ``data[section][key]`` from ``KAC_<SECTION>_<KEY>`` variables."""
    environ = os.environ if environ is None else environ
    merged = {section: dict(data.get(section) or {}) for section in SECTIONS}
    merged.update({k: v for k, v in data.items() if k not in SECTIONS})
    fields = {
        "kernel": KernelSection.model_fields,
        "sim": SimSection.model_fields,
        "ensemble": EnsembleSection.model_fields,
        "experiment": ExperimentSection.model_fields,
    }
    for section in SECTIONS:
        for key in fields[section]:
            env_key = f"{ENV_PREFIX}{section.upper()}_{key.upper()}"
            if env_key in environ:
                merged[section][key] = _parse_env_value(environ[env_key])
                logger.debug(f"Config override from {env_key}")
    if f"{ENV_PREFIX}OUTPUT_DIR" in environ:
        merged["output_dir"] = environ[f"{ENV_PREFIX}OUTPUT_DIR"]
    return merged


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Dict[str, Any]]] = None,
                environ: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """
    Read ``path``, apply `.env`/environment overrides, then ``overrides``
    (section -> key -> value, as set by CLI flags), and validate.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if environ is None:
        load_dotenv()
    data = apply_env_overrides(_read_file(path), environ)
    for section, values in (overrides or {}).items():
        if section == "output_dir":
            data["output_dir"] = values
        else:
            data.setdefault(section, {}).update(values)
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}") from e
    cfg.kernel.to_spec()
    logger.debug(f"Loaded config {path} (hash {cfg.config_hash()[:12]})")
    return cfg


def dump_config(cfg: ExperimentConfig, path: Union[str, Path]) -> None:
    """Write the resolved config as YAML next to the run outputs."""
    with open(path, "w") as f:
        yaml.safe_dump(cfg.model_dump(mode="json"), f, sort_keys=True)

"""Experiment configuration: a strict, versioned TOML schema."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .policy import POLICY_KINDS

SCHEMA_VERSION = 1
TRUTH_KINDS = ("sparse-linear", "test-function", "ss-anova")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # [experiment]
    truth: str = "sparse-linear"
    function: Optional[str] = None
    policies: tuple[str, ...] = ("kgsplin", "kglin", "explore")
    budget: int = 200
    reps: int = 1
    seed: int = 0
    noise_fraction: Optional[float] = 0.05
    noise_sd: Optional[float] = None
    n_alternatives: int = 100
    embed_dim: int = 200
    n_variables: int = 100
    knots: int = 4
    order: int = 4
    # [policy]
    lambda_scale: float = 0.5
    max_terms: int = 16
    n_samples: int = 500
    c_min: float = 0.01
    c_max: float = 100.0
    warmup_rounds: int = 10
    prior_var: Optional[float] = None
    tol: float = 1e-6
    lambda_grid: tuple[float, ...] = ()
    sweep_reps: int = 20
    sweep_policies: tuple[str, ...] = ("kgsplin", "kglin")
    # [output]
    out_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        object.__setattr__(self, "sweep_policies", tuple(self.sweep_policies))
        if self.truth not in TRUTH_KINDS:
            raise ConfigError(f"truth must be one of {TRUTH_KINDS}, got {self.truth!r}")
        if self.truth == "test-function" and not self.function:
            raise ConfigError("truth 'test-function' needs a function name")
        bad = [p for p in self.policies if p not in POLICY_KINDS]
        if bad or not self.policies:
            raise ConfigError(f"unknown or missing policies: {bad}")
        if (self.noise_sd is None) == (self.noise_fraction is None):
            raise ConfigError("set exactly one of noise_sd and noise_fraction")
        if self.budget < 1 or self.reps < 1:
            raise ConfigError("budget and reps must be at least 1")
        if self.n_alternatives < 1:
            raise ConfigError("need at least one alternative")
        if any(v <= 0 for v in self.lambda_grid) or self.lambda_scale < 0:
            raise ConfigError("lambda scales must be positive")
        if self.lambda_grid and (self.sweep_reps < 1 or not self.sweep_policies):
            raise ConfigError("a lambda sweep needs sweep_reps >= 1 and at least one policy")
        bad = [p for p in self.sweep_policies if p not in POLICY_KINDS]
        if bad:
            raise ConfigError(f"unknown sweep policies: {bad}")
        if self.truth == "sparse-linear" and "kgspam" in self.policies:
            raise ConfigError("kgspam needs a spline-featured truth")
        if not 0 < self.c_min <= self.c_max:
            raise ConfigError("need 0 < c_min <= c_max")


SECTIONS = {
    "experiment": (
        "truth", "function", "policies", "budget", "reps", "seed", "noise_fraction", "noise_sd",
        "n_alternatives", "embed_dim", "n_variables", "knots", "order",
    ),
    "policy": (
        "lambda_scale", "max_terms", "n_samples", "c_min", "c_max", "warmup_rounds", "prior_var",
        "tol", "lambda_grid", "sweep_reps", "sweep_policies",
    ),
    "output": ("out_dir",),
}


def from_dict(doc: dict) -> ExperimentConfig:
    """Build a config from a parsed TOML document; unknown keys are errors."""
    doc = dict(doc)
    version = doc.pop("schema", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema must be {SCHEMA_VERSION}, got {version!r}")
    kwargs = {}
    for section, body in doc.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            kwargs[key] = value
    if "noise_sd" in kwargs and "noise_fraction" not in kwargs:
        kwargs["noise_fraction"] = None
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(value)
        elif "float" in str(types[key]) and isinstance(value, int) and not isinstance(value, bool):
            kwargs[key] = float(value)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load(path: str) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(doc)


def to_toml(cfg: ExperimentConfig) -> str:
    """Render a config back to TOML (round-trips through :func:`load`)."""
    values = asdict(cfg)
    lines = [f"schema = {SCHEMA_VERSION}", ""]
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            val = values[key]
            if val is None:
                continue
            lines.append(f"{key} = {_toml_value(val)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, str):
        return '"' + val.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in val) + "]"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes)

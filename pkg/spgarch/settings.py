"""Layered job configuration.

Keys are ``SECTION__FIELD`` (e.g. ``SAMPLER__N_ITER``). Layers, lowest first:
dataclass defaults, ``SPGARCH_SECTION__FIELD`` environment variables, a dotenv-format
config file, flat CLI flags, ``--set section.field=value`` overrides.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from dotenv import dotenv_values, load_dotenv

from spgarch.bayes import PriorConfig
from spgarch.errors import ConfigError, SpgarchError
from spgarch.importers import IngestSpec
from spgarch.sampler import MixtureConfig, SamplerConfig
from spgarch.simstudy import StudyConfig
from spgarch.spline import TableConfig

load_dotenv()

ENV_PREFIX = "SPGARCH_"
SEPARATOR = "__"


def get_cache_dir() -> Path:
    return Path(os.getenv("SPGARCH_CACHE_DIR", "./.spgarch_cache"))


def get_log_level() -> str:
    return os.getenv("SPGARCH_LOG_LEVEL", "INFO").upper()


def get_workers() -> int:
    try:
        return int(os.getenv("SPGARCH_WORKERS", "1"))
    except ValueError as exc:
        raise ConfigError("SPGARCH_WORKERS must be an integer") from exc


@dataclass(frozen=True)
class JobSection:
    command: str = "fit"
    data: str = ""
    model: str = "spgarch"
    out: str = "./out"
    seed: int = 0
    dgp: int = 2
    T: int = 1000
    draws: str = ""
    preset: str = "desk"


@dataclass(frozen=True)
class Settings:
    job: JobSection = field(default_factory=JobSection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    ingest: IngestSpec = field(default_factory=IngestSpec)
    spline: TableConfig = field(default_factory=TableConfig)

    def sampler_config(self) -> SamplerConfig:
        return dataclasses.replace(self.sampler, seed=self.job.seed)

    def study_config(self) -> StudyConfig:
        return dataclasses.replace(self.study, seed=self.job.seed)


SECTIONS = tuple(f.name for f in dataclasses.fields(Settings))
# Seeds live in JOB__SEED only.
DERIVED = {("sampler", "seed"), ("study", "seed")}


def _section_fields(settings: Settings, section: str) -> dict[str, Any]:
    value = getattr(settings, section)
    return {f.name: getattr(value, f.name) for f in dataclasses.fields(value) if (section, f.name) not in DERIVED}


def _coerce(raw: str, default: Any, key: str) -> Any:
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in {"1", "0", "true", "false", "yes", "no"}:
                raise ValueError(text)
            return lowered in {"1", "true", "yes"}
        if isinstance(default, Enum):
            return type(default)(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [item.strip() for item in text.split(",") if item.strip()]
            if default:
                return tuple(_coerce(item, default[0], key) for item in items)
            return tuple(items)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot interpret {text!r}") from exc


def _split_key(key: str) -> tuple[str, str]:
    section, sep, name = key.strip().partition(SEPARATOR)
    if not sep or not name:
        raise ConfigError(f"{key}: expected SECTION__FIELD")
    return section.lower(), name.lower()


def apply_overrides(settings: Settings, overrides: Mapping[str, str]) -> Settings:
    """Apply ``SECTION__FIELD=value`` pairs; each section is rebuilt once."""
    pending: dict[str, dict[str, Any]] = {}
    for key, raw in overrides.items():
        section, name = _split_key(key)
        if section not in SECTIONS:
            raise ConfigError(f"{key}: unknown section {section!r}")
        current = _section_fields(settings, section)
        names = {n.lower(): n for n in current}
        if name not in names:
            raise ConfigError(f"{key}: unknown field {name!r} in section {section!r}")
        if raw is None:
            raise ConfigError(f"{key}: missing value")
        name = names[name]
        pending.setdefault(section, {})[name] = _coerce(raw, current[name], key)
    changes = {}
    for section, values in pending.items():
        try:
            changes[section] = dataclasses.replace(getattr(settings, section), **values)
        except (SpgarchError, TypeError, ValueError) as exc:
            raise ConfigError(f"section {section.upper()}: {exc}") from exc
    return dataclasses.replace(settings, **changes)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    found = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX) and SEPARATOR in key:
            found[key[len(ENV_PREFIX):]] = value
    return found


def load_config_file(path: Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return {key: value for key, value in dotenv_values(path).items()}


def parse_set_option(text: str) -> tuple[str, str]:
    """``section.field=value`` to (``SECTION__FIELD``, value)."""
    key, sep, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not section or not name:
        raise ConfigError(f"--set expects section.field=value, got {text!r}")
    return f"{section.upper()}{SEPARATOR}{name.upper()}", value


def resolve_settings(
    config_path: Path | None = None,
    flags: Mapping[str, str] | None = None,
    sets: Iterable[str] = (),
    environ: Mapping[str, str] | None = None,
) -> Settings:
    settings = Settings()
    layered: dict[str, str] = {}
    for layer in (env_overrides(environ), load_config_file(config_path) if config_path else {}, flags or {}):
        layered.update({k.upper(): v for k, v in layer.items()})
    for text in sets:
        key, value = parse_set_option(text)
        layered[key] = value
    if "JOB__PRESET" in layered:
        settings = apply_overrides(settings, {"JOB__PRESET": layered["JOB__PRESET"]})
    # The preset fills the study sizes; explicit STUDY__ keys still win.
    settings = dataclasses.replace(settings, study=StudyConfig.preset(settings.job.preset, workers=get_workers()))
    return apply_overrides(settings, layered)


def _format(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(item) for item in value)
    return str(value)


def dump_settings(settings: Settings) -> str:
    """Render every resolved key in config-file format."""
    lines = []
    for section in SECTIONS:
        lines.append(f"# {section}")
        for name, value in _section_fields(settings, section).items():
            lines.append(f"{section.upper()}{SEPARATOR}{name.upper()}={_format(value)}")
    return "\n".join(lines) + "\n"

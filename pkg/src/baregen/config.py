"""Run configuration: one YAML document describing a whole run.

The config captures everything needed to reproduce a run except secrets:
API keys enter only through the environment variable named by each
endpoint's ``api_key_ref``. Defaults follow the temperature policy used
throughout: base models sample at 0.7, instruct generators at 1.0, the
refiner at 0.7, judges greedily. Every temperature is overridable per
endpoint for sweep workflows.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .datastore import read_examples, resolve_data_path
from .errors import ConfigError, SchemaError
from .strategies import StrategyConfig
from .types import DomainSpec, FewShotExample, ModelEndpoint, validate_domain_spec

ENDPOINT_NAMES = ("base", "instruct", "refine", "embedding", "judge")

_ROLE_DEFAULTS = {
    "base": {"role": "base_completion", "temperature": 0.7, "max_tokens": 1024,
             "stop_sequences": ["EXAMPLE END"]},
    "instruct": {"role": "instruct_chat", "temperature": 1.0, "max_tokens": 1024},
    "refine": {"role": "instruct_chat", "temperature": 0.7, "max_tokens": 2048},
    "embedding": {"role": "embedding", "temperature": 0.0, "max_tokens": 1},
    "judge": {"role": "judge", "temperature": 0.0, "max_tokens": 2048},
}

_STRATEGY_ENDPOINTS = {
    "independent": ("generator",),
    "persona": ("instruct",),
    "sequential": ("instruct",),
    "in_one": ("instruct",),
    "dynamic_fewshot": ("instruct",),
    "bare": ("base", "refine"),
    "instruct_refine": ("instruct", "refine"),
}


@dataclass
class RunConfig:
    """Everything a generate run needs; analyze/ir reuse the manifest instead."""

    domain: DomainSpec
    strategy: StrategyConfig
    endpoints: dict[str, ModelEndpoint]
    global_seed: int
    output_dir: Path
    concurrency_limit: int = 8
    few_shot_file: str | None = None
    templates_dir: Path | None = None
    embed_batch_size: int = 1000
    retry_max_attempts: int = 5
    retry_base_delay: float = 0.5
    few_shot_examples: list[FewShotExample] = field(default_factory=list)

    def required_endpoint_names(self) -> tuple[str, ...]:
        names = _STRATEGY_ENDPOINTS[self.strategy.name]
        if names == ("generator",):
            return (self.strategy.generator,)
        return names

    def validate(self) -> "RunConfig":
        validate_domain_spec(self.domain)
        self.strategy.validate(self.domain)
        if self.concurrency_limit < 1:
            raise ConfigError("concurrency_limit must be >= 1")
        if self.retry_max_attempts < 1:
            raise ConfigError("retry_max_attempts must be >= 1")
        for name in self.required_endpoint_names():
            if name not in self.endpoints:
                raise ConfigError(
                    f"strategy {self.strategy.name!r} needs endpoint {name!r}")
        for name, ep in self.endpoints.items():
            if name in _ROLE_DEFAULTS and ep.role != _ROLE_DEFAULTS[name]["role"]:
                raise ConfigError(
                    f"endpoint {name!r} must have role {_ROLE_DEFAULTS[name]['role']!r}, "
                    f"got {ep.role!r}")
            # Validation-first: fail before any transport call when a named
            # secret is missing.
            if not ep.is_mock() and ep.api_key_ref and not os.environ.get(ep.api_key_ref):
                raise ConfigError(
                    f"endpoint {name!r} references unset env var {ep.api_key_ref}")
        if self.strategy.name != "dynamic_fewshot" and not self.few_shot_examples:
            raise ConfigError("few_shot_file with at least one example is required")
        return self


def _build_endpoint(name: str, raw: dict) -> ModelEndpoint:
    if not isinstance(raw, dict):
        raise ConfigError(f"endpoint {name!r} must be a mapping")
    defaults = dict(_ROLE_DEFAULTS.get(name, {}))
    merged = {**defaults, **raw}
    for required in ("base_url", "model_name"):
        if required not in merged:
            raise ConfigError(f"endpoint {name!r} is missing {required!r}")
    if "role" not in merged:
        raise ConfigError(f"endpoint {name!r} is missing a role")
    try:
        return ModelEndpoint.from_dict(merged)
    except Exception as exc:
        raise ConfigError(f"endpoint {name!r}: {exc}") from exc


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and fully validate a YAML run config.

    Raises:
        ConfigError: on any structural problem, before any transport call.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")

    for section in ("domain", "strategy", "endpoints", "output_dir"):
        if section not in raw:
            raise ConfigError(f"config is missing the {section!r} section")

    try:
        domain = DomainSpec.from_dict(raw["domain"])
    except Exception as exc:
        raise ConfigError(f"domain section: {exc}") from exc

    strat_raw = dict(raw["strategy"])
    pool_file = strat_raw.pop("fewshot_pool_file", None)
    try:
        strategy = StrategyConfig(**strat_raw)
    except TypeError as exc:
        raise ConfigError(f"strategy section: {exc}") from exc

    endpoints = {name: _build_endpoint(name, ep)
                 for name, ep in raw["endpoints"].items()}

    cfg = RunConfig(
        domain=domain,
        strategy=strategy,
        endpoints=endpoints,
        global_seed=int(raw.get("global_seed", 0)),
        output_dir=_resolve(path, raw["output_dir"]),
        concurrency_limit=int(raw.get("concurrency_limit", 8)),
        few_shot_file=raw.get("few_shot_file"),
        templates_dir=_resolve(path, raw["templates_dir"]) if raw.get("templates_dir") else None,
        embed_batch_size=int(raw.get("embed_batch_size", 1000)),
        retry_max_attempts=int(raw.get("retry_max_attempts", 5)),
        retry_base_delay=float(raw.get("retry_base_delay", 0.5)),
    )

    if cfg.few_shot_file:
        try:
            cfg.few_shot_examples = read_examples(
                _resolve_data(path, cfg.few_shot_file), cfg.domain)
        except (OSError, SchemaError) as exc:
            raise ConfigError(f"few_shot_file: {exc}") from exc
    if pool_file:
        try:
            pool = read_examples(_resolve_data(path, pool_file), cfg.domain)
        except (OSError, SchemaError) as exc:
            raise ConfigError(f"fewshot_pool_file: {exc}") from exc
        cfg.strategy = StrategyConfig(
            **{**strat_raw, "fewshot_pool": tuple(pool)})

    return cfg.validate()


def _resolve(config_path: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (config_path.parent / p)


def _resolve_data(config_path: Path, value: str):
    if value.startswith("bundled:"):
        return resolve_data_path(value)
    return _resolve(config_path, value)

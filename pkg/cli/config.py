"""Effective configuration for a pipeline run.

Layers, lowest first: built-in defaults (``settings.CHRONOPREF``), a JSON
config file, ``CHRONOPREF_<KEY>`` environment variables, command-line flags.
"""

import hashlib
import json
import logging
from pathlib import Path

from django.conf import settings

from chronopref.artifacts import read_json
from chronopref.exceptions import ConfigError

from .forms import PipelineConfigForm

logger = logging.getLogger(__name__)

ENV_PREFIX = "CHRONOPREF_"

# Keys that change how a stage runs but not what it writes.
RUNTIME_KEYS = frozenset({
    "workdir", "cache_dir", "max_in_flight", "request_timeout", "max_retries", "backoff_base",
    "report_format", "rounds",
})


def valid_keys():
    return sorted(settings.CHRONOPREF)


def _check_keys(values, source):
    unknown = sorted(set(values) - set(settings.CHRONOPREF))
    if unknown:
        raise ConfigError(
            f"unknown config key(s) in {source}: {', '.join(unknown)}. Valid keys: {', '.join(valid_keys())}"
        )


def read_config_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    data = read_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def env_overrides(env):
    values = {}
    for key in settings.CHRONOPREF:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = env[name]
    return values


def resolve_config(config_file=None, env=None, flags=None):
    merged = dict(settings.CHRONOPREF)
    if config_file:
        file_values = read_config_file(config_file)
        _check_keys(file_values, config_file)
        merged.update(file_values)
    merged.update(env_overrides(env or {}))
    flags = {key: value for key, value in (flags or {}).items() if value is not None}
    _check_keys(flags, "command-line flags")
    merged.update(flags)

    form = PipelineConfigForm(data=merged)
    if not form.is_valid():
        problems = "; ".join(
            f"{field}: {' '.join(str(m) for m in messages)}" for field, messages in form.errors.items()
        )
        raise ConfigError(f"invalid configuration: {problems}")
    config = {key: form.cleaned_data[key] for key in settings.CHRONOPREF}
    logger.debug("effective config: %s", config)
    return config


def config_hash(config):
    """Digest over the keys that shape stage outputs."""
    relevant = {key: value for key, value in config.items() if key not in RUNTIME_KEYS}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True, default=str).encode("utf-8")).hexdigest()

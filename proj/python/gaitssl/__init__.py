"""Self-supervised gait representation toolkit (Python bindings)."""

import json as _json

from ._core import (
    ConfigError,
    DataError,
    NumericalError,
    config_hash as _config_hash,
    contrastive_loss,
    fit_l1_logistic,
    generate_cohort as _generate_cohort,
    geometric_median,
    resolve_config as _resolve_config,
    run,
    spearman,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "config_hash",
    "contrastive_loss",
    "fit_l1_logistic",
    "generate_cohort",
    "geometric_median",
    "resolve_config",
    "run",
    "spearman",
]


def _dump(config):
    return config if isinstance(config, str) else _json.dumps(config)


def resolve_config(config=None):
    """Returns the fully defaulted run config as a dict."""
    return _json.loads(_resolve_config(_dump(config or {})))


def config_hash(config=None):
    return _config_hash(_dump(config or {}))


def generate_cohort(config, out_dir):
    """Writes a synthetic dataset from the `cohort` section; returns (subjects, trials)."""
    return _generate_cohort(_dump(config), str(out_dir))

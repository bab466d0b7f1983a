"""Interpretable tissue graphs: region graphs, catalog features, GAT training
and integrated-gradients explanations.

Configurations are plain dicts with the same layout as the JSON config file.
Keys left out keep their defaults.
"""

import json as _json
from os import fspath as _fspath

from . import _core
from ._core import (
    ConfigError,
    Error,
    InvalidArgument,
    UndefinedMetric,
    auc_macro,
    balanced_accuracy,
    c_index,
    coarsen,
    discretize_survival,
    evaluate,
    explain,
    f1_macro,
    feature_names,
    predict,
    prune_correlated,
    synth,
    t_test,
    texture_features,
)

__all__ = [
    "ConfigError",
    "Error",
    "InvalidArgument",
    "UndefinedMetric",
    "auc_macro",
    "balanced_accuracy",
    "c_index",
    "coarsen",
    "default_config",
    "discretize_survival",
    "evaluate",
    "explain",
    "f1_macro",
    "feature_names",
    "fixture_config",
    "load_config",
    "predict",
    "prune_correlated",
    "run",
    "sweep",
    "synth",
    "t_test",
    "texture_features",
]


def _dump(config):
    def paths(value):
        if isinstance(value, dict):
            return {k: paths(v) for k, v in value.items()}
        if hasattr(value, "__fspath__"):
            return _fspath(value)
        return value

    return _json.dumps(paths(config or {}))


def default_config():
    return _json.loads(_core.default_config())


def fixture_config():
    return _json.loads(_core.fixture_config())


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return _json.loads(_core.normalize_config(fh.read()))


def run(config):
    """Full pipeline over config["manifest"]; returns the run summary."""
    return _core.run(_dump(config))


def sweep(config, param, values):
    """One run per value of "tau" or "xi"; returns (rows, table text)."""
    return _core.sweep(_dump(config), param, list(values))

# Copyright (c) 2026, The DataMIL Authors
# SPDX-License-Identifier: Apache-2.0
#
"""Datamodels for imitation-learning data selection.

Stage functions take a config dict (as produced by ``default_config`` or
``load_config``) and write into ``config["output_dir"]``.
"""

import json
import os

from . import _core
from ._core import (
    Cluster,
    ConfigError,
    DataMILError,
    EnvSpec,
    Trajectory,
    UnsupportedConfiguration,
    __version__,
    expert_action,
    generate_prior,
    generate_target,
    load_trajectories,
    make_clusters,
    pearson,
    random_select,
    regression_estimate,
    save_trajectories,
    select_top_fraction,
    spearman,
    trace_normalized_ridge,
)


def default_config(output_dir=None):
    cfg = json.loads(_core._default_config())
    if output_dir is not None:
        cfg["output_dir"] = os.fspath(output_dir)
    return cfg


def load_config(path, output_dir=None):
    cfg = json.loads(_core._load_config(os.fspath(path)))
    if output_dir is not None:
        cfg["output_dir"] = os.fspath(output_dir)
    return cfg


def normalize_config(config):
    """Validates ``config`` and fills in every default."""
    return json.loads(_core._normalize_config(json.dumps(config)))


def config_hash(config):
    return _core._config_hash(json.dumps(config))


def _stage(fn):
    def call(config):
        return fn(json.dumps(config))

    call.__name__ = fn.__name__.lstrip("_")
    return call


gen_data = _stage(_core._gen_data)
estimate = _stage(_core._estimate)
select = _stage(_core._select)
train_eval = _stage(_core._train_eval)
proxy_study = _stage(_core._proxy_study)
report = _stage(_core._report)
run = _stage(_core._run)


def read_report(config, stable=False):
    """Loads report.json; ``stable=True`` drops the timestamp and timing fields."""
    path = os.path.join(config["output_dir"], "report.json")
    with open(path) as f:
        text = f.read()
    if stable:
        text = _core._strip_volatile(text)
    return json.loads(text)


__all__ = [
    "Cluster",
    "ConfigError",
    "DataMILError",
    "EnvSpec",
    "Trajectory",
    "UnsupportedConfiguration",
    "__version__",
    "config_hash",
    "default_config",
    "estimate",
    "expert_action",
    "gen_data",
    "generate_prior",
    "generate_target",
    "load_config",
    "load_trajectories",
    "make_clusters",
    "normalize_config",
    "pearson",
    "proxy_study",
    "random_select",
    "read_report",
    "regression_estimate",
    "report",
    "run",
    "save_trajectories",
    "select",
    "select_top_fraction",
    "spearman",
    "train_eval",
    "trace_normalized_ridge",
]

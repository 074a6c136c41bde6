# Copyright (c) 2026, The DataMIL Authors
# SPDX-License-Identifier: Apache-2.0
#
import json
import os
import pathlib
import random

import pytest

import datamil

SOURCE = pathlib.Path(os.environ.get("DATAMIL_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


def test_version():
    assert datamil.__version__.count(".") == 2


def test_expert_action_clips():
    spec = datamil.EnvSpec()
    assert datamil.expert_action(spec, (0.0, 0.0), (1.0, 0.0)) == pytest.approx((1.0, 0.0))
    assert datamil.expert_action(spec, (0.99, 0.0), (1.0, 0.0)) == pytest.approx((0.05, 0.0))


def test_prior_and_file_round_trip(tmp_path):
    spec = datamil.EnvSpec()
    prior = datamil.generate_prior(spec, n_expert_per_task=2, n_noisy_per_task=1, seed=4)
    assert len(prior) == spec.num_tasks * 3
    assert sum(t.source_tag == "expert" for t in prior) == spec.num_tasks * 2
    path = tmp_path / "prior.jsonl"
    datamil.save_trajectories(prior, path)
    back = datamil.load_trajectories(path)
    assert [t.states for t in back] == [t.states for t in prior]
    assert [t.actions for t in back] == [t.actions for t in prior]


def test_clusters_cover_every_pair():
    prior = datamil.generate_prior(n_expert_per_task=1, n_noisy_per_task=1, seed=2)
    clusters = datamil.make_clusters(prior, "subtrajectory:15")
    assert sum(c.length for c in clusters) == sum(len(t) for t in prior)
    assert [c.cluster_id for c in clusters] == list(range(len(clusters)))
    with pytest.raises(datamil.DataMILError):
        datamil.make_clusters(prior, "chunks")


def test_regression_recovers_planted_effects():
    tau = [0.5, -1.5, 2.0]
    masks = [[float(b >> i & 1) for i in range(3)] for b in range(8)]
    outcomes = [1.0 + sum(t * z for t, z in zip(tau, m)) for m in masks]
    est, offset = datamil.regression_estimate(masks, outcomes, lam=0.0, fit_offset=True)
    assert est == pytest.approx(tau, abs=1e-10)
    assert offset == pytest.approx(1.0, abs=1e-10)


def test_selection():
    assert datamil.select_top_fraction([0.3, -0.1, 0.5, 0.2], 0.5) == [2, 0]
    scores = [random.Random(1).gauss(0, 1) for _ in range(40)]
    shifted = [2 * s + 7 for s in scores]
    assert datamil.select_top_fraction(scores, 0.25) == datamil.select_top_fraction(shifted, 0.25)
    assert datamil.random_select(10, 0.3, 5) == datamil.random_select(10, 0.3, 5)
    assert datamil.spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)


def test_config_hash_and_validation(tmp_path):
    cfg = datamil.default_config(tmp_path / "a")
    other = datamil.default_config(tmp_path / "b")
    assert datamil.config_hash(cfg) == datamil.config_hash(other)
    other["selection"]["fraction"] = 0.2
    assert datamil.config_hash(cfg) != datamil.config_hash(other)
    cfg["selection"]["fractoin"] = 0.2
    with pytest.raises(datamil.ConfigError):
        datamil.config_hash(cfg)


def test_metagradient_through_adam_is_rejected(tmp_path):
    cfg = datamil.load_config(SOURCE / "configs" / "smoke.json", tmp_path)
    cfg["estimator"]["train"]["optimizer"] = "adam"
    cfg["selection"]["methods"] = ["datamil"]
    datamil.gen_data(cfg)
    with pytest.raises(datamil.UnsupportedConfiguration):
        datamil.estimate(cfg)


def test_smoke_run_matches_fixture(tmp_path):
    cfg = datamil.load_config(SOURCE / "configs" / "smoke.json", tmp_path)
    datamil.run(cfg)
    datamil.proxy_study(cfg)
    datamil.report(cfg)
    got = datamil.read_report(cfg, stable=True)
    with open(SOURCE / "tests" / "fixtures" / "smoke_report.json") as f:
        want = json.load(f)
    assert got == want
    assert datamil.config_hash(cfg) == got["config_hash"]

import json

import numpy as np
import pytest
from scipy import stats
from sklearn.metrics import balanced_accuracy_score, f1_score, roc_auc_score

import tissuegraph as tg


def test_catalog_names():
    names = tg.feature_names()
    assert len(names) == 188
    assert names[0] == "original_firstorder_10Percentile"
    assert names[110] == "size"
    assert len(tg.feature_names(include_lbp=True)) == 198


def test_texture_features_shape_and_mask():
    rng = np.random.default_rng(0)
    values = rng.uniform(0, 255, size=(12, 10))
    mask = np.ones_like(values, dtype=np.int32)
    full = tg.texture_features(values, mask)
    assert len(full) == 93
    assert all(np.isfinite(full))
    padded = np.full((14, 13), 7.0)
    padded[2:, 3:] = values
    padded_mask = np.zeros_like(padded, dtype=np.int32)
    padded_mask[2:, 3:] = 1
    assert tg.texture_features(padded, padded_mask) == full
    with pytest.raises(ValueError):
        tg.texture_features(values, mask[:, :3])


def test_pruning_keeps_everything_at_one():
    rng = np.random.default_rng(1)
    m = rng.uniform(size=(20, 6))
    m[:, 4] = m[:, 1]
    assert tg.prune_correlated(m, 1.0) == [True] * 6
    assert tg.prune_correlated(m, 0.999) == [True, True, True, True, False, True]


def test_coarsen_merges_similar_neighbours():
    out = tg.coarsen([[1, 0], [1, 0.01], [0, 1]], [(0, 1), (1, 2)], [3, 4, 5], 0.9)
    assert len(out["trace"]) == 1
    assert sorted(n[1] for n in out["nodes"]) == [5, 7]


def test_metrics_match_reference_implementations():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = 30
        labels = rng.integers(0, 4, n)
        labels[:4] = [0, 1, 2, 3]
        probs = rng.dirichlet(np.ones(4), n)
        pred = rng.integers(0, 4, n)
        want_auc = 100 * roc_auc_score(labels, probs, multi_class="ovr", average="macro", labels=[0, 1, 2, 3])
        assert tg.auc_macro(probs, labels) == pytest.approx(want_auc, abs=1e-9)
        want_f1 = 100 * f1_score(labels, pred, labels=[0, 1, 2, 3], average="macro", zero_division=0)
        assert tg.f1_macro(pred, labels) == pytest.approx(want_f1, abs=1e-9)
        assert tg.balanced_accuracy(pred, labels) == pytest.approx(100 * balanced_accuracy_score(labels, pred), abs=1e-9)
    assert tg.balanced_accuracy(np.zeros(8, dtype=int), [0, 1, 2, 3] * 2) == 25.0


def test_c_index_and_t_test():
    assert tg.c_index([5, 4, 3, 2, 1], [1, 2, 3, 4, 5], [1] * 5) == 100.0
    with pytest.raises(ValueError):
        tg.c_index([1, 2], [1, 2], [0, 0])
    a = [71.2, 68.4, 70.1, 69.9, 72.3]
    b = [66.0, 67.5, 65.2, 68.1, 66.9]
    assert tg.t_test(a, b) == pytest.approx(stats.ttest_ind(a, b).pvalue, rel=1e-6)
    assert tg.discretize_survival([10, 20, 30, 40, 50, 15, 35, 90], [1, 1, 1, 1, 1, 0, 0, 0]) == [0, 0, 1, 2, 3, 0, 2, 3]


def test_config_round_trip_and_rejection(tmp_path):
    cfg = tg.default_config()
    assert cfg["coarsen"]["tau"] == 0.9
    assert cfg["features"]["xi"] == 0.99
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"coarsen": {"tau": 0.5}}))
    assert tg.load_config(path)["coarsen"]["tau"] == 0.5
    path.write_text(json.dumps({"coarsen": {"bogus": 1}}))
    with pytest.raises(tg.ConfigError):
        tg.load_config(path)


def test_end_to_end_small_fixture(tmp_path):
    assert tg.synth(tmp_path / "data", count=8, size=48, seed=3) == 8
    cfg = tg.load_config(tmp_path / "data" / "config.json")
    cfg["output_root"] = str(tmp_path / "out")
    cfg["model"]["epochs"] = 5
    cfg["search"].update(trials=1, instances=1)
    cfg["explain"].update(steps=8, max_slides=1)

    summary = tg.run(cfg)
    assert summary["failures"] == 0
    assert summary["trained"]
    assert len(summary["slides"]) == 8
    assert set(summary["metrics"]) == {"AUC", "F1_m", "Bal. Acc"}

    again = tg.run(cfg)
    assert all(all(s["cache_hits"].values()) for s in again["slides"])

    rows = tg.predict(summary["run_dir"])
    assert rows and all(abs(sum(r["probabilities"]) - 1) < 1e-9 for r in rows)
    metrics = tg.evaluate(summary["run_dir"] / "predictions.csv")
    assert metrics.keys() == summary["metrics"].keys()

    gap = tg.explain(summary["run_dir"], rows[0]["slide_id"], tmp_path / "explain", steps=16)
    assert gap >= 0
    assert (tmp_path / "explain" / "report.json").exists()

    table_rows, text = tg.sweep(cfg, "xi", [0.95, 1.0])
    assert [r["value"] for r in table_rows] == [0.95, 1.0]
    assert "Correlation threshold xi" in text
    with pytest.raises(tg.ConfigError):
        tg.sweep(cfg, "tau", [2.0])

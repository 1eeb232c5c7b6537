import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clhad.errors import MetricError, ShapeError
from clhad.evalmetrics import (AnomalyMap, AucMatrix, anomaly_map, auc_bs, continual_metrics, eval_report,
                               load_anomaly_map, roc_triplet, save_anomaly_map, write_roc_csv)
from clhad.hsi_io import GroundTruthMask, HsiCube
from clhad.model import ModelState
from published import BS_ROWS, CLUSTER_SWEEP, FIVE_TASK_ACC, FIVE_TASK_BWT, FIVE_TASK_ROW


def mann_whitney(scores, labels):
    """Exhaustive pairwise statistic: P(pos > neg) + 0.5 P(pos == neg)."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def test_perfect_and_constant_scores():
    labels = np.array([[0, 1], [0, 0]])
    assert roc_triplet(labels.astype(float), labels).auc_df == 1.0
    flat = roc_triplet(np.full((2, 2), 0.3), labels)
    assert flat.auc_df == 0.5


def test_twenty_pixel_oracle(rng):
    scores = rng.random(20)
    labels = np.zeros(20, int)
    labels[rng.choice(20, 5, replace=False)] = 1
    assert roc_triplet(scores, labels).auc_df == pytest.approx(mann_whitney(scores, labels), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 100), st.integers(0, 2 ** 31), st.booleans())
def test_auc_matches_mann_whitney(n, seed, coarse):
    g = np.random.default_rng(seed)
    scores = g.integers(0, 5, n) / 4.0 if coarse else g.random(n)
    labels = g.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    assert roc_triplet(scores, labels).auc_df == pytest.approx(mann_whitney(scores, labels), abs=1e-9)


def test_rates_monotone_and_bounded(rng):
    scores = rng.random((8, 8))
    labels = (rng.random((8, 8)) < 0.2).astype(int)
    labels[0, 0] = 1
    t = roc_triplet(scores, labels)
    assert np.all(np.diff(t.tau) < 0)
    assert np.all(np.diff(t.pd) >= 0) and np.all(np.diff(t.pf) >= 0)
    for v in (t.auc_df, t.auc_dtau, t.auc_ftau):
        assert 0.0 <= v <= 1.0
    assert t.auc_bs == t.auc_df - t.auc_ftau
    assert t.tau[0] == 1.0 and t.tau[-1] == 0.0


def test_degenerate_ground_truth():
    with pytest.raises(MetricError):
        roc_triplet(np.random.default_rng(0).random((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        roc_triplet(np.zeros((2, 3)), np.ones((3, 2)))


def test_auc_bs_examples():
    assert auc_bs((1.0, 0.0048)) == pytest.approx(0.9952)
    assert auc_bs((0.5, 0.5)) == 0.0
    assert auc_bs((0.3, 0.7)) < 0  # no clamping


@pytest.mark.parametrize("tasks", sorted(BS_ROWS))
def test_published_bs_rows(tasks):
    for method, (values, avg) in BS_ROWS[tasks].items():
        for bs in values:
            # any split df - ftau = bs reproduces the entry
            assert auc_bs((1.0, 1.0 - bs)) == pytest.approx(bs, abs=1e-12)
        if (tasks, method) == (5, "ours"):
            # the printed average disagrees with its own entries by 0.002
            assert np.mean(values) == pytest.approx(0.92522, abs=1e-9)
            continue
        assert np.mean(values) == pytest.approx(avg, abs=5e-5 + 1e-12)


def test_continual_examples():
    m = continual_metrics(AucMatrix([[0.99], [0.98, 0.96]]))
    assert m.acc == pytest.approx(0.97)
    assert continual_metrics(AucMatrix([[0.9], [0.9, 0.8]])).bwt == pytest.approx(0.0)
    single = continual_metrics(AucMatrix([[0.8]]))
    assert single.bwt is None and single.fwt is None


def test_published_five_task_acc():
    rows = CLUSTER_SWEEP[3][0]
    assert rows[-1] == list(FIVE_TASK_ROW)
    m = continual_metrics(AucMatrix(rows))
    assert m.acc == pytest.approx(FIVE_TASK_ACC, abs=5e-5)
    assert m.bwt == pytest.approx(FIVE_TASK_BWT, abs=5e-5)


@pytest.mark.parametrize("p", sorted(CLUSTER_SWEEP))
def test_published_cluster_sweep(p):
    rows, reported = CLUSTER_SWEEP[p]
    for t, (acc, bwt) in enumerate(reported, start=1):
        m = continual_metrics(AucMatrix(rows[:t]))
        assert m.acc == pytest.approx(acc, abs=5e-5 + 1e-12)
        if bwt is None:
            assert m.bwt is None
        else:
            assert m.bwt == pytest.approx(bwt, abs=5e-5 + 1e-12)


def test_bwt_variants_differ():
    matrix = AucMatrix([[0.9], [0.8, 0.9], [0.7, 0.85, 0.9]])
    assert continual_metrics(matrix).bwt == pytest.approx(((0.7 - 0.8) + (0.85 - 0.9)) / 2)
    assert continual_metrics(matrix, "diagonal").bwt == pytest.approx(((0.7 - 0.9) + (0.85 - 0.9)) / 2)


def test_fwt_uses_reference():
    matrix = AucMatrix([[0.9], [0.8, 0.95], [0.7, 0.85, 0.9]], reference=[None, 0.9, 0.95])
    assert continual_metrics(matrix).fwt == pytest.approx(((0.85 - 0.9) + (0.9 - 0.95)) / 2)


def test_matrix_validation():
    with pytest.raises(MetricError):
        AucMatrix([[0.9], [0.8]])
    with pytest.raises(MetricError):
        AucMatrix([[1.2]])


class _Identity:
    """Stand-in state whose generator returns its input."""

    input_dim = 8

    @staticmethod
    def reconstruct(batch):
        return np.asarray(batch)


def test_identity_generator_zero_map(rng):
    cube = HsiCube(rng.random((5, 4, 4)))
    amap = anomaly_map(cube, _Identity())
    assert not amap.scores.any()
    assert not amap.normalized.any()


def test_single_channel_perturbation():
    class _Perturb(_Identity):
        @staticmethod
        def reconstruct(batch):
            out = np.array(batch, dtype=np.float64)
            out[7, 2] += 0.25
            return out

    amap = anomaly_map(HsiCube(np.full((3, 4, 4), 0.5)), _Perturb())
    assert amap.scores.ravel()[7] == pytest.approx(0.0625)
    assert amap.scores.sum() == pytest.approx(0.0625)


def test_band_mismatch():
    with pytest.raises(ShapeError):
        anomaly_map(HsiCube(np.zeros((2, 2, 5))), _Identity())


def test_map_permutation_consistency(rng):
    """Scores depend only on each pixel's own SSNS vector."""
    state = ModelState.create(4, seed=1)
    cube = HsiCube(np.full((4, 4, 4), 0.3) + rng.random((4, 4, 4)) * 0.01)
    amap = anomaly_map(cube, state)
    from clhad.bsm import ssns_all
    vectors = ssns_all(cube)
    perm = rng.permutation(len(vectors))
    rec = state.reconstruct(vectors[perm])
    direct = ((rec.astype(np.float64) - vectors[perm]) ** 2).sum(1)
    np.testing.assert_allclose(amap.scores.ravel()[perm], direct, rtol=1e-6)


def test_map_round_trip(tmp_path, rng):
    amap = AnomalyMap(rng.random((3, 5)) * 4)
    back = load_anomaly_map(save_anomaly_map(amap, tmp_path / "m.bsq"))
    assert back.min() == 0.0 and back.max() == 1.0
    np.testing.assert_allclose(back, amap.normalized, rtol=1e-6)


def test_roc_csv_and_report(tmp_path, rng):
    scores = rng.random((4, 4))
    labels = np.zeros((4, 4), int)
    labels[1, 1] = 1
    t = roc_triplet(scores, GroundTruthMask(labels))
    path = write_roc_csv(t, tmp_path / "roc.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "tau,pd,pf" and len(lines) == len(t.tau) + 1
    report = eval_report({"a": t}, AucMatrix([[0.9], [0.8, 0.7]]), "abc")
    assert report["acc"] == pytest.approx(0.75)
    assert report["tasks"][0]["auc_bs"] == t.auc_bs
    assert set(report) == {"tasks", "auc_matrix", "acc", "bwt", "fwt", "config_hash"}
    json.dumps(report)

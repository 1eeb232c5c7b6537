"""Cross-module invariants, run together as one property target (`pytest tests/test_properties.py`)."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import clhad.trainer as trainer_mod
from clhad.hsi_io import SceneSpec, synth_stream
from clhad.losses import af_loss
from clhad.model import l2_self_attention
from clhad.replay import ReplayBuffer, kmeans, select_exemplars, update_buffer
from clhad.trainer import TaskStream, TrainConfig, train_continual

SETTINGS = settings(max_examples=40, deadline=None)


@SETTINGS
@given(m=st.integers(4, 120), d=st.integers(1, 6), p=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_kmeans_inertia_never_increases(m, d, p, seed):
    x = np.random.default_rng(seed).normal(size=(m, d)) * np.random.default_rng(seed + 1).uniform(0.1, 5)
    res = kmeans(x, min(p, m), seed=seed)
    assert np.all(np.diff(res.history) <= 1e-9 * max(res.history[0], 1.0))
    assert res.inertia <= res.history[0] + 1e-9
    assert len(res.assignments) == m


@SETTINGS
@given(n=st.integers(1, 12), d=st.integers(1, 16), a=st.integers(1, 8),
       batch=st.integers(1, 3), scale=st.floats(1e-3, 1e3), seed=st.integers(0, 10_000))
def test_attention_rows_sum_to_one(n, d, a, batch, scale, seed):
    g = torch.Generator().manual_seed(seed)
    feats = torch.randn(batch, n, d, generator=g, dtype=torch.float64) * scale
    w = [torch.randn(d, a, generator=g, dtype=torch.float64) for _ in range(3)]
    _, weights = l2_self_attention(feats, *w, scale_dim=2 * d, return_weights=True)
    assert torch.all(weights >= 0)
    assert torch.allclose(weights.sum(-1), torch.ones(batch, n, dtype=torch.float64), atol=1e-6)


@SETTINGS
@given(values=st.lists(st.floats(-10, 10), min_size=1, max_size=30),
       lam=st.floats(0, 5), alpha=st.floats(-4, 4))
def test_af_quadratic_in_parameters_linear_in_lambda(values, lam, alpha):
    theta = torch.tensor(values, dtype=torch.float64)
    base = float(af_loss([theta], lam))
    assert float(af_loss([alpha * theta], lam)) == pytest.approx(alpha ** 2 * base, rel=1e-9, abs=1e-9)
    assert float(af_loss([theta], 2 * lam)) == pytest.approx(2 * base, rel=1e-12, abs=1e-12)


def test_task_one_never_evaluates_regularisers(monkeypatch):
    calls = []
    real_af, real_cl = trainer_mod.af_loss, trainer_mod.cl_loss
    current = {"task": 0}
    real_run = trainer_mod.run_epochs

    def run(*args, task, **kw):
        current["task"] = task
        return real_run(*args, task=task, **kw)

    monkeypatch.setattr(trainer_mod, "run_epochs", run)
    monkeypatch.setattr(trainer_mod, "af_loss", lambda *a, **k: calls.append(("af", current["task"])) or real_af(*a, **k))
    monkeypatch.setattr(trainer_mod, "cl_loss", lambda *a, **k: calls.append(("cl", current["task"])) or real_cl(*a, **k))
    pairs = synth_stream(2, SceneSpec(size=16, bands=8, seed=4))
    stream = TaskStream([c for c, _ in pairs], [m for _, m in pairs])
    result = train_continual(stream, TrainConfig(epochs=2, batch_size=64, beta=1.0))
    assert calls and all(task == 2 for _, task in calls)
    assert {kind for kind, _ in calls} == {"af", "cl"}
    task1 = [r for r in result.log if r["task"] == 1]
    assert task1 and all(r["l_af"] == 0.0 and r["l_cl"] == 0.0 for r in task1)
    assert any(r["l_af"] > 0 for r in result.log if r["task"] == 2)


@SETTINGS
@given(sizes=st.lists(st.integers(3, 400), min_size=1, max_size=5), p=st.integers(1, 3),
       seed=st.integers(0, 1000))
def test_buffer_size_is_sum_of_task_selections(sizes, p, seed):
    rng = np.random.default_rng(seed)
    buffer, expected = ReplayBuffer(), 0
    for t, m in enumerate(sizes, start=1):
        x = rng.normal(size=(m, 4))
        sel = select_exemplars(x, kmeans(x, min(p, m), seed=seed))
        assert sel.counts == [max(1, c // 100) if c else 0 for c in np.bincount(
            kmeans(x, min(p, m), seed=seed).assignments, minlength=min(p, m))]
        buffer = update_buffer(buffer, t, x[sel.rows], sel.rows, sel)
        expected += sel.n
        assert len(buffer) == expected == len(buffer.vectors)
        assert buffer.tasks == list(range(1, t + 1))

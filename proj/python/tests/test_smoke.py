import math

import numpy as np
import pytest

import pyconcrete


def test_samples_lie_on_simplex():
    xs = np.array(pyconcrete.concrete_sample([0.5, -1.0, 0.0], 0.5, seed=3, count=1000))
    assert xs.shape == (1000, 3)
    assert np.all(xs >= 0)
    np.testing.assert_allclose(xs.sum(axis=1), 1.0, atol=1e-12)


def test_sampling_is_seeded():
    a = pyconcrete.concrete_sample([0.0, 1.0], 1.0, seed=7, count=5)
    b = pyconcrete.concrete_sample([0.0, 1.0], 1.0, seed=7, count=5)
    assert a == b


def test_binary_density_matches_two_state():
    for x in (0.1, 0.5, 0.93):
        a = pyconcrete.binary_concrete_log_density(0.7, 0.6, x)
        b = pyconcrete.concrete_log_density([0.7, 0.0], 0.6, [x, 1.0 - x])
        assert a == pytest.approx(b, abs=1e-12)


def test_uniform_density_at_lambda_one():
    # n = 2, equal locations, lambda = 1: density is 1 on the segment
    assert math.exp(pyconcrete.concrete_log_density([0.0, 0.0], 1.0, [0.3, 0.7])) == pytest.approx(1.0)


def test_parse_model_rejects_garbage():
    assert "16" in pyconcrete.parse_model("(4H~16V)")
    with pytest.raises(Exception):
        pyconcrete.parse_model("(4H~~16V)")


def test_short_training_run(tmp_path):
    cfg = pyconcrete.TrainConfig()
    cfg.model = "(4H~16V)"
    cfg.steps = 100
    cfg.eval_every = 50
    cfg.m_eval = 5
    cfg.train_eval_rows = 50
    cfg.out = str(tmp_path)
    r = pyconcrete.train(cfg)
    assert len(r["metrics"]) == 2
    assert math.isfinite(r["final_test_nll"])
    assert (tmp_path / "metrics.csv").exists()


def test_quick_verify_passes():
    results = pyconcrete.verify(include_training=False)
    assert [r["id"] for r in results] == list(range(1, 13))
    assert all(r["passed"] for r in results), [r for r in results if not r["passed"]]

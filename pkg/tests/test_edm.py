import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from deepedm.dynamics import Trajectory, simulate
from deepedm.edm import (RecallConfig, SimplexConfig, knn_recall, recall_between, simplex_forecast,
                         simplex_min_length, simplex_multivariate, simplex_neighbors, simplex_weights)
from deepedm.embedding import delay_embed_array

from oracles import simplex_brute


def test_constant_series_forecasts_constant():
    out = simplex_forecast(np.full(30, 4.2), SimplexConfig(), 5)
    np.testing.assert_allclose(out, 4.2, rtol=1e-15)


def test_periodic_series_one_step_is_exact():
    period = 8
    y = np.sin(2 * np.pi * np.arange(40) / period)
    out = simplex_forecast(y, SimplexConfig(embed_dim=2), 1)
    assert abs(out[0] - np.sin(2 * np.pi * 40 / period)) < 1e-9


def test_tiny_case_matches_brute_force():
    y = np.random.default_rng(0).normal(size=12)
    cfg = SimplexConfig(embed_dim=2)
    np.testing.assert_allclose(simplex_forecast(y, cfg, 3), simplex_brute(y, 2, 1, 3), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(1, 3), st.data())
def test_random_series_match_brute_force(E, tau, steps, data):
    cfg = SimplexConfig(embed_dim=E, tau=tau)
    n = data.draw(st.integers(simplex_min_length(cfg, steps), 25))
    y = data.draw(hnp.arrays(np.float64, n, elements=st.floats(-5, 5)))
    np.testing.assert_allclose(simplex_forecast(y, cfg, steps), simplex_brute(y, E, tau, steps), atol=1e-10)


def test_fixed_bandwidth_matches_brute_force():
    y = np.random.default_rng(1).normal(size=20)
    np.testing.assert_allclose(simplex_forecast(y, SimplexConfig(rbf_sigma=0.7), 2),
                               simplex_brute(y, 3, 1, 2, sigma=0.7), atol=1e-12)


def test_forecast_is_convex_combination_of_neighbor_futures():
    y = np.random.default_rng(2).normal(size=30)
    cfg = SimplexConfig()
    emb = delay_embed_array(y, cfg.embed_dim, cfg.tau).T
    nb, _ = simplex_neighbors(emb, len(y) - 1, 1, cfg)
    out = simplex_forecast(y, cfg, 1)[0]
    assert y[nb + 1].min() - 1e-12 <= out <= y[nb + 1].max() + 1e-12


def test_weights_positive_and_exact_match_rule():
    w = simplex_weights(np.array([0.5, 1.0, 2.0]), None)
    assert np.all(w > 0) and w[0] == np.exp(-0.5)
    np.testing.assert_array_equal(simplex_weights(np.array([0.0, 0.0, 1.0]), None), [1.0, 1.0, 0.0])


def test_ties_prefer_earlier_index():
    y = np.array([1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0])
    cfg = SimplexConfig(embed_dim=1)
    emb = delay_embed_array(y, 1).T
    nb, d = simplex_neighbors(emb, 9, 1, cfg)
    assert list(nb) == [1, 3] and np.all(d == 0)


def test_scaling_with_co_scaled_bandwidth():
    y = np.random.default_rng(3).normal(size=25)
    a = 3.5
    base = simplex_forecast(y, SimplexConfig(rbf_sigma=0.8), 3)
    np.testing.assert_allclose(simplex_forecast(a * y, SimplexConfig(rbf_sigma=0.8 * a), 3), a * base, rtol=1e-12)


def test_constant_shift_keeps_neighbor_set():
    y = np.random.default_rng(4).normal(size=25)
    cfg = SimplexConfig(rbf_sigma=1.0)
    e1 = delay_embed_array(y, 3).T
    e2 = delay_embed_array(y + 10.0, 3).T
    # rows from index span onward contain no padding, so the shift cancels in differences
    assert list(simplex_neighbors(e1, 24, 1, cfg)[0]) == list(simplex_neighbors(e2, 24, 1, cfg)[0])


def test_too_short_history_reports_minimum():
    cfg = SimplexConfig()
    need = simplex_min_length(cfg, 2)
    with pytest.raises(ValueError, match=str(need)):
        simplex_forecast(np.arange(need - 1.0), cfg, 2)
    simplex_forecast(np.random.default_rng(0).normal(size=need), cfg, 2)


def test_multivariate_single_channel_and_permutation():
    x = np.random.default_rng(5).normal(size=(3, 40))
    cfg = SimplexConfig()
    np.testing.assert_array_equal(simplex_multivariate(x[:1], cfg, 4)[0], simplex_forecast(x[0], cfg, 4))
    perm = [2, 0, 1]
    np.testing.assert_array_equal(simplex_multivariate(x[perm], cfg, 4), simplex_multivariate(x, cfg, 4)[perm])


def _lookback_simplex_mse_by_prefix():
    obs = simulate("lorenz_chaotic", 0.0, n_steps=10_000).observations.T[:, 8000:]
    H, T = 48, 96
    err = []
    for s in range(0, obs.shape[1] - T - H + 1, 25):
        pred = simplex_multivariate(obs[:, s:s + T], SimplexConfig(), H)
        err.append(((pred - obs[:, s + T:s + T + H]) ** 2).mean(axis=0))
    e = np.mean(err, axis=0)
    return {p: float(e[:p].mean()) for p in (1, 5, 15, 48)}


def test_lookback_simplex_degrades_with_horizon_on_clean_chaotic_lorenz():
    mse = _lookback_simplex_mse_by_prefix()
    assert mse[1] < mse[5] < mse[15] < mse[48]
    assert mse[48] > 10.0


@pytest.mark.xfail(strict=True, reason="lookback-only library gives about 77, outside the 30.9 +/- 50% band")
def test_lookback_simplex_long_horizon_error_near_reference():
    assert 30.905 * 0.5 <= _lookback_simplex_mse_by_prefix()[48] <= 30.905 * 1.5


# -- recall --------------------------------------------------------------------

def test_recall_with_states_is_one():
    tr = simulate("lorenz_chaotic", 0.0, dt=0.001, n_steps=300)
    assert knn_recall(tr, RecallConfig(k=3), "state") == 1.0


def test_recall_between_hand_case():
    ref = np.array([[0.0], [1.0], [10.0], [1.1]])
    sur = np.array([[0.0], [5.0], [1.0], [6.0]])
    # queries t=1..3 with past-only library; reference picks 0, 1, 1; surrogate picks 0, 1, 1 for t=3 and 0 for t=2
    assert recall_between(ref, sur, 1) == pytest.approx(2 / 3)


def test_recall_k_exceeding_pool_rejected():
    with pytest.raises(ValueError):
        recall_between(np.zeros((3, 1)), np.zeros((3, 1)), 5)


def test_recall_rejects_unknown_source_and_missing_encoder():
    tr = Trajectory(np.zeros((5, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        knn_recall(tr, RecallConfig(), "nonsense")
    with pytest.raises(ValueError):
        knn_recall(tr, RecallConfig(), "latent_kernel")


def test_clean_recall_improves_with_longer_delays():
    tr = simulate("lorenz_chaotic", 0.0, dt=0.001, n_steps=600)
    r1 = knn_recall(tr, RecallConfig(k=1, delta_t=1))
    r10 = knn_recall(tr, RecallConfig(k=1, delta_t=10))
    assert r10 >= r1 - 0.02


def test_latent_source_with_identity_delay_encoder_equals_delay_recall():
    tr = simulate("lorenz_chaotic", 0.5, dt=0.001, n_steps=400)
    rc = RecallConfig(k=2, delta_t=4)
    enc = lambda s: delay_embed_array(s, 4).T  # noqa: E731
    assert knn_recall(tr, rc, "latent_kernel", enc) == knn_recall(tr, rc)

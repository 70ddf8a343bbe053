import json

import numpy as np
import pytest

from deepedm.dynamics import (LORENZ_CHAOTIC, LORENZ_NONCHAOTIC, ROSSLER_CHAOTIC, OdeSystem, add_noise,
                              build_synthetic_suite, integrate_rk4, lorenz_rhs, rossler_rhs, simulate,
                              split_indices)


def test_lorenz_rhs_at_chaotic_initial_state():
    np.testing.assert_allclose(lorenz_rhs((0.0, 1.0, 1.05), **LORENZ_CHAOTIC), [10.0, -1.0, -2.80035], atol=1e-12)


def test_lorenz_rhs_fixed_point_at_origin():
    np.testing.assert_array_equal(lorenz_rhs((0.0, 0.0, 0.0), **LORENZ_CHAOTIC), [0.0, 0.0, 0.0])


def test_lorenz_rhs_non_chaotic_parameters():
    np.testing.assert_allclose(lorenz_rhs((10.0, 10.0, 10.0), **LORENZ_NONCHAOTIC), [0.0, -20.0, 73.33], atol=1e-12)


def test_rossler_rhs_values():
    np.testing.assert_allclose(rossler_rhs((1.0, 1.0, 1.0), **ROSSLER_CHAOTIC), [-2.0, 1.2, -4.5], atol=1e-12)
    np.testing.assert_array_equal(rossler_rhs((0.0, 0.0, 0.0), a=0.2, b=0.0, c=5.7), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(rossler_rhs((0.0, 0.0, 0.0), a=0.2, b=0.2, c=5.7), [0.0, 0.0, 0.2])


def _lorenz_end(dt, t_end=0.5):
    n = int(round(t_end / dt)) + 1
    return integrate_rk4(OdeSystem("lorenz", LORENZ_CHAOTIC, (0.0, 1.0, 1.05), dt=dt, n_steps=n)).states[-1]


def test_rk4_fourth_order_self_convergence():
    # short horizon: later on, chaotic error growth makes single endpoints noisy
    ref = _lorenz_end(0.01 / 8)
    e1 = np.linalg.norm(_lorenz_end(0.01) - ref)
    e2 = np.linalg.norm(_lorenz_end(0.005) - ref)
    assert 8 <= e1 / e2 <= 32


def test_rk4_single_step_on_linear_decay():
    for dt in (0.1, 0.05):
        sys = OdeSystem("lorenz", {"sigma": 1.0, "rho": 0.0, "beta": 1.0}, (0.0, 0.0, 1.0), dt=dt, n_steps=2)
        # with x=y=0 the z equation reduces to z' = -z
        z1 = integrate_rk4(sys).states[1, 2]
        assert abs(z1 - np.exp(-dt)) <= dt**5 / 120 * 1.01


def test_single_step_returns_initial_state():
    tr = integrate_rk4(OdeSystem("rossler", ROSSLER_CHAOTIC, (1.0, 1.0, 1.0), n_steps=1))
    np.testing.assert_array_equal(tr.states, [[1.0, 1.0, 1.0]])


def test_system_validation():
    with pytest.raises(ValueError):
        OdeSystem("duffing", {}, (0.0,))
    with pytest.raises(ValueError):
        OdeSystem("lorenz", LORENZ_CHAOTIC, (0.0, 1.0, 1.05), dt=0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_step():
    sys = OdeSystem("lorenz", LORENZ_CHAOTIC, (1e200, 1e200, 1e200), dt=1.0, n_steps=5)
    with pytest.raises(FloatingPointError, match="step 1"):
        integrate_rk4(sys)


def test_zero_noise_observations_equal_states():
    tr = simulate("lorenz_chaotic", 0.0, n_steps=200)
    np.testing.assert_array_equal(tr.observations, tr.states)


def test_noise_standard_deviation():
    tr = integrate_rk4(OdeSystem("lorenz", LORENZ_CHAOTIC, (0.0, 1.0, 1.05), n_steps=34_000))
    noisy = add_noise(tr, 2.5, seed=3)
    assert 2.45 <= np.std(noisy.observations - noisy.states) <= 2.55


def test_noise_is_deterministic_per_seed():
    a = simulate("rossler_chaotic", 1.0, seed=7, n_steps=300)
    b = simulate("rossler_chaotic", 1.0, seed=7, n_steps=300)
    c = simulate("rossler_chaotic", 1.0, seed=8, n_steps=300)
    np.testing.assert_array_equal(a.observations, b.observations)
    assert not np.array_equal(a.observations, c.observations)
    with pytest.raises(ValueError):
        add_noise(a, -1.0)


def test_split_indices_are_sequential():
    sp = split_indices(10_000)
    assert sp == {"train": [0, 7000], "val": [7000, 8000], "test": [8000, 10_000]}
    with pytest.raises(ValueError):
        split_indices(10, (0.5, 0.5, 0.5))


def test_suite_files_and_regeneration(tmp_path):
    a = build_synthetic_suite(tmp_path / "a", n_steps=300)
    build_synthetic_suite(tmp_path / "b", n_steps=300)
    assert len(a) == 18 and len({p.name for p in a}) == 18
    assert len(list((tmp_path / "a").glob("*.csv"))) == 18
    for p in a:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    chaotic = (tmp_path / "a" / "lorenz_chaotic_sigma0.0.csv").read_text()
    assert chaotic != (tmp_path / "a" / "lorenz_nonchaotic_sigma0.0.csv").read_text()
    meta = json.loads((tmp_path / "a" / "lorenz_chaotic_sigma2.5.json").read_text())
    assert meta["sigma_noise"] == 2.5 and meta["dt"] == 0.01 and meta["splits"]["test"] == [240, 300]
    states = np.load(tmp_path / "a" / "lorenz_chaotic_sigma2.5.states.npy")
    assert states.shape == (300, 3)


def test_suite_csv_parses_back_losslessly(tmp_path):
    build_synthetic_suite(tmp_path, n_steps=50, noise_levels=(1.5,))
    tr = simulate("lorenz_chaotic", 1.5, seed=100 * 1 + 0, n_steps=50)
    body = np.loadtxt(tmp_path / "lorenz_chaotic_sigma1.5.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(body[:, 1:], tr.observations)

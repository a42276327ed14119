import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from mocapvi import gradcore as gc
from mocapvi.kinematics import SchemaError
from mocapvi.likelihood import (FAMILIES, SIGMA_FLOOR, LikelihoodParams, ObservationSet,
                                keypoint_loglik, load_observations, log_density,
                                save_observations, sigma_of_score)


def test_sigma_examples():
    assert_allclose(sigma_of_score(np.zeros(3), 1.0), 3 * np.log(2) + SIGMA_FLOOR, rtol=1e-15)
    assert_allclose(sigma_of_score(np.full(3, -30.0), [0.0, 5.0, 50.0]), SIGMA_FLOOR, atol=1e-9)
    assert_allclose(LikelihoodParams().sigma(0.0), np.log(2) + SIGMA_FLOOR, rtol=1e-2)


def test_sigma_monotone_grid_scan():
    rng = np.random.default_rng(0)
    s = np.linspace(0, 10, 1001)
    for _ in range(100):
        sig = sigma_of_score(rng.normal(size=3) * 5, s)
        assert np.all(np.diff(sig) >= 0)
        assert np.all(sig > 0)


def test_sigma_on_tape_matches_numpy():
    psi = np.array([0.3, -1.0, 0.5])
    s = np.array([0.0, 0.4, 2.0])
    val, g = gc.value_and_grad(lambda p: gc.sum_(sigma_of_score(p["psi"], s)),
                               gc.ParamVector.from_groups({"psi": psi}))
    assert_allclose(val, sigma_of_score(psi, s).sum(), rtol=1e-15)
    sig = 1 / (1 + np.exp(-psi))
    assert_allclose(g["psi"], sig * [3, s.sum(), (s * s).sum()], rtol=1e-14)


def test_log_density_examples():
    assert log_density("exponential", 1.0, 1.0) == -1.0
    assert_allclose(log_density("half_cauchy", 0.0, 1.0), np.log(2 / np.pi), rtol=1e-15)
    assert_allclose(log_density("half_cauchy", 0.0, 1.0), -0.4516, atol=1e-4)
    assert_allclose(log_density("half_normal", 0.0, 1.0), 0.5 * np.log(2 / np.pi), rtol=1e-15)
    assert_allclose(log_density("half_normal", 2.0, 2.0), 0.5 * np.log(2 / np.pi) - np.log(2) - 0.5)


def test_log_density_rejects_negative_errors():
    with pytest.raises(ValueError):
        log_density("exponential", -0.1, 1.0)
    with pytest.raises(ValueError):
        log_density("laplace", 0.1, 1.0)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("sigma", [0.05, 1.0, 7.5])
def test_densities_normalize(family, sigma):
    total, _ = integrate.quad(lambda e: np.exp(log_density(family, e, sigma)), 0, np.inf,
                              epsabs=1e-12, epsrel=1e-12, limit=200)
    assert abs(total - 1.0) < 1e-6


@pytest.mark.parametrize("family", FAMILIES)
def test_strictly_decreasing_in_error(family):
    eps = np.linspace(1e-3, 50, 2000)
    assert np.all(np.diff(log_density(family, eps, 1.7)) < 0)


def test_exponential_maximized_at_sigma_equal_error():
    eps = 2.5
    sig = np.linspace(0.01, 50, 50000)
    ll = log_density("exponential", eps, sig)
    assert abs(sig[np.argmax(ll)] - eps) <= sig[1] - sig[0]
    assert log_density("exponential", eps, 1e-8) < -1e6
    assert log_density("exponential", eps, 1e8) < -15


def test_keypoint_loglik_examples():
    p = LikelihoodParams(np.array([0.1, -2.0, 1.0]), "half_cauchy")
    y = np.array([[100.0, 50.0], [10.0, 10.0]])
    s = np.array([0.5, 3.0])
    ll = keypoint_loglik(p, y, y, s, np.array([True, False]))
    assert_allclose(ll[0], log_density("half_cauchy", 0.0, p.sigma(0.5)), rtol=1e-15)
    assert ll[1] == 0.0


def test_keypoint_loglik_vs_loop_oracle():
    rng = np.random.default_rng(1)
    C, J = 4, 20
    pred = rng.uniform(0, 1000, size=(C, J, 2))
    y = pred + rng.normal(size=(C, J, 2)) * 3
    s = rng.uniform(0, 2, size=(C, J))
    present = rng.random((C, J)) > 0.2
    y[~present] = np.nan  # absent rows may hold garbage
    psi = np.array([0.2, -0.5, -3.0])
    for family in FAMILIES:
        total = keypoint_loglik(LikelihoodParams(psi, family), pred, y, s, present).sum()
        loop = 0.0
        for c in range(C):
            for j in range(J):
                if not present[c, j]:
                    continue
                eps = float(np.hypot(*(y[c, j] - pred[c, j])))
                sig = (np.log1p(np.exp(psi[0])) + np.log1p(np.exp(psi[1])) * s[c, j]
                       + np.log1p(np.exp(psi[2])) * s[c, j] ** 2 + 1e-3)
                if family == "exponential":
                    loop += -np.log(sig) - eps / sig
                elif family == "half_cauchy":
                    loop += np.log(2 / np.pi) - np.log(sig) - np.log(1 + (eps / sig) ** 2)
                else:
                    loop += 0.5 * np.log(2 / np.pi) - np.log(sig) - eps ** 2 / (2 * sig ** 2)
        assert abs(total - loop) <= 1e-12 * max(1.0, abs(loop))


def test_constant_per_observation_term_changes_no_gradient():
    rng = np.random.default_rng(2)
    y = rng.normal(size=(30, 2)) * 5
    s = rng.uniform(0, 1, 30)
    pv = gc.ParamVector.from_groups({"pred": rng.normal(size=(30, 2)), "psi": np.zeros(3)})

    def ll(p, const):
        return gc.sum_(keypoint_loglik(p["psi"], p["pred"], y, s, family="exponential") + const)

    g0 = gc.grad(lambda p: ll(p, 0.0), pv).values
    g1 = gc.grad(lambda p: ll(p, np.log(s + 1.0) * 3.0), pv).values
    assert np.array_equal(g0, g1)


def make_obs(rng, F=6, C=3, J=5):
    present = rng.random((F, C, J)) > 0.3
    present[:, 0, 0] = True  # every frame keeps at least one detection
    return ObservationSet(np.arange(F) * 2 + 3, (np.arange(F) * 2 + 3) / 50.0,
                          ["cam_a", "cam b", "c3"], rng.normal(size=(F, C, J, 2)) * 300 + 500,
                          rng.exponential(size=(F, C, J)), present, duration=0.5)


def test_observation_csv_round_trip(tmp_path):
    obs = make_obs(np.random.default_rng(3))
    save_observations(obs, tmp_path / "o.csv")
    again = load_observations(tmp_path / "o.csv")
    assert again.equals(obs)
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[1] == "frame_idx,time_s,camera_name,keypoint_idx,u_px,v_px,score"
    assert len(lines) == 2 + obs.n_present


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_csv_round_trip_property(seed):
    obs = make_obs(np.random.default_rng(seed))
    assert ObservationSet.from_csv(obs.to_csv()).equals(obs)


@pytest.mark.parametrize("edit, path", [
    (lambda t: t.replace("version=1", "version=9"), "header.version"),
    (lambda t: t.replace("mocapvi.observations", "other"), "header"),
    (lambda t: t.replace("keypoint_idx", "kp"), "columns"),
    (lambda t: t + "3,0.06,nowhere,0,1.0,2.0,0.5\n", "line"),
    (lambda t: t + "3,0.06,c3,99,1.0,2.0,0.5\n", "line"),
    (lambda t: t + "3,0.06,c3,0,nan,2.0,0.5\n", "line"),
    (lambda t: t + "3,0.06,c3,0,1.0,2.0,-0.5\n", "line"),
    (lambda t: t + "3,0.06,c3\n", "line"),
])
def test_csv_schema_errors(edit, path):
    text = make_obs(np.random.default_rng(4)).to_csv()
    with pytest.raises(SchemaError) as err:
        ObservationSet.from_csv(edit(text))
    assert err.value.path.startswith(path)


def test_observation_validation():
    rng = np.random.default_rng(5)
    obs = make_obs(rng)
    with pytest.raises(ValueError):
        obs.copy(score=-obs.score - 1)
    with pytest.raises(ValueError):
        obs.copy(frames=obs.frames[::-1].copy())
    sub = obs.select_cameras(["c3", "cam_a"])
    assert sub.camera_names == ["c3", "cam_a"]
    assert np.array_equal(sub.y[:, 1], obs.y[:, 0])
    f, c, j = obs.records()
    assert np.all(np.diff(f * 100 + c * 10 + j) > 0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from helpers import tiny_session
from mocapvi.calibration import (ece, ece_report, keypoint_jacobian, predictive_scale,
                                 pushforward, rayleigh_cdf, select_pseudo_gt)
from mocapvi.camera import look_at, project
from mocapvi.kinematics import forward, load_model
from mocapvi.likelihood import ObservationSet
from mocapvi.posterior import PosteriorMoments, covariance, sample


@pytest.fixture(scope="module")
def model():
    return load_model("humanoid-lite")


@pytest.fixture(scope="module")
def cam():
    return look_at("c0", [3.5, -2.0, 1.4], [0.0, 0.0, 1.0], distortion=(-0.08, 0.01, 1e-4, 0, 0))


def standing(model, T=3, seed=0):
    rng = np.random.default_rng(seed)
    mu = model.midpose + rng.normal(size=(T, model.n_dof)) * 0.05
    mu[:, 2] = 0.95  # pelvis height
    return mu


# ------------------------------------------------------------------ pushforward

def test_zero_covariance_pushforward(model, cam):
    mu = standing(model)
    m = PosteriorMoments(mu, np.zeros_like(mu), np.zeros(mu.shape + (2,)))
    pf = pushforward(m, model, model.default_beta, cam)
    assert np.all(pf.cov == 0)
    uv, ok = project(cam, forward(model, model.default_beta, mu))
    assert np.array_equal(pf.mean, uv) and np.array_equal(pf.valid, ok) and ok.all()


def test_pushforward_is_quadratic_in_scale(model, cam):
    mu = standing(model)
    rng = np.random.default_rng(1)
    m = PosteriorMoments(mu, rng.uniform(0.01, 0.05, mu.shape), rng.normal(size=mu.shape + (3,)) * 0.02)
    a = pushforward(m, model, model.default_beta, cam).cov
    b = pushforward(PosteriorMoments(mu, 2 * m.d, 2 * m.U), model, model.default_beta, cam).cov
    assert np.array_equal(b, 4 * a)


def test_keypoint_jacobian_matches_finite_differences(model, cam):
    mu = standing(model, T=2, seed=2)
    jac = keypoint_jacobian(model, model.default_beta, cam, mu, chunk=1)
    h = 1e-6
    for k in range(model.n_dof):
        a, b = mu.copy(), mu.copy()
        a[:, k] += h
        b[:, k] -= h
        fd = (project(cam, forward(model, model.default_beta, a))[0]
              - project(cam, forward(model, model.default_beta, b))[0]) / (2 * h)
        assert np.abs(fd - jac[..., k]).max() <= 1e-4 * max(np.abs(fd).max(), 1.0)


def test_taylor_covariance_matches_monte_carlo(model, cam):
    mu = standing(model, T=1, seed=3)
    rng = np.random.default_rng(4)
    m = PosteriorMoments(mu[0], np.full(model.n_dof, 5e-4), rng.normal(size=(model.n_dof, 2)) * 3e-4)
    assert np.sqrt(np.diag(covariance(m))).max() <= 1e-3
    pf = pushforward(m, model, model.default_beta, cam)
    uv, _ = project(cam, forward(model, model.default_beta, sample(m, 100_000, seed=5)))
    dev = uv - uv.mean(0)
    mc = np.einsum("nja,njb->jab", dev, dev) / (dev.shape[0] - 1)
    err = np.linalg.norm(mc - pf.cov[0]) / np.linalg.norm(mc)
    assert err < 0.05


# ------------------------------------------------------------------ predictive scale

def test_predictive_scale_examples():
    assert predictive_scale(np.zeros((2, 2)), 3.0, 2.0) == 2.0
    assert predictive_scale(np.diag([4.0, 4.0]), 7.0, 0.0) == 2.0
    assert_allclose(predictive_scale(np.diag([1.0, 3.0]), 1.0, 5.0), np.sqrt(3), rtol=1e-15)
    assert predictive_scale(np.diag([1.0, 9.0]), 0.0, 0.0, average="std") == 2.0
    with pytest.raises(ValueError):
        predictive_scale(np.eye(2), 1.0, 1.0, average="median")


# ------------------------------------------------------------------ pseudo ground truth

def _obs(scores):
    scores = np.asarray(scores, dtype=np.float64).reshape(len(scores), 1, 1)
    F = scores.shape[0]
    return ObservationSet(np.arange(F), np.arange(F) / 10.0, ["c"], np.zeros((F, 1, 1, 2)),
                          scores, np.ones((F, 1, 1), dtype=bool))


def test_pseudo_gt_selects_lowest_scores():
    rng = np.random.default_rng(6)
    s = rng.permutation(100) / 10.0
    f, c, j = select_pseudo_gt(_obs(s))
    assert sorted(s[f]) == sorted(np.sort(s)[:5])
    f, _, _ = select_pseudo_gt(_obs(np.ones(100)))
    assert f.tolist() == [0, 1, 2, 3, 4]
    f, _, _ = select_pseudo_gt(_obs(s), fraction=1.0)
    assert f.size == 100
    with pytest.raises(ValueError):
        select_pseudo_gt(_obs(np.ones(19)))


# ------------------------------------------------------------------ ECE

def test_ece_examples():
    sig = np.linspace(0.5, 3.0, 40)
    res = ece(sig, sig)
    assert_allclose(res.c_sorted, 1 - np.exp(-0.5), rtol=1e-14)
    assert_allclose(res.value, np.mean(np.abs(1 - np.exp(-0.5) - np.arange(1, 41) / 40)), rtol=1e-14)
    assert_allclose(ece(np.zeros(100), np.ones(100)).value, 0.505, rtol=1e-14)
    assert rayleigh_cdf(0.0, 2.0) == 0.0
    assert rayleigh_cdf(1.0, 0.0) == 1.0 and rayleigh_cdf(0.0, 0.0) == 0.0


def test_ece_well_specified_draws():
    rng = np.random.default_rng(7)
    sig = rng.uniform(0.5, 5.0, 100_000)
    err = sig * np.sqrt(-2 * np.log(rng.random(sig.size)))
    assert ece(err, sig).value < 0.01


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_ece_permutation_invariant_and_bounded(seed):
    rng = np.random.default_rng(seed)
    err = rng.exponential(size=50) * 3
    sig = rng.uniform(0.1, 4, 50)
    p = rng.permutation(50)
    a, b = ece(err, sig).value, ece(err[p], sig[p]).value
    assert a == b and 0 <= a < 1


def test_rayleigh_cdf_monotone():
    r = np.linspace(0, 20, 2001)
    c = rayleigh_cdf(r, 1.5)
    assert c[0] == 0 and np.all(np.diff(c) >= 0) and c[-1] == 1.0
    assert np.all(np.diff(c[r < 8]) > 0)  # strictly increasing until it rounds to 1


def test_pit_values_nonincreasing_in_clip():
    rng = np.random.default_rng(8)
    cov = np.einsum("nab,ncb->nac", *(2 * [rng.normal(size=(200, 2, 2))]))
    err = rng.exponential(size=200) * 2
    sig_like = rng.uniform(0.1, 8, 200)
    clips = np.linspace(0, 10, 41)
    c = np.stack([rayleigh_cdf(err, predictive_scale(cov, sig_like, k)) for k in clips])
    assert np.all(np.diff(c, axis=0) <= 0)


def test_ece_report_structure():
    fit, _ = tiny_session(n_cameras=2, n_frames=6, trials=2)
    rep = ece_report(fit)
    assert [r.sigma_clip for r in rep["pooled"]] == [0.0, 1.0, 2.0, 5.0]
    assert len(rep["trials"]) == 2 and rep["pooled"][0].trial is None
    assert rep["pooled"][0].n == sum(t[0].n for t in rep["trials"])
    assert rep["pooled"][2].reference_median == 5e-4
    d = rep["pooled"][0].to_dict()
    assert len(d["pp_curve"]) == d["n"]
    one = ece_report(fit, clips=[0])
    assert len(one["pooled"]) == 1

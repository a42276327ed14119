"""The numba loop kernels and the numpy kernels must agree to rounding."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from mocapvi import _accel, kernels
from mocapvi.kinematics import load_model

pytestmark = pytest.mark.skipif(not _accel.has_numba, reason="numba not importable")


def both(monkeypatch, fn, *args):
    monkeypatch.setenv("MOCAPVI_DISABLE_NUMBA", "1")
    ref = fn(*args)
    monkeypatch.setenv("MOCAPVI_DISABLE_NUMBA", "0")
    fast = fn(*args)
    return ref, fast


def test_flag_parsing(monkeypatch):
    for v in ("1", "true", "YES", " on "):
        monkeypatch.setenv("MOCAPVI_DISABLE_NUMBA", v)
        assert not _accel.numba_enabled()
    for v in ("", "0", "no"):
        monkeypatch.setenv("MOCAPVI_DISABLE_NUMBA", v)
        assert _accel.numba_enabled()


@pytest.fixture(scope="module")
def humanoid():
    m = load_model("humanoid-lite")
    rng = np.random.default_rng(0)
    theta = rng.normal(size=(40, m.n_dof)) * 0.5
    beta = m.default_beta + rng.normal(size=m.n_beta) * 0.05
    return m, theta, beta, rng.normal(size=(40, m.n_sites, 3))


def test_fk_forward_agrees(monkeypatch, humanoid):
    m, theta, beta, _ = humanoid
    (s1, o1), (s2, o2) = both(monkeypatch, kernels.fk_forward, theta, beta, m.arrays())
    assert_allclose(s1, s2, rtol=0, atol=1e-12)
    assert_allclose(o1, o2, rtol=0, atol=1e-12)


def test_fk_vjp_agrees(monkeypatch, humanoid):
    m, theta, beta, g = humanoid
    (a1, b1), (a2, b2) = both(monkeypatch, kernels.fk_vjp, theta, beta, m.arrays(), g)
    assert_allclose(a1, a2, rtol=1e-12, atol=1e-12)
    assert_allclose(b1, b2, rtol=1e-12, atol=1e-11)


def _proj_case():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(120, 3)) + [0, 0, 4]
    pts[:5, 2] = -1.0  # behind the camera
    rot = kernels.euler_xyz(np.array([0.1, -0.2, 0.3]))
    return (pts, rot, np.array([0.1, 0.2, 0.3]), np.array([1000.0, 1010.0, 640.0, 360.0]),
            np.array([-0.2, 0.05, 1e-3, -2e-3, 0.01])), rng.normal(size=(120, 2))


def test_project_agrees(monkeypatch):
    args, guv = _proj_case()
    (u1, v1), (u2, v2) = both(monkeypatch, kernels.project_forward, *args)
    assert np.array_equal(v1, v2)
    assert not v1[:5].any() and v1[5:].all()
    assert_allclose(u1, u2, rtol=1e-13, atol=1e-10)
    r1, r2 = both(monkeypatch, kernels.project_vjp, *args, guv)
    for a, b in zip(r1, r2):
        assert_allclose(a, b, rtol=1e-11, atol=1e-9)
    assert np.all(r2[0][:5] == 0)


def test_geometric_median_agrees(monkeypatch):
    rng = np.random.default_rng(2)
    clouds = rng.standard_cauchy(size=(30, 101, 3))
    (m1, ok1), (m2, ok2) = both(monkeypatch, kernels.geometric_median, clouds)
    assert ok1.all() and ok2.all()
    assert_allclose(m1, m2, atol=1e-8)


def test_adam_agrees(monkeypatch):
    rng = np.random.default_rng(3)
    x0, g = rng.normal(size=500), rng.normal(size=500)

    def run():
        x, m, v = x0.copy(), np.zeros(500), np.zeros(500)
        for t in range(1, 6):
            kernels.adam_update(x, g * t, m, v, 1e-2, 0.8, 0.999, 1e-8, 1e-3, t)
        return x

    a, b = both(monkeypatch, run)
    assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_adam_first_step_is_sign_step():
    x = np.zeros(4)
    g = np.array([3.0, -0.5, 1e-3, -20.0])
    kernels.adam_update(x, g, np.zeros(4), np.zeros(4), 0.1, 0.9, 0.999, 0.0, 0.0, 1)
    assert_allclose(x, -0.1 * np.sign(g), rtol=1e-12)


def test_geometric_median_fallback():
    # two points: Weiszfeld stalls on the segment; one iteration cannot meet tol
    clouds = np.array([[[0.0, 0.0], [1.0, 0.0], [5.0, 3.0]]])
    med, ok = kernels.geometric_median(clouds, tol=1e-30, max_iter=1)
    assert not ok[0]
    assert_allclose(med[0], [1.0, 0.0])

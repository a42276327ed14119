import json

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from mocapvi import gradcore as gc
from mocapvi.camera import (CameraModel, Rig, load_rig, look_at, project, project_var,
                            rig_from_dict, rodrigues, save_rig)
from mocapvi.kinematics import SchemaError
from mocapvi.synth import make_config, make_rig


def cam(**kw):
    base = dict(name="c", width=1280, height=720, fx=1000.0, fy=1000.0, cx=640.0, cy=360.0)
    base.update(kw)
    return CameraModel(**base)


def test_principal_point():
    uv, ok = project(cam(), [0.0, 0.0, 2.0])
    assert ok and np.array_equal(uv, [640.0, 360.0])


def test_pinhole_example():
    uv, _ = project(cam(), [0.1, 0.0, 1.0])
    assert_allclose(uv, [740.0, 360.0], rtol=1e-15)


@given(z=st.floats(1e-3, 1e4), k1=st.floats(-0.5, 0.5), p1=st.floats(-0.01, 0.01))
def test_optical_axis_is_depth_invariant(z, k1, p1):
    c = cam(distortion=(k1, 0.1, p1, -p1, 0.01))
    uv, ok = project(c, [0.0, 0.0, z])
    assert ok and np.array_equal(uv, [640.0, 360.0])


def test_behind_camera_is_flagged_not_raised():
    uv, ok = project(cam(), np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 0.0], [0, 0, 2e-6]]))
    assert ok.tolist() == [False, False, True]
    assert np.all(uv[:2] == 0)


def _mp_project(c, x):
    """Same camera model evaluated in 50-digit arithmetic."""
    mp.mp.dps = 50
    v = [mp.mpf(float(a)) for a in c.rvec]
    th = mp.sqrt(sum(a * a for a in v))
    k = [a / th for a in v]
    K = mp.matrix([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = mp.eye(3) + mp.sin(th) * K + (1 - mp.cos(th)) * (K * K)
    X = mp.matrix([mp.mpf(float(a)) for a in x])
    Xc = R * X + mp.matrix([mp.mpf(float(a)) for a in c.tvec])
    a, b = Xc[0] / Xc[2], Xc[1] / Xc[2]
    k1, k2, p1, p2, k3 = (mp.mpf(float(t)) for t in c.distortion)
    r2 = a * a + b * b
    rad = 1 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3
    xd = a * rad + 2 * p1 * a * b + p2 * (r2 + 2 * a * a)
    yd = b * rad + p1 * (r2 + 2 * b * b) + 2 * p2 * a * b
    return np.array([float(c.fx * xd + c.cx), float(c.fy * yd + c.cy)])


def test_distortion_against_high_precision_oracle():
    rng = np.random.default_rng(0)
    c = cam(distortion=(-0.2, 0.03, 1e-3, -5e-4, 0.002), rvec=(0.1, -0.3, 0.2),
            tvec=(0.05, -0.1, 3.0), fy=990.0)
    pts = rng.uniform(-1, 1, size=(50, 3))
    uv, ok = project(c, pts)
    assert ok.all()
    oracle = np.stack([_mp_project(c, p) for p in pts])
    assert np.abs(uv - oracle).max() <= 1e-9


def test_project_jacobians_match_finite_differences():
    rng = np.random.default_rng(1)
    c = cam(distortion=(-0.2, 0.05, 1e-3, -2e-3, 0.01), rvec=(0.2, 0.1, -0.3), tvec=(0, 0.1, 4.0))
    pv = gc.ParamVector.from_groups({"x": rng.normal(size=(6, 3)) * 0.5,
                                     "drot": rng.normal(size=3) * 0.05,
                                     "dtrans": rng.normal(size=3) * 0.05})

    def f(p):
        return project_var(c, p["x"], p["drot"], p["dtrans"])[0].reshape(-1)

    jac = gc.jacobian(f, pv)
    h = 1e-6
    for i in range(pv.size):
        a, b = pv.values.copy(), pv.values.copy()
        a[i] += h
        b[i] -= h
        fd = (f(pv.with_values(a).groups()) - f(pv.with_values(b).groups())) / (2 * h)
        scale = max(np.abs(fd).max(), 1.0)
        assert np.abs(fd - jac[:, i]).max() <= 1e-5 * scale


def test_zero_increment_matches_plain_projection():
    c = look_at("a", [3, 1, 1.5], [0, 0, 1], distortion=(-0.05, 0.01, 0, 0, 0))
    x = np.random.default_rng(2).normal(size=(10, 3)) * 0.3 + [0, 0, 1]
    uv_var, _ = project_var(c, x, np.zeros(3), np.zeros(3))
    assert_allclose(uv_var, project(c, x)[0], rtol=1e-14)


def test_compose_matches_increment():
    c = cam(rvec=(0.3, -0.2, 0.5), tvec=(0.1, 0.2, 3.0))
    d, t = np.array([0.02, -0.01, 0.03]), np.array([0.01, 0.0, -0.02])
    x = np.random.default_rng(3).normal(size=(5, 3))
    assert_allclose(project(c.compose(d, t), x)[0], project_var(c, x, d, t)[0], atol=1e-9)


def test_rodrigues_small_angle_and_orthogonality():
    for v in ([0.0, 0.0, 0.0], [1e-9, 0, 0], [0.3, -1.0, 2.0]):
        R = rodrigues(np.array(v))
        assert_allclose(R @ R.T, np.eye(3), atol=1e-14)
        assert_allclose(np.linalg.det(R), 1.0, atol=1e-14)
    assert_allclose(rodrigues(np.array([0, 0, np.pi / 2])) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_look_at_centers_target():
    c = look_at("a", [4.0, -2.0, 1.6], [0.0, 0.0, 1.0], width=1000, height=800)
    uv, ok = project(c, [0.0, 0.0, 1.0])
    assert ok
    assert_allclose(uv, [500.0, 400.0], atol=1e-9)
    assert_allclose(c.center, [4.0, -2.0, 1.6], atol=1e-12)


@pytest.mark.parametrize("kw", [dict(fx=0.0), dict(fy=-1.0), dict(width=0),
                                dict(rvec=(np.pi, 0, 0)), dict(cx=np.nan)])
def test_invariant_violations(kw):
    with pytest.raises(SchemaError):
        cam(**kw)


def test_ring_fixture_and_round_trip(tmp_path):
    rig = make_rig(make_config()["rig"])
    assert len(rig) == 8
    save_rig(rig, tmp_path / "rig.json")
    again = load_rig(tmp_path / "rig.json")
    assert again.names == rig.names
    assert again.refine_mask == rig.refine_mask
    for a, b in zip(rig.cameras, again.cameras):
        assert np.array_equal(a.params(), b.params())


def test_round_trip_random_values(tmp_path):
    rng = np.random.default_rng(4)
    cams = []
    for i in range(3):
        r = rng.normal(size=3)
        cams.append(cam(name=f"c{i}", fx=float(rng.uniform(500, 2000)), cx=float(rng.normal()),
                        distortion=tuple(rng.normal(size=5).tolist()),
                        rvec=tuple((r / np.linalg.norm(r) * rng.uniform(0, 3)).tolist()),
                        tvec=tuple(rng.normal(size=3).tolist())))
    rig = Rig(tuple(cams), (True, False, True))
    save_rig(rig, tmp_path / "r.json")
    again = load_rig(tmp_path / "r.json")
    assert again.refine_mask == (True, False, True)
    for a, b in zip(cams, again.cameras):
        assert np.array_equal(a.params(), b.params())


def _rig_dict():
    return json.loads(json.dumps(make_rig(make_config()["rig"]).to_dict()))


@pytest.mark.parametrize("mutation, path", [
    (lambda d: d["cameras"][0]["intrinsics"].update(fx=0.0), "camera"),
    (lambda d: d["cameras"][1]["intrinsics"].pop("cy"), "cameras[1].intrinsics.cy"),
    (lambda d: d["cameras"][0].update(distortion=[0, 0, 0]), "cameras[0].distortion"),
    (lambda d: d["cameras"][2]["extrinsics"].update(translation=[0, "nan", 1]),
     "cameras[2].extrinsics.translation"),
    (lambda d: d["cameras"][0].pop("extrinsics"), "cameras[0].extrinsics"),
    (lambda d: d["cameras"][1].update(name=d["cameras"][0]["name"]), "cameras"),
    (lambda d: d.update(cameras=[]), "cameras"),
])
def test_rig_schema_errors(mutation, path):
    d = _rig_dict()
    mutation(d)
    with pytest.raises(SchemaError) as err:
        rig_from_dict(d)
    assert err.value.path.startswith(path)


def test_rig_lookup_and_subset():
    rig = make_rig(make_config()["rig"])
    names = rig.names
    sub = rig.subset([names[3], names[0]])
    assert sub.names == [names[3], names[0]]
    assert sub[names[0]] is rig[0]
    with pytest.raises(KeyError):
        rig.subset(["nope"])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_distortion_free_projection_is_pinhole(seed):
    rng = np.random.default_rng(seed)
    c = cam(rvec=tuple((rng.normal(size=3) * 0.5).tolist()), tvec=(0.0, 0.0, 5.0))
    x = rng.normal(size=(20, 3))
    xc = x @ c.rotation.T + c.translation
    expect = np.stack([1000 * xc[:, 0] / xc[:, 2] + 640, 1000 * xc[:, 1] / xc[:, 2] + 360], -1)
    assert_allclose(project(c, x)[0], expect, rtol=1e-12, atol=1e-9)

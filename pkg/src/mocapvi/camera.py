"""Calibrated pinhole cameras with Brown-Conrady distortion, and camera rigs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import kernels
from .gradcore import matmul, primitive
from .kinematics import SchemaError

RIG_FORMAT = "mocapvi.rig"
RIG_VERSION = 1


def _hat(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _rodrigues_coeffs(s):
    """sin(t)/t, (1-cos t)/t^2 and their derivatives in s = t^2."""
    if s < 1e-4:
        a = 1.0 - s / 6.0 + s * s / 120.0
        b = 0.5 - s / 24.0 + s * s / 720.0
        da = -1.0 / 6.0 + s / 60.0
        db = -1.0 / 24.0 + s / 360.0
        return a, b, da, db
    t = np.sqrt(s)
    a = np.sin(t) / t
    b = (1.0 - np.cos(t)) / s
    return a, b, (np.cos(t) - a) / (2.0 * s), (a - 2.0 * b) / (2.0 * s)


@primitive("rodrigues")
def rodrigues(v):
    """Axis-angle vector (3,) -> rotation matrix (3, 3)."""
    v = np.asarray(v, dtype=np.float64)
    a, b, _, _ = _rodrigues_coeffs(float(v @ v))
    k = _hat(v)
    return np.eye(3) + a * k + b * (k @ k)


@rodrigues.defvjp
def _rodrigues_vjp(g, out, v):
    v = np.asarray(v, dtype=np.float64)
    a, b, da, db = _rodrigues_coeffs(float(v @ v))
    k = _hat(v)
    k2 = k @ k
    gv = np.empty(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        ei = _hat(e)
        d = a * ei + b * (ei @ k + k @ ei) + 2.0 * v[i] * (da * k + db * k2)
        gv[i] = np.sum(g * d)
    return (gv,)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Intrinsics (px), distortion ``(k1, k2, p1, p2, k3)``, world-to-camera
    extrinsics as axis-angle (rad) plus translation (m), image size (px)."""

    name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    rvec: tuple = (0.0, 0.0, 0.0)
    tvec: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        path = f"camera {self.name!r}"
        vals = (self.fx, self.fy, self.cx, self.cy, *self.distortion, *self.rvec, *self.tvec)
        if not all(np.isfinite(vals)):
            raise SchemaError(path, "non-finite parameter")
        if self.fx <= 0 or self.fy <= 0:
            raise SchemaError(f"{path}.intrinsics", "focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise SchemaError(f"{path}.image_size", "image size must be positive")
        if len(self.distortion) != 5 or len(self.rvec) != 3 or len(self.tvec) != 3:
            raise SchemaError(path, "wrong parameter count")
        if np.linalg.norm(self.rvec) >= np.pi:
            raise SchemaError(f"{path}.extrinsics.axis_angle", "rotation magnitude must be below pi")

    @property
    def intrinsics(self):
        return np.array([self.fx, self.fy, self.cx, self.cy])

    @property
    def dist(self):
        return np.asarray(self.distortion, dtype=np.float64)

    @property
    def rotation(self):
        return rodrigues(np.asarray(self.rvec, dtype=np.float64))

    @property
    def translation(self):
        return np.asarray(self.tvec, dtype=np.float64)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def params(self):
        """All numeric parameters as one array (used for round-trip checks)."""
        return np.array([self.width, self.height, self.fx, self.fy, self.cx, self.cy,
                         *self.distortion, *self.rvec, *self.tvec], dtype=np.float64)

    def compose(self, drot, dtrans) -> "CameraModel":
        """Camera with an axis-angle increment applied on the left of the
        rotation and a translation increment added."""
        rot = rodrigues(np.asarray(drot, dtype=np.float64)) @ self.rotation
        rvec = Rotation.from_matrix(rot).as_rotvec()
        return replace(self, rvec=tuple(rvec.tolist()),
                       tvec=tuple((self.translation + np.asarray(dtrans)).tolist()))

    def to_dict(self):
        return {"name": self.name, "image_size": [self.width, self.height],
                "intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy},
                "distortion": list(self.distortion),
                "extrinsics": {"axis_angle": list(self.rvec), "translation": list(self.tvec)}}


def look_at(name, center, target, width=1280, height=1024, f=1000.0, distortion=None,
            up=(0.0, 0.0, 1.0)) -> CameraModel:
    """Camera at ``center`` whose optical axis passes through ``target``."""
    center = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    rvec = Rotation.from_matrix(rot).as_rotvec()
    tvec = -rot @ center
    dist = tuple(distortion) if distortion is not None else (0.0,) * 5
    return CameraModel(name, int(width), int(height), float(f), float(f), width / 2.0, height / 2.0,
                       tuple(float(x) for x in dist), tuple(rvec.tolist()), tuple(tvec.tolist()))


def project(cam: CameraModel, x):
    """Project world points (..., 3) to pixels (..., 2).

    Returns ``(uv, valid)``; ``valid`` is False for points at camera depth
    <= 1e-6 m, whose pixels are reported as (0, 0).
    """
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    uv, valid = kernels.project_forward(x.reshape(-1, 3), cam.rotation, cam.translation,
                                        cam.intrinsics, cam.dist)
    return uv.reshape(lead + (2,)), valid.reshape(lead)


@primitive("project")
def _project_prim(points, rot, trans, intr, dist):
    pts = np.asarray(points)
    uv, _ = kernels.project_forward(pts.reshape(-1, 3), rot, trans, intr, dist)
    return uv.reshape(pts.shape[:-1] + (2,))


@_project_prim.defvjp
def _project_prim_vjp(g, out, points, rot, trans, intr, dist):
    pts = np.asarray(points)
    gp, gr, gt = kernels.project_vjp(pts.reshape(-1, 3), rot, trans, intr, dist, g.reshape(-1, 2))
    return gp.reshape(pts.shape), gr, gt


def project_var(cam: CameraModel, points, drot=None, dtrans=None):
    """Differentiable projection; ``drot``/``dtrans`` are optional tape
    variables holding extrinsic increments.  Returns ``(uv, valid)`` with
    ``valid`` a plain boolean array."""
    rot = cam.rotation
    trans = cam.translation
    if drot is not None:
        rot = matmul(rodrigues(drot), rot)
    if dtrans is not None:
        trans = dtrans + trans
    uv = _project_prim(points, rot, trans, intr=cam.intrinsics, dist=cam.dist)
    pts = getattr(points, "value", points)
    rv = getattr(rot, "value", rot)
    tv = getattr(trans, "value", trans)
    depth = np.asarray(pts) @ rv[2] + tv[2]
    return uv, depth > kernels.MIN_DEPTH


@dataclass(frozen=True, eq=False)
class Rig:
    cameras: tuple
    refine_mask: tuple = field(default=())

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise SchemaError("cameras", "a rig needs at least one camera")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise SchemaError("cameras", "camera names must be unique")
        if not self.refine_mask:
            object.__setattr__(self, "refine_mask", (True,) * len(self.cameras))
        if len(self.refine_mask) != len(self.cameras):
            raise SchemaError("cameras", "refine mask length mismatch")

    @property
    def names(self):
        return [c.name for c in self.cameras]

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.cameras[self.names.index(key)]
        return self.cameras[key]

    def subset(self, names) -> "Rig":
        idx = []
        for n in names:
            if n not in self.names:
                raise KeyError(f"unknown camera {n!r}")
            idx.append(self.names.index(n))
        return Rig(tuple(self.cameras[i] for i in idx), tuple(self.refine_mask[i] for i in idx))

    def with_cameras(self, cameras) -> "Rig":
        return Rig(tuple(cameras), self.refine_mask)

    def to_dict(self):
        cams = []
        for cam, refine in zip(self.cameras, self.refine_mask):
            d = cam.to_dict()
            d["refine"] = bool(refine)
            cams.append(d)
        return {"format": RIG_FORMAT, "version": RIG_VERSION, "cameras": cams}


def _num(d, key, path):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"{path}.{key}", "missing field")
    try:
        v = float(d[key])
    except (TypeError, ValueError):
        raise SchemaError(f"{path}.{key}", "expected a number") from None
    if not np.isfinite(v):
        raise SchemaError(f"{path}.{key}", "non-finite value")
    return v


def _nums(d, key, n, path):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"{path}.{key}", "missing field")
    try:
        vals = [float(x) for x in d[key]]
    except (TypeError, ValueError):
        raise SchemaError(f"{path}.{key}", "expected a list of numbers") from None
    if len(vals) != n:
        raise SchemaError(f"{path}.{key}", f"expected {n} values")
    if not all(np.isfinite(vals)):
        raise SchemaError(f"{path}.{key}", "non-finite value")
    return tuple(vals)


def rig_from_dict(d) -> Rig:
    if not isinstance(d, dict) or d.get("format", RIG_FORMAT) != RIG_FORMAT:
        raise SchemaError("format", f"expected {RIG_FORMAT!r}")
    if d.get("version") != RIG_VERSION:
        raise SchemaError("version", f"unsupported version {d.get('version')!r}")
    if "cameras" not in d:
        raise SchemaError("cameras", "missing field")
    cams = []
    refine = []
    for i, c in enumerate(d["cameras"]):
        path = f"cameras[{i}]"
        if not isinstance(c, dict) or "name" not in c:
            raise SchemaError(f"{path}.name", "missing field")
        w, h = _nums(c, "image_size", 2, path)
        intr = c.get("intrinsics")
        if intr is None:
            raise SchemaError(f"{path}.intrinsics", "missing field")
        ext = c.get("extrinsics")
        if ext is None:
            raise SchemaError(f"{path}.extrinsics", "missing field")
        cams.append(CameraModel(
            str(c["name"]), int(w), int(h),
            _num(intr, "fx", f"{path}.intrinsics"), _num(intr, "fy", f"{path}.intrinsics"),
            _num(intr, "cx", f"{path}.intrinsics"), _num(intr, "cy", f"{path}.intrinsics"),
            _nums(c, "distortion", 5, path),
            _nums(ext, "axis_angle", 3, f"{path}.extrinsics"),
            _nums(ext, "translation", 3, f"{path}.extrinsics")))
        refine.append(bool(c.get("refine", True)))
    return Rig(tuple(cams), tuple(refine))


def load_rig(path) -> Rig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from None
    return rig_from_dict(d)


def save_rig(rig: Rig, path):
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(rig.to_dict(), indent=1) + "\n")

"""Articulated kinematic tree: joint angles -> 3D marker (site) positions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .gradcore import primitive

MODEL_FORMAT = "mocapvi.kinematic_model"
MODEL_VERSION = 1
BUNDLED_MODELS = {"humanoid-lite": "humanoid_lite.json", "paper-scale": "paper_scale.json"}

_JTYPES = {"free_root": kernels.FREE, "free-root": kernels.FREE, "free": kernels.FREE,
           "hinge": kernels.HINGE, "ball_euler": kernels.BALL, "ball-euler": kernels.BALL}
_JTYPE_NAMES = {kernels.FREE: "free_root", kernels.HINGE: "hinge", kernels.BALL: "ball_euler"}


class SchemaError(ValueError):
    """Invalid model/rig/observation description; ``path`` locates the field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Segment:
    name: str
    parent: str | None
    offset: tuple
    scale_param: int | None = None


@dataclass(frozen=True)
class Joint:
    name: str
    segment: str
    type: int
    axis: tuple = (0.0, 0.0, 1.0)
    lower: tuple = ()
    upper: tuple = ()

    @property
    def dof(self):
        return {kernels.FREE: 6, kernels.HINGE: 1, kernels.BALL: 3}[self.type]


@dataclass(frozen=True)
class Site:
    name: str
    segment: str
    offset: tuple


@dataclass(frozen=True, eq=False)
class KinematicModel:
    """Immutable kinematic tree.  Segments are stored root first, parents
    before children; the root joint is free (3 translations + XYZ Euler)."""

    name: str
    segments: tuple
    joints: tuple
    sites: tuple
    scale_param_count: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_dof(self):
        return sum(j.dof for j in self.joints)

    @property
    def n_sites(self):
        return len(self.sites)

    @property
    def n_segments(self):
        return len(self.segments)

    @property
    def n_beta(self):
        return self.scale_param_count + 3 * self.n_sites

    @property
    def dof_names(self):
        names = []
        for j in self.joints:
            if j.type == kernels.FREE:
                names += [f"{j.name}_{c}" for c in ("tx", "ty", "tz", "rx", "ry", "rz")]
            elif j.type == kernels.BALL:
                names += [f"{j.name}_{c}" for c in ("x", "y", "z")]
            else:
                names.append(j.name)
        return names

    def _limits(self):
        if "limits" not in self._cache:
            lo = np.full(self.n_dof, -np.inf)
            hi = np.full(self.n_dof, np.inf)
            q = 0
            for j in self.joints:
                if j.type != kernels.FREE:
                    lo[q:q + j.dof] = j.lower
                    hi[q:q + j.dof] = j.upper
                q += j.dof
            self._cache["limits"] = (lo, hi)
        return self._cache["limits"]

    @property
    def lower(self):
        return self._limits()[0]

    @property
    def upper(self):
        return self._limits()[1]

    @property
    def bounded(self):
        """Boolean mask of pose coordinates that carry joint limits."""
        return np.isfinite(self.lower)

    @property
    def default_beta(self):
        """Unit scale factors and zero site residuals."""
        return np.concatenate([np.ones(self.scale_param_count), np.zeros(3 * self.n_sites)])

    @property
    def midpose(self):
        """Root at the origin, bounded joints at their limit midpoints."""
        theta = np.zeros(self.n_dof)
        b = self.bounded
        theta[b] = 0.5 * (self.lower[b] + self.upper[b])
        return theta

    def arrays(self):
        """Flat arrays consumed by :mod:`mocapvi.kernels`."""
        if "arrays" not in self._cache:
            index = {s.name: i for i, s in enumerate(self.segments)}
            joint_of = {j.segment: j for j in self.joints}
            nseg = len(self.segments)
            parent = np.full(nseg, -1, dtype=np.int64)
            offset = np.zeros((nseg, 3))
            scale = np.full(nseg, -1, dtype=np.int64)
            jtype = np.zeros(nseg, dtype=np.int64)
            axis = np.zeros((nseg, 3))
            qidx = np.zeros(nseg, dtype=np.int64)
            q = 0
            for i, seg in enumerate(self.segments):
                parent[i] = -1 if seg.parent is None else index[seg.parent]
                offset[i] = seg.offset
                scale[i] = -1 if seg.scale_param is None else seg.scale_param
                j = joint_of[seg.name]
                jtype[i] = j.type
                axis[i] = j.axis
                qidx[i] = q
                q += j.dof
            site_seg = np.array([index[s.segment] for s in self.sites], dtype=np.int64)
            site_off = np.array([s.offset for s in self.sites], dtype=np.float64).reshape(-1, 3)
            self._cache["arrays"] = (parent, offset, scale, jtype, axis, qidx,
                                     site_seg, site_off, np.int64(self.scale_param_count))
        return self._cache["arrays"]

    def to_dict(self):
        segs = [{"name": s.name, "parent": s.parent, "offset": list(s.offset),
                 "scale_param": s.scale_param} for s in self.segments]
        joints = []
        for j in self.joints:
            d = {"name": j.name, "segment": j.segment, "type": _JTYPE_NAMES[j.type]}
            if j.type == kernels.HINGE:
                d["axis"] = list(j.axis)
                d["lower"], d["upper"] = j.lower[0], j.upper[0]
            elif j.type == kernels.BALL:
                d["lower"], d["upper"] = list(j.lower), list(j.upper)
            joints.append(d)
        sites = [{"name": s.name, "segment": s.segment, "offset": list(s.offset)}
                 for s in self.sites]
        return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "name": self.name,
                "scale_param_count": self.scale_param_count,
                "segments": segs, "joints": joints, "sites": sites}


# ---------------------------------------------------------------- parsing

def _vec3(value, path):
    try:
        v = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise SchemaError(path, "expected a list of 3 numbers") from None
    if len(v) != 3 or not all(np.isfinite(v)):
        raise SchemaError(path, "expected 3 finite numbers")
    return v


def _require(d, key, path):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(key if path == "$" else f"{path}.{key}", "missing field")
    return d[key]


def model_from_dict(d) -> KinematicModel:
    if not isinstance(d, dict):
        raise SchemaError("$", "model description must be a mapping")
    if d.get("format", MODEL_FORMAT) != MODEL_FORMAT:
        raise SchemaError("format", f"expected {MODEL_FORMAT!r}")
    version = _require(d, "version", "$")
    if version != MODEL_VERSION:
        raise SchemaError("version", f"unsupported version {version!r}")
    n_scale = _require(d, "scale_param_count", "$")
    if not isinstance(n_scale, int) or n_scale < 0:
        raise SchemaError("scale_param_count", "must be a nonnegative integer")

    raw_segs = _require(d, "segments", "$")
    segs = {}
    for i, s in enumerate(raw_segs):
        path = f"segments[{i}]"
        name = _require(s, "name", path)
        if name in segs:
            raise SchemaError(f"{path}.name", f"duplicate segment {name!r}")
        sp = s.get("scale_param")
        if sp is not None and not (isinstance(sp, int) and 0 <= sp < n_scale):
            raise SchemaError(f"{path}.scale_param", f"must be an index below {n_scale}")
        segs[name] = Segment(name, s.get("parent"), _vec3(_require(s, "offset", path), f"{path}.offset"), sp)
    roots = [s for s in segs.values() if s.parent is None]
    if len(roots) != 1:
        raise SchemaError("segments", f"expected exactly one root segment, found {len(roots)}")
    for i, s in enumerate(segs.values()):
        if s.parent is not None and s.parent not in segs:
            raise SchemaError(f"segments[{i}].parent", f"unknown parent {s.parent!r}")

    # topological order, root first; anything unreachable sits on a cycle
    children: dict = {}
    for s in segs.values():
        children.setdefault(s.parent, []).append(s.name)
    order = []
    stack = [roots[0].name]
    while stack:
        name = stack.pop()
        order.append(name)
        stack.extend(reversed(children.get(name, [])))
    if len(order) != len(segs):
        stuck = sorted(set(segs) - set(order))
        raise SchemaError("segments", f"cycle in kinematic tree involving {stuck}")

    raw_joints = _require(d, "joints", "$")
    joints = {}
    for i, j in enumerate(raw_joints):
        path = f"joints[{i}]"
        seg = _require(j, "segment", path)
        if seg not in segs:
            raise SchemaError(f"{path}.segment", f"unknown segment {seg!r}")
        if seg in joints:
            raise SchemaError(f"{path}.segment", f"segment {seg!r} already has a joint")
        tname = _require(j, "type", path)
        if tname not in _JTYPES:
            raise SchemaError(f"{path}.type", f"unknown joint type {tname!r}")
        jt = _JTYPES[tname]
        name = j.get("name", seg)
        is_root = segs[seg].parent is None
        if is_root != (jt == kernels.FREE):
            raise SchemaError(f"{path}.type", "the root (and only the root) must use a free_root joint")
        axis = (0.0, 0.0, 1.0)
        lower = upper = ()
        if jt != kernels.FREE:
            n = 1 if jt == kernels.HINGE else 3
            lo = np.atleast_1d(np.asarray(_require(j, "lower", path), dtype=float))
            hi = np.atleast_1d(np.asarray(_require(j, "upper", path), dtype=float))
            if lo.shape != (n,) or hi.shape != (n,):
                raise SchemaError(f"{path}.lower", f"expected {n} limit value(s)")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise SchemaError(f"{path}.lower", "limits must be finite")
            if np.any(lo >= hi):
                raise SchemaError(f"{path}.lower", "lower limit must be below upper limit")
            lower, upper = tuple(lo.tolist()), tuple(hi.tolist())
            if jt == kernels.HINGE:
                a = np.asarray(_vec3(_require(j, "axis", path), f"{path}.axis"))
                nrm = np.linalg.norm(a)
                if nrm < 1e-12:
                    raise SchemaError(f"{path}.axis", "axis must be nonzero")
                axis = tuple((a / nrm).tolist())
        joints[seg] = Joint(name, seg, jt, axis, lower, upper)
    for name in order:
        if name not in joints:
            raise SchemaError("joints", f"segment {name!r} has no joint")

    raw_sites = _require(d, "sites", "$")
    sites = []
    seen = set()
    for i, s in enumerate(raw_sites):
        path = f"sites[{i}]"
        name = _require(s, "name", path)
        if name in seen:
            raise SchemaError(f"{path}.name", f"duplicate site {name!r}")
        seen.add(name)
        seg = _require(s, "segment", path)
        if seg not in segs:
            raise SchemaError(f"{path}.segment", f"unknown segment {seg!r}")
        sites.append(Site(name, seg, _vec3(_require(s, "offset", path), f"{path}.offset")))

    return KinematicModel(
        name=d.get("name", "model"),
        segments=tuple(segs[n] for n in order),
        joints=tuple(joints[n] for n in order),
        sites=tuple(sites),
        scale_param_count=n_scale,
    )


def load_model(source) -> KinematicModel:
    """Load a model from a JSON file path or a bundled name
    (``"humanoid-lite"`` or ``"paper-scale"``)."""
    if isinstance(source, dict):
        return model_from_dict(source)
    if isinstance(source, str) and source in BUNDLED_MODELS:
        text = resources.files("mocapvi.data").joinpath(BUNDLED_MODELS[source]).read_text()
    else:
        text = Path(source).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from None
    return model_from_dict(d)


def save_model(model: KinematicModel, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


# ---------------------------------------------------------------- evaluation

def _check(model, theta, beta):
    theta = np.asarray(theta, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if theta.shape[-1] != model.n_dof:
        raise ValueError(f"pose has {theta.shape[-1]} coordinates, model needs {model.n_dof}")
    if beta.shape != (model.n_beta,):
        raise ValueError(f"scale vector has shape {beta.shape}, model needs ({model.n_beta},)")
    return theta, beta


def forward(model: KinematicModel, beta, theta):
    """Site positions (..., J, 3) in meters for poses (..., K)."""
    theta, beta = _check(model, theta, beta)
    lead = theta.shape[:-1]
    sites, _ = kernels.fk_forward(theta.reshape(-1, model.n_dof), beta, model.arrays())
    return sites.reshape(lead + (model.n_sites, 3))


def segment_origins(model: KinematicModel, beta, theta):
    """Segment origin positions (..., S, 3) for poses (..., K)."""
    theta, beta = _check(model, theta, beta)
    lead = theta.shape[:-1]
    _, origins = kernels.fk_forward(theta.reshape(-1, model.n_dof), beta, model.arrays())
    return origins.reshape(lead + (model.n_segments, 3))


@primitive("forward_kinematics")
def _fk_sites(theta, beta, arrays):
    return kernels.fk_forward(theta, beta, arrays)[0]


@_fk_sites.defvjp
def _fk_sites_vjp(g, out, theta, beta, arrays):
    return kernels.fk_vjp(theta, beta, arrays, g)


def forward_var(model: KinematicModel, beta, theta):
    """Differentiable :func:`forward` for tape variables; ``theta`` is (N, K)."""
    return _fk_sites(theta, beta, arrays=model.arrays())


def joint_limit_violation(model: KinematicModel, theta):
    """Nonnegative distance outside the joint limits, per pose coordinate."""
    theta = np.asarray(theta, dtype=np.float64)
    lo, hi = model.lower, model.upper
    with np.errstate(invalid="ignore"):
        excess = np.maximum(theta - hi, 0.0) + np.maximum(lo - theta, 0.0)
    return np.where(model.bounded, excess, 0.0)

"""Score-conditioned radial keypoint error model and observation containers.

The width of the radial error distribution grows with the detector's noise
score through a softplus-positive quadratic,

    sigma(s) = softplus(psi0) + softplus(psi1) * s + softplus(psi2) * s**2 + 1e-3

and the radial error ``eps = |y - yhat|`` (pixels) follows one of three
one-sided families with that scale.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote, unquote

import numpy as np

from .gradcore import Var, log, log1p, norm, softplus, square
from .kinematics import SchemaError

FAMILIES = ("exponential", "half_cauchy", "half_normal")
SIGMA_FLOOR = 1e-3
DEFAULT_PSI = (0.0, -5.0, -5.0)

OBS_FORMAT = "mocapvi.observations"
OBS_VERSION = 1
OBS_COLUMNS = ("frame_idx", "time_s", "camera_name", "keypoint_idx", "u_px", "v_px", "score")


def check_family(family):
    if family not in FAMILIES:
        raise ValueError(f"unknown likelihood family {family!r}; expected one of {FAMILIES}")
    return family


@dataclass
class LikelihoodParams:
    psi: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_PSI))
    family: str = "exponential"

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=np.float64).reshape(3)
        check_family(self.family)

    def sigma(self, s):
        return sigma_of_score(self.psi, s)


def _psi(params):
    return params.psi if isinstance(params, LikelihoodParams) else params


def sigma_of_score(params, s):
    """Likelihood width in pixels; ``params`` is a LikelihoodParams, a
    3-vector or a tape variable holding psi."""
    psi = _psi(params)
    s = np.asarray(s, dtype=np.float64)
    if isinstance(psi, Var):
        sp = softplus(psi)
        return sp[0] + sp[1] * s + sp[2] * (s * s) + SIGMA_FLOOR
    sp = np.logaddexp(0.0, np.asarray(psi, dtype=np.float64))
    return sp[0] + sp[1] * s + sp[2] * s * s + SIGMA_FLOOR


def log_density(family, eps, sigma):
    """Log density (nats) of radial error ``eps`` under width ``sigma``.

    Either argument may be a tape variable.
    """
    check_family(family)
    if not isinstance(eps, Var) and np.any(np.asarray(eps) < 0):
        raise ValueError("radial error must be nonnegative")
    if family == "exponential":
        return -log(sigma) - eps / sigma
    if family == "half_cauchy":
        return (np.log(2.0 / np.pi) - log(sigma)) - log1p(square(eps / sigma))
    return (0.5 * np.log(2.0 / np.pi) - log(sigma)) - square(eps) / (2.0 * square(sigma))


def keypoint_loglik(params, pred, y, s, present=None, family=None):
    """Per-observation log-likelihood; absent entries contribute exactly 0.

    ``pred`` and ``y`` are (..., 2) pixel arrays, ``s`` and ``present`` (...).
    """
    fam = family or getattr(params, "family", "exponential")
    y = np.asarray(y, dtype=np.float64)
    if present is None:
        present = np.all(np.isfinite(y), axis=-1)
    present = np.asarray(present, dtype=bool)
    y = np.where(present[..., None], y, 0.0)
    s = np.where(present, np.asarray(s, dtype=np.float64), 0.0)
    eps = norm(pred - y, axis=-1)
    ll = log_density(fam, eps, sigma_of_score(params, s))
    return ll * present.astype(np.float64)


class ObservationSet:
    """Keypoints of one trial on a dense (frame, camera, keypoint) grid.

    ``y`` is (F, C, J, 2) pixels, ``score`` (F, C, J) and ``present`` (F, C, J)
    the detection mask.  ``frames`` holds integer frame indices and ``times``
    their timestamps in seconds; ``duration`` is the trial length used for
    time encoding.
    """

    def __init__(self, frames, times, camera_names, y, score, present, duration=None):
        self.frames = np.asarray(frames, dtype=np.int64)
        self.times = np.asarray(times, dtype=np.float64)
        self.camera_names = list(camera_names)
        self.present = np.asarray(present, dtype=bool)
        self.y = np.where(self.present[..., None], np.asarray(y, dtype=np.float64), 0.0)
        self.score = np.where(self.present, np.asarray(score, dtype=np.float64), 0.0)
        F, C, J = self.present.shape
        if self.frames.shape != (F,) or self.times.shape != (F,) or len(self.camera_names) != C:
            raise ValueError("observation arrays have inconsistent shapes")
        if self.y.shape != (F, C, J, 2) or self.score.shape != (F, C, J):
            raise ValueError("observation arrays have inconsistent shapes")
        if len(set(self.camera_names)) != C:
            raise ValueError("camera names must be unique")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.score)):
            raise ValueError("present observations must be finite")
        if np.any(self.score < 0):
            raise ValueError("noise scores must be nonnegative")
        if F and (np.any(np.diff(self.frames) <= 0) or np.any(self.times < 0)):
            raise ValueError("frames must be strictly increasing with nonnegative times")
        if duration is None:
            duration = float(self.times.max()) if F else 0.0
        self.duration = float(duration)

    @property
    def shape(self):
        return self.present.shape

    @property
    def n_frames(self):
        return self.present.shape[0]

    @property
    def n_cameras(self):
        return self.present.shape[1]

    @property
    def n_keypoints(self):
        return self.present.shape[2]

    @property
    def n_present(self):
        return int(self.present.sum())

    def copy(self, **changes) -> "ObservationSet":
        kw = dict(frames=self.frames, times=self.times, camera_names=self.camera_names,
                  y=self.y, score=self.score, present=self.present, duration=self.duration)
        kw.update(changes)
        return ObservationSet(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                                 for k, v in kw.items()})

    def select_frames(self, mask) -> "ObservationSet":
        mask = np.asarray(mask)
        return self.copy(frames=self.frames[mask], times=self.times[mask], y=self.y[mask],
                         score=self.score[mask], present=self.present[mask])

    def select_cameras(self, names) -> "ObservationSet":
        idx = [self.camera_names.index(n) for n in names]
        return self.copy(camera_names=list(names), y=self.y[:, idx], score=self.score[:, idx],
                         present=self.present[:, idx])

    def records(self):
        """Present observations in canonical (frame, camera, keypoint) order as
        index arrays ``(f, c, j)``."""
        return np.nonzero(self.present)

    def equals(self, other) -> bool:
        return (self.camera_names == other.camera_names and self.duration == other.duration
                and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.present, other.present)
                and np.array_equal(self.y, other.y) and np.array_equal(self.score, other.score))

    # ------------------------------------------------------------ text format

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {OBS_FORMAT} version={OBS_VERSION} duration_s={self.duration!r} "
                  f"keypoints={self.n_keypoints} "
                  f"cameras={';'.join(quote(c, safe='') for c in self.camera_names)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(OBS_COLUMNS)
        for f, c, j in zip(*self.records()):
            w.writerow([int(self.frames[f]), repr(float(self.times[f])), self.camera_names[c],
                        int(j), repr(float(self.y[f, c, j, 0])), repr(float(self.y[f, c, j, 1])),
                        repr(float(self.score[f, c, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObservationSet":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise SchemaError("header", "missing format comment line")
        meta = dict(tok.split("=", 1) for tok in lines[0][1:].split()[1:] if "=" in tok)
        if not lines[0][1:].split() or lines[0][1:].split()[0] != OBS_FORMAT:
            raise SchemaError("header", f"expected {OBS_FORMAT!r}")
        if meta.get("version") != str(OBS_VERSION):
            raise SchemaError("header.version", f"unsupported version {meta.get('version')!r}")
        try:
            n_kp = int(meta["keypoints"])
            cams = [unquote(c) for c in meta["cameras"].split(";")] if meta.get("cameras") else []
            duration = float(meta["duration_s"])
        except (KeyError, ValueError) as exc:
            raise SchemaError("header", f"bad or missing field {exc}") from None
        reader = csv.reader(lines[1:])
        header = next(reader, None)
        if tuple(header or ()) != OBS_COLUMNS:
            raise SchemaError("columns", f"expected {','.join(OBS_COLUMNS)}")
        rows = []
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            try:
                f, t, cam, j, u, v, s = row
                rec = (int(f), float(t), cam, int(j), float(u), float(v), float(s))
            except ValueError:
                raise SchemaError(f"line {lineno}", "malformed row") from None
            if cam not in cams:
                raise SchemaError(f"line {lineno}.camera_name", f"unknown camera {cam!r}")
            if not 0 <= rec[3] < n_kp:
                raise SchemaError(f"line {lineno}.keypoint_idx", "out of range")
            if not all(np.isfinite(rec[i]) for i in (1, 4, 5, 6)) or rec[6] < 0:
                raise SchemaError(f"line {lineno}", "non-finite value or negative score")
            rows.append(rec)
        frame_ids = sorted({r[0] for r in rows})
        fpos = {f: i for i, f in enumerate(frame_ids)}
        times = np.zeros(len(frame_ids))
        y = np.zeros((len(frame_ids), len(cams), n_kp, 2))
        score = np.zeros(y.shape[:-1])
        present = np.zeros(y.shape[:-1], dtype=bool)
        cpos = {c: i for i, c in enumerate(cams)}
        for f, t, cam, j, u, v, s in rows:
            i = fpos[f]
            times[i] = t
            y[i, cpos[cam], j] = (u, v)
            score[i, cpos[cam], j] = s
            present[i, cpos[cam], j] = True
        return cls(frame_ids, times, cams, y, score, present, duration=duration)


def save_observations(obs: ObservationSet, path):
    Path(path).write_text(obs.to_csv())


def load_observations(path) -> ObservationSet:
    return ObservationSet.from_csv(Path(path).read_text())

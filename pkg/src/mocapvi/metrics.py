"""Uncertainty summaries of fitted posteriors.

Percentiles use linear interpolation between order statistics (numpy's
default).  Angles are radians internally and reported in degrees; root
translations are reported in millimeters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kinematics import KinematicModel, segment_origins
from .posterior import PosteriorMoments, correlation, marginal_std, sample

BAND_Z = 1.96


@dataclass
class SpatialErrorSummary:
    segments: list
    p50_mm: np.ndarray          # (S,) reduced over time
    p95_mm: np.ndarray
    frame_p50_mm: np.ndarray    # (T, S)
    frame_p95_mm: np.ndarray
    n_samples: int
    fallback_frames: np.ndarray  # frames where Weiszfeld fell back to the coordinate median

    def rows(self):
        return [(s, float(a), float(b)) for s, a, b in zip(self.segments, self.p50_mm, self.p95_mm)]


def spatial_errors_from_moments(model: KinematicModel, beta, m: PosteriorMoments, n_samples=250,
                                seed=0, reduce="median"):
    """Sampled radial spread of every segment origin around its geometric median.

    Per frame: ``n_samples`` poses, forward kinematics, Weiszfeld median per
    segment (tol 1e-9 m, 200 iterations), radial distances, then the 50th and
    95th percentiles.  ``reduce`` ("median" or "mean") collapses the frames.
    """
    mu = np.atleast_2d(m.mu)
    T = mu.shape[0]
    mm = PosteriorMoments(mu, np.atleast_2d(m.d), m.U if m.U.ndim == 3 else m.U[None])
    theta = sample(mm, n_samples, seed)                     # (n, T, K)
    pos = segment_origins(model, beta, theta)               # (n, T, S, 3)
    S = pos.shape[2]
    clouds = np.ascontiguousarray(pos.transpose(1, 2, 0, 3).reshape(T * S, n_samples, 3))
    med, ok = kernels.geometric_median(clouds, tol=1e-9, max_iter=200)
    dist = np.linalg.norm(clouds - med[:, None, :], axis=-1) * 1e3
    p50 = np.percentile(dist, 50, axis=1).reshape(T, S)
    p95 = np.percentile(dist, 95, axis=1).reshape(T, S)
    red = {"median": np.median, "mean": np.mean}[reduce]
    return SpatialErrorSummary([s.name for s in model.segments], red(p50, axis=0),
                               red(p95, axis=0), p50, p95, n_samples,
                               np.flatnonzero(~ok.reshape(T, S).all(axis=1)))


def spatial_errors(session, n_samples=250, seed=0, reduce="median"):
    """:func:`spatial_errors_from_moments` for every trial of a fitted session."""
    from .inference import evaluate_fit

    return [spatial_errors_from_moments(session.model, session.beta, m, n_samples, seed, reduce)
            for m in evaluate_fit(session)]


@dataclass
class JointAngleSummary:
    names: list
    units: list
    p50: np.ndarray
    p95: np.ndarray

    def rows(self):
        return [(n, u, float(a), float(b))
                for n, u, a, b in zip(self.names, self.units, self.p50, self.p95)]


def report_scale(model: KinematicModel):
    """Multipliers from internal units to reporting units per pose coordinate,
    with unit labels (mm for root translation, degrees otherwise)."""
    K = model.n_dof
    scale = np.full(K, 180.0 / np.pi)
    units = ["deg"] * K
    scale[:3] = 1e3
    units[:3] = ["mm"] * 3
    return scale, units


def joint_angle_summary(std_series, names=None, scale=None, units=None):
    """Time percentiles (50th, 95th) of per-joint posterior standard deviations.

    ``std_series`` is (T, K) in internal units, or PosteriorMoments from which
    the marginal standard deviations are taken; ``scale`` converts units.
    """
    if isinstance(std_series, PosteriorMoments):
        std_series = marginal_std(std_series)
    sd = np.atleast_2d(np.asarray(std_series, dtype=np.float64))
    K = sd.shape[1]
    if scale is not None:
        sd = sd * scale
    names = list(names) if names is not None else [f"q{k}" for k in range(K)]
    units = list(units) if units is not None else [""] * K
    return JointAngleSummary(names, units, np.percentile(sd, 50, axis=0),
                             np.percentile(sd, 95, axis=0))


def session_joint_summary(session, trial=0):
    from .inference import evaluate_fit

    scale, units = report_scale(session.model)
    m = evaluate_fit(session)[trial]
    return joint_angle_summary(m, session.model.dof_names, scale, units)


def correlation_summary(trials):
    """Median over trials of the absolute time-averaged correlation matrix.

    ``trials`` is a list of PosteriorMoments, each with a leading time axis.
    """
    if not trials:
        raise ValueError("need at least one trial")
    mats = []
    for m in trials:
        c = correlation(m)
        mats.append(c.mean(axis=0) if c.ndim == 3 else c)
    agg = np.median(np.abs(np.stack(mats)), axis=0)
    idx = np.arange(agg.shape[0])
    agg[idx, idx] = 1.0
    return agg


def band_coverage(m: PosteriorMoments, truth, z=BAND_Z, mask=None):
    """Fraction of (frame, coordinate) pairs whose true value lies inside
    ``mu +- z * std``; ``mask`` selects coordinates."""
    sd = marginal_std(m)
    inside = np.abs(np.asarray(truth) - m.mu) <= z * sd
    if mask is not None:
        inside = inside[..., np.asarray(mask)]
    return float(inside.mean())


def band_table(m: PosteriorMoments, names, frames, z=BAND_Z):
    """Rows ``(frame, joint, mu, lo, hi)`` of the ``mu +- z sigma`` band."""
    sd = marginal_std(m)
    rows = []
    for t, f in enumerate(frames):
        for k, n in enumerate(names):
            rows.append((int(f), n, float(m.mu[t, k]), float(m.mu[t, k] - z * sd[t, k]),
                         float(m.mu[t, k] + z * sd[t, k])))
    return rows

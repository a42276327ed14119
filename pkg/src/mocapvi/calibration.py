"""Image-space predictive distributions and calibration auditing.

The pose posterior is pushed through kinematics and projection with a
first-order expansion around the mean, ``Cov[y] ~ J Sigma J^T``.  Calibration
uses the probability integral transform of radial errors under an isotropic
2D Gaussian, whose radial distance is Rayleigh distributed, and summarizes
the p-p curve by its mean absolute deviation from the diagonal (ECE).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .camera import CameraModel, project, project_var
from .kinematics import KinematicModel, forward, forward_var
from .likelihood import ObservationSet, sigma_of_score
from .posterior import PosteriorMoments

DEFAULT_CLIPS = (0.0, 1.0, 2.0, 5.0)
PSEUDO_GT_FRACTION = 0.05
# population medians of real-data ECE at clips 0, 1, 2 px, kept for context only
REFERENCE_ECE_MEDIANS = {0.0: 0.33, 1.0: 0.07, 2.0: 5e-4}


@dataclass
class Pushforward:
    """Per (frame, keypoint) image mean (T, J, 2), covariance (T, J, 2, 2) and
    an in-front-of-camera flag (T, J)."""

    mean: np.ndarray
    cov: np.ndarray
    valid: np.ndarray


def keypoint_jacobian(model: KinematicModel, beta, cam: CameraModel, mu, chunk=64):
    """d(pixels)/d(theta) at poses ``mu`` (T, K), shape (T, J, 2, K).

    One reverse sweep per chunk: the poses are replicated once per output
    coordinate and each replica is seeded with a one-hot cotangent.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    T, K = mu.shape
    J = model.n_sites
    O = 2 * J
    out = np.empty((T, J, 2, K))
    seed_one = np.zeros((O, 1, J, 2))
    seed_one[np.arange(O), 0, np.arange(O) // 2, np.arange(O) % 2] = 1.0
    for a in range(0, T, chunk):
        m = mu[a:a + chunk]
        n = m.shape[0]
        tape = gc.Tape()
        th = tape.leaf(np.broadcast_to(m, (O, n, K)).reshape(O * n, K))
        uv, _ = project_var(cam, forward_var(model, beta, th))
        seed = np.broadcast_to(seed_one, (O, n, J, 2)).reshape(O * n, J, 2)
        g = tape.backward(uv, seed)[th.idx].reshape(J, 2, n, K)
        out[a:a + n] = g.transpose(2, 0, 1, 3)
    return out


def pushforward(m: PosteriorMoments, model: KinematicModel, beta, cam: CameraModel) -> Pushforward:
    """First-order image-space moments of every keypoint for moments ``m``
    at one or more timesteps."""
    mu = np.atleast_2d(m.mu)
    d = np.atleast_2d(m.d)
    U = m.U if m.U.ndim == 3 else m.U[None]
    mean, valid = project(cam, forward(model, beta, mu))
    jac = keypoint_jacobian(model, beta, cam, mu)          # (T, J, 2, K)
    jd = jac * d[:, None, None, :]
    ju = np.einsum("tjak,tkr->tjar", jac, U)
    cov = jd @ np.swapaxes(jd, -1, -2) + ju @ np.swapaxes(ju, -1, -2)
    cov = np.where(valid[..., None, None], cov, 0.0)
    return Pushforward(mean, cov, valid)


def predictive_scale(cov2d, sigma_like, sigma_clip, average="variance"):
    """Isotropic predictive width (px) combining posterior and likelihood.

    ``average="variance"``: ``sqrt(mean(var_u, var_v) + min(sigma_like, clip)**2)``.
    ``average="std"``: the u/v standard deviations are averaged first, then
    combined with the clipped likelihood width in quadrature.
    """
    cov2d = np.asarray(cov2d, dtype=np.float64)
    lik = np.minimum(np.asarray(sigma_like, dtype=np.float64), sigma_clip) ** 2
    vu, vv = cov2d[..., 0, 0], cov2d[..., 1, 1]
    if average == "variance":
        post = 0.5 * (vu + vv)
    elif average == "std":
        post = (0.5 * (np.sqrt(np.maximum(vu, 0)) + np.sqrt(np.maximum(vv, 0)))) ** 2
    else:
        raise ValueError("average must be 'variance' or 'std'")
    return np.sqrt(post + lik)


def select_pseudo_gt(obs: ObservationSet, fraction=PSEUDO_GT_FRACTION):
    """The ``fraction`` of present observations with the lowest noise score.

    Returns ``(f, c, j)`` index arrays in canonical (frame, camera, keypoint)
    order; ties are broken by that order.
    """
    f, c, j = obs.records()
    n = f.size
    if n < 20:
        raise ValueError(f"pseudo ground truth needs at least 20 present observations, got {n}")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    k = max(1, int(np.ceil(fraction * n - 1e-9)))
    order = np.argsort(obs.score[f, c, j], kind="stable")[:k]
    order.sort()
    return f[order], c[order], j[order]


def rayleigh_cdf(err, sigma):
    """``1 - exp(-err**2 / (2 sigma**2))`` with the sigma = 0 limits."""
    err = np.asarray(err, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = -np.expm1(-(err ** 2) / (2.0 * sigma ** 2))
    zero = sigma == 0
    return np.where(zero, np.where(err > 0, 1.0, 0.0), c)


@dataclass
class EceResult:
    value: float
    c_sorted: np.ndarray
    p: np.ndarray

    @property
    def n(self):
        return int(self.c_sorted.size)


def ece(err, sigma) -> EceResult:
    """ECE of radial errors against isotropic Gaussian widths ``sigma``."""
    err = np.asarray(err, dtype=np.float64).ravel()
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), err.shape).ravel()
    if err.size == 0:
        raise ValueError("ece needs at least one pair")
    if np.any(sigma < 0) or np.any(err < 0):
        raise ValueError("errors and widths must be nonnegative")
    c = np.sort(rayleigh_cdf(err, sigma))
    p = np.arange(1, c.size + 1) / c.size
    return EceResult(float(np.mean(np.abs(c - p))), c, p)


@dataclass
class EceReport:
    sigma_clip: float
    ece: float
    n: int
    fraction: float
    curve: tuple = field(repr=False, default=())
    trial: int | None = None  # None for the pooled report
    reference_median: float | None = None

    def to_dict(self, with_curve=True):
        d = {"sigma_clip": self.sigma_clip, "ece": self.ece, "n": self.n,
             "fraction": self.fraction, "trial": self.trial,
             "reference_median": self.reference_median}
        if with_curve:
            d["pp_curve"] = [[float(a), float(b)] for a, b in zip(*self.curve)]
        return d


def pseudo_gt_pairs(session, trial, fraction=PSEUDO_GT_FRACTION):
    """Radial errors, posterior image covariances and likelihood widths of the
    pseudo-ground-truth observations of one trial."""
    obs = session.trials[trial]
    f, c, j = select_pseudo_gt(obs, fraction)
    net = session.nets[trial]
    rig = session.cameras()
    err = np.zeros(f.size)
    cov = np.zeros((f.size, 2, 2))
    keep = np.zeros(f.size, dtype=bool)
    for ci, cam in enumerate(rig.cameras):
        sel = np.flatnonzero(c == ci)
        if sel.size == 0:
            continue
        frames, inv = np.unique(f[sel], return_inverse=True)
        m = net.evaluate(obs.times[frames])
        pf = pushforward(m, session.model, session.beta, cam)
        jj = j[sel]
        err[sel] = np.linalg.norm(obs.y[f[sel], ci, jj] - pf.mean[inv, jj], axis=-1)
        cov[sel] = pf.cov[inv, jj]
        keep[sel] = pf.valid[inv, jj]
    sig = sigma_of_score(session.likelihood, obs.score[f, c, j])
    return err[keep], cov[keep], np.asarray(sig)[keep]


def ece_report(session, clips=DEFAULT_CLIPS, fraction=PSEUDO_GT_FRACTION, average="variance"):
    """ECE per clip for each trial and pooled over trials.

    Returns ``{"trials": [[EceReport per clip] per trial], "pooled": [EceReport
    per clip]}``.
    """
    clips = [float(x) for x in clips]
    if not clips:
        raise ValueError("at least one clip value is required")
    pairs = [pseudo_gt_pairs(session, i, fraction) for i in range(len(session.trials))]

    def reports(err, cov, sig, trial):
        out = []
        for clip in clips:
            res = ece(err, predictive_scale(cov, sig, clip, average))
            out.append(EceReport(clip, res.value, res.n, fraction, (res.c_sorted, res.p),
                                 trial, REFERENCE_ECE_MEDIANS.get(clip)))
        return out

    per_trial = [reports(*p, i) for i, p in enumerate(pairs)]
    pooled = reports(*(np.concatenate(x) for x in zip(*pairs)), None)
    return {"trials": per_trial, "pooled": pooled}

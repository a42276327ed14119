"""Implicit trajectory posterior: an MLP from time to Gaussian pose moments.

For each time ``t`` the network outputs a mean ``mu``, a positive diagonal
``d`` and a factor ``U`` (K x R), giving

    q(theta_t) = N(mu(t), diag(d(t)**2) + U(t) U(t)^T).

Bounded joint means are squashed into their limits with tanh.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .gradcore import Var

HIDDEN = (128, 256, 512, 1024)
MIN_FREQ_HZ = 80.0
D_FLOOR = 1e-6
LOG_2PI_E = math.log(2.0 * math.pi * math.e)


def n_octaves(duration, min_freq=MIN_FREQ_HZ):
    """Number of sin/cos octaves so the encoding resolves ``min_freq`` over a
    trial of ``duration`` seconds: the smallest B with 2**B >= 2 * f * T."""
    return max(1, math.ceil(math.log2(max(2.0 * min_freq * duration, 1.0))))


def encode_time(t, duration, min_freq=MIN_FREQ_HZ, octaves=None):
    """Features ``[tau, sin(2**i tau), cos(2**i tau)]`` with ``tau = pi t / T``.

    Returns an array of shape ``t.shape + (1 + 2 B,)``.
    """
    t = np.asarray(t, dtype=np.float64)
    if duration <= 0:
        raise ValueError("trial duration must be positive")
    if np.any(t < 0) or np.any(t > duration * (1 + 1e-12)):
        raise ValueError("time outside [0, duration]")
    B = n_octaves(duration, min_freq) if octaves is None else octaves
    tau = np.pi * t / duration
    ang = tau[..., None] * (2.0 ** np.arange(B))
    return np.concatenate([tau[..., None], np.sin(ang), np.cos(ang)], axis=-1)


@dataclass
class PosteriorMoments:
    """Moments at one or more timesteps: mu (..., K), d (..., K), U (..., K, R)."""

    mu: np.ndarray
    d: np.ndarray
    U: np.ndarray

    @property
    def K(self):
        return self.mu.shape[-1]

    @property
    def R(self):
        return self.U.shape[-1]

    def __getitem__(self, idx):
        return PosteriorMoments(self.mu[idx], self.d[idx], self.U[idx])


def covariance(m: PosteriorMoments):
    cov = m.U @ np.swapaxes(m.U, -1, -2)
    idx = np.arange(m.K)
    cov[..., idx, idx] += m.d ** 2
    return cov


def correlation(m: PosteriorMoments):
    cov = covariance(m)
    sd = np.sqrt(np.diagonal(cov, axis1=-2, axis2=-1))
    corr = cov / (sd[..., :, None] * sd[..., None, :])
    idx = np.arange(m.K)
    corr[..., idx, idx] = 1.0
    return corr


def marginal_std(m: PosteriorMoments):
    return np.sqrt(m.d ** 2 + np.sum(m.U ** 2, axis=-1))


def entropy(m):
    """Differential entropy (nats) per timestep, via the determinant lemma.

    Accepts PosteriorMoments or a ``(mu, d, U)`` tuple of tape variables.
    """
    if isinstance(m, PosteriorMoments):
        mu, d, U = m.mu, m.d, m.U
    else:
        mu, d, U = m
    K = mu.shape[-1]
    R = U.shape[-1]
    h = gc.sum_(gc.log(d), axis=-1) + 0.5 * K * LOG_2PI_E
    if R == 0:
        return h
    V = U / gc.reshape(d, shape=d.shape + (1,)) if isinstance(d, Var) else U / d[..., None]
    inner = gc.matmul(gc.swapaxes(V, -1, -2), V) + np.eye(R)
    return h + 0.5 * gc.logdet_spd(inner)


def sample_from(mu, d, U, eps1, eps2):
    """Reparameterized draws ``mu + d * eps1 + U @ eps2``.

    ``eps1`` is (n, ..., K) and ``eps2`` (n, ..., R); works on tape variables.
    """
    theta = mu + d * eps1
    if U.shape[-1]:
        theta = theta + gc.sum_(U * eps2[..., None, :], axis=-1)
    return theta


def sample(m: PosteriorMoments, n, seed=None):
    """``n`` reparameterized draws, shape (n, ..., K); deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    eps1 = rng.standard_normal((n,) + m.mu.shape)
    eps2 = rng.standard_normal((n,) + m.mu.shape[:-1] + (m.R,))
    return sample_from(m.mu, m.d, m.U, eps1, eps2)


def _mlp(params, x, n_layers):
    h = x
    for i in range(n_layers):
        h = gc.matmul(h, params[f"W{i}"]) + params[f"b{i}"]
        if i < n_layers - 1:
            h = gc.relu(h)
    return h


class PosteriorNet:
    """MLP ``t -> (mu, d, U)`` for one trial.

    ``lower``/``upper``/``bounded`` come from the kinematic model; unbounded
    coordinates (the root) are output raw.  Weights live in ``self.params``, a
    dict of arrays named ``W0, b0, ...``.
    """

    def __init__(self, n_dof, rank, duration, lower, upper, bounded, hidden=HIDDEN,
                 min_freq=MIN_FREQ_HZ, params=None):
        if not 0 <= rank <= n_dof:
            raise ValueError(f"rank must lie in [0, {n_dof}]")
        self.K = int(n_dof)
        self.R = int(rank)
        self.duration = float(duration)
        self.hidden = tuple(int(h) for h in hidden)
        self.min_freq = float(min_freq)
        self.octaves = n_octaves(self.duration, self.min_freq)
        self.bounded = np.asarray(bounded, dtype=bool)
        lo = np.where(self.bounded, lower, 0.0)
        hi = np.where(self.bounded, upper, 0.0)
        self.lower, self.upper = lo, hi
        self.mid = 0.5 * (lo + hi)
        self.half = 0.5 * (hi - lo)
        self.params = params if params is not None else {}

    @classmethod
    def for_model(cls, model, rank, duration, **kw):
        return cls(model.n_dof, rank, duration, model.lower, model.upper, model.bounded, **kw)

    @property
    def n_in(self):
        return 1 + 2 * self.octaves

    @property
    def n_out(self):
        return self.K * (2 + self.R)

    @property
    def widths(self):
        return (self.n_in,) + self.hidden + (self.n_out,)

    def init(self, seed=0, mu_bias=None, d_init=0.05, final_scale=0.01):
        """Uniform fan-in initialization; the last layer is shrunk by
        ``final_scale`` so the initial posterior is close to its biases."""
        rng = np.random.default_rng(seed)
        w = self.widths
        params = {}
        for i in range(len(w) - 1):
            bound = 1.0 / math.sqrt(w[i])
            params[f"W{i}"] = rng.uniform(-bound, bound, (w[i], w[i + 1]))
            params[f"b{i}"] = rng.uniform(-bound, bound, w[i + 1])
        last = len(w) - 2
        params[f"W{last}"] *= final_scale
        b = np.zeros(self.n_out)
        if mu_bias is not None:
            b[:self.K] = mu_bias
        b[self.K:2 * self.K] = math.log(math.expm1(d_init))
        params[f"b{last}"] = b
        self.params = params
        return self

    def features(self, t):
        return encode_time(t, self.duration, self.min_freq, self.octaves)

    def moments_from_output(self, out):
        K, R = self.K, self.R
        raw_mu = out[..., :K]
        squashed = self.mid + self.half * gc.tanh(raw_mu)
        b = self.bounded.astype(np.float64)
        mu = raw_mu * (1.0 - b) + squashed * b
        d = gc.softplus(out[..., K:2 * K]) + D_FLOOR
        U = out[..., 2 * K:]
        U = gc.reshape(U, shape=U.shape[:-1] + (K, R))
        return mu, d, U

    def forward(self, params, t):
        """Moments as tape variables (or arrays) for times ``t`` (N,)."""
        out = _mlp(params, self.features(t), len(self.widths) - 1)
        return self.moments_from_output(out)

    def evaluate(self, t, params=None) -> PosteriorMoments:
        t = np.asarray(t, dtype=np.float64)
        scalar = t.ndim == 0
        mu, d, U = self.forward(params if params is not None else self.params, np.atleast_1d(t))
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(d)) and np.all(np.isfinite(U))):
            raise gc.NonFiniteError("posterior network produced non-finite moments")
        m = PosteriorMoments(np.asarray(mu), np.asarray(d), np.asarray(U))
        return m[0] if scalar else m

    def config(self):
        return {"n_dof": self.K, "rank": self.R, "duration": self.duration,
                "hidden": list(self.hidden), "min_freq": self.min_freq,
                "lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "bounded": self.bounded.tolist()}

    @classmethod
    def from_config(cls, cfg, params=None):
        return cls(cfg["n_dof"], cfg["rank"], cfg["duration"], np.array(cfg["lower"]),
                   np.array(cfg["upper"]), np.array(cfg["bounded"]), hidden=cfg["hidden"],
                   min_freq=cfg["min_freq"], params=params)

"""Variational fitting: ELBO assembly, schedules, optimizers and the fit loop.

Every trial has its own :class:`~mocapvi.posterior.PosteriorNet`; the body
scale parameters ``beta``, the noise coefficients ``psi`` and the camera
extrinsic increments are shared by all trials of a session and optimized in
the same loop.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import gradcore as gc
from . import kernels
from .camera import Rig, project, project_var, rig_from_dict
from .gradcore import NonFiniteError, ParamVector
from .kinematics import KinematicModel, forward, forward_var, load_model, model_from_dict
from .likelihood import (FAMILIES, LikelihoodParams, ObservationSet, load_observations,
                         log_density, sigma_of_score)
from .posterior import PosteriorMoments, PosteriorNet, entropy, sample_from

log = logging.getLogger(__name__)

PRIOR_WEIGHT = 1e4  # nats / rad^2
SESSION_FORMAT = "mocapvi.session"
CHECKPOINT_FORMAT = "mocapvi.checkpoint"
FORMAT_VERSION = 1
LOG_COLUMNS = ("step", "elbo", "entropy", "mean_reproj_px", "lr", "psi0", "psi1", "psi2",
               "sigma_at_median_score")
HALF_NORMAL_WARNING = ("warning: the half_normal likelihood is known to diverge in "
                       "practice; exponential or half_cauchy are recommended")

_REFERENCE_STEPS = 30000


class FitDiverged(RuntimeError):
    """Raised when the ELBO becomes non-finite; ``fit`` holds the last good state."""

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


@dataclass
class Schedule:
    total_steps: int = 30000
    lr_start: float = 1e-3
    lr_end: float = 1e-8
    beta1: float = 0.8
    beta2: float = 0.999
    weight_decay: float = 1e-5
    psi_lr: float = 1e-3
    enable_step: int = 2500
    unfreeze_step: int = 7000
    refine_step: int = 10000
    samples_per_step: int = 8
    timesteps_per_step: int = 100
    fixed_sigma_px: float = 10.0
    learn_beta: bool = True  # False keeps a known skeleton fixed

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")
        if not 0 <= self.enable_step <= self.unfreeze_step <= self.refine_step <= self.total_steps:
            raise ValueError("schedule milestones must satisfy "
                             "enable <= unfreeze <= refine <= total")
        if self.samples_per_step < 1 or self.timesteps_per_step < 1:
            raise ValueError("samples and timesteps per step must be >= 1")

    @classmethod
    def from_overrides(cls, overrides=None) -> "Schedule":
        """Default schedule with overrides; when only ``total_steps`` changes the
        milestones keep their fractions of the 30k-step reference run."""
        overrides = dict(overrides or {})
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown schedule field(s): {sorted(unknown)}")
        total = int(overrides.get("total_steps", _REFERENCE_STEPS))
        for name in ("enable_step", "unfreeze_step", "refine_step"):
            if name not in overrides:
                ref = getattr(cls, name)
                overrides[name] = int(round(ref * total / _REFERENCE_STEPS))
        overrides["total_steps"] = total
        return cls(**overrides)

    def lr(self, step):
        """Exponential decay from lr_start to lr_end over total_steps."""
        frac = step / self.total_steps if self.total_steps else 0.0
        return self.lr_start * (self.lr_end / self.lr_start) ** frac


class Adam:
    """Adam with optional decoupled weight decay on one slice of a flat vector."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay

    def step(self, x, g, lr):
        """Update the contiguous 1-D array ``x`` in place with gradient ``g`` of
        the minimized loss."""
        self.t += 1
        kernels.adam_update(x, g, self.m, self.v, lr, self.beta1, self.beta2, self.eps,
                            self.weight_decay, self.t)


def pose_log_prior(model, theta):
    """``-lambda * sum(excess**2)`` over bounded coordinates (nats).

    ``model`` needs ``lower``, ``upper`` and ``bounded``; ``theta`` (..., K) may
    be a tape variable.  Returns one value per pose.
    """
    idx = np.flatnonzero(model.bounded)
    if idx.size == 0:
        return gc.sum_(theta * 0.0, axis=-1)
    tb = theta[..., idx]
    lo = np.asarray(model.lower)[idx]
    hi = np.asarray(model.upper)[idx]
    excess = gc.relu(tb - hi) + gc.relu(lo - tb)
    return -PRIOR_WEIGHT * gc.sum_(gc.square(excess), axis=-1)


# ------------------------------------------------------------------ session state

class SessionFit:
    """Per-trial posterior nets plus shared beta, psi and extrinsic increments."""

    def __init__(self, model: KinematicModel, rig: Rig, trials, nets, likelihood: LikelihoodParams,
                 schedule: Schedule, seed=0, beta=None, extrinsics=None):
        self.model = model
        self.rig = rig
        self.trials = list(trials)
        self.nets = list(nets)
        self.likelihood = likelihood
        self.schedule = schedule
        self.seed = int(seed)
        self.beta = (np.array(beta, dtype=np.float64) if beta is not None
                     else model.default_beta.copy())
        self.extrinsics = (np.array(extrinsics, dtype=np.float64) if extrinsics is not None
                           else np.zeros((len(rig), 6)))
        self.step = 0
        self.log: list[dict] = []
        self.diverged = False
        for obs in self.trials:
            if obs.camera_names != rig.names:
                raise ValueError("observation cameras must match the rig camera order")
            if obs.n_keypoints != model.n_sites:
                raise ValueError("observation keypoint count must match the model site count")

    @property
    def family(self):
        return self.likelihood.family

    @property
    def psi(self):
        return self.likelihood.psi

    @property
    def rank(self):
        return self.nets[0].R if self.nets else 0

    def cameras(self):
        """Rig with the current extrinsic increments applied."""
        cams = [cam.compose(self.extrinsics[i, :3], self.extrinsics[i, 3:])
                if np.any(self.extrinsics[i]) else cam for i, cam in enumerate(self.rig.cameras)]
        return self.rig.with_cameras(cams)

    def median_score(self):
        scores = np.concatenate([obs.score[obs.present] for obs in self.trials])
        return float(np.median(scores)) if scores.size else 0.0

    def param_vector(self) -> ParamVector:
        groups = {}
        for i, net in enumerate(self.nets):
            for k, v in net.params.items():
                groups[f"phi{i}.{k}"] = v
        groups["beta"] = self.beta
        groups["extrinsics"] = self.extrinsics
        groups["psi"] = self.likelihood.psi
        return ParamVector.from_groups(groups)

    def load_param_vector(self, pv: ParamVector):
        for i, net in enumerate(self.nets):
            net.params = {k: pv[f"phi{i}.{k}"].copy() for k in net.params}
        self.beta = pv["beta"].copy()
        self.extrinsics = pv["extrinsics"].copy()
        self.likelihood = LikelihoodParams(pv["psi"].copy(), self.family)


def _initial_root(rig: Rig, obs: ObservationSet):
    """Least-squares intersection of the rays through each camera's keypoint
    centroid, pooled over frames; ignores distortion."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c, cam in enumerate(rig.cameras):
        pres = obs.present[:, c]
        n = pres.sum(axis=1)
        ok = n > 0
        if not ok.any():
            continue
        with np.errstate(all="ignore"):
            cen = (obs.y[:, c] * pres[..., None]).sum(axis=1)[ok] / n[ok, None]
            rays = np.stack([(cen[:, 0] - cam.cx) / cam.fx, (cen[:, 1] - cam.cy) / cam.fy,
                             np.ones(len(cen))], axis=1) @ cam.rotation
            rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        rays = rays[np.isfinite(rays).all(axis=1)]  # absurd pixel values carry no direction
        P = np.eye(3)[None] - rays[:, :, None] * rays[:, None, :]
        A += P.sum(axis=0)
        b += P.sum(axis=0) @ cam.center
    if np.linalg.matrix_rank(A) < 3:
        return np.zeros(3)
    return np.linalg.solve(A, b)


def init_session(model, rig, trials, rank=5, family="exponential", schedule=None, seed=0,
                 hidden=None) -> SessionFit:
    """Fresh session state: one initialized net per trial, beta at unit scales and
    zero offsets, psi at its default, zero extrinsic increments."""
    schedule = schedule or Schedule()
    nets = []
    for i, obs in enumerate(trials):
        if obs.duration <= 0:
            raise ValueError(f"trial {i} has non-positive duration")
        kw = {"hidden": tuple(hidden)} if hidden is not None else {}
        net = PosteriorNet.for_model(model, rank, obs.duration, **kw)
        bias = np.zeros(model.n_dof)
        bias[:3] = _initial_root(rig, obs)
        net.init(seed=[seed, i], mu_bias=bias)
        nets.append(net)
    return SessionFit(model, rig, trials, nets, LikelihoodParams(family=family), schedule, seed)


# ------------------------------------------------------------------ ELBO

def batch_frames(n_frames, n_batch, rng):
    """Evenly spaced frame indices with a uniformly random phase."""
    if n_frames <= n_batch:
        return np.arange(n_frames)
    offset = rng.uniform()
    return np.floor((np.arange(n_batch) + offset) * n_frames / n_batch).astype(np.int64)


def draw_noise(fit: SessionFit, step, n_samples=None, n_batch=None, seed=None):
    """Frame batches and standard-normal draws for one step, deterministic in
    (seed, step)."""
    sch = fit.schedule
    n_samples = n_samples or sch.samples_per_step
    n_batch = n_batch or sch.timesteps_per_step
    rng = np.random.default_rng([fit.seed if seed is None else seed, step])
    out = []
    for obs, net in zip(fit.trials, fit.nets):
        idx = batch_frames(obs.n_frames, n_batch, rng)
        eps1 = rng.standard_normal((n_samples, idx.size, net.K))
        eps2 = rng.standard_normal((n_samples, idx.size, net.R))
        out.append((idx, eps1, eps2))
    return out


def _elbo(fit: SessionFit, P, noise, learned_sigma=True):
    """ELBO (nats) summed over trials and batch timesteps, plus diagnostics.

    ``P`` maps group names to arrays or tape variables.
    """
    model = fit.model
    total = 0.0
    ent_sum = 0.0
    n_t = 0
    reproj = []
    for i, (obs, net, (idx, eps1, eps2)) in enumerate(zip(fit.trials, fit.nets, noise)):
        if idx.size == 0:
            continue
        params = {k: P[f"phi{i}.{k}"] for k in net.params}
        mu, d, U = net.forward(params, obs.times[idx])
        ent = gc.sum_(entropy((mu, d, U)))
        n = eps1.shape[0]
        theta = sample_from(mu, d, U, eps1, eps2)
        theta_flat = gc.reshape(theta, shape=(n * idx.size, model.n_dof))
        prior = gc.sum_(pose_log_prior(model, theta_flat))
        sites = forward_var(model, P["beta"], theta_flat)
        mu_val = np.asarray(getattr(mu, "value", mu))
        beta_val = np.asarray(getattr(P["beta"], "value", P["beta"]))
        mean_sites = forward(model, beta_val, mu_val)
        ll = 0.0
        for c, cam in enumerate(fit.rig.cameras):
            pres = obs.present[idx, c]
            if not pres.any():
                continue
            ext = P["extrinsics"][c]
            uv, valid = project_var(cam, sites, ext[:3], ext[3:])
            uv = gc.reshape(uv, shape=(n, idx.size, model.n_sites, 2))
            mask = pres[None] & valid.reshape(n, idx.size, model.n_sites)
            y = obs.y[idx, c]
            s = obs.score[idx, c]
            sigma = (sigma_of_score(P["psi"], s) if learned_sigma
                     else np.full(s.shape, fit.schedule.fixed_sigma_px))
            eps = gc.norm(uv - y, axis=-1)
            lp = log_density(fit.family, eps, sigma)
            ll = ll + gc.sum_(lp * mask.astype(np.float64))
            # diagnostics at the posterior mean with the current extrinsics
            ext_val = np.asarray(getattr(ext, "value", ext))
            cam_now = cam.compose(ext_val[:3], ext_val[3:]) if np.any(ext_val) else cam
            uvm, vm = project(cam_now, mean_sites)
            m = pres & vm
            if m.any():
                reproj.append(np.linalg.norm(uvm - y, axis=-1)[m])
        total = total + ent + (prior + ll) / n
        ent_sum += float(np.asarray(getattr(ent, "value", ent)))
        n_t += idx.size
    diag = {"entropy": ent_sum / max(n_t, 1),
            "mean_reproj_px": float(np.mean(np.concatenate(reproj))) if reproj else float("nan")}
    return total, diag


def elbo_estimate(fit: SessionFit, noise=None, step=None, n_samples=None, seed=None,
                  learned_sigma=None):
    """Monte Carlo ELBO at the current parameters; deterministic given
    ``(seed, step)`` or an explicit ``noise`` from :func:`draw_noise`."""
    step = fit.step if step is None else step
    if noise is None:
        noise = draw_noise(fit, step, n_samples=n_samples, seed=seed)
    if learned_sigma is None:
        learned_sigma = step >= fit.schedule.enable_step
    val, _ = _elbo(fit, fit.param_vector().groups(), noise, learned_sigma)
    return float(np.asarray(val))


def elbo_value_and_grad(fit: SessionFit, noise, learned_sigma=True, pv=None):
    """ELBO and its gradient with respect to every parameter group."""
    pv = pv if pv is not None else fit.param_vector()
    diag = {}

    def f(P):
        val, d = _elbo(fit, P, noise, learned_sigma)
        diag.update(d)
        return val

    val, g = gc.value_and_grad(f, pv)
    return val, g, diag


# ------------------------------------------------------------------ fit loop

class _Optimizers:
    def __init__(self, fit: SessionFit, pv: ParamVector):
        sch = fit.schedule
        lay = pv.layout
        phi = [lay[k] for k in lay if k.startswith("phi")]
        self.phi = slice(phi[0][0], phi[-1][1]) if phi else slice(0, 0)
        self.beta = slice(*lay["beta"][:2])
        self.extr = slice(*lay["extrinsics"][:2])
        self.psi = slice(*lay["psi"][:2])
        refine = np.repeat(np.asarray(fit.rig.refine_mask, dtype=bool), 6)
        self.extr_mask = refine
        self.main_phi = Adam(self.phi.stop - self.phi.start, sch.beta1, sch.beta2,
                             weight_decay=sch.weight_decay)
        self.main_beta = Adam(self.beta.stop - self.beta.start, sch.beta1, sch.beta2)
        self.main_extr = Adam(int(refine.sum()), sch.beta1, sch.beta2)
        self.psi_opt = Adam(3)

    def apply(self, x, g, step, sch: Schedule):
        """Descent step on ``x`` (flat parameters) for the minimized ``g``."""
        lr = sch.lr(step)
        x_phi = x[self.phi]
        self.main_phi.step(x_phi, g[self.phi], lr)
        if sch.learn_beta:
            x_beta = x[self.beta]
            self.main_beta.step(x_beta, g[self.beta], lr)
        if step >= sch.refine_step and self.extr_mask.any():
            xe = x[self.extr]
            sub = xe[self.extr_mask]
            self.main_extr.step(sub, g[self.extr][self.extr_mask], lr)
            xe[self.extr_mask] = sub
        if step >= sch.unfreeze_step:
            x_psi = x[self.psi]
            self.psi_opt.step(x_psi, g[self.psi], sch.psi_lr)
        return lr


def fit(session: SessionFit, steps=None, callback=None, on_diverge=None) -> SessionFit:
    """Run the optimization loop up to ``schedule.total_steps`` (or ``steps``
    more steps), appending one log row per step.

    On a non-finite ELBO or update the last good state is kept, ``on_diverge``
    (if given) is called with the session, and :class:`FitDiverged` is raised.
    """
    sch = session.schedule
    end = sch.total_steps if steps is None else min(sch.total_steps, session.step + steps)
    if session.family == "half_normal":
        log.warning(HALF_NORMAL_WARNING)
    pv = session.param_vector()
    opt = getattr(session, "_optim", None)
    if opt is None:
        opt = session._optim = _Optimizers(session, pv)
    med = session.median_score()
    while session.step < end:
        k = session.step
        noise = draw_noise(session, k)
        try:
            val, g, diag = elbo_value_and_grad(session, noise, k >= sch.enable_step, pv)
            x = pv.values.copy()
            lr = opt.apply(x, -g.values, k, sch)
            if not np.all(np.isfinite(x)):
                raise NonFiniteError(f"non-finite parameters after step {k}")
        except NonFiniteError as exc:
            session.diverged = True
            log.error("divergence at step %d: %s", k, exc)
            if on_diverge is not None:
                on_diverge(session)
            raise FitDiverged(f"ELBO diverged at step {k}: {exc}", session) from exc
        pv = ParamVector(x, pv.layout)
        session.load_param_vector(pv)
        psi = session.likelihood.psi
        row = {"step": k, "elbo": float(val), "entropy": diag["entropy"],
               "mean_reproj_px": diag["mean_reproj_px"], "lr": lr,
               "psi0": float(psi[0]), "psi1": float(psi[1]), "psi2": float(psi[2]),
               "sigma_at_median_score": float(sigma_of_score(psi, med))}
        session.log.append(row)
        session.step = k + 1
        if callback is not None:
            callback(session, row)
    return session


def evaluate_fit(session: SessionFit):
    """Posterior moments at every observation frame, one entry per trial."""
    return [net.evaluate(obs.times) for obs, net in zip(session.trials, session.nets)]


# ------------------------------------------------------------------ affine toy

def fit_affine_toy(toy, steps=4000, n_samples=64, lr_start=3e-2, lr_end=1e-4, seed=0):
    """Variational fit of a single Gaussian q(theta) = N(m, s^2) to the 1-DoF
    affine toy, with the same entropy, reparameterized sampling, prior and
    likelihood terms as the full model.  Returns ``(m, s)``."""
    lim = SimpleNamespace(lower=np.array([toy.lower]), upper=np.array([toy.upper]),
                          bounded=np.array([True]))
    y = np.asarray(toy.y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = np.array([float(np.mean((y - toy.b) / toy.a)), math.log(math.expm1(0.1))])
    opt = Adam(2, beta1=0.9)
    pv = ParamVector.from_groups({"m": x[:1], "raw_s": x[1:]})
    for k in range(steps):
        eps = rng.standard_normal((n_samples, 1))

        def f(P):
            s = gc.softplus(P["raw_s"]) + 1e-6
            mom = (P["m"], s, np.zeros((1, 0)))
            th = sample_from(P["m"], s, np.zeros((1, 0)), eps, np.zeros((n_samples, 0)))
            pred = th * toy.a + toy.b  # (n, 1) against (N,) observations
            err = gc.norm(gc.reshape(pred - y, shape=(n_samples, y.size, 1)), axis=-1)
            ll = gc.sum_(log_density("half_normal", err, toy.sigma))
            return gc.sum_(entropy(mom)) + (ll + gc.sum_(pose_log_prior(lim, th))) / n_samples

        _, g = gc.value_and_grad(f, pv)
        vals = pv.values.copy()
        frac = k / max(steps - 1, 1)
        opt.step(vals, -g.values, lr_start * (lr_end / lr_start) ** frac)
        pv = pv.with_values(vals)
    m = float(pv["m"][0])
    s = float(np.logaddexp(0.0, pv["raw_s"][0]) + 1e-6)
    return m, s


# ------------------------------------------------------------------ files

def write_log(rows, path=None):
    """Convergence log as CSV text (floats via repr); written to ``path`` if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r["step"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]


_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(session: SessionFit, path):
    """Write the session to an ``.npz`` archive with fixed member timestamps so
    equal states give byte-identical files."""
    meta = {
        "format": CHECKPOINT_FORMAT, "version": FORMAT_VERSION, "step": session.step,
        "seed": session.seed, "family": session.family, "diverged": session.diverged,
        "schedule": asdict(session.schedule), "model": session.model.to_dict(),
        "rig": session.rig.to_dict(), "nets": [net.config() for net in session.nets],
        "trials": [obs.to_csv() for obs in session.trials],
    }
    arrays = {"beta": session.beta, "psi": session.likelihood.psi,
              "extrinsics": session.extrinsics}
    for i, net in enumerate(session.nets):
        for k, v in net.params.items():
            arrays[f"phi{i}.{k}"] = v
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_ZIP_DATE)
        zf.writestr(info, json.dumps(meta, sort_keys=True).encode())
        for name in sorted(arrays):
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE),
                        _npy_bytes(np.asarray(arrays[name], dtype=np.float64)))


def load_checkpoint(path) -> SessionFit:
    with np.load(path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files if k != "meta.json"}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: not a version-{FORMAT_VERSION} checkpoint")
    model = model_from_dict(meta["model"])
    rig = rig_from_dict(meta["rig"])
    trials = [ObservationSet.from_csv(t) for t in meta["trials"]]
    nets = []
    for i, cfg in enumerate(meta["nets"]):
        prefix = f"phi{i}."
        params = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        n_layers = len(cfg["hidden"]) + 1
        params = {name: params[name] for j in range(n_layers) for name in (f"W{j}", f"b{j}")}
        nets.append(PosteriorNet.from_config(cfg, params))
    session = SessionFit(model, rig, trials, nets,
                         LikelihoodParams(arrays["psi"], meta["family"]),
                         Schedule(**meta["schedule"]), meta["seed"], arrays["beta"],
                         arrays["extrinsics"])
    session.step = meta["step"]
    session.diverged = meta["diverged"]
    return session


# ------------------------------------------------------------------ session config

def load_session_config(path) -> dict:
    """Parse a session config and resolve file paths relative to it."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None
    if cfg.get("format") != SESSION_FORMAT or cfg.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: expected format {SESSION_FORMAT!r} version {FORMAT_VERSION}")
    for key in ("model", "rig", "trials"):
        if key not in cfg:
            raise ValueError(f"{path}: missing field {key!r}")
    base = path.parent

    def resolve(p):
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    model = cfg["model"]
    if isinstance(model, str) and (model.endswith(".json") or "/" in model):
        model = resolve(model)
    out = dict(cfg)
    out["model"] = model
    out["rig"] = resolve(cfg["rig"])
    out["trials"] = [resolve(t) for t in cfg["trials"]]
    out.setdefault("rank", 5)
    out.setdefault("family", "exponential")
    out.setdefault("seed", 0)
    out.setdefault("schedule", {})
    if out["family"] not in FAMILIES:
        raise ValueError(f"{path}: unknown family {out['family']!r}")
    return out


def session_from_config(cfg: dict) -> SessionFit:
    from .camera import load_rig

    model = load_model(cfg["model"])
    rig = load_rig(cfg["rig"])
    trials = [load_observations(p) for p in cfg["trials"]]
    schedule = Schedule.from_overrides(cfg.get("schedule"))
    return init_session(model, rig, trials, rank=int(cfg["rank"]), family=cfg["family"],
                        schedule=schedule, seed=int(cfg["seed"]), hidden=cfg.get("hidden"))


def moments_at_frames(session: SessionFit, trial=0, frames=None) -> PosteriorMoments:
    obs = session.trials[trial]
    times = obs.times if frames is None else obs.times[np.asarray(frames)]
    return session.nets[trial].evaluate(times)

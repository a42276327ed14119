"""Synthetic multiview keypoint datasets with known ground truth.

A dataset is a camera rig around a walking figure whose joints follow
sinusoids inside their limits.  Each projected site receives a noise score
``s ~ U[0, s_max]`` and a radial pixel error whose scale is
``sigma_true(s) = c0 + c1 s + c2 s**2`` in a uniformly random direction.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .camera import Rig, look_at, project, save_rig
from .kinematics import KinematicModel, forward, load_model, save_model
from .likelihood import ObservationSet, save_observations

SYNTH_FORMAT = "mocapvi.synth"
NOISE_FAMILIES = ("none", "exponential", "half_cauchy", "half_normal", "gaussian2d")

DEFAULT_CONFIG = {
    "format": SYNTH_FORMAT,
    "version": 1,
    "model": "humanoid-lite",
    "rig": {"layout": "ring", "n_cameras": 8, "radius": 4.0, "height": 1.6,
            "target": [0.0, 0.0, 0.9], "image_size": [1280, 1024], "focal_px": 1000.0,
            "distortion": [-0.05, 0.01, 0.0, 0.0, 0.0]},
    "trajectory": {"amplitude": 0.5, "min_freq_hz": 0.3, "max_freq_hz": 1.0,
                   "walk_speed_mps": 0.4, "pelvis_height_m": 0.95, "root_sway_rad": 0.05},
    "duration_s": 4.0,
    "fps": 50.0,
    "noise": {"family": "exponential", "sigma_coeffs": [1.0, 2.0, 0.0], "score_max": 2.0,
              "anisotropy": 1.0},
    "occlusion": [],
    "extra_px": 0.0,
    "cameras": None,
    "trials": 1,
    "seed": 0,
}


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def bundled_config(name="demo"):
    """The bundled demo configuration (8 ring cameras, 200 frames)."""
    text = resources.files("mocapvi.data").joinpath(f"{name}_synth.json").read_text()
    return json.loads(text)


def make_config(**overrides):
    """Default config with top-level overrides; nested dicts are merged."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    return cfg


def validate_config(cfg):
    cfg = make_config(**cfg)
    if cfg.get("format", SYNTH_FORMAT) != SYNTH_FORMAT:
        raise ConfigError("format", f"expected {SYNTH_FORMAT!r}")
    if not (isinstance(cfg["fps"], (int, float)) and cfg["fps"] > 0):
        raise ConfigError("fps", "must be positive")
    if not cfg["duration_s"] > 0:
        raise ConfigError("duration_s", "must be positive")
    rig = cfg["rig"]
    if rig["layout"] not in ("ring", "linear"):
        raise ConfigError("rig.layout", "expected 'ring' or 'linear'")
    if int(rig["n_cameras"]) < 1:
        raise ConfigError("rig.n_cameras", "must be >= 1")
    noise = cfg["noise"]
    if noise["family"] not in NOISE_FAMILIES:
        raise ConfigError("noise.family", f"expected one of {NOISE_FAMILIES}")
    if len(noise["sigma_coeffs"]) != 3 or min(noise["sigma_coeffs"]) < 0:
        raise ConfigError("noise.sigma_coeffs", "expected three nonnegative coefficients")
    if noise["score_max"] < 0:
        raise ConfigError("noise.score_max", "must be nonnegative")
    if cfg["extra_px"] < 0:
        raise ConfigError("extra_px", "must be nonnegative")
    if int(cfg["trials"]) < 1:
        raise ConfigError("trials", "must be >= 1")
    return cfg


@dataclass
class SynthDataset:
    model: KinematicModel
    rig: Rig
    trials: list
    gt_poses: list  # (F, K) per trial
    beta: np.ndarray
    config: dict = field(default_factory=dict)


def make_rig(spec) -> Rig:
    n = int(spec["n_cameras"])
    w, h = spec["image_size"]
    target = np.asarray(spec.get("target", (0.0, 0.0, 0.9)), dtype=float)
    cams = []
    for i in range(n):
        if spec["layout"] == "ring":
            # the phase keeps look-at rotations away from an angle of exactly pi
            a = 2 * np.pi * i / n + 0.1
            center = [spec["radius"] * np.cos(a), spec["radius"] * np.sin(a), spec["height"]]
        else:
            x = np.linspace(-1, 1, n)[i] * spec["radius"] if n > 1 else 0.0
            center = [x, -spec["radius"], spec["height"]]
        cams.append(look_at(f"cam{i}", center, target, w, h, spec["focal_px"],
                            spec.get("distortion")))
    return Rig(tuple(cams))


def trajectory(model: KinematicModel, times, spec, rng):
    """Ground-truth poses (F, K): a straight walk along x with small root sway
    and per-joint sinusoids at ``amplitude`` of each half-range."""
    times = np.asarray(times, dtype=float)
    K = model.n_dof
    theta = np.zeros((times.size, K))
    dur = times[-1] if times.size > 1 else 1.0
    v = spec["walk_speed_mps"]
    theta[:, 0] = v * (times - 0.5 * dur)
    theta[:, 1] = 0.05 * np.sin(2 * np.pi * 0.5 * times)
    theta[:, 2] = spec["pelvis_height_m"] + 0.02 * np.sin(2 * np.pi * 1.0 * times)
    sway = spec["root_sway_rad"]
    for k in range(3, 6):
        f = rng.uniform(spec["min_freq_hz"], spec["max_freq_hz"])
        theta[:, k] = sway * np.sin(2 * np.pi * f * times + rng.uniform(0, 2 * np.pi))
    b = model.bounded
    mid = np.where(b, 0.5 * (np.where(b, model.lower, 0) + np.where(b, model.upper, 0)), 0.0)
    half = np.where(b, 0.5 * (np.where(b, model.upper, 0) - np.where(b, model.lower, 0)), 0.0)
    for k in np.flatnonzero(b):
        f = rng.uniform(spec["min_freq_hz"], spec["max_freq_hz"])
        ph = rng.uniform(0, 2 * np.pi)
        theta[:, k] = mid[k] + spec["amplitude"] * half[k] * np.sin(2 * np.pi * f * times + ph)
    return theta


def radial_magnitude(family, sigma, rng):
    sigma = np.asarray(sigma, dtype=float)
    if family == "none":
        return np.zeros(sigma.shape)
    if family == "exponential":
        return rng.exponential(1.0, sigma.shape) * sigma
    if family == "half_normal":
        return np.abs(rng.standard_normal(sigma.shape)) * sigma
    if family == "half_cauchy":
        return np.abs(rng.standard_cauchy(sigma.shape)) * sigma
    if family == "gaussian2d":
        return np.sqrt(rng.chisquare(2, sigma.shape)) * sigma
    raise ValueError(f"unknown noise family {family!r}")


def radial_noise(family, sigma, rng, anisotropy=1.0):
    """2D error vectors with magnitudes from ``family`` and uniform directions;
    ``anisotropy`` stretches the v component (stress test)."""
    r = radial_magnitude(family, sigma, rng)
    a = rng.uniform(0, 2 * np.pi, np.shape(r))
    return np.stack([r * np.cos(a), anisotropy * r * np.sin(a)], axis=-1)


def generate(config=None) -> SynthDataset:
    """Build a dataset from a config dict; deterministic per ``seed``."""
    cfg = validate_config(config or {})
    model = load_model(cfg["model"])
    rig = make_rig(cfg["rig"])
    rng = np.random.default_rng(cfg["seed"])
    n_frames = int(round(cfg["duration_s"] * cfg["fps"]))
    if n_frames < 1:
        raise ConfigError("duration_s", "fewer than one frame")
    frames = np.arange(n_frames)
    times = frames / float(cfg["fps"])
    noise = cfg["noise"]
    beta = model.default_beta.copy()
    trials, gts = [], []
    for _ in range(int(cfg["trials"])):
        gt = trajectory(model, times, cfg["trajectory"], rng)
        if np.any(gt[:, model.bounded] < model.lower[model.bounded]) or \
                np.any(gt[:, model.bounded] > model.upper[model.bounded]):
            raise ConfigError("trajectory", "ground-truth poses violate joint limits")
        sites = forward(model, beta, gt)
        C, J = len(rig), model.n_sites
        y = np.zeros((n_frames, C, J, 2))
        present = np.zeros((n_frames, C, J), dtype=bool)
        for c, cam in enumerate(rig.cameras):
            y[:, c], present[:, c] = project(cam, sites)
        score = rng.uniform(0.0, noise["score_max"], present.shape)
        c0, c1, c2 = noise["sigma_coeffs"]
        sigma = c0 + c1 * score + c2 * score ** 2
        y = y + radial_noise(noise["family"], sigma, rng, noise.get("anisotropy", 1.0))
        for occ in cfg["occlusion"]:
            c = rig.names.index(occ["camera"])
            win = (times >= occ["start_s"]) & (times < occ["end_s"])
            present[win, c] = False
        obs = ObservationSet(frames, times, rig.names, y, score, present,
                             duration=n_frames / float(cfg["fps"]))
        if cfg["extra_px"] > 0:
            obs = inject_noise(obs, cfg["extra_px"], rng)
        trials.append(obs)
        gts.append(gt)
    if cfg["cameras"]:
        subset = []
        for obs in trials:
            o, r = subset_cameras(obs, rig, cfg["cameras"])
            subset.append(o)
        trials, rig = subset, r
    return SynthDataset(model, rig, trials, gts, beta, cfg)


def inject_noise(obs: ObservationSet, extra_px, seed=None) -> ObservationSet:
    """Add independent radial noise (exponential magnitude with mean
    ``extra_px``, uniform direction) to present keypoints; scores untouched."""
    if extra_px < 0:
        raise ValueError("extra_px must be nonnegative")
    if extra_px == 0:
        return obs.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    delta = radial_noise("exponential", np.full(obs.present.shape, float(extra_px)), rng)
    return obs.copy(y=obs.y + delta * obs.present[..., None])


def subset_cameras(obs: ObservationSet, rig: Rig, names, require_joint_visibility=False):
    """Keep only cameras ``names``; with ``require_joint_visibility`` also keep
    only frames where every retained camera sees at least one keypoint."""
    names = list(names)
    if not names:
        raise ValueError("camera subset is empty")
    for n in names:
        if n not in rig.names:
            raise KeyError(f"unknown camera {n!r}")
    if require_joint_visibility and len(names) < 2:
        raise ValueError("joint visibility needs at least two cameras")
    sub = obs.select_cameras(names)
    if require_joint_visibility:
        keep = sub.present.any(axis=2).all(axis=1)
        sub = sub.select_frames(keep)
    if sub.n_frames == 0 or sub.n_present == 0:
        raise ValueError("camera subset leaves no observations")
    return sub, rig.subset(names)


def spread_cameras(rig: Rig, n):
    """``n`` camera names spread evenly around the rig order."""
    idx = np.floor(np.arange(n) * len(rig) / n).astype(int)
    return [rig.names[i] for i in idx]


@dataclass
class AffineToy:
    """One scalar 'joint' observed through ``y = a theta + b + N(0, sigma^2)``."""

    a: float
    b: float
    sigma: float
    y: np.ndarray
    theta_true: float
    lower: float = -10.0
    upper: float = 10.0

    def posterior(self):
        """Conjugate posterior (mean, std) under the flat prior."""
        n = len(self.y)
        mean = float(np.mean((self.y - self.b) / self.a))
        return mean, self.sigma / (abs(self.a) * np.sqrt(n))


def affine_toy(n=50, a=2.0, b=0.5, sigma=1.0, theta_true=0.7, seed=0) -> AffineToy:
    rng = np.random.default_rng(seed)
    y = a * theta_true + b + sigma * rng.standard_normal(n)
    return AffineToy(a, b, sigma, y, theta_true)


def write_dataset(ds: SynthDataset, out_dir, rank=5, family="exponential", schedule=None):
    """Write model, rig, observations, ground truth and a session config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(ds.model, out / "model.json")
    save_rig(ds.rig, out / "rig.json")
    names = []
    for i, (obs, gt) in enumerate(zip(ds.trials, ds.gt_poses)):
        save_observations(obs, out / f"trial{i}.csv")
        header = "frame_idx," + ",".join(ds.model.dof_names)
        rows = [f"{f}," + ",".join(repr(float(v)) for v in row)
                for f, row in zip(range(len(gt)), gt)]
        (out / f"gt{i}.csv").write_text(header + "\n" + "\n".join(rows) + "\n")
        names.append(f"trial{i}.csv")
    session = {"format": "mocapvi.session", "version": 1, "model": "model.json",
               "rig": "rig.json", "trials": names, "rank": rank, "family": family,
               "seed": int(ds.config.get("seed", 0)), "schedule": schedule or {}}
    (out / "session.json").write_text(json.dumps(session, indent=1) + "\n")
    return out / "session.json"


def load_gt(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:]

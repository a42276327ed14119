"""Small shared fixtures: toy kinematic trees and quick synthetic sessions."""
import numpy as np

from mocapvi.kinematics import load_model


def chain_model():
    """Three-segment chain with a free root, a hinge and a ball joint."""
    return load_model({
        "format": "mocapvi.kinematic_model", "version": 1, "name": "chain",
        "scale_param_count": 1,
        "segments": [
            {"name": "base", "parent": None, "offset": [0, 0, 0]},
            {"name": "a", "parent": "base", "offset": [0.3, 0, 0], "scale_param": 0},
            {"name": "b", "parent": "a", "offset": [0.25, 0.05, 0]},
        ],
        "joints": [
            {"name": "root", "segment": "base", "type": "free_root"},
            {"name": "j1", "segment": "a", "type": "hinge", "axis": [0, 0, 1],
             "lower": -2, "upper": 2},
            {"name": "j2", "segment": "b", "type": "ball_euler", "lower": [-1, -1, -1],
             "upper": [1, 1, 1]},
        ],
        "sites": [{"name": "s0", "segment": "a", "offset": [0.1, 0, 0]},
                  {"name": "s1", "segment": "b", "offset": [0.2, 0.0, 0.03]}],
    })


def planar_chain(lengths):
    """Serial chain of z-axis hinges in the xy-plane with a tip site per link."""
    segs = [{"name": "base", "parent": None, "offset": [0, 0, 0]}]
    joints = [{"name": "root", "segment": "base", "type": "free_root"}]
    sites = []
    parent, prev_len = "base", 0.0
    for i, L in enumerate(lengths):
        name = f"link{i}"
        segs.append({"name": name, "parent": parent, "offset": [prev_len, 0, 0]})
        joints.append({"name": f"q{i}", "segment": name, "type": "hinge", "axis": [0, 0, 1],
                       "lower": -3.0, "upper": 3.0})
        sites.append({"name": f"tip{i}", "segment": name, "offset": [L, 0, 0]})
        parent, prev_len = name, L
    return load_model({"format": "mocapvi.kinematic_model", "version": 1, "name": "planar",
                       "scale_param_count": 0, "segments": segs, "joints": joints,
                       "sites": sites})


def planar_tips(lengths, q):
    """Independent oracle: cumulative-angle sums for a planar chain at the origin."""
    ang = np.cumsum(q)
    x = np.cumsum(np.asarray(lengths) * np.cos(ang))
    y = np.cumsum(np.asarray(lengths) * np.sin(ang))
    return np.stack([x, y, np.zeros_like(x)], axis=-1)


def tiny_dataset(n_cameras=2, n_frames=4, trials=1, family="exponential", seed=0):
    from mocapvi import synth

    cfg = synth.make_config(rig={"n_cameras": n_cameras}, duration_s=n_frames / 20.0, fps=20.0,
                            trials=trials, noise={"family": family}, seed=seed)
    return synth.generate(cfg)


def tiny_session(n_cameras=2, n_frames=4, trials=1, rank=2, schedule=None, seed=0,
                 family="exponential"):
    """A session small enough for finite differences and step-by-step checks."""
    from mocapvi import inference as inf

    ds = tiny_dataset(n_cameras, n_frames, trials, seed=seed)
    sch = inf.Schedule.from_overrides({"total_steps": 0, "enable_step": 0, "unfreeze_step": 0,
                                       "refine_step": 0, "samples_per_step": 3,
                                       "timesteps_per_step": 100, **(schedule or {})})
    return inf.init_session(ds.model, ds.rig, ds.trials, rank=rank, family=family, schedule=sch,
                            seed=seed, hidden=(8, 8)), ds

"""Command line interface: ``mocapvi {synth,fit,report,ablate}``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric divergence.
``MOCAPVI_THREADS`` caps the BLAS thread pools (read before numpy loads).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
WIDE_TRIAL_MM = 1000.0  # trials whose spatial 95th percentile exceeds this are flagged


class UsageError(Exception):
    """Configuration or input problem (exit code 2)."""


def _limit_threads():
    n = os.environ.get("MOCAPVI_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMBA_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _versions():
    import numpy
    import scipy

    from . import __version__

    v = {"mocapvi": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
         "scipy": scipy.__version__}
    try:
        import numba
        v["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    return v


def _hash_inputs(*parts):
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, (str, Path)) and Path(p).is_file():
            h.update(Path(p).read_bytes())
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()


def write_manifest(out_dir, command, config_hash, seed, outputs, started):
    manifest = {"command": command, "config_hash": config_hash, "seed": seed,
                "versions": _versions(), "outputs": sorted(str(o) for o in outputs),
                "wall_clock_s": round(time.time() - started, 3)}
    (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def _csv(path, header, rows):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, float) else x for x in r])


def _floats(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise UsageError(f"could not parse number list {text!r}") from None
    return vals


# ------------------------------------------------------------------ synth

def cmd_synth(args):
    from .synth import bundled_config, generate, write_dataset

    started = time.time()
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: not valid JSON ({exc})") from None
    else:
        cfg = bundled_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    ds = generate(cfg)
    out = Path(args.out)
    session = write_dataset(ds, out, rank=args.rank, family=args.family)
    outputs = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    write_manifest(out, "synth", _hash_inputs(cfg), cfg.get("seed", 0), outputs, started)
    print(f"wrote {len(ds.trials)} trial(s), {len(ds.rig)} cameras, "
          f"{ds.trials[0].n_frames} frames to {out} (session: {session.name})")
    return EXIT_OK


# ------------------------------------------------------------------ fit

def _session_cfg(args):
    from .inference import load_session_config

    try:
        cfg = load_session_config(args.session)
    except FileNotFoundError:
        raise UsageError(f"session config not found: {args.session}") from None
    if getattr(args, "rank", None) is not None:
        cfg["rank"] = args.rank
    if getattr(args, "family", None) is not None:
        cfg["family"] = args.family
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        sched = {k: v for k, v in cfg["schedule"].items()
                 if k not in ("enable_step", "unfreeze_step", "refine_step")}
        sched["total_steps"] = args.steps
        cfg["schedule"] = sched
    return cfg


def run_fit(cfg, out_dir, quiet=True):
    """Fit one session config into ``out_dir``; returns (session, exit code)."""
    from .inference import (HALF_NORMAL_WARNING, FitDiverged, fit, save_checkpoint,
                            session_from_config, write_log)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg["family"] == "half_normal":
        print(HALF_NORMAL_WARNING, file=sys.stderr)
    try:
        session = session_from_config(cfg)
    except FileNotFoundError as exc:
        raise UsageError(f"input file not found: {exc.filename}") from None
    code = EXIT_OK
    try:
        fit(session)
    except FitDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DIVERGED
    save_checkpoint(session, out / "checkpoint.npz")
    write_log(session.log, out / "convergence.csv")
    if not quiet and session.log:
        last = session.log[-1]
        print(f"step {last['step']}: elbo {last['elbo']:.1f}, "
              f"reprojection {last['mean_reproj_px']:.3f} px")
    return session, code


def cmd_fit(args):
    started = time.time()
    cfg = _session_cfg(args)
    _, code = run_fit(cfg, args.out, quiet=False)
    write_manifest(args.out, "fit", _hash_inputs(args.session, cfg), cfg["seed"],
                   ["checkpoint.npz", "convergence.csv"], started)
    return code


# ------------------------------------------------------------------ report

def write_report(session, out_dir, clips, n_samples=250, seed=0, gt_paths=()):
    import numpy as np

    from .calibration import ece_report
    from .inference import evaluate_fit
    from .metrics import (band_coverage, band_table, correlation_summary, joint_angle_summary,
                          report_scale, spatial_errors_from_moments)
    from .synth import load_gt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = session.model
    moments = evaluate_fit(session)
    outputs = []
    summary = {}

    rep = ece_report(session, clips)
    ece_json = {"pooled": [r.to_dict(False) for r in rep["pooled"]],
                "trials": [[r.to_dict(False) for r in t] for t in rep["trials"]]}
    (out / "ece.json").write_text(json.dumps(ece_json, indent=1) + "\n")
    rows = []
    for r in rep["pooled"]:
        rows += [("pooled", r.sigma_clip, float(c), float(p)) for c, p in zip(*r.curve)]
    _csv(out / "pp_curve.csv", ("trial", "sigma_clip", "c_sorted", "p"), rows)
    outputs += ["ece.json", "pp_curve.csv"]
    summary["ece_pooled"] = {str(r.sigma_clip): r.ece for r in rep["pooled"]}

    scale, units = report_scale(model)
    rows, srows, brows = [], [], []
    wide = []
    for i, m in enumerate(moments):
        js = joint_angle_summary(m, model.dof_names, scale, units)
        rows += [(i,) + r for r in js.rows()]
        se = spatial_errors_from_moments(model, session.beta, m, n_samples, seed)
        srows += [(i,) + r for r in se.rows()]
        if np.max(se.p95_mm) > WIDE_TRIAL_MM:
            wide.append(i)
        brows += [(i,) + r for r in band_table(m, model.dof_names, session.trials[i].frames)]
    _csv(out / "joint_std.csv", ("trial", "joint", "unit", "p50", "p95"), rows)
    _csv(out / "spatial_errors.csv", ("trial", "segment", "p50_mm", "p95_mm"), srows)
    _csv(out / "bands.csv", ("trial", "frame_idx", "joint", "mu", "lo95", "hi95"), brows)
    corr = correlation_summary(moments)
    _csv(out / "correlation.csv", ("joint",) + tuple(model.dof_names),
         [(n,) + tuple(float(x) for x in row) for n, row in zip(model.dof_names, corr)])
    outputs += ["joint_std.csv", "spatial_errors.csv", "bands.csv", "correlation.csv"]
    # reported, never dropped: plotting code may leave these trials out
    summary["trials_p95_over_1m"] = wide

    if gt_paths:
        cov = []
        for m, obs, p in zip(moments, session.trials, gt_paths):
            gt = load_gt(p)[obs.frames]
            cov.append(band_coverage(m, gt, mask=model.bounded))
        summary["band_coverage"] = cov
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    outputs.append("summary.json")
    return outputs, summary


def cmd_report(args):
    from .inference import load_checkpoint

    started = time.time()
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    session = load_checkpoint(args.checkpoint)
    clips = _floats(args.ece_clips)
    if not clips:
        raise UsageError("--ece-clips must list at least one value")
    outputs, summary = write_report(session, args.out, clips, args.samples, args.seed,
                                    args.gt or ())
    write_manifest(args.out, "report", _hash_inputs(args.checkpoint, clips, args.samples),
                   args.seed, outputs, started)
    print(json.dumps(summary))
    return EXIT_OK


# ------------------------------------------------------------------ ablate

def ablation_cell(cfg, mode, value, cell_dir):
    """Fit one grid point; returns a result row (dict)."""
    import numpy as np

    from .camera import load_rig, save_rig
    from .inference import evaluate_fit
    from .likelihood import load_observations, save_observations
    from .metrics import spatial_errors_from_moments
    from .posterior import entropy, marginal_std
    from .synth import inject_noise, spread_cameras, subset_cameras

    cell = Path(cell_dir)
    cell.mkdir(parents=True, exist_ok=True)
    cfg = json.loads(json.dumps(cfg))
    if mode == "rank":
        cfg["rank"] = int(value)
    elif mode == "noise":
        paths = []
        for i, p in enumerate(cfg["trials"]):
            obs = inject_noise(load_observations(p), float(value), seed=[cfg["seed"], 7919, i])
            q = cell / f"trial{i}.csv"
            save_observations(obs, q)
            paths.append(str(q))
        cfg["trials"] = paths
    elif mode == "cameras":
        rig = load_rig(cfg["rig"])
        n = int(value)
        if not 1 <= n <= len(rig):
            raise ValueError(f"camera count {n} outside 1..{len(rig)}")
        names = spread_cameras(rig, n)
        paths = []
        for i, p in enumerate(cfg["trials"]):
            obs, sub = subset_cameras(load_observations(p), rig, names,
                                      require_joint_visibility=n >= 2)
            q = cell / f"trial{i}.csv"
            save_observations(obs, q)
            paths.append(str(q))
        save_rig(sub, cell / "rig.json")
        cfg["rig"] = str(cell / "rig.json")
        cfg["trials"] = paths
    session, code = run_fit(cfg, cell)
    if code != EXIT_OK:
        raise RuntimeError("fit diverged")
    moments = evaluate_fit(session)
    ent = float(np.mean(np.concatenate([entropy(m) for m in moments])))
    b = session.model.bounded
    sd = np.concatenate([marginal_std(m)[:, b] for m in moments])
    spatial = [spatial_errors_from_moments(session.model, session.beta, m, 100, cfg["seed"])
               for m in moments]
    psi = session.likelihood.psi
    return {"entropy": ent, "median_joint_std_deg": float(np.degrees(np.median(sd))),
            "psi0": float(psi[0]), "sigma_s0_px": float(session.likelihood.sigma(0.0)),
            "median_spatial_p50_mm": float(np.median(np.concatenate([s.p50_mm for s in spatial])))}


ABLATE_COLUMNS = ("mode", "value", "status", "entropy", "entropy_delta", "median_joint_std_deg",
                  "psi0", "sigma_s0_px", "median_spatial_p50_mm")


def cmd_ablate(args):
    started = time.time()
    grid = _floats(args.grid)
    if not grid:
        raise UsageError("--grid must list at least one value")
    cfg = _session_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    base = None
    for v in grid:
        tag = f"{args.mode}_{v:g}"
        try:
            res = ablation_cell(cfg, args.mode, v, out / tag)
            status = "ok"
        except Exception as exc:  # a failed cell is recorded, the sweep continues
            print(f"cell {tag} failed: {exc}", file=sys.stderr)
            res, status = {}, "failed"
        if status == "ok" and base is None:
            base = res["entropy"]
        delta = res["entropy"] - base if status == "ok" else float("nan")
        rows.append((args.mode, float(v), status, res.get("entropy", float("nan")), delta,
                     res.get("median_joint_std_deg", float("nan")), res.get("psi0", float("nan")),
                     res.get("sigma_s0_px", float("nan")),
                     res.get("median_spatial_p50_mm", float("nan"))))
    _csv(out / "ablation.csv", ABLATE_COLUMNS, rows)
    write_manifest(out, "ablate", _hash_inputs(args.session, cfg, args.mode, grid), cfg["seed"],
                   ["ablation.csv"] + [f"{args.mode}_{v:g}" for v in grid], started)
    for r in rows:
        print(",".join(str(x) for x in r))
    return EXIT_OK


# ------------------------------------------------------------------ entry point

def build_parser():
    p = argparse.ArgumentParser(prog="mocapvi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", help="synth config JSON (default: bundled demo)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--rank", type=int, default=5, help="rank written into session.json")
    s.add_argument("--family", default="exponential", help="family written into session.json")
    s.set_defaults(func=cmd_synth)

    def fit_overrides(q):
        q.add_argument("--rank", type=int)
        q.add_argument("--family", choices=("exponential", "half_cauchy", "half_normal"))
        q.add_argument("--steps", type=int)
        q.add_argument("--seed", type=int)

    f = sub.add_parser("fit", help="fit a session")
    f.add_argument("session")
    f.add_argument("--out", required=True)
    fit_overrides(f)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="summaries and calibration of a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("--out", required=True)
    r.add_argument("--ece-clips", default="0,1,2,5")
    r.add_argument("--samples", type=int, default=250)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--gt", nargs="*", help="ground-truth pose CSVs, one per trial")
    r.set_defaults(func=cmd_report)

    a = sub.add_parser("ablate", help="sweep noise level, camera count or rank")
    a.add_argument("session")
    a.add_argument("--out", required=True)
    a.add_argument("--mode", required=True, choices=("noise", "cameras", "rank"))
    a.add_argument("--grid", required=True, help="comma-separated values")
    fit_overrides(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    _limit_threads()
    args = build_parser().parse_args(argv)
    from .inference import FitDiverged
    from .kinematics import SchemaError

    try:
        return args.func(args)
    except (UsageError, SchemaError, ValueError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except FitDiverged as exc:  # pragma: no cover - handled inside run_fit
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

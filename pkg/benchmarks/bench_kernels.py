"""Compare the numba loop kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 7] [--quick]

Each kernel is timed with ``MOCAPVI_DISABLE_NUMBA`` set to 1 (numpy) and 0
(numba).  The numba timings exclude compilation: every kernel is called once
before timing.  A full ELBO value-and-gradient evaluation on a small session
is timed the same way, since that is what a fit step costs.
"""
import argparse
import os
import sys
import timeit

import numpy as np

from mocapvi import _accel, kernels
from mocapvi.camera import look_at
from mocapvi.kinematics import load_model


def cases(quick):
    rng = np.random.default_rng(0)
    m = load_model("humanoid-lite")
    arrays = m.arrays()
    n = 200 if quick else 800  # poses per call: timesteps x samples in a fit step
    theta = m.midpose + rng.normal(size=(n, m.n_dof)) * 0.3
    theta[:, 2] = 0.95
    beta = m.default_beta
    gsites = rng.normal(size=(n, m.n_sites, 3))
    cam = look_at("c", [3.5, -2.0, 1.5], [0, 0, 1], distortion=(-0.05, 0.01, 0, 0, 0))
    pts = rng.normal(size=(n * m.n_sites, 3)) * 0.4 + [0, 0, 1]
    proj = (pts, cam.rotation, cam.translation, np.array([cam.fx, cam.fy, cam.cx, cam.cy]),
            np.asarray(cam.distortion, dtype=float))
    guv = rng.normal(size=(pts.shape[0], 2))
    clouds = rng.normal(size=(50 if quick else 200, 250, 3))
    size = 200_000 if quick else 2_000_000  # roughly a default-width network
    x, g = rng.normal(size=size), rng.normal(size=size)
    mm, vv = np.zeros(size), np.zeros(size)

    return {
        "fk_forward": lambda: kernels.fk_forward(theta, beta, arrays),
        "fk_vjp": lambda: kernels.fk_vjp(theta, beta, arrays, gsites),
        "project_forward": lambda: kernels.project_forward(*proj),
        "project_vjp": lambda: kernels.project_vjp(*proj, guv),
        "geometric_median": lambda: kernels.geometric_median(clouds),
        "adam_update": lambda: kernels.adam_update(x, g, mm, vv, 1e-3, 0.8, 0.999, 1e-8,
                                                   1e-5, 10),
    }


def elbo_case():
    from mocapvi import inference as inf
    from mocapvi import synth

    ds = synth.generate(synth.make_config(duration_s=2.0, rig={"n_cameras": 4}))
    sch = inf.Schedule.from_overrides({"total_steps": 1000})
    fit = inf.init_session(ds.model, ds.rig, ds.trials, rank=5, schedule=sch)
    noise = inf.draw_noise(fit, 0)
    pv = fit.param_vector()
    return lambda: inf.elbo_value_and_grad(fit, noise, True, pv)


def time_it(fn, repeat):
    fn()  # warm up (and compile)
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--quick", action="store_true", help="smaller inputs")
    p.add_argument("--no-elbo", action="store_true", help="skip the end-to-end ELBO timing")
    args = p.parse_args(argv)
    if not _accel.has_numba:
        print("numba is not importable; nothing to compare", file=sys.stderr)
        return 1
    benches = cases(args.quick)
    if not args.no_elbo:
        benches["elbo_value_and_grad"] = elbo_case()
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    saved = os.environ.get("MOCAPVI_DISABLE_NUMBA")
    try:
        for name, fn in benches.items():
            os.environ["MOCAPVI_DISABLE_NUMBA"] = "1"
            t_np = time_it(fn, args.repeat)
            os.environ["MOCAPVI_DISABLE_NUMBA"] = "0"
            t_nb = time_it(fn, args.repeat)
            print(f"{name:<22}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")
    finally:
        if saved is None:
            os.environ.pop("MOCAPVI_DISABLE_NUMBA", None)
        else:
            os.environ["MOCAPVI_DISABLE_NUMBA"] = saved
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Smoke test for the gpe_py extension.

Build and copy the module next to this script first:

    cargo build -p gpe-py --release --features extension-module
    cp target/release/libgpe_py.so python/gpe_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import gpe_py


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok: {what}")


def main():
    traj = gpe_py.simulate("viscous_blob", 0.5, seed=1, frames=40, n_particles=30)
    check(traj.num_frames == 40, "simulate returns the requested frames")
    check(traj.kinds.count("m0") == 30, "simulate places the requested particles")
    again = gpe_py.simulate("viscous_blob", 0.5, seed=1, frames=40, n_particles=30)
    check(again.frame(39) == traj.frame(39), "simulation is deterministic")

    pts = [[0.0, 0.0], [0.05, 0.0], [0.5, 0.5]]
    check(gpe_py.radius_graph(pts, 0.1) == [(0, 1)], "radius graph on three points")

    counts = gpe_py.multiscale_counts(4, 4)
    check(counts["nodes"] == 25 + counts["virtual_nodes"], "multiscale node count")

    try:
        gpe_py.simulate("sand", 1.0)
        check(False, "unknown system raises")
    except ValueError as e:
        check("viscous_blob" in str(e), "unknown system raises ValueError listing systems")

    with tempfile.TemporaryDirectory() as tmp:
        manifest = gpe_py.generate_dataset(
            "viscous_blob", [0.5, 1.5], os.path.join(tmp, "data"),
            unseen_params=[1.0], frames=30, n_particles=30, seed=3,
        )
        out = gpe_py.train(manifest, os.path.join(tmp, "run"), steps=20, val_every=10,
                           hidden_dim=16, rounds=2, conserve_momentum=True)
        check(len(out["losses"]) == 20, "train runs the requested steps")
        check(all(math.isfinite(x) for x in out["losses"]), "train losses are finite")

        model = gpe_py.Model.load(out["checkpoint"])
        sample = gpe_py.simulate("viscous_blob", 1.0, seed=9, frames=30, n_particles=30)
        accel = model.predict(sample, model.history)
        check(len(accel) == sample.num_nodes, "predict returns one row per node")
        pred, report = model.rollout(sample, 10)
        check(report["steps"] == 10 and len(report["per_step_mse"]) == 10, "rollout report length")
        check(pred.num_frames == model.history + 1 + 10, "rollout trajectory length")
        agg = model.evaluate(manifest, "val_unseen", 10)
        check(math.isfinite(agg) and agg >= 0.0, "evaluate aggregate is finite")

    print("PASS")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""End-to-end smoke test of the dscreloc_py extension module.

Builds (or reuses) the cdylib, loads it as a Python module, and drives a tiny
synthetic scene through generation, fitting, and evaluation, plus a handful of
direct geometry checks.

Usage:
    cargo build -p dscreloc-py --release
    python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def locate_or_build_extension() -> Path:
    names = ["libdscreloc_py.so", "dscreloc_py.dll", "libdscreloc_py.dylib"]
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in names
    ]
    existing = [p for p in candidates if p.exists()]
    if not existing:
        print("extension not found; building with cargo ...")
        subprocess.run(
            ["cargo", "build", "--offline", "-p", "dscreloc-py", "--release"],
            cwd=REPO,
            check=True,
        )
        existing = [p for p in candidates if p.exists()]
    if not existing:
        raise SystemExit("could not find or build the dscreloc_py extension")
    return max(existing, key=lambda p: p.stat().st_mtime)


def import_extension(tmp: Path):
    lib = locate_or_build_extension()
    target = tmp / "dscreloc_py.so"
    shutil.copyfile(lib, target)
    sys.path.insert(0, str(tmp))
    import dscreloc_py

    return dscreloc_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main() -> None:
    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir)
        m = import_extension(tmp)
        print(f"dscreloc_py {m.__version__}")

        # Rotation round trip.
        aa = (0.3, -0.2, 0.5)
        mat = m.axis_angle_to_matrix(aa)
        back = m.matrix_to_axis_angle(mat)
        for got, want in zip(back, aa):
            approx(got, want)
        print("rotation round trip ok")

        # Back-projection against the pinhole model.
        k = m.Intrinsics(100.0, 100.0, 320.0, 240.0)
        q = m.back_project(420.0, 240.0, 3.0, k)
        approx(q[0], 3.0)
        approx(q[1], 0.0)
        approx(q[2], 3.0)
        print("back projection ok")

        # Pose recovery at the principal point with zero gaze.
        pose = m.pose_from_pixel([0.0] * 6, 320.0, 240.0, 2.5, k)
        approx(pose.position[2], 2.5)
        agg = m.aggregate_pose([pose, pose, pose], "median")
        approx(agg.position[2], 2.5)
        print("pose recovery ok")

        # Relative transform of a pure translation.
        a = m.Pose((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
        b = m.Pose((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
        _, translation = m.relative_transform(a, b)
        approx(translation[2], 1.0)
        print("relative transform ok")

        # Umeyama alignment recovers a known scale.
        src = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
        dst = [(2 * x, 2 * y, 2 * z) for x, y, z in src]
        scale, _, _ = m.umeyama_sim3(src, dst)
        approx(scale, 2.0)
        print("similarity alignment ok")

        # Tiny end-to-end run: generate, fit a few epochs, evaluate.
        data = tmp / "scene"
        m.generate_dataset(str(data), pattern="arc", frames=5, width=40, height=30, seed=11)
        assert (data / "frame-000004.color.png").exists()
        ckpt = tmp / "fit.ckpt"
        history = m.fit_dataset(str(data), str(data / "run.config"), str(ckpt), epochs=30)
        assert len(history) == 30 * 5
        assert all(math.isfinite(l) for l in history)
        first = sum(history[:10]) / 10
        last = sum(history[-10:]) / 10
        assert last < first, f"no descent: {first} -> {last}"
        pos_err, att_err = m.eval_pose(str(ckpt), str(data))
        depth = m.eval_depth(str(ckpt), str(data))
        print(
            f"fit: loss {first:.4f} -> {last:.4f}, "
            f"pose err {pos_err:.4f} / {att_err:.2f} deg, "
            f"abs_rel {depth['abs_rel']:.4f}"
        )
        assert math.isfinite(pos_err) and math.isfinite(att_err)
        assert 0.0 <= depth["delta1"] <= 1.0

    print("smoke test passed")


if __name__ == "__main__":
    main()

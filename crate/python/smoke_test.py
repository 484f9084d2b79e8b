#!/usr/bin/env python3
"""Smoke test for the pdsplit Python extension.

Builds the cdylib if needed, loads it straight from the cargo target
directory, and runs the denoising pipeline end to end.

    python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    so = REPO / "target" / "release" / "libpdsplit.so"
    if not so.exists():
        print("building the extension module (cargo build --release -p pdsplit-py)...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "pdsplit-py"],
            cwd=REPO,
            check=True,
        )
    staging = Path(tempfile.mkdtemp(prefix="pdsplit-smoke-"))
    shutil.copy(so, staging / "pdsplit.so")
    sys.path.insert(0, str(staging))
    import pdsplit

    return pdsplit


def main():
    pdsplit = load_module()
    print(f"loaded pdsplit {pdsplit.__version__}")

    rows = cols = 32
    clean = pdsplit.synthesize_image("affine", rows, cols, seed=1)
    assert len(clean) == rows * cols
    assert all(0.0 <= v <= 1.0 for v in clean)

    noisy = pdsplit.add_gaussian_noise(clean, rows, cols, sigma=0.08, seed=2)
    assert pdsplit.add_gaussian_noise(clean, rows, cols, sigma=0.08, seed=2) == noisy
    print("synthesis and seeded noise: ok")

    # adjoint identity <Lx, y> == <x, L*y> for the gradient operator
    import random

    rng = random.Random(7)
    x = [rng.uniform(-1, 1) for _ in range(rows * cols)]
    y = [rng.uniform(-1, 1) for _ in range(2 * rows * cols)]
    lx = pdsplit.apply_operator("gradient", x, rows, cols)
    lty = pdsplit.apply_operator_adjoint("gradient", y, rows, cols)
    lhs = sum(a * b for a, b in zip(lx, y))
    rhs = sum(a * b for a, b in zip(x, lty))
    assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs)), (lhs, rhs)
    print(f"gradient adjoint identity: ok (gap {abs(lhs - rhs):.2e})")

    est, bound = pdsplit.operator_norm("gradient", rows, cols)
    assert est <= bound + 1e-8, (est, bound)
    print(f"gradient norm estimate {est:.4f} within certified bound {bound:.4f}")

    # block soft-thresholding sanity: (3, 4) shrinks to (2.4, 3.2)
    shrunk = pdsplit.prox_group_norm([3.0, 4.0], [1.0, 1.0], 1.0, 1.0)
    assert max(abs(a - b) for a, b in zip(shrunk, [2.4, 3.2])) < 1e-12, shrunk
    print("group-norm prox: ok")

    for model in ("ic", "mic"):
        for solver in ("fb", "fbf"):
            out = pdsplit.denoise(
                noisy,
                rows,
                cols,
                model=model,
                solver=solver,
                max_iters=400,
                reference=clean,
            )
            gain = pdsplit.isnr(clean, noisy, out.pixels)
            assert gain > 0.0, (model, solver, gain)
            assert out.final_isnr is not None and math.isclose(
                out.final_isnr, gain, rel_tol=1e-12
            )
            print(
                f"denoise {model}/{solver}: ISNR {gain:+.2f} dB after "
                f"{out.iterations} iterations (residual {out.final_residual:.2e})"
            )

    print("smoke test passed")


if __name__ == "__main__":
    main()

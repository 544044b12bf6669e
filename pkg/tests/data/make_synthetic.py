"""Regenerate synthetic.csv, the data file used by the CLI tests.

Two outcome columns with a planted feature-dependent covariance: the
whitening factor is affine in the single driver column,

    diag(L)  = [0.55, -0.35] * driver + [1.10, 0.90]
    L[1, 0]  = 0.60 * driver + 0.40

and each outcome row solves L(x)^T y = z with z standard normal. The
driver is uniform on [-1, 1], so a clip transform leaves it unchanged.

Run from the repository root:

    python3 tests/data/make_synthetic.py
"""

import pathlib

import numpy as np

N_ROWS = 3000
DIAG_COEF = np.array([0.55, -0.35])
DIAG_OFFSET = np.array([1.10, 0.90])
LOWER_COEF = 0.60
LOWER_OFFSET = 0.40


def main() -> None:
    rng = np.random.default_rng(20240612)
    driver = rng.uniform(-1.0, 1.0, size=N_ROWS)
    lines = ["date,driver,ret_a,ret_b"]
    for i in range(N_ROWS):
        x = driver[i]
        factor = np.array([
            [DIAG_COEF[0] * x + DIAG_OFFSET[0], 0.0],
            [LOWER_COEF * x + LOWER_OFFSET, DIAG_COEF[1] * x + DIAG_OFFSET[1]],
        ])
        y = np.linalg.solve(factor.T, rng.normal(size=2))
        lines.append(f"{10001 + i},{x:.12g},{y[0]:.12g},{y[1]:.12g}")
    out = pathlib.Path(__file__).parent / "synthetic.csv"
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out} ({N_ROWS} rows)")


if __name__ == "__main__":
    main()

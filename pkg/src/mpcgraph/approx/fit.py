"""Offline fitting tool for the piecewise-polynomial activation fixtures.

Each activation f is split as ``f(x) = odd/even part + P(|x|)`` inside
``[-B, B]`` and replaced by its asymptote outside.  For every (op, degree)
the tool scans B, fits P by minimax (a small LP on a dense grid), and keeps
the B with the lowest error over the whole real line.

    python -m mpcgraph.approx.fit [output.json]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from ..opdefs import gelu, sigmoid

FIXTURE = Path(__file__).with_name("coefficients.json")
VERSION = 1
DEGREES = (2, 4)
B_GRID = np.round(np.arange(2.0, 8.01, 0.25), 2)


def silu(x):
    return x * sigmoid(x)


# residual fitted by P(|x|) on a >= 0, the full function, and its asymptote
TARGETS = {
    "gelu": (lambda a: gelu(a) - 0.5 * a, gelu, lambda x: np.maximum(x, 0.0)),
    "silu": (lambda a: silu(a) - 0.5 * a, silu, lambda x: np.maximum(x, 0.0)),
    "sigmoid": (lambda a: sigmoid(a) - 0.5, sigmoid, lambda x: (x >= 0).astype(float)),
}


def minimax_fit(a: np.ndarray, y: np.ndarray, degree: int) -> tuple[np.ndarray, float]:
    """Minimise max |sum_k c_k a^k - y| over the grid via linear programming."""
    V = np.vander(a, degree + 1, increasing=True)
    n = degree + 1
    # variables: c_0..c_d, t ; minimise t
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    ones = np.ones((len(a), 1))
    A = np.vstack([np.hstack([V, -ones]), np.hstack([-V, -ones])])
    b = np.concatenate([y, -y])
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if not res.success:
        raise RuntimeError(res.message)
    return res.x[:n], float(res.x[-1])


def evaluate(op: str, coeffs, bound: float, x: np.ndarray) -> np.ndarray:
    """Plaintext evaluation of the piecewise form, mirroring the emitted subgraph."""
    ax = np.abs(x)
    p = np.polynomial.polynomial.polyval(ax, coeffs)
    if op == "sigmoid":
        inner = 0.5 + np.where(x < 0, -1.0, 1.0) * p
    else:
        inner = 0.5 * x + p
    return np.where(ax >= bound, TARGETS[op][2](x), inner)


def fit_one(op: str, degree: int) -> dict:
    resid, full, _ = TARGETS[op]
    probe = np.linspace(-16.0, 16.0, 64001)
    best = None
    for bound in B_GRID:
        a = np.linspace(0.0, bound, 2001)
        coeffs, _ = minimax_fit(a, resid(a), degree)
        err = np.abs(evaluate(op, coeffs, bound, probe) - full(probe))
        inside = float(err[np.abs(probe) <= bound].max())
        overall = float(err.max())
        if best is None or overall < best["max_abs_error_global"]:
            best = {"op": op, "degree": degree, "interval": [-float(bound), float(bound)],
                    "basis": "abs_power", "coefficients": [float(c) for c in coeffs],
                    "max_abs_error": inside, "max_abs_error_global": overall}
    return best


def fit_all() -> dict:
    return {"version": VERSION,
            "entries": [fit_one(op, d) for op in TARGETS for d in DEGREES]}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0]) if argv else FIXTURE
    doc = fit_all()
    out.write_text(json.dumps(doc, indent=1) + "\n")
    for e in doc["entries"]:
        print(f"{e['op']:8s} degree {e['degree']}  B={e['interval'][1]:.2f}  "
              f"err[-B,B]={e['max_abs_error']:.5f}  err(all)={e['max_abs_error_global']:.5f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

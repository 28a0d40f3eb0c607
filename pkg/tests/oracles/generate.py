"""Regenerate the frozen oracle values used by the test suite.

Everything here is computed without importing the package: extended
precision least squares, an exact Kalman filter update, the closed-form
critically damped step response, and exhaustive DTW path enumeration.

    python tests/oracles/generate.py
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import mpmath as mp
import numpy as np

HERE = Path(__file__).parent
mp.mp.dps = 50


def gaussian_rows(centers, width, phases):
    return [[mp.e ** (-((mp.mpf(p) - c) ** 2) / (2 * width * width)) for c in centers] for p in phases]


def quintic_fit() -> dict:
    """Ridge fit of a smooth quintic with 11 unit-width bases, solved at 50 digits."""
    T, B, ridge = 400, 11, mp.mpf("1e-6")
    coeffs = [0.2, -1.0, 3.0, -2.5, 0.8, 0.1]  # y(p) = sum c_k p^k
    phases = [mp.mpf(i) / (T - 1) for i in range(T)]
    y = [sum(mp.mpf(c) * p**k for k, c in enumerate(coeffs)) for p in phases]
    centers = [mp.mpf(b) / (B - 1) for b in range(B)]
    width = mp.mpf(1) / (B - 1)
    rows = gaussian_rows(centers, width, phases)
    Phi = mp.matrix(rows)  # T x B
    gram = Phi.T * Phi + ridge * mp.eye(B)
    rhs = Phi.T * mp.matrix(y)
    w = mp.lu_solve(gram, rhs)
    fit = Phi * w
    rmse = mp.sqrt(sum((fit[i] - y[i]) ** 2 for i in range(T)) / T)
    return {
        "T": T, "B": B, "ridge": 1e-6, "coeffs": coeffs,
        "weights": [float(v) for v in w],
        "rmse": float(rmse),
        "range": float(max(y) - min(y)),
    }


def constant_lstsq() -> dict:
    """Best achievable RMSE for a constant 3.0 with 11 unit-width bases (no ridge)."""
    T, B = 1000, 11
    phases = [mp.mpf(i) / (T - 1) for i in range(T)]
    centers = [mp.mpf(b) / (B - 1) for b in range(B)]
    Phi = mp.matrix(gaussian_rows(centers, mp.mpf(1) / (B - 1), phases))
    y = mp.matrix([mp.mpf(3)] * T)
    w = mp.lu_solve(Phi.T * Phi, Phi.T * y)
    fit = Phi * w
    rmse = mp.sqrt(sum((fit[i] - 3) ** 2 for i in range(T)) / T)
    return {"T": T, "B": B, "rmse": float(rmse)}


def kalman_update() -> dict:
    """Exact linear-Gaussian posterior for weights observed through basis rows at phase 0.

    Three channels with two bases each (centers 0 and 1, width 1); at phase 0
    each channel reads ``w0 + exp(-1/2) w1`` of its own block.
    """
    rng = np.random.default_rng(20240917)
    n = 6
    m0 = rng.uniform(2.0, 4.0, size=n)
    L = rng.normal(0.0, 0.3, size=(n, n))
    P0 = L @ L.T + 0.05 * np.eye(n)
    r = np.array([0.04, 0.09, 0.02])
    h = [1.0, math.exp(-0.5)]
    H = np.zeros((3, n))
    for d in range(3):
        H[d, 2 * d:2 * d + 2] = h
    y = H @ m0 + np.array([0.5, -0.4, 0.3])
    # exact KF in extended precision
    Pm, Hm, Rm = mp.matrix(P0.tolist()), mp.matrix(H.tolist()), mp.diag(r.tolist())
    S = Hm * Pm * Hm.T + Rm
    K = Pm * Hm.T * mp.inverse(S)
    innov = mp.matrix(y.tolist()) - Hm * mp.matrix(m0.tolist())
    mean = mp.matrix(m0.tolist()) + K * innov
    cov = (mp.eye(n) - K * Hm) * Pm
    return {
        "m0": m0.tolist(), "P0": P0.tolist(), "r": r.tolist(), "H": H.tolist(), "y": y.tolist(),
        "mean": [float(v) for v in mean],
        "cov": [[float(cov[i, j]) for j in range(n)] for i in range(n)],
    }


def step_response() -> dict:
    """x(t) = s (1 - (1 + w t) exp(-w t)) for a critically damped axis starting at rest."""
    cases = []
    for M, K in ((5.0, 400.0), (5.0, 100.0), (0.2, 20.0)):
        w = math.sqrt(K / M)
        ts = [round(0.01 * i, 2) for i in range(301)]
        xs = [float(1 - (1 + w * mp.mpf(t)) * mp.e ** (-w * mp.mpf(t))) for t in ts]
        cases.append({"M": M, "K": K, "omega": w, "t": ts, "x": xs})
    return {"step": 1.0, "cases": cases}


def _paths(n: int, m: int):
    """All monotone warp paths from (0,0) to (n-1,m-1)."""
    def extend(path):
        i, j = path[-1]
        if (i, j) == (n - 1, m - 1):
            yield path
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                yield from extend(path + [(i + di, j + dj)])
    yield from extend([(0, 0)])


def dtw_cases() -> dict:
    rng = np.random.default_rng(7)
    cases = []
    for _ in range(200):
        n, m = (int(v) for v in rng.integers(1, 9, size=2))
        c = int(rng.integers(1, 4))
        ref = np.round(rng.normal(size=(m, c)), 6)
        qry = np.round(rng.normal(size=(n, c)), 6)
        best = math.inf
        for path in _paths(n, m):
            cost = sum(math.sqrt(sum((qry[i, k] - ref[j, k]) ** 2 for k in range(c))) for i, j in path)
            best = min(best, cost)
        diag = None
        if n == m:
            diag = sum(math.sqrt(sum((qry[i, k] - ref[i, k]) ** 2 for k in range(c))) for i in range(n))
        cases.append({"reference": ref.tolist(), "query": qry.tolist(), "cost": best, "diagonal": diag})
    return {"cases": cases}


def main() -> None:
    out = {
        "quintic_fit": quintic_fit(),
        "constant_lstsq": constant_lstsq(),
        "kalman_update": kalman_update(),
        "step_response": step_response(),
    }
    (HERE / "oracles.json").write_text(json.dumps(out, indent=1))
    (HERE / "dtw_cases.json").write_text(json.dumps(dtw_cases()))
    print("oracles written to", HERE)


if __name__ == "__main__":
    main()

"""Minimal float evaluators used for export verification.

`neutral_forward` reads the written neutral-format document;
`checkpoint_forward` evaluates straight from the upstream tensors. Both
implement the same math (silu base branch plus a B-spline branch over a
uniform extended knot grid) but share no code with each other beyond the
basis helper, and nothing with any downstream runtime.
"""

import numpy as np


def bspline_bases(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """(len(x), num_bases) basis matrix; last knot interval closed right."""
    x = np.asarray(x, dtype=np.float64)
    n0 = len(knots) - 1
    basis = np.zeros((x.shape[0], n0))
    for m in range(n0):
        if m == n0 - 1:
            basis[:, m] = (knots[m] <= x) & (x <= knots[m + 1])
        else:
            basis[:, m] = (knots[m] <= x) & (x < knots[m + 1])
    for d in range(1, degree + 1):
        nxt = np.zeros((x.shape[0], n0 - d))
        for m in range(n0 - d):
            left_span = knots[m + d] - knots[m]
            right_span = knots[m + d + 1] - knots[m + 1]
            term = 0.0
            if left_span > 0:
                term = (x - knots[m]) / left_span * basis[:, m]
            if right_span > 0:
                term = term + (knots[m + d + 1] - x) / right_span * basis[:, m + 1]
            nxt[:, m] = term
        basis = nxt
    return basis


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-np.clip(x, -500, 500)))


def neutral_forward(doc: dict, batch: np.ndarray) -> np.ndarray:
    """Forward pass reading the neutral model document (parsed JSON)."""
    h = np.asarray(batch, dtype=np.float64)
    for layer in doc["layers"]:
        n_in, n_out = layer["n_in"], layer["n_out"]
        grid = layer["grid"]
        g, k = grid["G"], grid["k"]
        width = (grid["domain_max"] - grid["domain_min"]) / g
        knots = grid["domain_min"] + width * np.arange(-k, g + k + 1, dtype=np.float64)
        alpha = np.asarray(layer["alpha"], dtype=np.float64).reshape(n_in, n_out)
        beta = np.asarray(layer["beta"], dtype=np.float64).reshape(n_in, n_out)
        coeffs = np.asarray(layer["coeffs"], dtype=np.float64).reshape(n_in, n_out, g + k)
        out = np.zeros((h.shape[0], n_out))
        for i in range(n_in):
            bases = bspline_bases(h[:, i], knots, k)
            spline = bases @ coeffs[i].T  # (N, n_out)
            out += alpha[i] * _silu(h[:, i])[:, None] + beta[i] * spline
        h = out
    return 1.0 / (1.0 + np.exp(-h[:, 0]))


def checkpoint_forward(layers: list[dict], batch: np.ndarray) -> np.ndarray:
    """Forward pass straight from upstream layer tensors (numpy float64)."""
    h = np.asarray(batch, dtype=np.float64)
    for layer in layers:
        knots = layer["grid"]
        coef = layer["coef"]
        alpha = layer["scale_base"]
        beta = layer["scale_sp"]
        n_in, n_out, _ = coef.shape
        out = np.zeros((h.shape[0], n_out))
        for i in range(n_in):
            bases = bspline_bases(h[:, i], knots, layer["degree"])
            spline = bases @ coef[i].T
            out += alpha[i] * _silu(h[:, i])[:, None] + beta[i] * spline
        h = out
    return 1.0 / (1.0 + np.exp(-h[:, 0]))

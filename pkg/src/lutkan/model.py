"""Float KAN model: domain types, exact B-spline forward pass, file format.

A model is a stack of layers; every layer edge (i, j) carries a learnable
univariate function

    phi(x) = base_scale * silu(x) + spline_scale * spline(x)

where the spline is a degree-k B-spline over a shared per-layer knot grid.
This module is the semantic reference for the whole package: the compiler
samples `eval_spline`, and the LUT runtime is validated against
`forward_reference`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .errors import (
    InputDomainError,
    InputShapeError,
    MalformedModelError,
    UnsupportedVersionError,
)

MODEL_FORMAT_VERSION = 1


def segment_boundaries(domain_min: float, domain_max: float, num_intervals: int) -> np.ndarray:
    """Boundaries of the uniform interior intervals, endpoints pinned exactly.

    Every component (knot construction, compiler, runtime) derives interval
    boundaries through this one function so that float rounding cannot make
    them disagree about where a segment starts.
    """
    width = (domain_max - domain_min) / num_intervals
    bounds = domain_min + width * np.arange(num_intervals + 1, dtype=np.float64)
    bounds[0] = domain_min
    bounds[-1] = domain_max
    return bounds


@dataclass(frozen=True)
class KnotGrid:
    """Uniform knot vector with a degree-fold extension on each side.

    The interior of ``[domain_min, domain_max]`` is split into
    ``num_intervals`` equal intervals; ``degree`` extra uniformly spaced
    knots continue the grid outward on both sides, giving
    ``num_intervals + 2*degree + 1`` knots in total.
    """

    domain_min: float
    domain_max: float
    num_intervals: int
    degree: int
    knots: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not (math.isfinite(self.domain_min) and math.isfinite(self.domain_max)):
            raise MalformedModelError("grid domain bounds must be finite")
        if self.domain_max <= self.domain_min:
            raise MalformedModelError(
                f"grid requires domain_min < domain_max, got [{self.domain_min}, {self.domain_max}]"
            )
        if self.num_intervals < 1:
            raise MalformedModelError(f"grid needs at least 1 interval, got {self.num_intervals}")
        if self.degree < 0:
            raise MalformedModelError(f"grid degree must be >= 0, got {self.degree}")
        if self.knots is None:
            object.__setattr__(self, "knots", self._build_knots())
        else:
            object.__setattr__(self, "knots", np.asarray(self.knots, dtype=np.float64))
        self.knots.setflags(write=False)
        self._validate_knots()

    def _build_knots(self) -> np.ndarray:
        g, k = self.num_intervals, self.degree
        width = (self.domain_max - self.domain_min) / g
        interior = segment_boundaries(self.domain_min, self.domain_max, g)
        below = self.domain_min - width * np.arange(k, 0, -1, dtype=np.float64)
        above = self.domain_max + width * np.arange(1, k + 1, dtype=np.float64)
        return np.concatenate([below, interior, above])

    def _validate_knots(self):
        g, k, t = self.num_intervals, self.degree, self.knots
        if t.shape != (g + 2 * k + 1,):
            raise MalformedModelError(
                f"grid expects {g + 2 * k + 1} knots, got {t.shape[0]}"
            )
        if not np.all(np.isfinite(t)):
            raise MalformedModelError("grid knots must be finite")
        if np.any(np.diff(t) < 0):
            raise MalformedModelError("grid knots must be non-decreasing")
        if np.any(np.diff(t[k : k + g + 1]) <= 0):
            raise MalformedModelError("interior knots must be strictly increasing")
        scale = max(abs(self.domain_min), abs(self.domain_max), 1.0)
        if abs(t[k] - self.domain_min) > 1e-12 * scale or abs(t[k + g] - self.domain_max) > 1e-12 * scale:
            raise MalformedModelError("grid knots do not align with the declared domain bounds")

    @property
    def num_bases(self) -> int:
        """Number of coefficient-aligned basis functions (intervals + degree)."""
        return self.num_intervals + self.degree

    def interior_boundaries(self) -> np.ndarray:
        """The num_intervals + 1 interval boundaries inside the domain."""
        k = self.degree
        return self.knots[k : k + self.num_intervals + 1]


@dataclass(frozen=True)
class EdgeFunction:
    """One learnable univariate edge function: scales plus spline coefficients."""

    base_scale: float
    spline_scale: float
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", np.asarray(self.coefficients, dtype=np.float64)
        )
        vals = [self.base_scale, self.spline_scale]
        if not all(math.isfinite(v) for v in vals) or not np.all(np.isfinite(self.coefficients)):
            raise MalformedModelError("edge function values must be finite")


@dataclass(frozen=True)
class KanLayer:
    """One KAN layer: a shared knot grid and an n_in x n_out matrix of edges.

    Edge parameters are stored as dense arrays (``alpha``/``beta`` of shape
    ``(n_in, n_out)``, ``coeffs`` of shape ``(n_in, n_out, num_bases)``) so
    the forward pass and the compiler can work on whole layers at once;
    `edge` exposes the per-edge view.
    """

    n_in: int
    n_out: int
    grid: KnotGrid
    alpha: np.ndarray
    beta: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise MalformedModelError("layer dimensions must be positive")
        for name in ("alpha", "beta", "coeffs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.alpha.shape != (self.n_in, self.n_out):
            raise MalformedModelError(
                f"alpha shape {self.alpha.shape} != ({self.n_in}, {self.n_out})"
            )
        if self.beta.shape != (self.n_in, self.n_out):
            raise MalformedModelError(
                f"beta shape {self.beta.shape} != ({self.n_in}, {self.n_out})"
            )
        expected = (self.n_in, self.n_out, self.grid.num_bases)
        if self.coeffs.shape != expected:
            raise MalformedModelError(f"coeffs shape {self.coeffs.shape} != {expected}")
        for name in ("alpha", "beta", "coeffs"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise MalformedModelError(f"layer {name} contains non-finite values")
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, n_in: int, n_out: int, grid: KnotGrid, edges) -> "KanLayer":
        """Build a layer from an (i, j)-indexed nested sequence of EdgeFunction."""
        if len(edges) != n_in or any(len(row) != n_out for row in edges):
            raise MalformedModelError(f"expected exactly {n_in} x {n_out} edges")
        alpha = np.array([[e.base_scale for e in row] for row in edges])
        beta = np.array([[e.spline_scale for e in row] for row in edges])
        coeffs = np.array([[e.coefficients for e in row] for row in edges])
        return cls(n_in, n_out, grid, alpha, beta, coeffs)

    def edge(self, i: int, j: int) -> EdgeFunction:
        return EdgeFunction(
            base_scale=float(self.alpha[i, j]),
            spline_scale=float(self.beta[i, j]),
            coefficients=self.coeffs[i, j],
        )

    def iter_edges(self) -> Iterator[tuple[int, int, EdgeFunction]]:
        for i in range(self.n_in):
            for j in range(self.n_out):
                yield i, j, self.edge(i, j)


@dataclass(frozen=True)
class ModelSpec:
    """A full float KAN model: chained layers plus the decision threshold."""

    layers: tuple[KanLayer, ...]
    feature_count: int
    threshold: float = 0.5
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise MalformedModelError("model needs at least one layer")
        if self.layers[0].n_in != self.feature_count:
            raise MalformedModelError(
                f"layers[0].n_in={self.layers[0].n_in} != feature_count={self.feature_count}"
            )
        for idx in range(len(self.layers) - 1):
            if self.layers[idx].n_out != self.layers[idx + 1].n_in:
                raise MalformedModelError(
                    f"layers[{idx}].n_out does not chain into layers[{idx + 1}].n_in"
                )
        if self.layers[-1].n_out != 1:
            raise MalformedModelError("last layer must have n_out == 1 for binary scoring")
        if not (0.0 < self.threshold < 1.0):
            raise MalformedModelError(f"threshold must lie in (0, 1), got {self.threshold}")

    @property
    def topology(self) -> tuple[int, ...]:
        return (self.feature_count,) + tuple(layer.n_out for layer in self.layers)


def silu(x):
    """Base branch nonlinearity b(x) = x * sigmoid(x), overflow-safe."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = x[pos] / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = x[~pos] * ex / (1.0 + ex)
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bspline_basis_batch(x: np.ndarray, grid: KnotGrid) -> np.ndarray:
    """All coefficient-aligned basis values for a 1-D array of points.

    Runs the Cox-de Boor recursion iteratively over the full knot vector:
    degree-0 indicators first, then one sweep per degree. 0/0 terms resolve
    to 0. The very last knot interval is treated closed on the right so the
    basis still sums to 1 at x == domain_max (and, for degree 0, so the
    final indicator covers its right endpoint).
    """
    t = grid.knots
    x = np.asarray(x, dtype=np.float64)
    n0 = t.shape[0] - 1
    basis = np.empty((x.shape[0], n0), dtype=np.float64)
    for m in range(n0):
        basis[:, m] = (t[m] <= x) & (x < t[m + 1])
    basis[:, n0 - 1] = np.where(x == t[n0], 1.0, basis[:, n0 - 1])
    for d in range(1, grid.degree + 1):
        prev = basis
        basis = np.empty((x.shape[0], n0 - d), dtype=np.float64)
        for m in range(n0 - d):
            span_l = t[m + d] - t[m]
            span_r = t[m + d + 1] - t[m + 1]
            left = (x - t[m]) / span_l * prev[:, m] if span_l > 0 else 0.0
            right = (t[m + d + 1] - x) / span_r * prev[:, m + 1] if span_r > 0 else 0.0
            basis[:, m] = left + right
    return basis


def bspline_basis(x: float, grid: KnotGrid) -> np.ndarray:
    """Basis vector B_{m,k}(x) for one point; length grid.num_bases."""
    if not math.isfinite(x):
        raise InputDomainError(f"basis evaluation requires finite x, got {x}")
    return bspline_basis_batch(np.array([x]), grid)[0]


def eval_spline(x: float, grid: KnotGrid, coeffs: np.ndarray) -> float:
    """Spline value sum_m c_m * B_{m,k}(x)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (grid.num_bases,):
        raise MalformedModelError(
            f"expected {grid.num_bases} coefficients, got {coeffs.shape}"
        )
    return float(np.dot(coeffs, bspline_basis(x, grid)))


def eval_phi(x: float, edge: EdgeFunction, grid: KnotGrid) -> float:
    """Full edge function: base_scale * silu(x) + spline_scale * spline(x)."""
    base = float(silu(np.array([x]))[0])
    return edge.base_scale * base + edge.spline_scale * eval_spline(x, grid, edge.coefficients)


def validate_batch(batch, feature_count: int) -> np.ndarray:
    """Coerce a batch to a float64 N x d matrix and check shape/finiteness."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 2:
        raise InputShapeError(f"batch must be 2-D (N x d), got ndim={arr.ndim}")
    if arr.shape[1] != feature_count:
        raise InputShapeError(
            f"batch width {arr.shape[1]} != model feature count {feature_count}"
        )
    if not np.all(np.isfinite(arr)):
        raise InputDomainError("batch contains non-finite values")
    return arr


_FORWARD_CHUNK = 4096  # rows per basis-matrix allocation; keeps memory bounded


def layer_forward(layer: KanLayer, h: np.ndarray) -> np.ndarray:
    """One layer of the exact forward pass: h_j = sum_i phi_ij(h_i)."""
    bases = bspline_basis_batch(h.ravel(), layer.grid)
    bases = bases.reshape(h.shape[0], layer.n_in, layer.grid.num_bases)
    scaled = layer.beta[:, :, None] * layer.coeffs
    spline_part = np.einsum("nif,ijf->nj", bases, scaled)
    base_part = silu(h) @ layer.alpha
    return base_part + spline_part


def forward_reference(model: ModelSpec, batch) -> np.ndarray:
    """Exact forward pass: per-layer phi sums, then a logistic output.

    This is the package's semantic reference. It favours a direct expression
    of the math (full-basis evaluation, explicit contraction) over raw
    speed; the LUT runtime is the fast path.
    """
    x = validate_batch(batch, model.feature_count)
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, _FORWARD_CHUNK):
        h = x[start : start + _FORWARD_CHUNK]
        for layer in model.layers:
            h = layer_forward(layer, h)
        out[start : start + _FORWARD_CHUNK] = sigmoid(h[:, 0])
    return out


# ---------------------------------------------------------------------------
# Neutral model file format (JSON, format_version 1)
# ---------------------------------------------------------------------------

def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise MalformedModelError(f"missing required key: {path}{key}")
    return obj[key]


def model_to_dict(model: ModelSpec) -> dict:
    layers = []
    for layer in model.layers:
        g = layer.grid
        layers.append(
            {
                "n_in": layer.n_in,
                "n_out": layer.n_out,
                "grid": {
                    "domain_min": g.domain_min,
                    "domain_max": g.domain_max,
                    "G": g.num_intervals,
                    "k": g.degree,
                },
                "alpha": layer.alpha.ravel().tolist(),
                "beta": layer.beta.ravel().tolist(),
                "coeffs": layer.coeffs.reshape(layer.n_in * layer.n_out, -1).tolist(),
            }
        )
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_count": model.feature_count,
        "threshold": model.threshold,
        "metadata": dict(model.metadata),
        "layers": layers,
    }


def model_from_dict(doc: dict) -> ModelSpec:
    if not isinstance(doc, dict):
        raise MalformedModelError("model document must be a JSON object")
    version = _require(doc, "format_version", "")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported model format_version {version} (expected {MODEL_FORMAT_VERSION})"
        )
    feature_count = _require(doc, "feature_count", "")
    threshold = _require(doc, "threshold", "")
    raw_layers = _require(doc, "layers", "")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise MalformedModelError("layers must be a non-empty array")
    layers = []
    for idx, raw in enumerate(raw_layers):
        path = f"layers[{idx}]."
        n_in = _require(raw, "n_in", path)
        n_out = _require(raw, "n_out", path)
        raw_grid = _require(raw, "grid", path)
        gpath = path + "grid."
        try:
            grid = KnotGrid(
                domain_min=float(_require(raw_grid, "domain_min", gpath)),
                domain_max=float(_require(raw_grid, "domain_max", gpath)),
                num_intervals=int(_require(raw_grid, "G", gpath)),
                degree=int(_require(raw_grid, "k", gpath)),
            )
        except (TypeError, ValueError) as exc:
            raise MalformedModelError(f"invalid grid at {path}grid: {exc}") from exc
        alpha = np.asarray(_require(raw, "alpha", path), dtype=np.float64)
        beta = np.asarray(_require(raw, "beta", path), dtype=np.float64)
        coeffs = np.asarray(_require(raw, "coeffs", path), dtype=np.float64)
        n_edges = int(n_in) * int(n_out)
        if alpha.shape != (n_edges,):
            raise MalformedModelError(f"{path}alpha must hold {n_edges} values")
        if beta.shape != (n_edges,):
            raise MalformedModelError(f"{path}beta must hold {n_edges} values")
        if coeffs.shape != (n_edges, grid.num_bases):
            raise MalformedModelError(
                f"{path}coeffs must be {n_edges} x {grid.num_bases}, got {coeffs.shape}"
            )
        try:
            layers.append(
                KanLayer(
                    n_in=int(n_in),
                    n_out=int(n_out),
                    grid=grid,
                    alpha=alpha.reshape(int(n_in), int(n_out)),
                    beta=beta.reshape(int(n_in), int(n_out)),
                    coeffs=coeffs.reshape(int(n_in), int(n_out), grid.num_bases),
                )
            )
        except MalformedModelError as exc:
            raise MalformedModelError(f"{path[:-1]}: {exc}") from exc
    try:
        return ModelSpec(
            layers=tuple(layers),
            feature_count=int(feature_count),
            threshold=float(threshold),
            metadata=doc.get("metadata", {}),
        )
    except MalformedModelError:
        raise


def save_model(model: ModelSpec, path) -> None:
    """Write the neutral JSON model file (binary64 values survive losslessly)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedModelError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(doc)

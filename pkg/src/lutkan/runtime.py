"""Table-driven forward pass: segment lookup, interpolation, OOB handling.

`lut_eval` defines the per-edge semantics in plain scalar arithmetic; the
batched `forward_lut` runs the same arithmetic through a packed kernel.
Out-of-bounds inputs are never an error: the configured policy applies at
every layer, because hidden activations can leave the next layer's trained
domain just like raw features can.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .compiler import CompiledModel, CompileConfig, SegmentTable
from .errors import ConfigError, InputDomainError, InputShapeError, MalformedModelError
from .model import segment_boundaries

OOB = -1

KBAT_MAGIC = b"KBAT"
KBAT_VERSION = 1


@dataclass
class InferenceStats:
    """Counters from one forward_lut call (OOB counted on input features only;
    clipped counted wherever the clip_x policy fired, any layer)."""

    total_inputs: int = 0
    oob_events: int = 0
    clipped_events: int = 0

    def __add__(self, other: "InferenceStats") -> "InferenceStats":
        return InferenceStats(
            self.total_inputs + other.total_inputs,
            self.oob_events + other.oob_events,
            self.clipped_events + other.clipped_events,
        )


def _silu_scalar(x: float) -> float:
    if x >= 0.0:
        return x / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return x * ex / (1.0 + ex)


def locate_segment(x: float, domain_min: float, domain_max: float,
                   num_intervals: int, boundary_mode: str) -> int:
    """Map a point to its segment index, or OOB (-1).

    Segments are left-closed. ``closed`` mode maps x == domain_max to the
    last segment; ``half_open`` treats it as out of bounds. Points below
    domain_min or above domain_max are OOB in both modes.
    """
    if boundary_mode not in ("closed", "half_open"):
        raise ConfigError(f"unknown boundary_mode {boundary_mode!r}")
    bounds = segment_boundaries(domain_min, domain_max, num_intervals)
    return _locate(x, bounds, num_intervals, boundary_mode == "closed")


def _locate(x: float, bounds: np.ndarray, g: int, closed: bool) -> int:
    b_lo = bounds[0]
    b_hi = bounds[g]
    if x < b_lo or x > b_hi:
        return OOB
    if x == b_hi:
        return g - 1 if closed else OOB
    width = (b_hi - b_lo) / g
    seg = int((x - b_lo) / width)
    seg = min(max(seg, 0), g - 1)
    while seg > 0 and x < bounds[seg]:
        seg -= 1
    while seg < g - 1 and x >= bounds[seg + 1]:
        seg += 1
    return seg


def _interp_table(table: SegmentTable, x_eval: float) -> float:
    lut_size = table.values.shape[0]
    delta = (table.b - table.a) / (lut_size - 1)
    u = (x_eval - table.a) / delta
    if u < 0.0:
        u = 0.0
    q = int(u)
    if q > lut_size - 2:
        q = lut_size - 2
    lam = u - q
    lam = min(max(lam, 0.0), 1.0)
    s = np.float64(np.float32(table.scale))
    if table.v_min is None:
        v0 = s * np.float64(table.values[q])
        v1 = s * np.float64(table.values[q + 1])
    else:
        vm = np.float64(np.float32(table.v_min))
        v0 = vm + s * np.float64(table.values[q])
        v1 = vm + s * np.float64(table.values[q + 1])
    return (1.0 - lam) * v0 + lam * v1


def lut_eval(x: float, tables: list[SegmentTable], alpha: float, beta: float,
             config: CompileConfig) -> float:
    """Evaluate one compiled edge at one point (the semantic reference).

    In range: alpha * silu(x) + beta * lerp(table). OOB with clip_x:
    the table is read at x clipped to the nearest bound while the base
    branch keeps the original x. OOB with zero_spline: only the base
    branch survives. Under full_phi the table already folds the whole
    edge function, so in-range (and clipped) reads return the table value
    alone, and zero_spline still falls back to the analytic base.
    """
    g = len(tables)
    bounds = np.empty(g + 1, dtype=np.float64)
    for u, t in enumerate(tables):
        bounds[u] = t.a
    bounds[g] = tables[-1].b
    seg = _locate(x, bounds, g, config.boundary_mode == "closed")
    base = np.float64(np.float32(alpha)) * _silu_scalar(x)
    if seg == OOB:
        if config.oob_policy == "zero_spline":
            return float(base)
        x_eval = bounds[0] if x < bounds[0] else bounds[g]
        seg = 0 if x < bounds[0] else g - 1
    else:
        x_eval = x
    interp = _interp_table(tables[seg], x_eval)
    if config.value_repr == "full_phi":
        return float(interp)
    return float(base + np.float64(np.float32(beta)) * interp)


def predict(probabilities, threshold: float) -> np.ndarray:
    """Threshold scores into {0, 1} labels; label 1 iff p >= threshold."""
    if not (0.0 < threshold < 1.0):
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold}")
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size and (np.min(p) < 0.0 or np.max(p) > 1.0 or not np.all(np.isfinite(p))):
        raise InputDomainError("probabilities must lie in [0, 1]")
    return (p >= threshold).astype(np.int64)


class _RuntimePack:
    """Flat, kernel-ready view of a CompiledModel (built once, cached)."""

    def __init__(self, compiled: CompiledModel):
        cfg = compiled.config
        layers = compiled.layers
        n_layers = len(layers)
        self.n_in = np.array([l.n_in for l in layers], dtype=np.int64)
        self.n_out = np.array([l.n_out for l in layers], dtype=np.int64)
        self.g_arr = np.array([l.num_intervals for l in layers], dtype=np.int64)
        self.lut_size = cfg.lut_size
        self.asym = cfg.quant_scheme == "asym_uint8"
        self.closed = cfg.boundary_mode == "closed"
        self.clip_oob = cfg.oob_policy == "clip_x"
        self.full_phi = cfg.value_repr == "full_phi"
        self.max_width = int(max(max(self.n_in), max(self.n_out)))

        bounds_parts, self.bounds_off = [], np.zeros(n_layers, dtype=np.int64)
        val_parts, self.val_off = [], np.zeros(n_layers, dtype=np.int64)
        scale_parts, self.seg_off = [], np.zeros(n_layers, dtype=np.int64)
        vmin_parts = []
        alpha_parts, self.edge_off = [], np.zeros(n_layers, dtype=np.int64)
        beta_parts = []
        b_pos = v_pos = s_pos = e_pos = 0
        for idx, layer in enumerate(layers):
            self.bounds_off[idx] = b_pos
            self.val_off[idx] = v_pos
            self.seg_off[idx] = s_pos
            self.edge_off[idx] = e_pos
            bounds_parts.append(layer.boundaries())
            val_parts.append(layer.values.reshape(-1))
            scale_parts.append(layer.scales.reshape(-1))
            if layer.v_mins is not None:
                vmin_parts.append(layer.v_mins.reshape(-1))
            else:
                vmin_parts.append(np.zeros(layer.num_edges * layer.num_intervals, dtype=np.float32))
            alpha_parts.append(layer.alpha.reshape(-1))
            beta_parts.append(layer.beta.reshape(-1))
            b_pos += layer.num_intervals + 1
            v_pos += layer.num_edges * layer.num_intervals * cfg.lut_size
            s_pos += layer.num_edges * layer.num_intervals
            e_pos += layer.num_edges
        self.bounds = np.concatenate(bounds_parts)
        self.values = np.concatenate(val_parts)
        # per-segment / per-edge parameters are binary32 in the format;
        # widening them to float64 here changes no value, only saves the
        # kernel one conversion per lookup (tables themselves stay 8-bit)
        self.scales = np.concatenate(scale_parts).astype(np.float64)
        self.vmins = np.concatenate(vmin_parts).astype(np.float64)
        self.alpha = np.concatenate(alpha_parts).astype(np.float64)
        self.beta = np.concatenate(beta_parts).astype(np.float64)
        self.n_layers = n_layers


def _get_pack(compiled: CompiledModel) -> _RuntimePack:
    pack = getattr(compiled, "_pack", None)
    if pack is None:
        pack = _RuntimePack(compiled)
        compiled._pack = pack
    return pack


_LUT_CHUNK = 8192        # rows per kernel invocation; bounds the activation buffers
_SINGLE_THRESHOLD = 32   # below this, skip the batch scratch buffers


def forward_lut(compiled: CompiledModel, batch) -> tuple[np.ndarray, InferenceStats]:
    """Batched LUT forward pass; returns probabilities and per-call stats.

    Tiny batches take a sample-major kernel, larger ones a feature-major
    kernel; the two are bit-identical (same scalar expressions, same
    accumulation order over input features).
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise InputShapeError(f"batch must be 2-D (N x d), got ndim={x.ndim}")
    if x.shape[1] != compiled.feature_count:
        raise InputShapeError(
            f"batch width {x.shape[1]} != compiled feature count {compiled.feature_count}"
        )
    if not np.all(np.isfinite(x)):
        raise InputDomainError("batch contains non-finite values")
    pack = _get_pack(compiled)
    x = np.ascontiguousarray(x)
    out = np.empty(x.shape[0], dtype=np.float64)
    counters = np.zeros(3, dtype=np.int64)
    kernel = (_kernels.forward_kernel_single if x.shape[0] < _SINGLE_THRESHOLD
              else _kernels.forward_kernel)
    for start in range(0, max(x.shape[0], 1), _LUT_CHUNK):
        chunk = x[start : start + _LUT_CHUNK]
        kernel(
            chunk, pack.n_layers, pack.n_in, pack.n_out, pack.g_arr, pack.lut_size,
            pack.bounds, pack.bounds_off, pack.values, pack.val_off,
            pack.scales, pack.vmins, pack.seg_off, pack.alpha, pack.beta,
            pack.edge_off, pack.asym, pack.closed, pack.clip_oob, pack.full_phi,
            pack.max_width, out[start : start + _LUT_CHUNK], counters,
        )
    stats = InferenceStats(
        total_inputs=int(counters[0]),
        oob_events=int(counters[1]),
        clipped_events=int(counters[2]),
    )
    return out, stats


def warm_up(compiled: CompiledModel) -> None:
    """Trigger kernel compilation and pack construction outside timed regions."""
    probe = np.zeros((1, compiled.feature_count), dtype=np.float64)
    forward_lut(compiled, probe)


def get_thread_cap() -> int:
    """Parse the LUTKAN_THREADS env var (backend parallelism cap, default 1)."""
    raw = os.environ.get("LUTKAN_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LUTKAN_THREADS must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ConfigError(f"LUTKAN_THREADS must be >= 1, got {cap}")
    return cap


def apply_thread_cap(cap: int | None = None) -> int:
    """Clamp backend thread pools to the cap. Current kernels are sequential,
    so this is a guard rail rather than a parallelism switch."""
    if cap is None:
        cap = get_thread_cap()
    if _kernels.HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
    return cap


# ---------------------------------------------------------------------------
# Batch input files: CSV (header + rows) or raw KBAT binary
# ---------------------------------------------------------------------------

def save_batch_kbat(batch: np.ndarray, path) -> None:
    x = np.asarray(batch, dtype=np.float32)
    if x.ndim != 2:
        raise InputShapeError("KBAT batches must be 2-D")
    with open(path, "wb") as fh:
        fh.write(KBAT_MAGIC)
        fh.write(struct.pack("<III", KBAT_VERSION, x.shape[0], x.shape[1]))
        fh.write(np.ascontiguousarray(x).tobytes())


def load_batch_kbat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != KBAT_MAGIC:
        raise MalformedModelError("not a KBAT file (bad magic)")
    version, n, d = struct.unpack_from("<III", data, 4)
    if version != KBAT_VERSION:
        raise MalformedModelError(f"unsupported KBAT version {version}")
    expected = 16 + 4 * n * d
    if len(data) != expected:
        raise MalformedModelError(
            f"KBAT payload size mismatch: expected {expected} bytes, got {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4", count=n * d, offset=16).reshape(n, d).astype(np.float64)


def load_batch(path) -> np.ndarray:
    """Read a feature batch from a KBAT binary or a headed CSV file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == KBAT_MAGIC:
        return load_batch_kbat(path)
    from .pipeline import read_feature_csv

    return read_feature_csv(path)

"""Compile the spline branch of every edge into quantized per-segment tables.

Each edge contributes G tables (one per interior knot interval) of L values.
Tables are quantized to 8 bits per entry; quantization parameters are kept
at binary32 precision, which is also how the packed "KLUT" file stores them.
To make the per-entry error bound |dequant(q) - v| <= s/2 hold exactly for
the bytes on disk, the compiler quantizes against the binary32-rounded
parameters (scale rounded up, offset rounded down, so nothing saturates);
the standalone quantize_* operations work in float64.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CompileError, ConfigError, MalformedModelError, UnsupportedVersionError
from .model import ModelSpec, bspline_basis_batch, segment_boundaries, silu

COMPILED_FORMAT_VERSION = 1
MAGIC = b"KLUT"

QUANT_SCHEMES = ("sym_int8", "asym_uint8")
BOUNDARY_MODES = ("closed", "half_open")
OOB_POLICIES = ("clip_x", "zero_spline")
VALUE_REPRS = ("spline_component", "full_phi")

LUT_SIZE_MIN = 2
LUT_SIZE_MAX = 65535

HEADER_BYTES = 14        # magic + version + 4 enum bytes + L + layer_count
LAYER_HEADER_BYTES = 28  # n_in + n_out + domain bounds + G + k
TRAILER_BYTES = 8        # binary64 decision threshold


@dataclass(frozen=True)
class CompileConfig:
    """All knobs of the compilation pass (defaults match the recommended setup)."""

    lut_size: int = 8
    quant_scheme: str = "sym_int8"
    boundary_mode: str = "half_open"
    oob_policy: str = "zero_spline"
    value_repr: str = "spline_component"

    def __post_init__(self):
        if not (LUT_SIZE_MIN <= int(self.lut_size) <= LUT_SIZE_MAX):
            raise ConfigError(
                f"lut_size must lie in [{LUT_SIZE_MIN}, {LUT_SIZE_MAX}], got {self.lut_size}"
            )
        for name, value, allowed in (
            ("quant_scheme", self.quant_scheme, QUANT_SCHEMES),
            ("boundary_mode", self.boundary_mode, BOUNDARY_MODES),
            ("oob_policy", self.oob_policy, OOB_POLICIES),
            ("value_repr", self.value_repr, VALUE_REPRS),
        ):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        object.__setattr__(self, "lut_size", int(self.lut_size))


@dataclass(frozen=True)
class SegmentTable:
    """One quantized table: segment bounds, raw codes and dequant parameters."""

    a: float
    b: float
    values: np.ndarray
    scale: float
    v_min: Optional[float] = None

    def dequantize(self) -> np.ndarray:
        if self.v_min is None:
            return self.scale * self.values.astype(np.float64)
        return self.v_min + self.scale * self.values.astype(np.float64)


@dataclass(eq=False)
class CompiledLayer:
    n_in: int
    n_out: int
    domain_min: float
    domain_max: float
    num_intervals: int
    degree: int
    alpha: np.ndarray   # (n_in, n_out) float32
    beta: np.ndarray    # (n_in, n_out) float32
    values: np.ndarray  # (n_in, n_out, G, L) int8 or uint8
    scales: np.ndarray  # (n_in, n_out, G) float32
    v_mins: Optional[np.ndarray]  # (n_in, n_out, G) float32, asym only

    def boundaries(self) -> np.ndarray:
        return segment_boundaries(self.domain_min, self.domain_max, self.num_intervals)

    def segment_table(self, i: int, j: int, u: int) -> SegmentTable:
        bounds = self.boundaries()
        return SegmentTable(
            a=float(bounds[u]),
            b=float(bounds[u + 1]),
            values=self.values[i, j, u],
            scale=float(self.scales[i, j, u]),
            v_min=None if self.v_mins is None else float(self.v_mins[i, j, u]),
        )

    @property
    def num_edges(self) -> int:
        return self.n_in * self.n_out


@dataclass(eq=False)
class CompiledModel:
    """Packed LUT model: topology mirror, per-edge scales, quantized tables."""

    config: CompileConfig
    layers: list[CompiledLayer]
    threshold: float

    @property
    def feature_count(self) -> int:
        return self.layers[0].n_in

    @property
    def num_edges(self) -> int:
        return sum(layer.num_edges for layer in self.layers)


def _f32_round_up(x: np.ndarray) -> np.ndarray:
    """Round to binary32, directed toward +inf (never below the true value)."""
    f = np.float32(x)
    low = f.astype(np.float64) < x
    return np.where(low, np.nextafter(f, np.float32(np.inf)), f).astype(np.float32)


def _f32_round_down(x: np.ndarray) -> np.ndarray:
    f = np.float32(x)
    high = f.astype(np.float64) > x
    return np.where(high, np.nextafter(f, np.float32(-np.inf)), f).astype(np.float32)


def quantize_symmetric(values) -> tuple[np.ndarray, float]:
    """Symmetric int8 quantization: q = clip(round(v / s), -127, 127).

    The scale is max|v| / 127 (zero only for an all-zero vector); rounding
    is round-half-to-even. Dequantized values s * q stay within s/2 of the
    inputs.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise CompileError("cannot quantize non-finite values")
    amax = float(np.max(np.abs(v))) if v.size else 0.0
    if amax == 0.0:
        return np.zeros(v.shape, dtype=np.int8), 0.0
    s = amax / 127.0
    q = np.clip(np.rint(v / s), -127, 127).astype(np.int8)
    return q, s


def quantize_asymmetric(values) -> tuple[np.ndarray, float, float]:
    """Asymmetric uint8 quantization: q = clip(round((v - v_min) / s), 0, 255)."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise CompileError("cannot quantize non-finite values")
    v_min = float(np.min(v))
    span = float(np.max(v)) - v_min
    if span == 0.0:
        return np.zeros(v.shape, dtype=np.uint8), 0.0, v_min
    s = span / 255.0
    q = np.clip(np.rint((v - v_min) / s), 0, 255).astype(np.uint8)
    return q, s, v_min


def sample_segment(edge, grid, segment_index: int, lut_size: int,
                   value_repr: str = "spline_component") -> np.ndarray:
    """Evaluate one edge on the uniform sample grid of one segment.

    Samples x_q = a + q * delta with delta = (b - a) / (L - 1); the final
    point is pinned to the exact segment end so adjacent segments share the
    endpoint value bit-for-bit.
    """
    if not (0 <= segment_index < grid.num_intervals):
        raise CompileError(
            f"segment index {segment_index} outside [0, {grid.num_intervals})"
        )
    bounds = grid.interior_boundaries()
    xs = _segment_points(float(bounds[segment_index]), float(bounds[segment_index + 1]), lut_size)
    bases = bspline_basis_batch(xs, grid)
    spline = bases @ np.asarray(edge.coefficients, dtype=np.float64)
    if value_repr == "spline_component":
        return spline
    if value_repr == "full_phi":
        return edge.base_scale * silu(xs) + edge.spline_scale * spline
    raise ConfigError(f"unknown value_repr {value_repr!r}")


def _segment_points(a: float, b: float, lut_size: int) -> np.ndarray:
    delta = (b - a) / (lut_size - 1)
    xs = a + delta * np.arange(lut_size, dtype=np.float64)
    xs[-1] = b
    return xs


def compile_model(model: ModelSpec, config: CompileConfig) -> CompiledModel:
    """Sample and quantize every edge of every layer; fully deterministic."""
    layers = []
    for layer in model.layers:
        grid = layer.grid
        g, L = grid.num_intervals, config.lut_size
        n_edges = layer.n_in * layer.n_out
        coeffs = layer.coeffs.reshape(n_edges, grid.num_bases)
        alpha = layer.alpha.reshape(n_edges)
        beta = layer.beta.reshape(n_edges)
        bounds = grid.interior_boundaries()

        raw = np.empty((n_edges, g, L), dtype=np.float64)
        for u in range(g):
            xs = _segment_points(float(bounds[u]), float(bounds[u + 1]), L)
            bases = bspline_basis_batch(xs, grid)
            spline = coeffs @ bases.T
            if config.value_repr == "full_phi":
                raw[:, u, :] = alpha[:, None] * silu(xs)[None, :] + beta[:, None] * spline
            else:
                raw[:, u, :] = spline
        if not np.all(np.isfinite(raw)):
            raise CompileError("sampled table values are not finite")

        if config.quant_scheme == "sym_int8":
            amax = np.max(np.abs(raw), axis=-1)
            scales = _f32_round_up(amax / 127.0)
            s64 = scales.astype(np.float64)
            q = np.zeros_like(raw)
            np.divide(raw, s64[..., None], out=q, where=s64[..., None] > 0)
            values = np.clip(np.rint(q), -127, 127).astype(np.int8)
            v_mins = None
        else:
            v_mins = _f32_round_down(np.min(raw, axis=-1))
            span = np.max(raw, axis=-1) - v_mins.astype(np.float64)
            scales = _f32_round_up(span / 255.0)
            s64 = scales.astype(np.float64)
            q = np.zeros_like(raw)
            np.divide(raw - v_mins.astype(np.float64)[..., None], s64[..., None],
                      out=q, where=s64[..., None] > 0)
            values = np.clip(np.rint(q), 0, 255).astype(np.uint8)
            v_mins = v_mins.reshape(layer.n_in, layer.n_out, g)
        scales = np.where(np.isfinite(scales), scales, np.float32(0)).astype(np.float32)
        if not np.all(np.isfinite(scales.astype(np.float64))):
            raise CompileError("quantization scale overflowed binary32")

        layers.append(
            CompiledLayer(
                n_in=layer.n_in,
                n_out=layer.n_out,
                domain_min=grid.domain_min,
                domain_max=grid.domain_max,
                num_intervals=g,
                degree=grid.degree,
                alpha=layer.alpha.astype(np.float32),
                beta=layer.beta.astype(np.float32),
                values=values.reshape(layer.n_in, layer.n_out, g, L),
                scales=scales.reshape(layer.n_in, layer.n_out, g),
                v_mins=v_mins,
            )
        )
    return CompiledModel(config=config, layers=layers, threshold=model.threshold)


def measure_memory(compiled: CompiledModel) -> dict[str, int]:
    """Exact byte accounting of the packed format, no estimation.

    tables:       1 byte per entry, edges * G * L
    quant_params: binary32 scale per segment, plus binary32 v_min for asym
    scales:       binary32 alpha + beta per edge
    header:       file header, one per-layer header, threshold trailer
    total:        equals the serialized file size byte for byte
    """
    L = compiled.config.lut_size
    per_seg = 8 if compiled.config.quant_scheme == "asym_uint8" else 4
    tables = 0
    quant_params = 0
    scales = 0
    for layer in compiled.layers:
        seg_count = layer.num_edges * layer.num_intervals
        tables += seg_count * L
        quant_params += seg_count * per_seg
        scales += layer.num_edges * 8
    header = HEADER_BYTES + LAYER_HEADER_BYTES * len(compiled.layers) + TRAILER_BYTES
    return {
        "tables": tables,
        "quant_params": quant_params,
        "scales": scales,
        "header": header,
        "total": tables + quant_params + scales + header,
    }


# ---------------------------------------------------------------------------
# Packed binary format ("KLUT", little-endian)
# ---------------------------------------------------------------------------

def compiled_to_bytes(compiled: CompiledModel) -> bytes:
    cfg = compiled.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack(
        "<HBBBBHH",
        COMPILED_FORMAT_VERSION,
        QUANT_SCHEMES.index(cfg.quant_scheme),
        BOUNDARY_MODES.index(cfg.boundary_mode),
        OOB_POLICIES.index(cfg.oob_policy),
        VALUE_REPRS.index(cfg.value_repr),
        cfg.lut_size,
        len(compiled.layers),
    ))
    for layer in compiled.layers:
        buf.write(struct.pack(
            "<IIddHH",
            layer.n_in, layer.n_out,
            layer.domain_min, layer.domain_max,
            layer.num_intervals, layer.degree,
        ))
        for i in range(layer.n_in):
            for j in range(layer.n_out):
                buf.write(struct.pack("<ff", float(layer.alpha[i, j]), float(layer.beta[i, j])))
                for u in range(layer.num_intervals):
                    buf.write(struct.pack("<f", float(layer.scales[i, j, u])))
                    if layer.v_mins is not None:
                        buf.write(struct.pack("<f", float(layer.v_mins[i, j, u])))
                    buf.write(layer.values[i, j, u].tobytes())
    # threshold rides in a trailing binary64 so the runtime can make
    # decisions without the neutral model file
    buf.write(struct.pack("<d", compiled.threshold))
    return buf.getvalue()


def compiled_from_bytes(data: bytes) -> CompiledModel:
    if data[:4] != MAGIC:
        raise MalformedModelError("not a KLUT file (bad magic)")
    version, qs, bm, oob, vr, L, n_layers = struct.unpack_from("<HBBBBHH", data, 4)
    if version != COMPILED_FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported compiled format version {version}")
    try:
        config = CompileConfig(
            lut_size=L,
            quant_scheme=QUANT_SCHEMES[qs],
            boundary_mode=BOUNDARY_MODES[bm],
            oob_policy=OOB_POLICIES[oob],
            value_repr=VALUE_REPRS[vr],
        )
    except IndexError as exc:
        raise MalformedModelError(f"invalid enum code in header: {exc}") from exc
    offset = HEADER_BYTES
    asym = config.quant_scheme == "asym_uint8"
    dtype = np.uint8 if asym else np.int8
    layers = []
    for _ in range(n_layers):
        n_in, n_out, d0, d1, g, k = struct.unpack_from("<IIddHH", data, offset)
        offset += LAYER_HEADER_BYTES
        alpha = np.empty((n_in, n_out), dtype=np.float32)
        beta = np.empty((n_in, n_out), dtype=np.float32)
        values = np.empty((n_in, n_out, g, L), dtype=dtype)
        scales = np.empty((n_in, n_out, g), dtype=np.float32)
        v_mins = np.empty((n_in, n_out, g), dtype=np.float32) if asym else None
        for i in range(n_in):
            for j in range(n_out):
                alpha[i, j], beta[i, j] = struct.unpack_from("<ff", data, offset)
                offset += 8
                for u in range(g):
                    scales[i, j, u] = struct.unpack_from("<f", data, offset)[0]
                    offset += 4
                    if asym:
                        v_mins[i, j, u] = struct.unpack_from("<f", data, offset)[0]
                        offset += 4
                    values[i, j, u] = np.frombuffer(data, dtype=dtype, count=L, offset=offset)
                    offset += L
        layers.append(CompiledLayer(
            n_in=n_in, n_out=n_out, domain_min=d0, domain_max=d1,
            num_intervals=g, degree=k, alpha=alpha, beta=beta,
            values=values, scales=scales, v_mins=v_mins,
        ))
    if offset + 8 > len(data):
        raise MalformedModelError("KLUT file truncated (missing threshold trailer)")
    threshold = struct.unpack_from("<d", data, offset)[0]
    return CompiledModel(config=config, layers=layers, threshold=threshold)


def save_compiled(compiled: CompiledModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(compiled_to_bytes(compiled))


def load_compiled(path) -> CompiledModel:
    with open(path, "rb") as fh:
        return compiled_from_bytes(fh.read())


def inspect_compiled(path) -> dict:
    """Header and totals of a packed file, for the `inspect` subcommand."""
    compiled = load_compiled(path)
    cfg = compiled.config
    return {
        "format_version": COMPILED_FORMAT_VERSION,
        "lut_size": cfg.lut_size,
        "quant_scheme": cfg.quant_scheme,
        "boundary_mode": cfg.boundary_mode,
        "oob_policy": cfg.oob_policy,
        "value_repr": cfg.value_repr,
        "threshold": compiled.threshold,
        "layers": [
            {
                "n_in": layer.n_in,
                "n_out": layer.n_out,
                "domain_min": layer.domain_min,
                "domain_max": layer.domain_max,
                "G": layer.num_intervals,
                "k": layer.degree,
            }
            for layer in compiled.layers
        ],
        "edges": compiled.num_edges,
        "memory": measure_memory(compiled),
    }

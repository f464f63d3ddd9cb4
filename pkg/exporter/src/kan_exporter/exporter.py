"""Checkpoint-to-neutral-format conversion.

Supported checkpoints: ``torch.save`` files holding either a plain state
dict or ``{"state_dict": ..., "meta": {...}}``, with sequential KAN layers
under ``layers.{i}.`` or ``act_fun.{i}.`` prefixes. Each layer carries:

    grid        (M,) or (n_in, M) uniform extended knot vector
    coef        (n_in, n_out, G+k) spline coefficients
    scale_base  (n_in, n_out) base-branch scales
    scale_sp    (n_in, n_out) spline-branch scales
    mask        (n_in, n_out) optional pruning mask, folded into the scales

Fixed grids only: per-input grid rows must agree, and knots must be
uniform; adaptive/refined grids are rejected. Optional ``meta`` entries
(G, k, domain bounds) are cross-checked against the stored grid, which
always wins; disagreements are recorded as warnings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .evaluator import checkpoint_forward, neutral_forward

NEUTRAL_FORMAT_VERSION = 1
KNOWN_PREFIXES = ("layers.", "act_fun.")
LAYER_TENSORS = ("grid", "coef", "scale_base", "scale_sp")
OPTIONAL_TENSORS = ("mask",)

_GRID_UNIFORM_RTOL = 1e-6
_VERIFY_TOLERANCE = 1e-5


class ExportError(Exception):
    pass


@dataclass
class ExportManifest:
    source: str
    topology: list[int]
    grids: list[dict]
    warnings: list[str] = field(default_factory=list)
    tensor_map: dict = field(default_factory=dict)
    verify_n: int = 0
    agreement_max_abs_diff: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def _load_checkpoint(path):
    import torch

    payload = torch.load(path, map_location="cpu", weights_only=True)
    meta = {}
    if isinstance(payload, dict) and "state_dict" in payload:
        meta = payload.get("meta", {}) or {}
        payload = payload["state_dict"]
    if not isinstance(payload, dict) or not payload:
        raise ExportError(f"{path}: checkpoint holds no state dict")
    tensors = {}
    for key, value in payload.items():
        try:
            tensors[str(key)] = np.asarray(value.detach().cpu().numpy(), dtype=np.float64)
        except AttributeError:
            raise ExportError(f"{path}: entry {key!r} is not a tensor") from None
    return tensors, meta


def _group_layers(tensors: dict) -> tuple[list[dict], dict]:
    groups: dict[int, dict] = {}
    tensor_map: dict[str, str] = {}
    for key in tensors:
        prefix = next((p for p in KNOWN_PREFIXES if key.startswith(p)), None)
        if prefix is None:
            raise ExportError(f"unsupported upstream tensor {key!r} (not a KAN layer)")
        rest = key[len(prefix):]
        idx_str, _, name = rest.partition(".")
        if not idx_str.isdigit() or not name:
            raise ExportError(f"unsupported upstream tensor {key!r} (bad layer path)")
        if name not in LAYER_TENSORS + OPTIONAL_TENSORS:
            raise ExportError(
                f"unsupported upstream tensor {key!r} (unknown field {name!r})"
            )
        groups.setdefault(int(idx_str), {})[name] = (key, tensors[key])
    if not groups:
        raise ExportError("checkpoint holds no KAN layers")
    indices = sorted(groups)
    if indices != list(range(len(indices))):
        raise ExportError(f"layer indices are not sequential: {indices}")
    layers = []
    for idx in indices:
        group = groups[idx]
        missing = [n for n in LAYER_TENSORS if n not in group]
        if missing:
            raise ExportError(f"layer {idx} is missing tensors: {missing}")
        layers.append(group)
    return layers, tensor_map


def _extract_grid(idx: int, grid: np.ndarray, coef: np.ndarray,
                  warnings: list[str]) -> tuple[np.ndarray, int, int]:
    """Validate the stored knot vector and infer (G, k) from shapes."""
    if grid.ndim == 2:
        if not np.all(grid == grid[0]):
            raise ExportError(
                f"layer {idx}: per-input grid rows differ (adaptive grids unsupported)"
            )
        grid = grid[0]
    if grid.ndim != 1 or grid.shape[0] < 3:
        raise ExportError(f"layer {idx}: grid tensor has invalid shape {grid.shape}")
    num_bases = coef.shape[2]
    degree = (grid.shape[0] - 1) - num_bases
    intervals = num_bases - degree
    if degree < 0 or intervals < 1:
        raise ExportError(
            f"layer {idx}: grid length {grid.shape[0]} inconsistent with "
            f"{num_bases} coefficients"
        )
    spacings = np.diff(grid)
    mean_spacing = float(np.mean(spacings))
    if mean_spacing <= 0 or np.any(
        np.abs(spacings - mean_spacing) > _GRID_UNIFORM_RTOL * abs(mean_spacing)
    ):
        raise ExportError(
            f"layer {idx}: knots are not uniform (adaptive grids unsupported)"
        )
    return grid, intervals, degree


def _check_meta(meta: dict, idx: int, intervals: int, degree: int,
                d0: float, d1: float, warnings: list[str]) -> None:
    declared = meta.get("layers", [])
    if idx < len(declared):
        decl = declared[idx]
    else:
        decl = {k: meta[k] for k in ("G", "k") if k in meta}
    for name, actual in (("G", intervals), ("k", degree)):
        if name in decl and int(decl[name]) != actual:
            warnings.append(
                f"layer {idx}: metadata declares {name}={decl[name]} but the stored "
                f"grid implies {name}={actual}; using the grid"
            )


def export(checkpoint_path, out_path, verify_n: int = 10,
           threshold: float = 0.5, manifest_path=None, seed: int = 0) -> ExportManifest:
    """Convert a checkpoint, verify the written file, emit the manifest."""
    tensors, meta = _load_checkpoint(checkpoint_path)
    groups, _ = _group_layers(tensors)
    manifest = ExportManifest(source=str(checkpoint_path), topology=[], grids=[])

    doc_layers = []
    eval_layers = []
    prev_out = None
    for idx, group in enumerate(groups):
        grid_key, grid_raw = group["grid"]
        coef_key, coef = group["coef"]
        base_key, scale_base = group["scale_base"]
        sp_key, scale_sp = group["scale_sp"]
        if coef.ndim != 3:
            raise ExportError(f"layer {idx}: coef must be 3-D, got {coef.shape}")
        n_in, n_out, _ = coef.shape
        for name, arr in (("scale_base", scale_base), ("scale_sp", scale_sp)):
            if arr.shape != (n_in, n_out):
                raise ExportError(
                    f"layer {idx}: {name} shape {arr.shape} != ({n_in}, {n_out})"
                )
        if prev_out is not None and n_in != prev_out:
            raise ExportError(
                f"layer {idx}: n_in={n_in} does not chain from previous n_out={prev_out}"
            )
        prev_out = n_out

        knots, intervals, degree = _extract_grid(idx, grid_raw, coef, manifest.warnings)
        d0 = float(knots[degree])
        d1 = float(knots[degree + intervals])
        _check_meta(meta, idx, intervals, degree, d0, d1, manifest.warnings)

        manifest.tensor_map[grid_key] = f"layers[{idx}].grid (domain bounds, G, k)"
        manifest.tensor_map[coef_key] = f"layers[{idx}].coeffs"
        manifest.tensor_map[base_key] = f"layers[{idx}].alpha"
        manifest.tensor_map[sp_key] = f"layers[{idx}].beta"

        if "mask" in group:
            mask_key, mask = group["mask"]
            if mask.shape != (n_in, n_out):
                raise ExportError(f"layer {idx}: mask shape {mask.shape} invalid")
            if np.all(mask == 1.0):
                manifest.tensor_map[mask_key] = "unused (all-ones mask)"
            else:
                scale_base = scale_base * mask
                scale_sp = scale_sp * mask
                manifest.tensor_map[mask_key] = f"folded into layers[{idx}].alpha/beta"
                manifest.warnings.append(
                    f"layer {idx}: pruning mask folded into the branch scales"
                )

        manifest.topology.append(n_in)
        manifest.grids.append({
            "G": intervals, "k": degree, "domain_min": d0, "domain_max": d1,
        })
        doc_layers.append({
            "n_in": n_in,
            "n_out": n_out,
            "grid": {"domain_min": d0, "domain_max": d1, "G": intervals, "k": degree},
            "alpha": scale_base.reshape(-1).tolist(),
            "beta": scale_sp.reshape(-1).tolist(),
            "coeffs": coef.reshape(n_in * n_out, -1).tolist(),
        })
        eval_layers.append({
            "grid": knots, "coef": coef, "scale_base": scale_base,
            "scale_sp": scale_sp, "degree": degree,
        })
    manifest.topology.append(prev_out)
    if prev_out != 1:
        raise ExportError(f"final layer must have n_out == 1, got {prev_out}")

    doc = {
        "format_version": NEUTRAL_FORMAT_VERSION,
        "feature_count": doc_layers[0]["n_in"],
        "threshold": float(threshold),
        "metadata": {"source_checkpoint": str(checkpoint_path), "exporter": "kan-export"},
        "layers": doc_layers,
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")

    # verification: checkpoint tensors vs the file we just wrote
    manifest.verify_n = int(verify_n)
    if verify_n > 0:
        rng = np.random.default_rng(seed)
        g0 = manifest.grids[0]
        probe = rng.uniform(g0["domain_min"], g0["domain_max"],
                            size=(verify_n, doc["feature_count"]))
        with open(out_path, "r", encoding="utf-8") as fh:
            written = json.load(fh)
        upstream = checkpoint_forward(eval_layers, probe)
        neutral = neutral_forward(written, probe)
        manifest.agreement_max_abs_diff = float(np.max(np.abs(upstream - neutral)))
        if manifest.agreement_max_abs_diff > _VERIFY_TOLERANCE:
            raise ExportError(
                "verification failed: checkpoint and neutral-file forwards differ by "
                f"{manifest.agreement_max_abs_diff:.3e} (> {_VERIFY_TOLERANCE:.0e})"
            )

    if manifest_path is None:
        manifest_path = str(out_path) + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
        fh.write("\n")
    return manifest

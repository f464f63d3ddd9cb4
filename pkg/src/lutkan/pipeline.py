"""CSV ingestion, preprocessing steps, spline fitting, synthetic generators.

The preprocessing steps mirror a standard flow-feature cleanup: constant and
duplicate feature removal, 3-sigma outlier row drops, median imputation,
standardization, stratified class balancing and a stratified train/test
split. Statistics are always fitted on the training portion and replayed
verbatim on everything else, so test rows never leak into any statistic.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FitError, InputShapeError, MalformedModelError
from .model import (
    KanLayer,
    KnotGrid,
    ModelSpec,
    bspline_basis_batch,
    forward_reference,
    layer_forward,
)
from .runtime import predict

STEP_ORDER = (
    "drop_constant_duplicate",
    "outlier_3sigma",
    "impute_median",
    "standardize",
    "stratified_balance",
    "stratified_split",
)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    standardization: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputShapeError("dataset features must be 2-D")
        if self.labels.shape != (self.features.shape[0],):
            raise InputShapeError("labels length must match feature rows")
        if len(self.feature_names) != self.features.shape[1]:
            raise InputShapeError("feature_names length must match feature columns")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


# ---------------------------------------------------------------------------
# CSV in/out
# ---------------------------------------------------------------------------

def _parse_cell(raw: str) -> float:
    raw = raw.strip()
    if raw == "" or raw.lower() in ("nan", "na"):
        return float("nan")
    return float(raw)


def ingest_csv(path, label_column: str,
               positive_labels: Sequence[str] = ("1",),
               negative_labels: Sequence[str] = ("0",)) -> Dataset:
    """Read a labeled CSV; empty cells become missing markers, never zeros.

    Label strings are matched case-insensitively against the configured
    positive/negative sets; anything else is an error.
    """
    positive = {str(v).strip().lower() for v in positive_labels}
    negative = {str(v).strip().lower() for v in negative_labels}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedModelError(f"{path}: empty CSV") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise MalformedModelError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        feature_names = [h for i, h in enumerate(header) if i != label_idx]
        rows, labels = [], []
        bad_rows, bad_labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                bad_rows.append(line_no)
                continue
            try:
                rows.append([_parse_cell(c) for i, c in enumerate(row) if i != label_idx])
            except ValueError:
                bad_rows.append(line_no)
                continue
            raw_label = row[label_idx].strip().lower()
            if raw_label in positive:
                labels.append(1)
            elif raw_label in negative:
                labels.append(0)
            else:
                bad_labels.append((line_no, row[label_idx]))
    if bad_rows:
        raise MalformedModelError(f"{path}: unparseable rows at lines {bad_rows}")
    if bad_labels:
        line_no, value = bad_labels[0]
        raise MalformedModelError(
            f"{path}: unknown label value {value!r} at line {line_no} "
            f"({len(bad_labels)} such rows)"
        )
    return Dataset(
        features=np.asarray(rows, dtype=np.float64).reshape(len(rows), len(feature_names)),
        labels=np.asarray(labels, dtype=np.int64),
        feature_names=feature_names,
    )


def write_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write a dataset back to CSV with round-trip-exact float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.feature_names + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in row]
            writer.writerow(cells + [int(label)])


def read_feature_csv(path) -> np.ndarray:
    """Feature-only CSV (header plus float rows) to an N x d matrix."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedModelError(f"{path}: empty CSV") from None
        rows = []
        bad_rows = []
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append([_parse_cell(c) for c in row])
            except ValueError:
                bad_rows.append(line_no)
        if bad_rows:
            raise MalformedModelError(f"{path}: unparseable rows at lines {bad_rows}")
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))


# ---------------------------------------------------------------------------
# Preprocessing pipeline
# ---------------------------------------------------------------------------

@dataclass
class PreprocessResult:
    train: Dataset
    test: Optional[Dataset]
    pipeline: "PreprocessPipeline"


@dataclass
class PreprocessPipeline:
    """Ordered preprocessing steps with train-fitted, replayable statistics.

    ``run`` fits on (the training portion of) a dataset and transforms
    every portion; ``transform`` replays the fitted column/row transforms
    on new data without touching any statistic. Sampling steps (balance,
    split) only apply inside ``run``.
    """

    steps: Sequence[str]
    seed: int = 0
    split_fraction: float = 0.8
    # fitted state
    kept_columns_: Optional[np.ndarray] = field(default=None, repr=False)
    outlier_lo_: Optional[np.ndarray] = field(default=None, repr=False)
    outlier_hi_: Optional[np.ndarray] = field(default=None, repr=False)
    medians_: Optional[np.ndarray] = field(default=None, repr=False)
    standardize_keep_: Optional[np.ndarray] = field(default=None, repr=False)
    means_: Optional[np.ndarray] = field(default=None, repr=False)
    stds_: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        unknown = [s for s in self.steps if s not in STEP_ORDER]
        if unknown:
            raise ConfigError(f"unknown preprocessing steps: {unknown}")
        order = [STEP_ORDER.index(s) for s in self.steps]
        if sorted(order) != order or len(set(order)) != len(order):
            raise ConfigError(
                f"steps must follow the canonical order {STEP_ORDER} without repeats"
            )
        if not (0.0 < self.split_fraction < 1.0):
            raise ConfigError("split fraction must lie in (0, 1)")

    def _has(self, step: str) -> bool:
        return step in self.steps

    def run(self, dataset: Dataset) -> PreprocessResult:
        if self._has("stratified_split"):
            train_idx, test_idx = _stratified_split_indices(
                dataset.labels, self.split_fraction, self.seed
            )
        else:
            train_idx = np.arange(dataset.n)
            test_idx = None
        self._fit(dataset, train_idx)
        train = self._apply(dataset, train_idx, portion="train")
        test = self._apply(dataset, test_idx, portion="test") if test_idx is not None else None
        return PreprocessResult(train=train, test=test, pipeline=self)

    def transform(self, dataset: Dataset) -> Dataset:
        if self.kept_columns_ is None:
            raise ConfigError("pipeline has not been fitted; call run() first")
        return self._apply(dataset, np.arange(dataset.n), portion="replay")

    def _fit(self, dataset: Dataset, train_idx: np.ndarray) -> None:
        x = dataset.features[train_idx]
        d = dataset.d
        kept = np.arange(d)
        if self._has("drop_constant_duplicate"):
            kept = _constant_duplicate_survivors(x)
            x = x[:, kept]
        self.kept_columns_ = kept
        if self._has("outlier_3sigma"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean = np.nanmean(x, axis=0)
                std = np.nanstd(x, axis=0)
            self.outlier_lo_ = mean - 3.0 * std
            self.outlier_hi_ = mean + 3.0 * std
            x = x[_inlier_mask(x, self.outlier_lo_, self.outlier_hi_)]
        if self._has("impute_median"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                self.medians_ = np.nanmedian(x, axis=0)
            self.medians_ = np.where(np.isfinite(self.medians_), self.medians_, 0.0)
            x = _impute(x, self.medians_)
        if self._has("standardize"):
            means = np.mean(x, axis=0)
            stds = np.std(x, axis=0)
            keep = stds > 0
            if not np.all(keep):
                dropped = np.flatnonzero(~keep)
                warnings.warn(
                    f"standardize dropped {dropped.size} zero-variance feature(s) "
                    f"at kept-column positions {dropped.tolist()}"
                )
            self.standardize_keep_ = keep
            self.means_ = means[keep]
            self.stds_ = stds[keep]

    def _apply(self, dataset: Dataset, idx: np.ndarray, portion: str) -> Dataset:
        x = dataset.features[idx][:, self.kept_columns_]
        y = dataset.labels[idx]
        names = [dataset.feature_names[c] for c in self.kept_columns_]
        standardization = None
        if self._has("outlier_3sigma"):
            mask = _inlier_mask(x, self.outlier_lo_, self.outlier_hi_)
            x, y = x[mask], y[mask]
        if self._has("impute_median"):
            x = _impute(x, self.medians_)
        if self._has("standardize"):
            keep = self.standardize_keep_
            x = (x[:, keep] - self.means_) / self.stds_
            names = [n for n, k in zip(names, keep) if k]
            standardization = (self.means_.copy(), self.stds_.copy())
        if self._has("stratified_balance") and portion in ("train", "test"):
            sel = _balance_indices(y, self.seed + (0 if portion == "train" else 1))
            x, y = x[sel], y[sel]
        return Dataset(features=x, labels=y, feature_names=names,
                       standardization=standardization)


def _constant_duplicate_survivors(x: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    kept = []
    seen: list[int] = []
    for c in range(d):
        col = x[:, c]
        finite = col[~np.isnan(col)]
        if finite.size == 0 or np.all(finite == finite[0]):
            continue
        duplicate = False
        for prev in seen:
            if np.array_equal(x[:, prev], col, equal_nan=True):
                duplicate = True
                break
        if not duplicate:
            kept.append(c)
            seen.append(c)
    return np.asarray(kept, dtype=np.int64)


def _inlier_mask(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # NaN comparisons are False, so missing cells never trigger a row drop
    with np.errstate(invalid="ignore"):
        violation = (x < lo) | (x > hi)
    return ~np.any(violation, axis=1)


def _impute(x: np.ndarray, medians: np.ndarray) -> np.ndarray:
    out = x.copy()
    mask = np.isnan(out)
    if np.any(mask):
        out[mask] = np.broadcast_to(medians, out.shape)[mask]
    return out


def _stratified_split_indices(labels: np.ndarray, fraction: float,
                              seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        perm = rng.permutation(idx)
        n_train = int(round(fraction * idx.size))
        train_parts.append(perm[:n_train])
        test_parts.append(perm[n_train:])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    return train, test


def _balance_indices(labels: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    target = int(np.min(counts))
    chosen = []
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        if idx.size > target:
            idx = rng.choice(idx, size=target, replace=False)
        chosen.append(idx)
    return np.sort(np.concatenate(chosen))


def preprocess(dataset: Dataset, steps: Sequence[str], seed: int = 0,
               split_fraction: float = 0.8) -> PreprocessResult:
    """Convenience wrapper: build a pipeline, run it, return the result."""
    return PreprocessPipeline(steps=list(steps), seed=seed,
                              split_fraction=split_fraction).run(dataset)


def parse_pipeline_config(doc: dict) -> PreprocessPipeline:
    """Build a pipeline from the declarative document the CLI accepts.

    Schema: {"seed": int, "steps": [name | {"name": name, "fraction": f}]}
    """
    if not isinstance(doc, dict) or "steps" not in doc:
        raise ConfigError('pipeline config must be an object with a "steps" list')
    steps = []
    fraction = 0.8
    for entry in doc["steps"]:
        if isinstance(entry, str):
            steps.append(entry)
        elif isinstance(entry, dict) and "name" in entry:
            steps.append(entry["name"])
            if entry["name"] == "stratified_split" and "fraction" in entry:
                fraction = float(entry["fraction"])
        else:
            raise ConfigError(f"invalid pipeline step entry: {entry!r}")
    return PreprocessPipeline(steps=steps, seed=int(doc.get("seed", 0)),
                              split_fraction=fraction)


# ---------------------------------------------------------------------------
# Spline fitting and synthetic generators
# ---------------------------------------------------------------------------

def fit_spline_lsq(x, y, grid: KnotGrid, ridge: float = 1e-10) -> np.ndarray:
    """Least-squares spline coefficients via ridge-damped normal equations."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputShapeError("fit_spline_lsq expects matching 1-D sample arrays")
    if x.shape[0] < grid.num_bases:
        raise FitError(
            f"need at least {grid.num_bases} samples, got {x.shape[0]}"
        )
    design = bspline_basis_batch(x, grid)
    gram = design.T @ design + ridge * np.eye(grid.num_bases)
    rhs = design.T @ y
    try:
        coeffs = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"normal equations unsolvable even with ridge term: {exc}") from exc
    if not np.all(np.isfinite(coeffs)):
        raise FitError("spline fit produced non-finite coefficients")
    return coeffs


_CALIBRATION_ROWS = 256
_DOMAIN_MARGIN = 0.05


def _smooth_coefficients(rng: np.random.Generator, n_edges: int, n_bases: int) -> np.ndarray:
    """Low-frequency coefficient rows within [-2, 2] (smooth splines)."""
    m = np.arange(n_bases, dtype=np.float64) / max(n_bases - 1, 1)
    amp = rng.uniform(0.5, 1.5, size=(n_edges, 1))
    freq = rng.uniform(0.5, 1.25, size=(n_edges, 1))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_edges, 1))
    slope = rng.uniform(-0.5, 0.5, size=(n_edges, 1))
    offset = rng.uniform(-0.5, 0.5, size=(n_edges, 1))
    coeffs = amp * np.sin(2.0 * np.pi * freq * m[None, :] + phase) + slope * m[None, :] + offset
    peak = np.maximum(np.max(np.abs(coeffs), axis=1, keepdims=True), 2.0)
    return coeffs * (2.0 / peak)


def synth_model(topology: Sequence[int], seed: int,
                num_intervals: int = 5, degree: int = 3,
                input_domain: tuple[float, float] = (-1.0, 1.0),
                coeff_style: str = "smooth") -> ModelSpec:
    """Seeded synthetic model with calibrated hidden-layer domains.

    Scales are uniform in [-1, 1] and coefficients lie in [-2, 2] ("smooth"
    draws low-frequency shapes, "rough" draws i.i.d. values). Hidden-layer
    grid domains are set from a seeded probe batch pushed through the
    preceding layers, with a 5% margin, so typical activations stay in
    range.
    """
    topology = [int(v) for v in topology]
    if len(topology) < 2 or any(v < 1 for v in topology):
        raise ConfigError(f"invalid topology {topology}")
    if topology[-1] != 1:
        raise ConfigError("topology must end with a single output unit")
    if coeff_style not in ("smooth", "rough"):
        raise ConfigError(f"coeff_style must be 'smooth' or 'rough', got {coeff_style!r}")
    rng = np.random.default_rng(seed)
    lo, hi = float(input_domain[0]), float(input_domain[1])
    probe = rng.uniform(lo, hi, size=(_CALIBRATION_ROWS, topology[0]))
    layers = []
    h = probe
    for n_in, n_out in zip(topology[:-1], topology[1:]):
        if layers:
            lo = float(np.min(h))
            hi = float(np.max(h))
            pad = _DOMAIN_MARGIN * (hi - lo) if hi > lo else 1.0
            lo, hi = lo - pad, hi + pad
        grid = KnotGrid(domain_min=lo, domain_max=hi,
                        num_intervals=num_intervals, degree=degree)
        alpha = rng.uniform(-1.0, 1.0, size=(n_in, n_out))
        beta = rng.uniform(-1.0, 1.0, size=(n_in, n_out))
        if coeff_style == "smooth":
            coeffs = _smooth_coefficients(rng, n_in * n_out, grid.num_bases)
        else:
            coeffs = rng.uniform(-2.0, 2.0, size=(n_in * n_out, grid.num_bases))
        layer = KanLayer(
            n_in=n_in, n_out=n_out, grid=grid,
            alpha=alpha, beta=beta,
            coeffs=coeffs.reshape(n_in, n_out, grid.num_bases),
        )
        h = layer_forward(layer, h)
        layers.append(layer)
    return ModelSpec(
        layers=tuple(layers),
        feature_count=topology[0],
        threshold=0.5,
        metadata={"generator": "synth_model", "seed": int(seed),
                  "topology": topology, "coeff_style": coeff_style},
    )


def synth_dataset(model: ModelSpec, n: int, seed: int,
                  oob_fraction: float = 0.0) -> Dataset:
    """Oracle-labeled synthetic dataset drawn uniformly over the input domain.

    A seeded fraction of rows gets exactly one feature displaced beyond the
    domain by 1%-50% of the domain width; labels always come from the float
    model on the final (possibly displaced) features.
    """
    if not (0.0 <= oob_fraction < 1.0):
        raise ConfigError(f"oob_fraction must lie in [0, 1), got {oob_fraction}")
    rng = np.random.default_rng(seed)
    grid = model.layers[0].grid
    lo, hi = grid.domain_min, grid.domain_max
    width = hi - lo
    x = rng.uniform(lo, hi, size=(n, model.feature_count))
    n_oob = int(round(oob_fraction * n))
    if n_oob:
        rows = rng.choice(n, size=n_oob, replace=False)
        cols = rng.integers(0, model.feature_count, size=n_oob)
        above = rng.random(n_oob) < 0.5
        disp = rng.uniform(0.01, 0.5, size=n_oob) * width
        x[rows, cols] = np.where(above, hi + disp, lo - disp)
    labels = predict(forward_reference(model, x), 0.5)
    return Dataset(
        features=x,
        labels=labels,
        feature_names=[f"f{i}" for i in range(model.feature_count)],
    )

"""lutkan: compile KAN spline models into quantized LUTs and run them fast.

The package splits into an exact float reference (`model`), an offline
compiler emitting packed int8/uint8 tables (`compiler`), a table-driven
runtime with explicit boundary and out-of-bounds semantics (`runtime`),
quality metrics (`metrics`), a latency benchmark harness (`bench`), data
plumbing and synthetic generators (`pipeline`), and a CLI (`cli`).
"""

from .bench import BenchConfig, BenchReport, run_bench, speedup, sweep
from .compiler import (
    CompileConfig,
    CompiledModel,
    SegmentTable,
    compile_model,
    inspect_compiled,
    load_compiled,
    measure_memory,
    quantize_asymmetric,
    quantize_symmetric,
    sample_segment,
    save_compiled,
)
from .errors import (
    CompileError,
    ComparisonError,
    ConfigError,
    DegenerateMetricError,
    FitError,
    InputDomainError,
    InputShapeError,
    LutkanError,
    MalformedModelError,
    UnsupportedVersionError,
)
from .metrics import (
    ConfusionCounts,
    EvalReport,
    confusion,
    evaluate,
    pr_auc,
    roc_auc,
    thresholded_metrics,
)
from .model import (
    EdgeFunction,
    KanLayer,
    KnotGrid,
    ModelSpec,
    bspline_basis,
    eval_phi,
    eval_spline,
    forward_reference,
    load_model,
    save_model,
    validate_batch,
)
from .pipeline import (
    Dataset,
    PreprocessPipeline,
    fit_spline_lsq,
    ingest_csv,
    preprocess,
    synth_dataset,
    synth_model,
    write_csv,
)
from .runtime import (
    InferenceStats,
    forward_lut,
    load_batch,
    locate_segment,
    lut_eval,
    predict,
)

__version__ = "0.1.0"

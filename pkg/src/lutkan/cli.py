"""Single entry point exposing compile/infer/eval/bench/sweep/inspect/synth/preprocess.

Exit codes: 0 success, 2 usage error, 3 malformed input or model,
4 measurement unreliable, 5 internal error. Every non-zero exit is
accompanied by one machine-parsable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import difflib
import json
import sys

import numpy as np

from . import bench as bench_mod
from . import compiler as compiler_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import pipeline as pipeline_mod
from . import runtime as runtime_mod
from .errors import (
    CompileError,
    ComparisonError,
    ConfigError,
    DegenerateMetricError,
    FitError,
    InputDomainError,
    InputShapeError,
    MalformedModelError,
    UnsupportedVersionError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MALFORMED = 3
EXIT_UNRELIABLE = 4
EXIT_INTERNAL = 5

_USAGE_ERRORS = (ConfigError, ComparisonError)
_MALFORMED_ERRORS = (
    MalformedModelError,
    UnsupportedVersionError,
    InputShapeError,
    InputDomainError,
    CompileError,
    DegenerateMetricError,
    FitError,
    FileNotFoundError,
)

_ALL_OPTIONS: set[str] = set()


class _UsageError(Exception):
    pass


class _MeasurementUnreliable(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "unrecognized arguments" in message:
            for token in message.split():
                if token.startswith("--"):
                    close = difflib.get_close_matches(token, sorted(_ALL_OPTIONS), n=1)
                    if close:
                        message += f" (did you mean {close[0]}?)"
                    break
        raise _UsageError(message)

    def add_argument(self, *args, **kwargs):
        action = super().add_argument(*args, **kwargs)
        _ALL_OPTIONS.update(s for s in action.option_strings)
        return action


def _csv_ints(raw: str) -> list[int]:
    try:
        return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {raw!r}") from exc


def _csv_strs(raw: str) -> list[str]:
    return [v.strip() for v in raw.split(",") if v.strip()]


def _emit(doc, out_path):
    text = json.dumps(doc, indent=1) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_labeled(args) -> pipeline_mod.Dataset:
    return pipeline_mod.ingest_csv(
        args.data,
        label_column=args.label_column,
        positive_labels=_csv_strs(args.positive_labels),
        negative_labels=_csv_strs(args.negative_labels),
    )


def _add_label_flags(parser):
    parser.add_argument("--label-column", default="label")
    parser.add_argument("--positive-labels", default="1",
                        help="comma-separated label strings mapped to class 1")
    parser.add_argument("--negative-labels", default="0",
                        help="comma-separated label strings mapped to class 0")


def _add_compile_flags(parser):
    parser.add_argument("--lut-size", type=int, default=8,
                        help="samples per segment L (default 8, the recommended deployment point)")
    parser.add_argument("--quant", default="sym_int8", choices=compiler_mod.QUANT_SCHEMES,
                        help="quantization scheme (default sym_int8)")
    parser.add_argument("--boundary", default="half_open", choices=compiler_mod.BOUNDARY_MODES,
                        help="segment boundary mode (default half_open)")
    parser.add_argument("--oob", default="zero_spline", choices=compiler_mod.OOB_POLICIES,
                        help="out-of-bounds policy (default zero_spline, the robust setting)")
    parser.add_argument("--value-repr", default="spline_component",
                        choices=compiler_mod.VALUE_REPRS,
                        help="what the tables store (default spline_component)")


def _add_bench_flags(parser):
    parser.add_argument("--warmup", type=int, default=10,
                        help="un-timed warm-up iterations per seed (default 10)")
    parser.add_argument("--iters", type=int, default=100,
                        help="timed iterations per seed (default 100)")
    parser.add_argument("--seeds", type=int, default=5,
                        help="independent repetitions (default 5)")
    parser.add_argument("--threads", type=int, default=1,
                        help="backend thread cap, exported as LUTKAN_THREADS (default 1)")
    parser.add_argument("--seed", type=int, default=0, help="base RNG seed")


def _compile_config(args) -> compiler_mod.CompileConfig:
    return compiler_mod.CompileConfig(
        lut_size=args.lut_size,
        quant_scheme=args.quant,
        boundary_mode=args.boundary,
        oob_policy=args.oob,
        value_repr=args.value_repr,
    )


def _cmd_synth(args) -> int:
    model = pipeline_mod.synth_model(
        _csv_ints(args.topology), seed=args.seed,
        num_intervals=args.grid_intervals, degree=args.degree,
        input_domain=(args.domain_min, args.domain_max),
        coeff_style=args.coeff_style,
    )
    model_mod.save_model(model, args.out)
    if args.dataset:
        data = pipeline_mod.synth_dataset(model, args.dataset_size, seed=args.seed,
                                          oob_fraction=args.oob_fraction)
        pipeline_mod.write_csv(data, args.dataset, label_column=args.label_column)
    return EXIT_OK


def _cmd_compile(args) -> int:
    model = model_mod.load_model(args.model)
    compiled = compiler_mod.compile_model(model, _compile_config(args))
    compiler_mod.save_compiled(compiled, args.out)
    return EXIT_OK


def _cmd_infer(args) -> int:
    batch = runtime_mod.load_batch(args.input)
    if args.compiled:
        compiled = compiler_mod.load_compiled(args.compiled)
        threshold = args.threshold if args.threshold is not None else compiled.threshold
        probs, _stats = runtime_mod.forward_lut(compiled, batch)
    else:
        model = model_mod.load_model(args.model)
        threshold = args.threshold if args.threshold is not None else model.threshold
        probs = model_mod.forward_reference(model, batch)
    labels = runtime_mod.predict(probs, threshold)
    lines = ["probability,label"]
    lines += [f"{repr(float(p))},{int(l)}" for p, l in zip(probs, labels)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_eval(args) -> int:
    data = _load_labeled(args)
    if args.compiled:
        target = compiler_mod.load_compiled(args.compiled)
        default_threshold = target.threshold
    else:
        target = model_mod.load_model(args.model)
        default_threshold = target.threshold
    threshold = args.threshold if args.threshold is not None else default_threshold
    baseline = None
    if args.baseline:
        with open(args.baseline, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        baseline = metrics_mod.EvalReport(**doc)
    report = metrics_mod.evaluate(target, data.features, data.labels,
                                  threshold, baseline=baseline)
    if args.format in ("text", "both"):
        sys.stdout.write(report.to_text() + "\n")
    if args.format in ("json", "both") or args.out:
        _emit(report.to_dict(), args.out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    model = model_mod.load_model(args.model)
    backend = "lut" if args.backend == "lut" else "reference_bspline"
    if backend == "lut":
        if not args.compiled:
            raise ConfigError("--backend lut requires --compiled")
        target = compiler_mod.load_compiled(args.compiled)
    else:
        target = model
    if args.data:
        data = _load_labeled(args).features
    else:
        grid = model.layers[0].grid
        rng = np.random.default_rng(args.seed)
        pool = max(args.batch, 256)
        data = rng.uniform(grid.domain_min, grid.domain_max,
                           size=(pool, model.feature_count))
    config = bench_mod.BenchConfig(
        batch_size=args.batch, warmup_iters=args.warmup, timed_iters=args.iters,
        seeds=args.seeds, threads=args.threads, backend=backend,
    )
    report = bench_mod.run_bench(target, data, config, base_seed=args.seed)
    _emit(report.to_dict(), args.out)
    if report.unreliable_timer:
        raise _MeasurementUnreliable(
            "per-iteration time too close to timer resolution; increase batch or iters"
        )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    model = model_mod.load_model(args.model)
    data = _load_labeled(args)
    config = bench_mod.BenchConfig(
        warmup_iters=args.warmup, timed_iters=args.iters,
        seeds=args.seeds, threads=args.threads,
    )
    bench_mod.sweep(
        model, data.features, data.labels,
        lut_sizes=_csv_ints(args.lut_sizes),
        quant_schemes=_csv_strs(args.quants),
        boundary_modes=_csv_strs(args.boundaries),
        oob_policies=_csv_strs(args.oobs),
        bench_config=config,
        out_csv=args.out,
        base_seed=args.seed,
    )
    return EXIT_OK


def _cmd_inspect(args) -> int:
    _emit(compiler_mod.inspect_compiled(args.compiled), args.out)
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    args.data = args.input
    dataset = _load_labeled(args)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        pipe = pipeline_mod.parse_pipeline_config(doc)
    else:
        pipe = pipeline_mod.PreprocessPipeline(
            steps=_csv_strs(args.steps), seed=args.seed)
    result = pipe.run(dataset)
    pipeline_mod.write_csv(result.train, args.out_train, label_column=args.label_column)
    if result.test is not None:
        if not args.out_test:
            raise ConfigError("pipeline produced a test split; pass --out-test")
        pipeline_mod.write_csv(result.test, args.out_test, label_column=args.label_column)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(
        prog="lutkan",
        description="Compile KAN spline models into quantized LUTs and run them fast.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth",
                       help="generate a seeded synthetic model (and dataset)")
    p.add_argument("--topology", required=True, help="comma-separated layer widths, e.g. 78,32,16,1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output model JSON path")
    p.add_argument("--grid-intervals", type=int, default=5)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--domain-min", type=float, default=-1.0)
    p.add_argument("--domain-max", type=float, default=1.0)
    p.add_argument("--coeff-style", default="smooth", choices=("smooth", "rough"))
    p.add_argument("--dataset", default=None, help="also write an oracle-labeled CSV here")
    p.add_argument("--dataset-size", type=int, default=1000)
    p.add_argument("--oob-fraction", type=float, default=0.0)
    p.add_argument("--label-column", default="label")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("compile", help="compile a model into a KLUT file")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_compile_flags(p)
    p.set_defaults(func=_cmd_compile)

    p = sub.add_parser("infer", help="score a feature batch (CSV or KBAT)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--compiled")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="quality report on a labeled CSV")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--compiled")
    p.add_argument("--data", required=True)
    _add_label_flags(p)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--baseline", default=None, help="baseline report JSON for delta F1")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--format", default="both", choices=("json", "text", "both"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="measure infer-only latency")
    p.add_argument("--model", required=True)
    p.add_argument("--compiled", default=None)
    p.add_argument("--batch", type=int, default=256,
                   help="batch size; 1 and 256 are the reference regimes (default 256)")
    p.add_argument("--backend", default="lut", choices=("bspline", "lut"))
    p.add_argument("--data", default=None, help="labeled CSV row pool (default: uniform synthetic)")
    _add_label_flags(p)
    _add_bench_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("sweep",
                       help="quality/latency/memory CSV over configurations")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_label_flags(p)
    p.add_argument("--lut-sizes", default="2,4,8,16,32,64,128,256")
    p.add_argument("--quants", default="sym_int8")
    p.add_argument("--boundaries", default="half_open")
    p.add_argument("--oobs", default="zero_spline")
    _add_bench_flags(p)
    p.add_argument("--out", required=True, help="sweep CSV output path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("inspect", help="dump a KLUT header and totals")
    p.add_argument("compiled", help="path to a KLUT file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("preprocess", help="run the preprocessing pipeline")
    p.add_argument("--input", required=True)
    _add_label_flags(p)
    p.add_argument("--config", default=None, help="pipeline JSON document")
    p.add_argument("--steps", default=",".join(pipeline_mod.STEP_ORDER),
                   help="comma-separated step list when no --config is given")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", default=None)
    p.set_defaults(func=_cmd_preprocess)

    return parser


def _fail(exit_code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps(
        {"error": message, "kind": kind, "exit_code": exit_code}) + "\n")
    return exit_code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except _UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except _USAGE_ERRORS as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except _MALFORMED_ERRORS as exc:
        return _fail(EXIT_MALFORMED, type(exc).__name__, str(exc))
    except _MeasurementUnreliable as exc:
        return _fail(EXIT_UNRELIABLE, "MeasurementUnreliable", str(exc))
    except BrokenPipeError:
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 5
        return _fail(EXIT_INTERNAL, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())

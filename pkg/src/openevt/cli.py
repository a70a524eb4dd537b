"""Command-line front end: fit models, score CSVs, run benchmark protocols.

Every command is deterministic given its inputs and seed; CSV outputs echo
the resolved configuration as comment lines so a run can be reproduced from
its own artifacts. Flags may also be supplied through a plain key=value
config file (flags win on conflict).

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical fit failure.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .data import (DistanceMetric, Standardizer, load_dataset_csv,
                   load_points_csv)
from .errors import OpenEvtError, UsageError
from .harness import (DEFAULT_ALPHA_GRID, DEFAULT_DELTA_GRID,
                      THYROID_TAIL_FRACTIONS, default_toy_config, fit_method,
                      gpdc_tail_fraction_sweep, load_letter, load_thyroid,
                      run_binary_novelty, run_oletter, run_toy_protocol,
                      synthetic_openset_surrogate, thyroid_split)
from .serialize import load_model, save_model


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            args = _apply_config_file(parser, args, argv)
        return args.func(args)
    except OpenEvtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openevt",
        description="Open-set classification with extreme value statistics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")

    p_fit = sub.add_parser("fit", parents=[common],
                           help="fit a model on a training CSV")
    p_fit.add_argument("--method", required=True, choices=["gpdc", "gevc", "evm"])
    p_fit.add_argument("--train", required=True, help="training CSV path")
    p_fit.add_argument("--out", required=True, help="model file to write")
    p_fit.add_argument("--k", type=int, default=None,
                       help="exceedance count (default: 0.25%% tail rule)")
    p_fit.add_argument("--tail-fraction", type=float, default=None,
                       help="set k as a fraction of n instead of --k")
    p_fit.add_argument("--alpha", type=float, default=0.05,
                       help="target type-I error for gpdc/gevc")
    p_fit.add_argument("--gamma", type=float, default=None,
                       help="tail quantile level for gpdc (default 1/n)")
    p_fit.add_argument("--delta", type=float, default=None,
                       help="probability threshold for evm decisions")
    p_fit.add_argument("--metric", default="euclidean",
                       help="euclidean | manhattan | minkowski:Q")
    p_fit.add_argument("--label-column", default="last", choices=["first", "last"])
    p_fit.add_argument("--delimiter", default=",")
    p_fit.add_argument("--header", default="auto", choices=["auto", "yes", "no"])
    p_fit.add_argument("--standardize", action="store_true",
                       help="standardize features (stored in the model file)")
    p_fit.add_argument("--free-endpoint", action="store_true",
                       help="gevc: estimate the Weibull endpoint too")
    p_fit.set_defaults(func=cmd_fit)

    p_score = sub.add_parser("score", parents=[common],
                             help="score a test CSV against a model file")
    p_score.add_argument("--model", required=True, help="model file from fit")
    p_score.add_argument("--test", required=True, help="test CSV path")
    p_score.add_argument("--out", required=True, help="output CSV path")
    p_score.add_argument("--label-column", default="none",
                         choices=["none", "first", "last"],
                         help="ignore this column of the test CSV")
    p_score.add_argument("--delimiter", default=",")
    p_score.add_argument("--header", default="auto", choices=["auto", "yes", "no"])
    p_score.add_argument("--delta", type=float, default=None,
                         help="override the evm probability threshold")
    p_score.add_argument("--hill-plot-out", default=None,
                         help="gpdc: write a per-row k vs xi_hat CSV here")
    p_score.set_defaults(func=cmd_score)

    p_bench = sub.add_parser("benchmark", parents=[common],
                             help="run an evaluation protocol")
    p_bench.add_argument("--protocol", required=True,
                         choices=["toy", "oletter", "thyroid"])
    p_bench.add_argument("--out", default=None, help="metrics CSV path")
    p_bench.add_argument("--data", default=None,
                         help="dataset file (letter/thyroid protocols)")
    p_bench.add_argument("--k", type=int, default=20,
                         help="toy protocol exceedance count")
    p_bench.add_argument("--alpha", type=float, default=0.05)
    p_bench.add_argument("--reps", type=int, default=5,
                         help="oletter repetitions")
    p_bench.add_argument("--full", action="store_true",
                         help="oletter: run the full 20-repetition protocol")
    p_bench.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                         help="worker pool size for protocol repetitions")
    p_bench.add_argument("--alphas", default=None,
                         help="comma list of alpha thresholds (oletter)")
    p_bench.add_argument("--deltas", default=None,
                         help="comma list of evm thresholds (oletter)")
    p_bench.add_argument("--emit-xi", default=None,
                         help="toy: write per-test-point xi_hat CSV here")
    p_bench.add_argument("--roc-out", default=None,
                         help="prefix for per-method ROC curve CSVs")
    p_bench.add_argument("--gpdc-tail-fractions", default=None,
                         help="comma list of tail fractions (thyroid sweep)")
    p_bench.add_argument("--test-known", type=int, default=250,
                         help="thyroid: known rows sampled into the test set")
    p_bench.add_argument("--unknown-classes", default="1,2",
                         help="thyroid: class codes mapped to unknown")
    p_bench.add_argument("--known-classes", default="3",
                         help="thyroid: class codes mapped to known")
    p_bench.set_defaults(func=cmd_benchmark)
    return parser


def _apply_config_file(parser, args, argv):
    """Reparse with file values as defaults so command-line flags win."""
    path = args.config
    if not os.path.exists(path):
        raise UsageError(f"file not found: {path}")
    overrides = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            overrides[key.strip().replace("-", "_")] = value.strip()
    subparsers = parser._subparsers._group_actions[0].choices
    known = {a.dest for a in parser._actions}
    for action in subparsers.values():
        known |= {a.dest for a in action._actions}
    bad = set(overrides) - known
    if bad:
        raise UsageError(f"{path}: unknown config keys: {', '.join(sorted(bad))}")
    coerced = {}
    for key, value in overrides.items():
        if value.lower() in ("true", "false"):
            coerced[key] = value.lower() == "true"
        else:
            coerced[key] = value
    # Subcommands parse into a fresh namespace, so the defaults must be
    # planted on the active subparser, not the root.
    subparsers[args.command].set_defaults(**coerced)
    reparsed = parser.parse_args(argv)
    # argparse keeps string defaults as-is; coerce the numeric ones.
    for key in ("seed", "k", "reps", "jobs", "test_known"):
        if isinstance(getattr(reparsed, key, None), str):
            setattr(reparsed, key, int(getattr(reparsed, key)))
    for key in ("alpha", "gamma", "delta", "tail_fraction"):
        if isinstance(getattr(reparsed, key, None), str):
            setattr(reparsed, key, float(getattr(reparsed, key)))
    return reparsed


# ---------------------------------------------------------------------------
# shared output helpers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, comments, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _config_comments(args, keys) -> list:
    out = [f"openevt {__version__}", f"command={args.command}"]
    for key in keys:
        out.append(f"{key.replace('_', '-')}={_fmt(getattr(args, key))}")
    return out


def _require_file(path, what="file"):
    if path is None or not os.path.exists(path):
        raise UsageError(f"file not found: {path}")


def _header_flag(text: str) -> bool | None:
    return {"auto": None, "yes": True, "no": False}[text]


def _float_list(text: str, flag: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise UsageError(f"{flag}: expected a comma-separated list of numbers") from None
    if not values:
        raise UsageError(f"{flag}: empty list")
    return values


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    _require_file(args.train)
    metric = DistanceMetric.parse(args.metric)
    data = load_dataset_csv(args.train, label_column=args.label_column,
                            delimiter=args.delimiter,
                            header=_header_flag(args.header))
    standardizer = None
    if args.standardize:
        standardizer = Standardizer.fit(data.points)
        data = type(data)(standardizer.apply(data.points), data.labels)
    k = args.k
    if args.tail_fraction is not None:
        if k is not None:
            raise UsageError("pass either --k or --tail-fraction, not both")
        k = max(1, int(np.ceil(args.tail_fraction * data.n)))
    model = fit_method(args.method, data, k=k, alpha=args.alpha,
                       gamma=args.gamma, delta=args.delta, metric=metric,
                       free_endpoint=args.free_endpoint)
    save_model(model, args.out, standardizer=standardizer)

    summary = {
        "method": args.method,
        "n": data.n,
        "p": data.p,
        "classes": data.n_classes,
        "metric": metric.name,
        "standardize": args.standardize,
        "out": args.out,
    }
    if args.method == "gpdc":
        summary.update(k=model.k, alpha=model.alpha, gamma=model.gamma,
                       shape_threshold=model.shape_threshold,
                       radius_threshold=model.radius_threshold)
    elif args.method == "gevc":
        summary.update(alpha=model.alpha, sigma=model.fitted.sigma,
                       weibull_alpha=model.fitted.alpha,
                       endpoint=model.fitted.endpoint,
                       excluded_zeros=model.excluded_zeros)
    else:
        summary.update(k=model.k, delta=model.delta)
    for key, value in summary.items():
        print(f"{key}={_fmt(value)}")
    return 0


# ---------------------------------------------------------------------------
# score


_SCORE_COLUMNS = {
    "gpdc": ("row", "verdict", "score", "xi_hat", "p_xi", "radius", "stage"),
    "gevc": ("row", "verdict", "score", "d0min", "cdf"),
    "evm": ("row", "verdict", "score", "psi"),
}


def cmd_score(args) -> int:
    _require_file(args.model)
    _require_file(args.test)
    loaded = load_model(args.model)
    model = loaded.model
    if args.delta is not None:
        if loaded.kind != "evm":
            raise UsageError("--delta only applies to evm models")
        model.delta = args.delta
    points = load_points_csv(args.test, delimiter=args.delimiter,
                             header=_header_flag(args.header),
                             label_column=args.label_column)
    comments = _config_comments(args, ["model", "test", "label_column",
                                       "delimiter", "header", "seed"])
    comments.append(f"model-kind={loaded.kind}")
    columns = _SCORE_COLUMNS[loaded.kind]
    if points.shape[0] == 0:
        _write_csv(args.out, comments, columns, [])
        print("rows=0")
        return 0
    if points.shape[1] != model.p:
        raise UsageError(
            f"dimension mismatch: test rows have {points.shape[1]} features, "
            f"model expects {model.p}"
        )
    if loaded.standardizer is not None:
        points = loaded.standardizer.apply(points)

    rows = []
    unknown_count = 0
    for i in range(points.shape[0]):
        if loaded.kind == "gpdc":
            verdict, ev = model.score(points[i])
            rows.append((i, verdict.label, verdict.score, ev.xi_hat, ev.p_xi,
                         ev.radius, ev.stage))
        elif loaded.kind == "gevc":
            verdict, d0 = model.score(points[i])
            rows.append((i, verdict.label, verdict.score, d0,
                         verdict.evidence["cdf"]))
        else:
            verdict, psi = model.score(points[i])
            rows.append((i, verdict.label, verdict.score, psi))
        unknown_count += int(verdict.is_unknown)
    _write_csv(args.out, comments, columns, rows)
    if args.hill_plot_out:
        if loaded.kind != "gpdc":
            raise UsageError("--hill-plot-out only applies to gpdc models")
        _write_hill_plot(args, model, points, comments)
    print(f"rows={points.shape[0]}")
    print(f"unknown={unknown_count}")
    return 0


def _write_hill_plot(args, model, points, comments):
    """Per-row tail-shape estimates over a ladder of exceedance counts."""
    n = model.n
    kmax = min(max(model.k * 4, 50), n - 1)
    ladder = sorted({int(k) for k in np.geomspace(5, kmax, num=10)})
    d = model.index.batch_k_smallest(points, kmax + 1)
    rows = []
    for i in range(points.shape[0]):
        if d[i, 0] == 0.0:
            continue
        for k in ladder:
            xi = float(np.log(d[i, :k] / d[i, k]).mean())
            rows.append((i, k, xi))
    _write_csv(args.hill_plot_out, comments, ("row", "k", "xi_hat"), rows)


# ---------------------------------------------------------------------------
# benchmark


def cmd_benchmark(args) -> int:
    if args.protocol == "toy":
        return _benchmark_toy(args)
    if args.protocol == "oletter":
        return _benchmark_oletter(args)
    if args.protocol == "thyroid":
        return _benchmark_thyroid(args)
    raise UsageError(f"unknown protocol {args.protocol!r}")


def _benchmark_toy(args) -> int:
    cfg = default_toy_config(args.seed)
    result = run_toy_protocol(cfg, k=args.k, alpha=args.alpha)
    comments = _config_comments(args, ["protocol", "seed", "k", "alpha"])
    rows = [(m, "auc", result.aucs[m]) for m in sorted(result.aucs)]
    if args.out:
        _write_csv(args.out, comments, ("method", "metric", "value"), rows)
    for method, _, value in rows:
        print(f"auc.{method}={_fmt(value)}")
    if args.emit_xi:
        xi_rows = [(i, result.xi_hat[i], bool(result.test.is_known[i]))
                   for i in range(result.test.points.shape[0])]
        _write_csv(args.emit_xi, comments, ("row", "xi_hat", "is_known"), xi_rows)
    if args.roc_out:
        for method, curve in result.curves.items():
            _write_csv(f"{args.roc_out}.{method}.csv", comments,
                       ("fpr", "tpr"), curve.points)
    return 0


def _benchmark_oletter(args) -> int:
    reps = 20 if args.full else args.reps
    if args.data is not None:
        _require_file(args.data)
        data = load_letter(args.data)
        train_count = 15000 if data.n >= 20000 else None
    else:
        data, train_count = synthetic_openset_surrogate(seed=args.seed)
    alphas = (_float_list(args.alphas, "--alphas")
              if args.alphas else DEFAULT_ALPHA_GRID)
    deltas = (_float_list(args.deltas, "--deltas")
              if args.deltas else DEFAULT_DELTA_GRID)
    steps = run_oletter(data, reps=reps, seed=args.seed,
                        train_count=train_count, alphas=alphas, deltas=deltas,
                        jobs=args.jobs)
    comments = _config_comments(args, ["protocol", "seed", "reps", "jobs"])
    comments.append(f"data={args.data or 'synthetic-surrogate'}")
    rows = []
    for step in steps:
        for method, curve in sorted(step.f_measures.items()):
            for threshold, f in curve:
                rows.append((step.rep, step.n_unknown_classes, method,
                             threshold, f))
    if args.out:
        _write_csv(args.out, comments,
                   ("rep", "unknown_classes", "method", "threshold", "f_measure"),
                   rows)
    # Stdout summary: mean best-threshold F at the widest openness step.
    last = max(s.n_unknown_classes for s in steps)
    for method in sorted(steps[0].f_measures):
        vals = []
        for step in steps:
            if step.n_unknown_classes == last:
                fs = [f for _, f in step.f_measures[method] if f is not None]
                if fs:
                    vals.append(max(fs))
        if vals:
            print(f"f.best.{method}={_fmt(float(np.mean(vals)))}")
    print(f"steps={len(steps)}")
    return 0


def _benchmark_thyroid(args) -> int:
    _require_file(args.data)
    points, is_unknown = load_thyroid(
        args.data,
        unknown_classes=tuple(args.unknown_classes.split(",")),
        known_classes=tuple(args.known_classes.split(",")),
    )
    train, test = thyroid_split(points, is_unknown, seed=args.seed,
                                test_known=args.test_known)
    fractions = (_float_list(args.gpdc_tail_fractions, "--gpdc-tail-fractions")
                 if args.gpdc_tail_fractions else THYROID_TAIL_FRACTIONS)
    curves = run_binary_novelty(train, test, alpha=args.alpha)
    sweep = gpdc_tail_fraction_sweep(train, test, fractions=fractions,
                                     alpha=args.alpha)
    comments = _config_comments(args, ["protocol", "seed", "data", "alpha",
                                       "test_known"])
    rows = []
    for method in sorted(curves):
        curve = curves[method]
        rows.append((method, "auc", None, None,
                     None if curve is None else curve.auc))
    for frac, k, auc in sweep:
        rows.append(("gpdc", "auc_vs_k", frac, k, auc))
    if args.out:
        _write_csv(args.out, comments,
                   ("method", "metric", "tail_fraction", "k", "value"), rows)
    for method in sorted(curves):
        curve = curves[method]
        value = "unsupported" if curve is None else _fmt(curve.auc)
        print(f"auc.{method}={value}")
    best = max(sweep, key=lambda t: t[2])
    print(f"gpdc.best.tail_fraction={_fmt(best[0])}")
    print(f"gpdc.best.k={best[1]}")
    print(f"gpdc.best.auc={_fmt(best[2])}")
    if args.roc_out:
        for method, curve in curves.items():
            if curve is None:
                continue
            _write_csv(f"{args.roc_out}.{method}.csv", comments,
                       ("fpr", "tpr"), curve.points)
    return 0


if __name__ == "__main__":
    sys.exit(main())

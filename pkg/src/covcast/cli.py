"""Command line interface.

Commands
--------
fit
    Fit the pipeline described by a recipe on a data file, print train
    and test scores, and save the model.
score
    Print the mean per-sample log-likelihood of a data file under a model.
whiten
    Write the whitened outcomes of a data file to CSV.
predict
    Write predicted covariances (and means, when modeled) to CSV.
report
    Print summary statistics and optionally write per-row log-likelihoods.
oracle-check
    Run the randomized self-checks of the numerical core.

Exit codes: 0 on success, 1 on a user error (bad files, bad options,
inconsistent dimensions), 2 on an internal failure.
"""

from __future__ import annotations

import argparse
import sys
import traceback

import numpy as np

from . import __version__, oracles
from .dataio import (
    Model,
    build_feature_rows,
    build_model_dataset,
    load_model,
    load_recipe,
    prepare_fit_data,
    read_table,
    save_model,
    write_predictions_csv,
    write_report_csv,
    write_whitened_csv,
)
from .errors import (
    CovcastError,
    RecipeError,
    SolverFailure,
)
from .fit import fit_pipeline
from .whiteners import predict_point, replicate_horizon, score, whiten_dataset


def _check_rolling_horizon(stages, horizon: int) -> None:
    if horizon > 1 and any(s.kind in ("sma", "ewma") for s in stages):
        raise RecipeError(
            "rolling stages need per-row timestamps, which horizon replication "
            "discards; use horizon 1 or feature-only stages"
        )


def cmd_fit(args) -> int:
    recipe = load_recipe(args.recipe)
    horizon = recipe.horizon if args.horizon is None else args.horizon
    if horizon < 1:
        raise RecipeError(f"horizon must be positive, got {horizon}")
    _check_rolling_horizon(recipe.stages, horizon)
    table = read_table(args.data, recipe.index_column)
    train, test, specs = prepare_fit_data(recipe, table)
    train_fit = replicate_horizon(train, horizon)
    test_fit = replicate_horizon(test, horizon)
    pipeline = fit_pipeline(recipe.stages, train_fit, threads=args.threads,
                            fast_unconstrained=args.fast_unconstrained)
    print(f"train score {score(pipeline, train_fit):.4f}")
    print(f"test score {score(pipeline, test_fit):.4f}")
    model = Model(recipe.index_column, recipe.outcome_columns, specs, horizon,
                  pipeline)
    save_model(model, args.out)
    print(f"saved {args.out}")
    return 0


def cmd_score(args) -> int:
    model = load_model(args.model)
    table = read_table(args.data, model.index_column)
    data = replicate_horizon(build_model_dataset(model, table), model.horizon)
    print(f"score {score(model.pipeline, data):.4f}")
    return 0


def cmd_whiten(args) -> int:
    model = load_model(args.model)
    table = read_table(args.data, model.index_column)
    data = build_model_dataset(model, table)
    result = whiten_dataset(model.pipeline, data)
    write_whitened_csv(args.out, table.index_name, result.dataset.timestamps,
                       model.outcome_columns, result.dataset.outcomes)
    print(f"wrote {result.dataset.n_samples} rows to {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    table = read_table(args.data, model.index_column)
    features, index = build_feature_rows(model, table)
    covariances = []
    means = None
    for i in range(features.shape[0]):
        cov, mean = predict_point(model.pipeline, features[i])
        covariances.append(cov)
        if mean is not None:
            if means is None:
                means = np.empty((features.shape[0], model.pipeline.n))
            means[i] = mean
    write_predictions_csv(args.out, table.index_name, index,
                          model.outcome_columns, covariances, means)
    print(f"wrote {len(covariances)} rows to {args.out}")
    return 0


def cmd_report(args) -> int:
    model = load_model(args.model)
    table = read_table(args.data, model.index_column)
    data = build_model_dataset(model, table)
    result = whiten_dataset(model.pipeline, data)
    logliks = result.sample_logliks()
    print(f"rows {logliks.size}")
    print(f"dropped {result.dropped_rows}")
    print(f"mean loglik {np.mean(logliks):.4f}")
    print(f"min loglik {np.min(logliks):.4f}")
    print(f"max loglik {np.max(logliks):.4f}")
    if args.out:
        write_report_csv(args.out, table.index_name, result.dataset.timestamps,
                         model.outcome_columns, logliks, result.factors,
                         result.covariances, result.logdets)
        print(f"wrote {logliks.size} rows to {args.out}")
    return 0


def cmd_oracle_check(args) -> int:
    return 0 if oracles.run_all(args.seed) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covcast",
        description="Fit and apply feature-dependent Gaussian covariance models.",
    )
    parser.add_argument("--version", action="version", version=f"covcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a pipeline from a recipe")
    fit.add_argument("--recipe", required=True, help="recipe JSON file")
    fit.add_argument("--data", required=True, help="training data CSV")
    fit.add_argument("--out", required=True, help="where to write the model JSON")
    fit.add_argument("--horizon", type=int, default=None,
                     help="override the recipe's forecast horizon")
    fit.add_argument("--threads", type=int, default=1,
                     help="threads for likelihood evaluation (default 1)")
    fit.add_argument("--fast-unconstrained", action="store_true",
                     help="try an unconstrained solve first and fall back to the "
                          "constrained one if infeasible")
    fit.set_defaults(func=cmd_fit)

    score_p = sub.add_parser("score", help="score a data file under a model")
    score_p.add_argument("--model", required=True)
    score_p.add_argument("--data", required=True)
    score_p.set_defaults(func=cmd_score)

    whiten = sub.add_parser("whiten", help="write whitened outcomes to CSV")
    whiten.add_argument("--model", required=True)
    whiten.add_argument("--data", required=True)
    whiten.add_argument("--out", required=True)
    whiten.set_defaults(func=cmd_whiten)

    predict = sub.add_parser("predict", help="write predicted covariances to CSV")
    predict.add_argument("--model", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument("--out", required=True)
    predict.set_defaults(func=cmd_predict)

    report = sub.add_parser("report", help="per-row log-likelihood report")
    report.add_argument("--model", required=True)
    report.add_argument("--data", required=True)
    report.add_argument("--out", default=None, help="optional per-row CSV")
    report.set_defaults(func=cmd_report)

    oracle = sub.add_parser("oracle-check", help="run randomized self-checks")
    oracle.add_argument("--seed", type=int, default=0)
    oracle.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (CovcastError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()

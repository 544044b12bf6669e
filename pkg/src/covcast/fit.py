"""Fitting whole pipelines from stage specifications.

Stages are fitted in order: each stage sees the training data as
whitened by the stages before it, so later stages model whatever
structure the earlier ones left behind.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .errors import RecipeError
from .objective import FitConfig
from .solver import fit_diagonal, fit_regression
from .whiteners import (
    Pipeline,
    WhitenerStage,
    fit_constant,
    fit_ewma,
    fit_permutation,
    fit_sma,
    whiten_dataset,
)

_CONFIG_KEYS = ("epsilon", "lambda1", "lambda2", "mean_ridge", "trace_ridge",
                "max_iters", "grad_tolerance", "lbfgs_memory")


def _regression_config(options: dict, threads: int, fast_unconstrained: bool) -> FitConfig:
    kwargs = {k: options[k] for k in _CONFIG_KEYS if k in options}
    try:
        return FitConfig(threads=threads, fast_unconstrained=fast_unconstrained,
                         **kwargs)
    except ValueError as exc:
        raise RecipeError(f"bad regression options: {exc}") from exc


def fit_stage(kind: str, options: dict, data: Dataset, *, threads: int = 1,
              fast_unconstrained: bool = False) -> WhitenerStage:
    """Fit one stage of the given kind on (already whitened) data."""
    if kind == "constant":
        return fit_constant(data, float(options.get("diagonal_loading", 0.0)))
    if kind == "sma":
        return fit_sma(data, int(options["memory"]),
                       float(options.get("diagonal_loading", 0.0)))
    if kind == "ewma":
        return fit_ewma(data, float(options["half_life"]),
                        float(options.get("diagonal_loading", 0.0)))
    if kind == "permutation":
        return fit_permutation(np.asarray(options["order"], dtype=np.int64))
    if kind == "diagonal":
        return fit_diagonal(
            data, ridge=float(options.get("ridge", 0.0)),
            max_iters=int(options.get("max_iters", 500)),
            grad_tolerance=float(options.get("grad_tolerance", 1e-7)),
            lbfgs_memory=int(options.get("lbfgs_memory", 10)),
        )
    if kind == "regression":
        config = _regression_config(
            {k: v for k, v in options.items() if k != "with_mean"},
            threads, fast_unconstrained,
        )
        return fit_regression(data, config,
                              with_mean=bool(options.get("with_mean", False)))
    raise RecipeError(f"unknown stage kind {kind!r}")


def fit_pipeline(stage_specs, data: Dataset, *, threads: int = 1,
                 fast_unconstrained: bool = False) -> Pipeline:
    """Fit stages in sequence on progressively whitened training data.

    ``stage_specs`` is an iterable of objects with ``kind`` and
    ``options`` attributes (see :class:`covcast.dataio.StageSpec`).
    """
    n = data.n_outcomes
    p = data.n_features
    stages: list[WhitenerStage] = []
    current = data
    for spec in stage_specs:
        stage = fit_stage(spec.kind, spec.options, current, threads=threads,
                          fast_unconstrained=fast_unconstrained)
        stages.append(stage)
        current = whiten_dataset(Pipeline((stage,), n, p), current).dataset
    return Pipeline(tuple(stages), n, p)

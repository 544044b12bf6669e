"""File formats: CSV tables, fit recipes, and saved models.

A data file is a CSV with a header, one index column (timestamps or any
strictly increasing key), and numeric columns for features and outcomes.
A recipe is a JSON document describing how to turn a data file into a
training problem: which columns are outcomes, which columns (and
trailing-window summaries of them) become features, how to split
train/test, and which whitening stages to fit. A model is a JSON
document holding the fitted pipeline together with everything needed to
rebuild its features from a fresh data file.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import Dataset
from .errors import ParseError, RecipeError, SchemaError, VersionMismatch
from .features import Transform, fit_transform, transform_from_dict, transform_to_dict
from .whiteners import Pipeline, pipeline_from_dict, pipeline_to_dict

RECIPE_VERSION = 1
MODEL_VERSION = 1

_STAGE_OPTION_KEYS = {
    "constant": {"diagonal_loading"},
    "sma": {"memory", "diagonal_loading"},
    "ewma": {"half_life", "diagonal_loading"},
    "permutation": {"order"},
    "diagonal": {"ridge", "max_iters", "grad_tolerance", "lbfgs_memory"},
    "regression": {"epsilon", "lambda1", "lambda2", "mean_ridge", "trace_ridge",
                   "max_iters", "grad_tolerance", "lbfgs_memory", "with_mean"},
}


# ---------------------------------------------------------------------------
# Data files


@dataclass(frozen=True)
class Table:
    """A parsed data file: an index plus named numeric columns."""

    index_name: str
    index: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise ParseError(
                f"data file has no column {name!r}; available columns are "
                f"{list(self.columns)}"
            ) from None
        return self.values[:, j]


def read_table(path: str, index_column: str | None = None) -> Table:
    """Parse a CSV data file.

    The index column (by default the first column) may hold numbers or
    strings; every other cell must parse as a number. Parse failures
    report the file line and column name.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("data file is empty") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise ParseError("data file needs an index column and at least one value column")
        if len(set(header)) != len(header):
            raise ParseError("data file has duplicate column names")
        if index_column is None:
            index_pos = 0
        else:
            if index_column not in header:
                raise ParseError(f"data file has no column {index_column!r}")
            index_pos = header.index(index_column)
        names = [h for i, h in enumerate(header) if i != index_pos]
        index_raw: list[str] = []
        rows: list[list[float]] = []
        for line_no, record in enumerate(reader, start=2):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue  # blank line
            if len(record) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(record)}", row=line_no
                )
            parsed = []
            for pos, cell in enumerate(record):
                if pos == index_pos:
                    index_raw.append(cell.strip())
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"could not parse {cell.strip()!r} as a number",
                        row=line_no, column=header[pos],
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ParseError("data file has no data rows")
    try:
        index: np.ndarray = np.array([float(v) for v in index_raw])
    except ValueError:
        index = np.array(index_raw)
    return Table(header[index_pos], index, tuple(names), np.array(rows))


# ---------------------------------------------------------------------------
# Recipes


@dataclass(frozen=True)
class RecipeFeature:
    source: str
    transform: str
    windows: tuple[int, ...]


@dataclass(frozen=True)
class StageSpec:
    kind: str
    options: dict


@dataclass(frozen=True)
class Recipe:
    index_column: str | None
    outcome_columns: tuple[str, ...]
    features: tuple[RecipeFeature, ...]
    split_fraction: float | None
    split_timestamp: str | None
    horizon: int
    stages: tuple[StageSpec, ...]


def _want(doc: dict, key: str, path: str):
    if key not in doc:
        raise RecipeError(f"missing required field {key!r}", path=path)
    return doc[key]


def _parse_recipe_feature(doc, path: str) -> RecipeFeature:
    if not isinstance(doc, dict):
        raise RecipeError("feature entry must be an object", path=path)
    source = _want(doc, "source", path)
    if not isinstance(source, str) or not source:
        raise RecipeError("'source' must be a non-empty string", path=f"{path}.source")
    transform = _want(doc, "transform", path)
    if transform not in ("clip", "minmax", "quantile"):
        raise RecipeError(
            f"unknown transform {transform!r} (expected clip, minmax or quantile)",
            path=f"{path}.transform",
        )
    windows_doc = doc.get("windows", [])
    if not isinstance(windows_doc, list):
        raise RecipeError("'windows' must be a list of positive integers",
                          path=f"{path}.windows")
    windows = []
    for w in windows_doc:
        if not isinstance(w, int) or isinstance(w, bool) or w < 1:
            raise RecipeError(f"window {w!r} is not a positive integer",
                              path=f"{path}.windows")
        windows.append(w)
    if len(set(windows)) != len(windows):
        raise RecipeError("windows must be distinct", path=f"{path}.windows")
    extra = set(doc) - {"source", "transform", "windows"}
    if extra:
        raise RecipeError(f"unknown fields {sorted(extra)}", path=path)
    return RecipeFeature(source, transform, tuple(windows))


def _parse_stage_spec(doc, path: str) -> StageSpec:
    if not isinstance(doc, dict):
        raise RecipeError("stage entry must be an object", path=path)
    kind = _want(doc, "kind", path)
    if kind not in _STAGE_OPTION_KEYS:
        raise RecipeError(
            f"unknown stage kind {kind!r} (expected one of "
            f"{sorted(_STAGE_OPTION_KEYS)})", path=f"{path}.kind"
        )
    options = {k: v for k, v in doc.items() if k != "kind"}
    extra = set(options) - _STAGE_OPTION_KEYS[kind]
    if extra:
        raise RecipeError(
            f"unknown options {sorted(extra)} for stage kind {kind!r}", path=path
        )
    if kind == "sma" and "memory" not in options:
        raise RecipeError("sma stage needs a 'memory' option", path=path)
    if kind == "ewma" and "half_life" not in options:
        raise RecipeError("ewma stage needs a 'half_life' option", path=path)
    if kind == "permutation" and "order" not in options:
        raise RecipeError("permutation stage needs an 'order' option", path=path)
    return StageSpec(kind, options)


def parse_recipe(doc: dict) -> Recipe:
    if not isinstance(doc, dict):
        raise RecipeError("recipe must be a JSON object")
    version = doc.get("version")
    if version != RECIPE_VERSION:
        raise VersionMismatch(
            f"recipe has version {version!r}, expected {RECIPE_VERSION}"
        )
    index_column = doc.get("index_column")
    if index_column is not None and not isinstance(index_column, str):
        raise RecipeError("'index_column' must be a string", path="index_column")

    outcomes = _want(doc, "outcome_columns", "outcome_columns")
    if (not isinstance(outcomes, list) or not outcomes
            or not all(isinstance(c, str) and c for c in outcomes)):
        raise RecipeError("'outcome_columns' must be a non-empty list of column names",
                          path="outcome_columns")
    if len(set(outcomes)) != len(outcomes):
        raise RecipeError("'outcome_columns' has duplicates", path="outcome_columns")

    features_doc = doc.get("features", [])
    if not isinstance(features_doc, list):
        raise RecipeError("'features' must be a list", path="features")
    features = tuple(
        _parse_recipe_feature(f, f"features[{i}]") for i, f in enumerate(features_doc)
    )

    split = _want(doc, "split", "split")
    if not isinstance(split, dict) or set(split) not in ({"fraction"}, {"timestamp"}):
        raise RecipeError(
            "'split' must be an object with exactly one of 'fraction' or 'timestamp'",
            path="split",
        )
    fraction = None
    timestamp = None
    if "fraction" in split:
        fraction = split["fraction"]
        if not isinstance(fraction, (int, float)) or not 0.0 < fraction < 1.0:
            raise RecipeError("'fraction' must lie strictly between 0 and 1",
                              path="split.fraction")
        fraction = float(fraction)
    else:
        timestamp = split["timestamp"]
        if not isinstance(timestamp, (str, int, float)) or isinstance(timestamp, bool):
            raise RecipeError("'timestamp' must be a string or number",
                              path="split.timestamp")
        timestamp = str(timestamp)

    horizon = doc.get("horizon", 1)
    if not isinstance(horizon, int) or isinstance(horizon, bool) or horizon < 1:
        raise RecipeError("'horizon' must be a positive integer", path="horizon")

    stages_doc = _want(doc, "stages", "stages")
    if not isinstance(stages_doc, list) or not stages_doc:
        raise RecipeError("'stages' must be a non-empty list", path="stages")
    stages = tuple(
        _parse_stage_spec(s, f"stages[{i}]") for i, s in enumerate(stages_doc)
    )

    known = {"version", "index_column", "outcome_columns", "features", "split",
             "horizon", "stages"}
    extra = set(doc) - known
    if extra:
        raise RecipeError(f"unknown fields {sorted(extra)}")
    return Recipe(index_column, tuple(outcomes), features, fraction, timestamp,
                  horizon, stages)


def load_recipe(path: str) -> Recipe:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RecipeError(f"recipe is not valid JSON: {exc}") from exc
    return parse_recipe(doc)


# ---------------------------------------------------------------------------
# Feature assembly


@dataclass(frozen=True)
class FeatureSpec:
    """One model feature: a source column, a trailing window, a transform.

    ``window`` 0 uses the row's own value; window w > 0 averages the
    previous w rows of the source column, excluding the current row, so
    windowed features only see strictly older data.
    """

    name: str
    source: str
    window: int
    transform: Transform | None


@dataclass(frozen=True)
class _PendingFeature:
    """An expanded feature column whose transform is not yet fitted."""

    name: str
    source: str
    window: int
    kind: str


def expand_features(features: tuple[RecipeFeature, ...]) -> list[_PendingFeature]:
    """One pending column per (source, window) pair of the recipe."""
    specs: list[_PendingFeature] = []
    for feature in features:
        if not feature.windows:
            specs.append(_PendingFeature(feature.source, feature.source, 0,
                                         feature.transform))
        else:
            for w in feature.windows:
                specs.append(_PendingFeature(f"{feature.source}_w{w}", feature.source,
                                             w, feature.transform))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise RecipeError(f"expanded feature names collide: {names}", path="features")
    return specs


def raw_feature_matrix(table: Table, specs) -> tuple[np.ndarray, int]:
    """Untransformed feature values and the warm-up row count.

    Rows before the warm-up (the largest window) have undefined windowed
    values and must be dropped by the caller.
    """
    out = np.empty((table.n_rows, len(specs)))
    warmup = 0
    for j, spec in enumerate(specs):
        col = table.column(spec.source)
        if spec.window == 0:
            out[:, j] = col
            continue
        w = spec.window
        warmup = max(warmup, w)
        vals = np.full(table.n_rows, np.nan)
        if table.n_rows > w:
            vals[w:] = sliding_window_view(col, w).mean(axis=1)[: table.n_rows - w]
        out[:, j] = vals
    return out, warmup


def split_boundary(table: Table, recipe: Recipe) -> int:
    """First test row. Computed on raw rows, before any warm-up drop."""
    n = table.n_rows
    if recipe.split_fraction is not None:
        boundary = int(n * recipe.split_fraction)
    else:
        ts = recipe.split_timestamp
        if table.index.dtype.kind == "f":
            try:
                key = float(ts)
            except ValueError:
                raise RecipeError(
                    f"split timestamp {ts!r} is not numeric but the data index is",
                    path="split.timestamp",
                ) from None
            boundary = int(np.searchsorted(table.index, key, side="left"))
        else:
            boundary = int(np.searchsorted(table.index, ts, side="left"))
    if not 1 <= boundary <= n - 1:
        raise RecipeError(
            f"split leaves an empty side (boundary {boundary} of {n} rows)",
            path="split",
        )
    return boundary


def _apply_specs(raw: np.ndarray, specs) -> np.ndarray:
    if not specs:
        return np.empty((raw.shape[0], 0))
    return np.column_stack([
        spec.transform.apply(raw[:, j]) for j, spec in enumerate(specs)
    ])


def prepare_fit_data(recipe: Recipe, table: Table):
    """Assemble train and test datasets and fit the feature transforms.

    Returns (train, test, fitted_specs). Transforms are fitted on the
    training rows only; the split boundary comes from the raw row count
    and warm-up rows are then dropped from the training side.
    """
    specs = expand_features(recipe.features)
    raw, warmup = raw_feature_matrix(table, specs)
    outcomes = (np.column_stack([table.column(c) for c in recipe.outcome_columns])
                if recipe.outcome_columns else np.empty((table.n_rows, 0)))
    boundary = split_boundary(table, recipe)
    if boundary <= warmup:
        raise RecipeError(
            f"feature warm-up ({warmup} rows) consumes the whole training side "
            f"(boundary {boundary})", path="split",
        )
    fitted = [
        FeatureSpec(spec.name, spec.source, spec.window,
                    fit_transform(spec.kind, raw[warmup:boundary, j]))
        for j, spec in enumerate(specs)
    ]
    feats = _apply_specs(raw, fitted)
    train = Dataset(feats[warmup:boundary], outcomes[warmup:boundary],
                    table.index[warmup:boundary])
    test = Dataset(feats[boundary:], outcomes[boundary:], table.index[boundary:])
    return train, test, tuple(fitted)


def build_model_dataset(model: "Model", table: Table) -> Dataset:
    """Dataset for scoring a data file under a saved model."""
    raw, warmup = raw_feature_matrix(table, model.features)
    feats = _apply_specs(raw, model.features)
    outcomes = np.column_stack([table.column(c) for c in model.outcome_columns])
    return Dataset(feats[warmup:], outcomes[warmup:], table.index[warmup:])


def build_feature_rows(model: "Model", table: Table):
    """Features and index only, for covariance prediction without outcomes."""
    raw, warmup = raw_feature_matrix(table, model.features)
    feats = _apply_specs(raw, model.features)
    return feats[warmup:], table.index[warmup:]


# ---------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class Model:
    index_column: str | None
    outcome_columns: tuple[str, ...]
    features: tuple[FeatureSpec, ...]
    horizon: int
    pipeline: Pipeline


def model_to_dict(model: Model) -> dict:
    return {
        "version": MODEL_VERSION,
        "index_column": model.index_column,
        "outcome_columns": list(model.outcome_columns),
        "features": [
            {"name": s.name, "source": s.source, "window": s.window,
             "transform": transform_to_dict(s.transform)}
            for s in model.features
        ],
        "horizon": model.horizon,
        "pipeline": pipeline_to_dict(model.pipeline),
    }


def model_from_dict(doc: dict) -> Model:
    if not isinstance(doc, dict):
        raise SchemaError("model document must be an object")
    version = doc.get("version")
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model has version {version!r}, expected {MODEL_VERSION}")
    try:
        outcome_columns = tuple(doc["outcome_columns"])
        features_doc = doc["features"]
        horizon = int(doc["horizon"])
        pipeline_doc = doc["pipeline"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"model document is malformed: {exc}") from exc
    if not all(isinstance(c, str) for c in outcome_columns) or not outcome_columns:
        raise SchemaError("model field 'outcome_columns' must be a list of names")
    if horizon < 1:
        raise SchemaError(f"model horizon must be positive, got {horizon}")
    features = []
    for i, f in enumerate(features_doc):
        try:
            features.append(FeatureSpec(
                str(f["name"]), str(f["source"]), int(f["window"]),
                transform_from_dict(f["transform"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"model feature {i} is malformed: {exc}") from exc
        if features[-1].window < 0:
            raise SchemaError(f"model feature {i} has a negative window")
    pipeline = pipeline_from_dict(pipeline_doc)
    if pipeline.p != len(features):
        raise SchemaError(
            f"model lists {len(features)} features but its pipeline expects "
            f"{pipeline.p}"
        )
    if pipeline.n != len(outcome_columns):
        raise SchemaError(
            f"model lists {len(outcome_columns)} outcomes but its pipeline "
            f"expects {pipeline.n}"
        )
    index_column = doc.get("index_column")
    if index_column is not None:
        index_column = str(index_column)
    return Model(index_column, outcome_columns, tuple(features), horizon, pipeline)


def save_model(model: Model, path: str) -> None:
    """Write the model as JSON. Floats keep full precision, so loading
    reproduces the pipeline bit for bit."""
    doc = model_to_dict(model)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> Model:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(doc)


# ---------------------------------------------------------------------------
# Output files


def _format_index(value) -> str:
    if isinstance(value, (float, np.floating)):
        as_float = float(value)
        if as_float == int(as_float):
            return str(int(as_float))
        return repr(as_float)
    return str(value)


def write_whitened_csv(path: str, index_name: str, index: np.ndarray,
                       outcome_columns, whitened: np.ndarray) -> None:
    """Whitened outcomes, one row per surviving input row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([index_name] + [f"z_{c}" for c in outcome_columns])
        for i in range(whitened.shape[0]):
            writer.writerow([_format_index(index[i])]
                            + [repr(float(v)) for v in whitened[i]])


def write_report_csv(path: str, index_name: str, index: np.ndarray,
                     outcome_columns, logliks: np.ndarray, factors,
                     covariances, logdets: np.ndarray) -> None:
    """Per-row model diagnostics.

    Columns: the index, the log-likelihood, the whitener entries
    ``L_<a>_<b>`` (lower triangle, row-major), the predicted volatilities
    ``vol_<c>`` (square roots of the covariance diagonal), the pairwise
    correlations ``corr_<a>_<b>``, and ``logdet``, the log-determinant of
    the predicted covariance. Enough to regenerate volatility and
    correlation plots externally.
    """
    names = list(outcome_columns)
    n = len(names)
    header = [index_name, "loglik"]
    header += [f"L_{names[i]}_{names[j]}" for i in range(n) for j in range(i + 1)]
    header += [f"vol_{c}" for c in names]
    header += [f"corr_{names[i]}_{names[j]}"
               for i in range(n) for j in range(i + 1, n)]
    header.append("logdet")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in range(logliks.shape[0]):
            cov = covariances[r].entries
            vols = np.sqrt(np.diag(cov))
            dense = factors[r].dense()
            row = [_format_index(index[r]), repr(float(logliks[r]))]
            row += [repr(float(dense[i, j]))
                    for i in range(n) for j in range(i + 1)]
            row += [repr(float(v)) for v in vols]
            row += [repr(float(cov[i, j] / (vols[i] * vols[j])))
                    for i in range(n) for j in range(i + 1, n)]
            # logdet of the covariance; the factor carries log det L
            row.append(repr(float(-2.0 * logdets[r])))
            writer.writerow(row)


def write_predictions_csv(path: str, index_name: str, index: np.ndarray,
                          outcome_columns, covariances,
                          means: np.ndarray | None = None) -> None:
    """Predicted covariance entries (upper triangle) and optional means."""
    names = list(outcome_columns)
    n = len(names)
    header = [index_name]
    header += [f"cov_{names[i]}_{names[j]}" for i in range(n) for j in range(i, n)]
    if means is not None:
        header += [f"mean_{c}" for c in names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r, cov in enumerate(covariances):
            row = [_format_index(index[r])]
            row += [repr(float(cov.entries[i, j]))
                    for i in range(n) for j in range(i, n)]
            if means is not None:
                row += [repr(float(v)) for v in means[r]]
            writer.writerow(row)

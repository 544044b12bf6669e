"""Feature transforms: fitting, application, serialization."""

import numpy as np
import pytest

from covcast.errors import DegenerateColumn, SchemaError
from covcast.features import (
    Transform,
    fit_transform,
    transform_from_dict,
    transform_to_dict,
)


def test_minmax_maps_endpoints_to_unit_box():
    t = fit_transform("minmax", np.array([2.0, 6.0, 4.0]))
    out = t.apply(np.array([2.0, 6.0, 4.0]))
    assert np.allclose(out, [-1.0, 1.0, 0.0])


def test_minmax_clips_outside_training_range():
    t = fit_transform("minmax", np.array([0.0, 10.0]))
    out = t.apply(np.array([-5.0, 15.0]))
    assert np.allclose(out, [-1.0, 1.0])


def test_minmax_rejects_constant_column():
    with pytest.raises(DegenerateColumn):
        fit_transform("minmax", np.full(5, 3.0))


def test_clip_passes_in_range_values():
    t = fit_transform("clip", np.array([-0.4, 0.2, 0.9]))
    out = t.apply(np.array([-0.4, 0.2, 0.9]))
    assert np.allclose(out, [-0.4, 0.2, 0.9])


def test_clip_is_stateless_unit_box_clamp():
    t = fit_transform("clip", np.array([-0.5, 0.5]))
    out = t.apply(np.array([-2.0, 0.0, 2.0]))
    assert np.allclose(out, [-1.0, 0.0, 1.0])


def test_quantile_median_maps_to_zero():
    t = fit_transform("quantile", np.array([10.0, 20.0, 30.0]))
    assert t.apply(np.array([20.0]))[0] == pytest.approx(0.0, abs=1e-12)


def test_quantile_extremes():
    t = fit_transform("quantile", np.array([10.0, 20.0, 30.0]))
    # below the training minimum pins to -1, at the minimum uses its mid-rank
    assert t.apply(np.array([5.0]))[0] == pytest.approx(-1.0)
    assert t.apply(np.array([10.0]))[0] == pytest.approx(-2.0 / 3.0)
    assert t.apply(np.array([30.0]))[0] == pytest.approx(2.0 / 3.0)
    assert t.apply(np.array([100.0]))[0] == pytest.approx(1.0)


def test_quantile_interpolates_between_training_points():
    t = fit_transform("quantile", np.array([0.0, 1.0]))
    # mid-ranks 0.25 and 0.75 map to -0.5 and 0.5; halfway interpolates to 0
    assert t.apply(np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-12)


def test_quantile_averages_tied_ranks():
    t = fit_transform("quantile", np.array([1.0, 2.0, 2.0, 3.0]))
    # ties share the mean of their mid-ranks: (0.375 + 0.625) / 2 = 0.5 -> 0
    assert t.apply(np.array([2.0]))[0] == pytest.approx(0.0, abs=1e-12)


def test_quantile_output_is_monotone(rng):
    column = rng.normal(size=200)
    t = fit_transform("quantile", column)
    probe = np.linspace(column.min() - 1, column.max() + 1, 500)
    out = t.apply(probe)
    assert np.all(np.diff(out) >= 0)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_unknown_transform_kind():
    with pytest.raises(SchemaError):
        fit_transform("zscore", np.array([1.0, 2.0]))


def test_transform_round_trip(rng):
    column = rng.normal(size=50)
    for kind in ("clip", "minmax", "quantile"):
        t = fit_transform(kind, column)
        back = transform_from_dict(transform_to_dict(t))
        probe = rng.normal(size=20)
        assert np.array_equal(t.apply(probe), back.apply(probe))


def test_transform_from_dict_validates():
    with pytest.raises(SchemaError):
        transform_from_dict({"kind": "mystery"})
    with pytest.raises(SchemaError):
        transform_from_dict({"kind": "minmax", "low": 1.0})  # missing high
    with pytest.raises(SchemaError):
        transform_from_dict({"kind": "minmax", "low": 2.0, "high": 1.0})
    with pytest.raises(SchemaError):
        transform_from_dict({"kind": "quantile", "values": [2.0, 1.0],
                             "positions": [0.25, 0.75]})  # not increasing
    with pytest.raises(SchemaError):
        transform_from_dict({"kind": "quantile", "values": [1.0, 2.0],
                             "positions": [0.25]})  # length mismatch


def test_clip_is_idempotent():
    rng = np.random.default_rng(5)
    t = fit_transform("clip", rng.normal(size=40))
    v = rng.normal(scale=3.0, size=200)
    once = t.apply(v)
    assert np.array_equal(t.apply(once), once)


@pytest.mark.parametrize("kind", ["minmax", "clip", "quantile"])
def test_transforms_are_monotone_and_bounded(kind):
    rng = np.random.default_rng(17)
    t = fit_transform(kind, rng.normal(size=300))
    probe = np.sort(rng.normal(scale=2.5, size=500))
    out = t.apply(probe)
    assert np.all(np.diff(out) >= 0.0)
    assert np.all(out >= -1.0) and np.all(out <= 1.0)


def test_quantile_output_is_nearly_uniform_on_training_column():
    rng = np.random.default_rng(23)
    col = rng.lognormal(size=500)
    u = 0.5 * (fit_transform("quantile", col).apply(col) + 1.0)
    # Kolmogorov-Smirnov distance to the uniform cdf
    grid = np.sort(u)
    cdf_hi = np.arange(1, 501) / 500.0
    cdf_lo = np.arange(0, 500) / 500.0
    ks = max(np.max(cdf_hi - grid), np.max(grid - cdf_lo))
    assert ks <= 2.0 / np.sqrt(500.0)

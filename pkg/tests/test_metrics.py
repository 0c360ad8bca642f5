import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topicgrid.loglab import EntityPeriodBundle, PeriodSpec
from topicgrid.metrics import (
    MissingRelevance, RelevanceTable, build_metric_series, dump_metrics, load_metrics,
    metric_tensor, topical_volume, volume_vector,
)


def bundle(*docs, entity="e", period=0):
    return EntityPeriodBundle(entity, period, tuple(docs), len(docs))


def test_empty_bundle_is_zero():
    assert topical_volume(bundle(), {}, 0) == 0.0
    assert np.all(volume_vector(bundle(), RelevanceTable([], np.zeros((0, 3)))) == 0.0)


def test_sum_e_minus_one_gives_one():
    rel = {"a": np.array([math.e - 1, 0.0])}
    assert topical_volume(bundle("a"), rel, 0) == pytest.approx(1.0, abs=1e-12)


def test_three_documents():
    rel = {"a": np.array([0.5]), "b": np.array([0.5]), "c": np.array([1.0])}
    assert topical_volume(bundle("a", "b", "c"), rel, 0) == pytest.approx(math.log(3), abs=1e-9)


def test_one_hot_document():
    table = RelevanceTable(["d"], np.array([[0.0, 1.0, 0.0]]))
    v = volume_vector(bundle("d"), table)
    assert np.allclose(v, [0, math.log(2), 0], atol=1e-9, rtol=0)


def test_missing_relevance_is_fatal():
    table = RelevanceTable(["a"], np.array([[1.0]]))
    with pytest.raises(MissingRelevance):
        volume_vector(bundle("a", "zzz"), table)
    with pytest.raises(MissingRelevance):
        topical_volume(bundle("zzz"), {"a": np.array([1.0])}, 0)


def test_vector_matches_scalar(rng):
    docs = [f"d{i}" for i in range(6)]
    theta = rng.dirichlet(np.ones(4), size=6)
    table = RelevanceTable(docs, theta)
    b = bundle(*docs[1:5])
    v = volume_vector(b, table)
    for t in range(4):
        assert v[t] == pytest.approx(topical_volume(b, table, t), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.floats(1e-6, 1.0), st.randoms())
def test_monotone_and_order_independent(values, extra, rnd):
    rel = {f"d{i}": np.array([v]) for i, v in enumerate(values)}
    docs = list(rel)
    base = topical_volume(bundle(*docs), rel, 0)
    assert base >= 0
    shuffled = docs[:]
    rnd.shuffle(shuffled)
    assert topical_volume(bundle(*shuffled), rel, 0) == pytest.approx(base, abs=1e-12)
    rel["new"] = np.array([extra])
    assert topical_volume(bundle(*docs, "new"), rel, 0) > base


def test_series_shapes_and_gaps():
    spec = PeriodSpec(0, 10, 3)
    table = RelevanceTable(["a", "b"], np.array([[1.0, 0.0], [0.25, 0.75]]))
    bundles = {
        ("x", 0): bundle("a", entity="x", period=0),
        ("x", 2): bundle("a", "b", entity="x", period=2),
        ("y", 1): bundle("b", entity="y", period=1),
    }
    series = build_metric_series(bundles, table, 2, spec)
    assert list(series) == ["x", "y"]
    assert series["x"].values.shape == (3, 2)
    assert np.all(series["x"].values[1] == 0.0)
    assert np.allclose(series["x"].values[2], np.log1p([1.25, 0.75]))
    assert np.all(series["y"].values[[0, 2]] == 0.0)
    periods = [v.period_index for v in series["y"].vectors]
    assert periods == [0, 1, 2]
    entities, tensor = metric_tensor(series)
    assert tensor.shape == (2, 3, 2)


def test_dump_roundtrip(tmp_path, rng):
    tensor = rng.random((3, 4, 5))
    dump_metrics(tmp_path / "m", ["a", "b", "c"], tensor)
    raw = (tmp_path / "m" / "data.f64").read_bytes()
    assert raw == tensor.astype("<f8").tobytes()
    ents, back, manifest = load_metrics(tmp_path / "m")
    assert ents == ["a", "b", "c"]
    assert np.array_equal(back, tensor)
    assert (manifest["E"], manifest["P"], manifest["K"]) == (3, 4, 5)
    assert manifest["layout"] == "[entity][period][topic]"

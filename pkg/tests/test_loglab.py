import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topicgrid.loglab import (
    BucketStats, GroundTruth, LogEntry, ParseStats, PeriodSpec, RejectedLine, SynthConfig,
    bucket_entries, bundles_from_json, bundles_to_json, generate_synthetic_logs,
    parse_log_line, parse_log_stream, write_log,
)
from topicgrid.errors import ConfigError


def test_parse_valid_line():
    assert parse_log_line("e1\t1000\tdns lookup example.com\n") == LogEntry("e1", 1000, "dns lookup example.com")


def test_parse_keeps_text_verbatim():
    e = parse_log_line("e1\t5\t  GET /a  b ")
    assert e.resource_text == "  GET /a  b "


@pytest.mark.parametrize("line, reason", [
    ("e1\t1000", "field-count"),
    ("e1\t1000\tx\ty", "field-count"),
    ("e1\tabc\tx", "bad-timestamp"),
    ("\t1000\tx", "empty-entity"),
    ("e1\t1000\t   ", "empty-text"),
])
def test_parse_rejections(line, reason):
    with pytest.raises(RejectedLine) as exc:
        parse_log_line(line)
    assert exc.value.reason == reason


def test_stream_counts_rejections_and_continues():
    lines = ["e1\t1\ta\n", "bad\n", "e2\tx\tb\n", "e3\t3\tc\n"]
    stats = ParseStats()
    entries = list(parse_log_stream(lines, stats))
    assert [e.entity_id for e in entries] == ["e1", "e3"]
    assert stats.accepted == 2
    assert stats.rejected == {"field-count": 1, "bad-timestamp": 1}


def test_bucket_floor_division():
    spec = PeriodSpec(0, 60, 3)
    b = bucket_entries([LogEntry("e", 0, "a"), LogEntry("e", 59, "b")], spec)
    assert list(b) == [("e", 0)]
    assert b[("e", 0)].documents == ("a", "b")


def test_bucket_deduplicates_documents():
    spec = PeriodSpec(0, 60, 3)
    b = bucket_entries([LogEntry("e", 1, "same"), LogEntry("e", 2, "same")], spec)
    assert b[("e", 0)].documents == ("same",)
    assert b[("e", 0)].raw_count == 2


def test_bucket_drops_out_of_range():
    spec = PeriodSpec(100, 60, 2)
    stats = BucketStats()
    b = bucket_entries([LogEntry("e", 100 + 60 * 2, "x"), LogEntry("e", 99, "y"), LogEntry("e", 100, "z")], spec, stats)
    assert stats.dropped == 2
    assert list(b) == [("e", 0)]


def test_period_spec_rejects_bad_values():
    with pytest.raises(ConfigError):
        PeriodSpec(0, 0, 3)


entry_strategy = st.builds(
    LogEntry,
    st.sampled_from(["a", "b", "c"]),
    st.integers(-50, 400),
    st.sampled_from(["x", "y", "z w", "q"]),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(entry_strategy, max_size=40))
def test_partition_invariant(entries):
    spec = PeriodSpec(0, 60, 5)
    stats = BucketStats()
    bundles = bucket_entries(entries, spec, stats)
    assert sum(b.raw_count for b in bundles.values()) + stats.dropped == len(entries)
    for b in bundles.values():
        assert len(set(b.documents)) == len(b.documents)


@settings(max_examples=60, deadline=None)
@given(st.lists(entry_strategy, max_size=40))
def test_dedup_idempotence(entries):
    spec = PeriodSpec(0, 60, 5)
    once = bucket_entries(entries, spec)
    twice = bucket_entries(entries + entries, spec)
    assert {k: b.documents for k, b in once.items()} == {k: b.documents for k, b in twice.items()}


def test_bundles_json_roundtrip():
    spec = PeriodSpec(0, 10, 2)
    b = bucket_entries([LogEntry("e", 1, "a"), LogEntry("f", 12, "b"), LogEntry("f", 13, "b")], spec)
    back = bundles_from_json(json.loads(json.dumps(bundles_to_json(b))))
    assert back == b


SMALL = dict(entity_count=12, topic_count=9, period_count=4, activity_mean=8.0, resources_per_topic=20)


def _serialize(entries):
    buf = io.StringIO()
    write_log(entries, buf)
    return buf.getvalue()


def test_generator_is_deterministic():
    a, ta = generate_synthetic_logs(SynthConfig(**SMALL, seed=7))
    b, tb = generate_synthetic_logs(SynthConfig(**SMALL, seed=7))
    assert _serialize(a) == _serialize(b)
    assert json.dumps(ta.to_json()) == json.dumps(tb.to_json())
    c, _ = generate_synthetic_logs(SynthConfig(**SMALL, seed=8))
    assert _serialize(a) != _serialize(c)


def test_generator_without_dynamics_is_constant():
    cfg = SynthConfig(**SMALL, trend_fraction=0.0, noise=0.0, burst_rate=0.0, seed=3)
    _, truth = generate_synthetic_logs(cfg)
    assert np.all(truth.counts == truth.counts[:, :1, :])
    assert truth.counts.sum() > 0


def test_disjoint_blocks_identify_topic():
    cfg = SynthConfig(**SMALL, word_overlap=0.0, seed=5)
    entries, truth = generate_synthetic_logs(cfg)
    owner = {w: t for t, block in enumerate(truth.word_blocks) for w in block}
    for e in entries:
        topics = {owner[w] for w in e.resource_text.split()}
        assert len(topics) == 1


def test_generator_output_parses_and_buckets(tmp_path):
    cfg = SynthConfig(**SMALL, seed=1)
    entries, truth = generate_synthetic_logs(cfg)
    text = _serialize(entries)
    stats = ParseStats()
    parsed = list(parse_log_stream(io.StringIO(text), stats))
    assert parsed == entries and stats.rejected_total == 0
    bstats = BucketStats()
    bundles = bucket_entries(parsed, cfg.period_spec(), bstats)
    assert bstats.dropped == 0
    # every activity count shows up as a raw entry in its bundle
    per_bundle = truth.counts.sum(axis=2)
    for (eid, p), b in bundles.items():
        assert b.raw_count == per_bundle[truth.entity_ids.index(eid), p]
    truth.save(tmp_path / "gt.json")
    back = GroundTruth.load(tmp_path / "gt.json")
    assert np.array_equal(back.counts, truth.counts)
    assert back.word_blocks == truth.word_blocks


def test_bursts_co_activate_nearby_topics():
    cfg = SynthConfig(entity_count=300, topic_count=16, period_count=6, trend_fraction=0.0,
                      noise=0.0, burst_rate=0.4, burst_amplitude=2.0, seed=2)
    _, truth = generate_synthetic_logs(cfg)
    base = truth.intensity[:, :1, :]
    # period-to-period intensity changes come only from bursts; they correlate with latent distance
    delta = (truth.intensity - base).reshape(-1, 16)
    corr = np.corrcoef(delta.T)
    d = np.linalg.norm(truth.positions[:, None] - truth.positions[None], axis=-1)
    iu = np.triu_indices(16, 1)
    near = corr[iu][d[iu] < 0.15].mean()
    far = corr[iu][d[iu] > 0.5].mean()
    assert near > far + 0.2


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(trend_fraction=1.5)
    with pytest.raises(ConfigError):
        SynthConfig(entity_count=0)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from robustft import replay
from robustft.errors import ConfigError, ParseError, StateError
from robustft.replay import OfflineDataset, ReplayBuffer, Transition


def tr(k, obs_dim=2, action_dim=1, done=False, truncated=False):
    return Transition(np.full(obs_dim, float(k)), np.full(action_dim, k / 100.0), float(k),
                      np.full(obs_dim, k + 0.5), done, truncated)


def make_dataset(n, env="PointWalker"):
    items = [tr(k, done=(k % 7 == 0), truncated=(k % 11 == 0)) for k in range(n)]
    return OfflineDataset.from_transitions(items, {"env": env, "seed": 3})


def test_fifo_eviction():
    buf = ReplayBuffer(2, 1, capacity=2)
    for k in (1, 2, 3):
        buf.push(tr(k))
    assert len(buf) == 2
    np.testing.assert_array_equal(buf.ordered().r, [2.0, 3.0])


@given(st.integers(1, 20), st.integers(0, 60))
def test_fifo_order_sequence(capacity, n):
    buf = ReplayBuffer(2, 1, capacity)
    for k in range(n):
        buf.push(tr(k))
    expected = list(range(max(0, n - capacity), n))
    assert len(buf) == min(n, capacity)
    np.testing.assert_array_equal(buf.ordered().r, expected)


def test_full_capacity_size():
    buf = ReplayBuffer(1, 1, capacity=100_000)
    buf.extend(replay.Batch(np.zeros((100_000, 1)), np.zeros((100_000, 1)), np.arange(100_000.0),
                            np.zeros((100_000, 1)), np.zeros(100_000, bool)))
    assert len(buf) == 100_000


def test_sample_returns_only_stored(rng):
    buf = ReplayBuffer(2, 1, 10)
    for k in (4, 9):
        buf.push(tr(k))
    for _ in range(50):
        assert buf.sample(1, rng).r[0] in (4.0, 9.0)


def test_single_element_repeated(rng):
    buf = ReplayBuffer(2, 1, 10).push(tr(5))
    b = buf.sample(8, rng)
    assert np.all(b.r == 5.0) and len(b) == 8


def test_empty_sample_is_state_error(rng):
    with pytest.raises(StateError):
        ReplayBuffer(2, 1, 4).sample(1, rng)


def test_same_seed_same_batch():
    buf = ReplayBuffer(2, 1, 100)
    for k in range(30):
        buf.push(tr(k))
    a = buf.sample(16, np.random.default_rng(5))
    b = buf.sample(16, np.random.default_rng(5))
    np.testing.assert_array_equal(a.r, b.r)


def test_sampling_uniformity_chi_square():
    buf = ReplayBuffer(2, 1, 10)
    for k in range(10):
        buf.push(tr(k))
    draws = buf.sample(1_000_000, np.random.default_rng(2024)).r.astype(int)
    counts = np.bincount(draws, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.001


@pytest.mark.parametrize("r_off,n,expected", [(0.0, 1000, 0), (1.0, 1000, 1000), (0.1, 1000, 100),
                                              (0.3, 10, 3), (0.7, 10, 7), (0.5, 3, 1)])
def test_offline_count_floor(r_off, n, expected):
    assert replay.offline_count(r_off, n) == expected


def test_init_with_offline_counts_and_distinctness(rng):
    ds = make_dataset(1000)
    buf = replay.init_with_offline(ReplayBuffer(2, 1, 5000), ds, 0.1, rng)
    assert len(buf) == 100
    assert len(set(buf.ordered().r)) == 100
    empty = replay.init_with_offline(ReplayBuffer(2, 1, 5000), ds, 0.0, rng)
    assert len(empty) == 0
    full = replay.init_with_offline(ReplayBuffer(2, 1, 5000), ds, 1.0, rng)
    assert sorted(full.ordered().r) == list(range(1000))


@pytest.mark.parametrize("bad", [-0.1, 1.5])
def test_init_with_offline_rejects_bad_ratio(bad, rng):
    with pytest.raises(ConfigError):
        replay.init_with_offline(ReplayBuffer(2, 1, 10), make_dataset(10), bad, rng)


def test_dataset_round_trip(tmp_path):
    ds = make_dataset(50)
    replay.save_dataset(ds, tmp_path / "d.jsonl")
    back = replay.load_dataset(tmp_path / "d.jsonl")
    assert back == ds
    assert back.env == "PointWalker" and back.meta["count"] == 50


def test_dataset_round_trip_is_bit_exact(tmp_path, rng):
    items = [Transition(rng.normal(size=2), rng.uniform(-1, 1, 1), float(rng.normal()), rng.normal(size=2), False)
             for _ in range(20)]
    ds = OfflineDataset.from_transitions(items, {"env": "PointWalker"})
    replay.save_dataset(ds, tmp_path / "d.jsonl")
    back = replay.load_dataset(tmp_path / "d.jsonl")
    assert back.s.tobytes() == ds.s.tobytes() and back.r.tobytes() == ds.r.tobytes()


def test_truncated_file_is_parse_error(tmp_path):
    replay.save_dataset(make_dataset(10), tmp_path / "d.jsonl")
    text = (tmp_path / "d.jsonl").read_text()
    (tmp_path / "cut.jsonl").write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        replay.load_dataset(tmp_path / "cut.jsonl")
    lines = text.splitlines(keepends=True)
    (tmp_path / "short.jsonl").write_text("".join(lines[:-2]))
    with pytest.raises(ParseError):
        replay.load_dataset(tmp_path / "short.jsonl")


def test_bad_record_reports_line(tmp_path):
    replay.save_dataset(make_dataset(5), tmp_path / "d.jsonl")
    lines = (tmp_path / "d.jsonl").read_text().splitlines()
    lines[3] = "[1, 2"
    (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        replay.load_dataset(tmp_path / "bad.jsonl")
    assert info.value.line == 4


def test_env_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        make_dataset(5, env="PointHopper").check_env("PointWalker")

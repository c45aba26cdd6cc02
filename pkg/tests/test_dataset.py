import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mapredict.channel import NodeState, Role, Scenario, SecrecyObjective, expected_secrecy_rate
from mapredict.dataset import (
    Dataset,
    Normalizer,
    TrajectorySpec,
    build_dataset,
    generate_trajectory,
    load_dataset,
    save_dataset,
    split_windows,
)
from mapredict.errors import MalformedHeaderError, TruncatedFileError, VersionMismatchError
from mapredict.pso import SwarmConfig

SC = Scenario()


def _swarm(sc=SC, **kw):
    base = dict(n_particles=12, max_iter=8, d_max_slot=sc.d_max_slot, d_min=sc.d_min)
    base.update(kw)
    return SwarmConfig(sc.n_antennas, sc.box_lo, sc.box_hi, **base)


def _small_dataset(T=6, seed=0, sc=SC):
    bob = TrajectorySpec("parametric_sinusoid", {"start": [40, -5, 60], "end": [40, 5, 60], "amplitude": 2}, T)
    eve = TrajectorySpec("random_walk", {"start": [15, 10, 35], "step_std": 0.3}, T)
    return build_dataset(sc, bob, eve, _swarm(sc), m_carol=4, seed=seed)


@pytest.fixture(scope="module")
def small():
    return _small_dataset()


def test_waypoint_examples():
    spec = TrajectorySpec("waypoint_linear", {"start": [1, 2, 3], "end": [1, 2, 3]}, 7)
    path = generate_trajectory(spec)
    assert np.all(path == [1, 2, 3])
    spec = TrajectorySpec("waypoint_linear", {"start": [0, 0, 10], "end": [2, 0, 10]}, 3)
    np.testing.assert_allclose(generate_trajectory(spec), [[0, 0, 10], [1, 0, 10], [2, 0, 10]])


def test_sinusoid_deviation_bounded():
    a, b = np.array([0.0, 0, 30]), np.array([50.0, 20, 40])
    spec = TrajectorySpec("parametric_sinusoid", {"start": a, "end": b, "amplitude": 5, "periods": 3.3}, 500)
    path = generate_trajectory(spec)
    # distance of each point to the infinite centerline through a and b
    u = (b - a) / np.linalg.norm(b - a)
    rel = path - a
    dev = np.linalg.norm(rel - np.outer(rel @ u, u), axis=1)
    assert dev.max() <= 5 + 1e-12
    assert dev.max() > 4.9


def test_random_walk_continuous_and_airborne():
    spec = TrajectorySpec("random_walk", {"start": [0, 0, 2], "step_std": 1.0, "drift": [0, 0, -0.5]}, 400)
    path = generate_trajectory(spec, np.random.default_rng(0))
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    assert steps.max() <= 4 * 1.0 + 0.5 + 1e-9
    assert path[:, 2].min() > 0


def test_trajectory_validation():
    with pytest.raises(ValueError):
        TrajectorySpec("spiral", {}, 3)
    with pytest.raises(ValueError):
        generate_trajectory(TrajectorySpec("waypoint_linear", {"start": [0, 0, -1], "end": [0, 0, 5]}, 4))
    with pytest.raises(ValueError):
        generate_trajectory(TrajectorySpec("random_walk", {"start": [0, 0, 5]}, 4))


def test_single_slot_dataset():
    ds = _small_dataset(T=1)
    assert len(ds) == 1 and ds.t.tolist() == [0]


def test_dataset_invariants(small):
    ds = small
    assert ds.t.tolist() == list(range(len(ds)))
    step = np.linalg.norm(np.diff(ds.layouts, axis=0), axis=2)
    assert step.max() <= SC.d_max_slot
    assert np.all(ds.secrecy >= 0)
    lo, hi = np.array(ds.meta["normalization"]["lo"]), np.array(ds.meta["normalization"]["hi"])
    flat = ds.layouts.reshape(-1, 3)
    assert np.all(flat >= lo) and np.all(flat <= hi)
    for rec in ds.records:
        assert not rec.layout.violations(SC.box_lo, SC.box_hi, SC.d_min)


def test_secrecy_is_objective_at_stored_layout(small):
    from mapredict.dataset import _CHANNEL_STREAM, slot_rng

    for t in (0, 3):
        obj = SecrecyObjective(SC, NodeState(small.bob[t], Role.BOB), NodeState(small.eve[t], Role.EVE), 4,
                               slot_rng(0, 0, _CHANNEL_STREAM))
        assert small.secrecy[t] == pytest.approx(obj(small.layouts[t]), rel=1e-8)


def test_far_eve_pure_los_positive_secrecy():
    sc = SC.with_(kappa=np.inf, nlos_count=0)
    T = 5
    bob = TrajectorySpec("waypoint_linear", {"start": [10, 0, 40], "end": [12, 2, 40]}, T)
    eve_start = np.array([10, 0, 40]) + 9 * (np.array([10, 0, 40]) - np.array(sc.bs_position))
    eve = TrajectorySpec("waypoint_linear", {"start": eve_start, "end": eve_start}, T)
    ds = build_dataset(sc, bob, eve, _swarm(sc), m_carol=1, seed=1)
    assert np.all(ds.secrecy > 0)
    for t in range(T):
        direct = expected_secrecy_rate(ds.layouts[t], NodeState(ds.bob[t], Role.BOB), NodeState(ds.eve[t], Role.EVE),
                                       sc, 1, np.random.default_rng(0))
        assert direct > 0


def test_same_seed_byte_identical_file(tmp_path):
    a, b = _small_dataset(T=3, seed=5), _small_dataset(T=3, seed=5)
    save_dataset(a, tmp_path / "a.mapd")
    save_dataset(b, tmp_path / "b.mapd")
    assert (tmp_path / "a.mapd").read_bytes() == (tmp_path / "b.mapd").read_bytes()


def test_round_trip_bit_exact(small, tmp_path):
    p = tmp_path / "d.mapd"
    save_dataset(small, p)
    back = load_dataset(p)
    assert isinstance(back, Dataset)
    assert back.same_as(small)


def test_corrupt_header(small, tmp_path):
    p = tmp_path / "d.mapd"
    save_dataset(small, p)
    text = p.read_text()
    p.write_text("XAPD" + text[4:])
    with pytest.raises(MalformedHeaderError):
        load_dataset(p)


def test_future_version(small, tmp_path):
    p = tmp_path / "d.mapd"
    save_dataset(small, p)
    p.write_text(p.read_text().replace("MAPD v1", "MAPD v7", 1))
    with pytest.raises(VersionMismatchError) as exc:
        load_dataset(p)
    assert "7" in str(exc.value) and "1" in str(exc.value)


def test_truncated_records(small, tmp_path):
    p = tmp_path / "d.mapd"
    save_dataset(small, p)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) - 30])
    with pytest.raises(TruncatedFileError):
        load_dataset(p)
    lines = data.decode().splitlines(keepends=True)
    p.write_text("".join(lines[:-2]))
    with pytest.raises(TruncatedFileError):
        load_dataset(p)


def _fake(T, M=2, seed=0):
    rng = np.random.default_rng(seed)
    lay = np.cumsum(rng.normal(scale=0.001, size=(T, M, 3)), axis=0)
    return lay


def test_window_counts():
    lay = _fake(10)
    s = split_windows(lay, 4, 2, stride=1)
    assert len(s.train) + len(s.val) + len(s.test) == 5
    s = split_windows(lay, 4, 2, stride=10)
    assert len(s.train) + len(s.val) + len(s.test) == 1
    with pytest.raises(ValueError):
        split_windows(lay, 8, 3)


def test_window_contents_and_chronology():
    lay = _fake(60)
    s = split_windows(lay, 5, 3, stride=2)
    for part in (s.train, s.val, s.test):
        for X, Y, t in zip(part.X, part.Y, part.t):
            np.testing.assert_array_equal(X, lay[t - 4:t + 1])
            np.testing.assert_array_equal(Y, lay[t + 1:t + 4])
    assert s.train.t.max() < s.val.t.min() < s.test.t.min()


def test_normalizer_train_only():
    lay = _fake(200, seed=3)
    lay[150:] += 0.05  # test segment drifts outside the training range
    s = split_windows(lay, 10, 5)
    ztr = s.normalizer.transform(s.train.X)
    assert ztr.min() >= 0 and ztr.max() <= 1
    zte = s.normalizer.transform(s.test.Y)
    assert zte.max() > 1


def test_normalizer_round_trip_100_windows():
    lay = _fake(150, seed=9)
    s = split_windows(lay, 20, 10)
    rng = np.random.default_rng(0)
    idx = rng.choice(len(s.train), 100)
    W = s.train.X[idx]
    assert np.max(np.abs(s.normalizer.inverse(s.normalizer.transform(W)) - W)) < 1e-12


def test_degenerate_axis_maps_to_half():
    n = Normalizer(np.array([0.0, 1.0, 2.0]), np.array([1.0, 1.0, 4.0]))
    z = n.transform(np.array([0.5, 1.0, 3.0]))
    np.testing.assert_allclose(z, [0.5, 0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(1e-4, 2), min_size=3, max_size=3),
       st.integers(0, 2**31))
def test_normalizer_inverse_property(lo, span, seed):
    lo = np.array(lo)
    n = Normalizer(lo, lo + np.array(span))
    x = lo + np.random.default_rng(seed).uniform(-0.5, 1.5, (7, 3)) * np.array(span)
    assert np.max(np.abs(n.inverse(n.transform(x)) - x)) < 1e-12

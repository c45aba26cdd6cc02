import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mapredict.channel import Scenario, fixed_grid_layout
from mapredict.evaluation import (
    MetricReport,
    ModelMetrics,
    accuracy_at_threshold,
    mse_stats,
    nmse,
    per_sample_mse,
    secrecy_replay,
    time_inference,
)
from mapredict.report import emit_report

SC = Scenario()

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
blocks = arrays(np.float64, (3, 4, 2, 3), elements=finite).filter(lambda a: np.sum(a * a) > 1e-6)


# ---------------------------------------------------------------- nmse


@given(blocks)
def test_nmse_identities(y):
    assert nmse(y, y) == 0.0
    assert nmse(np.zeros_like(y), y) == pytest.approx(1.0, abs=1e-12)
    assert nmse(2 * y, y) == pytest.approx(1.0, abs=1e-12)


@given(blocks, blocks, st.floats(1e-3, 1e3))
def test_nmse_scale_covariance(p, y, c):
    assert nmse(c * p, c * y) == pytest.approx(nmse(p, y), rel=1e-12, abs=1e-12)


def test_nmse_worked_example():
    # errors (1, 0), truth energy 4 + 0 -> 1/4
    assert nmse([3.0, 0.0], [2.0, 0.0]) == pytest.approx(0.25, abs=1e-15)


def test_nmse_errors():
    with pytest.raises(ValueError):
        nmse(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        nmse(np.ones(3), np.zeros(3))


# ---------------------------------------------------------------- accuracy


def test_accuracy_counts_positions():
    truth = np.zeros((1, 2, 2, 3))
    pred = truth.copy()
    pred[0, 0, 0] = [3e-4, 0, 0]  # inside 5e-4
    pred[0, 1, 1] = [3e-4, 4e-4, 0]  # exactly 5e-4
    pred[0, 1, 0] = [0, 0, 6e-4]  # outside
    assert accuracy_at_threshold(pred, truth, 5e-4) == pytest.approx(3 / 4)


@settings(max_examples=50)
@given(arrays(np.float64, (5, 3, 3), elements=st.floats(-1e-3, 1e-3)), st.floats(1e-5, 1e-3), st.floats(1e-5, 1e-3))
def test_accuracy_monotone_in_eps(err, e1, e2):
    lo, hi = min(e1, e2), max(e1, e2)
    truth = np.zeros_like(err)
    assert accuracy_at_threshold(err, truth, lo) <= accuracy_at_threshold(err, truth, hi)


def test_accuracy_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        accuracy_at_threshold(np.zeros(3), np.zeros(3), 0.0)


# ---------------------------------------------------------------- box statistics


def test_mse_stats_quartiles():
    b = mse_stats([4.0, 1.0, 3.0, 2.0])
    assert (b.q1, b.median, b.q3) == (1.75, 2.5, 3.25)
    assert (b.whisker_lo, b.whisker_hi, b.n, b.n_outliers) == (1.0, 4.0, 4, 0)


def test_mse_stats_outlier_excluded_from_whiskers():
    b = mse_stats([1.0, 2.0, 3.0, 4.0, 100.0])
    # q1 = 2, q3 = 4, upper fence 7
    assert (b.q1, b.median, b.q3) == (2.0, 3.0, 4.0)
    assert b.whisker_hi == 4.0 and b.n_outliers == 1


def test_mse_stats_constant_and_too_few():
    b = mse_stats([0.5] * 6)
    assert b.median == b.q1 == b.q3 == b.whisker_lo == b.whisker_hi == 0.5
    with pytest.raises(ValueError):
        mse_stats([1.0, 2.0, 3.0])


def test_per_sample_mse():
    d = np.zeros((2, 3, 1, 3))
    d[1] = 2.0
    assert per_sample_mse(d, np.zeros_like(d)).tolist() == [0.0, 4.0]


# ---------------------------------------------------------------- secrecy replay


def _replay_inputs(n=3):
    bob = np.array([[45.0, -25.0 + 5 * i, 60.0] for i in range(n)])
    eve = np.array([[20.0, 10.0 + i, 40.0] for i in range(n)])
    fixed = fixed_grid_layout(SC).positions
    rng = np.random.default_rng(0)
    optimal = fixed[None] + rng.uniform(-1e-3, 1e-3, (n,) + fixed.shape)
    return np.arange(n), bob, eve, optimal, fixed


def test_replay_identical_layouts_give_identical_columns():
    slots, bob, eve, optimal, fixed = _replay_inputs()
    t = secrecy_replay(slots, bob, eve, optimal, optimal.copy(), fixed, SC, (2.0, 3.0), (1e-5,), (1.0,), 4, seed=1)
    assert t.column("optimal") == t.column("predicted")
    assert len(t.rows) == 3 * 2 * (2 + 1 + 1)


def test_replay_los_monotone():
    slots, bob, eve, optimal, fixed = _replay_inputs()
    t = secrecy_replay(slots, bob, eve, optimal, optimal, fixed, SC, (2.0, 2.5, 3.0, 4.0), (1e-6, 1e-5, 1e-4),
                       (0.1, 0.5, 1.0), 4, seed=1, channels=("los",))
    for param, sign in (("alpha", -1), ("noise_power", -1), ("tx_power", 1)):
        _, values, arr = t.select("los", param)
        assert values == sorted(values)
        steps = sign * np.diff(arr, axis=1)
        assert np.all(steps >= -1e-12), param


def test_replay_is_seeded():
    slots, bob, eve, optimal, fixed = _replay_inputs(2)
    a = secrecy_replay(slots, bob, eve, optimal, fixed[None].repeat(2, 0), fixed, SC, seed=5)
    b = secrecy_replay(slots, bob, eve, optimal, fixed[None].repeat(2, 0), fixed, SC, seed=5)
    assert a.rows == b.rows


# ---------------------------------------------------------------- timing


def test_time_inference_counts_runs():
    calls = []
    stats = time_inference(calls.append, np.zeros(3), repetitions=10, warmup=3)
    assert len(calls) == 13 and len(stats.runs_ms) == 10
    assert stats.mean_ms >= 0 and stats.std_ms >= 0
    with pytest.raises(ValueError):
        time_inference(calls.append, None, repetitions=9)
    with pytest.raises(ValueError):
        time_inference(calls.append, None, warmup=2)


# ---------------------------------------------------------------- report


def _report():
    slots, bob, eve, optimal, fixed = _replay_inputs(2)
    rep = MetricReport(5e-4, [10, 60])
    for k, name in enumerate(("proposed", "narx")):
        rep.models.append(ModelMetrics(name, {10: 0.01 + k, 60: 0.02 + k}, {10: 0.5, 60: 0.25},
                                       mse_stats([1.0, 2.0, 3.0, 4.0 + k])))
        rep.replay[name] = secrecy_replay(slots, bob, eve, optimal, optimal, fixed, SC, (2.0, 3.0), (1e-5, 1e-4),
                                          (0.5, 1.0), 2, seed=0)
        rep.loss_curves[name] = ([1.0, 0.5, 0.25], [1.1, 0.6, 0.4])
    return rep


def test_empty_report_writes_only_manifest(tmp_path):
    rows = emit_report(MetricReport(5e-4, [10, 60]), tmp_path)
    assert rows == [] and os.listdir(tmp_path) == ["manifest.csv"]


def test_report_two_models(tmp_path):
    rows = emit_report(_report(), tmp_path)
    names = {r[0] for r in rows}
    assert {"metrics.csv", "nmse_vs_horizon.svg", "accuracy.svg", "mse_box.svg", "loss_curves.svg",
            "replay_proposed.csv", "replay_narx.csv", "secrecy_vs_alpha_los.svg"} <= names
    svg = (tmp_path / "nmse_vs_horizon.svg").read_text()
    assert 'id="legend_1"' in svg and svg.count('id="line2d_') >= 2
    metrics = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(metrics) == 1 + 2 * 2
    for r in rows:
        assert (tmp_path / r[0]).exists()


def test_report_bytes_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    emit_report(_report(), a)
    emit_report(_report(), b)
    for name in sorted(os.listdir(a)):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_report_json_round_trip(tmp_path):
    rep = _report()
    rep.to_json(tmp_path / "r.json")
    back = MetricReport.from_json(tmp_path / "r.json")
    assert back.model("narx").nmse == rep.model("narx").nmse
    assert back.replay["proposed"].rows == rep.replay["proposed"].rows
    with pytest.raises(KeyError):
        back.model("nope")

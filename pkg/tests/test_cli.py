import csv
import os

import numpy as np
import pytest

from mapredict import cli
from mapredict.config import RunConfig
from mapredict.errors import TrainingDivergedError

SMALL = """\
seed: 3
swarm:
  n_particles: 8
  max_iter: 6
  m_carol: 2
trajectories:
  T_hist: 36
model:
  win: 6
  pre: 5
  epochs: 3
  lstm_hidden: 3
  d_model: 4
  heads: 2
  bilstm_hidden: 3
  lstm_only_hidden: 4
  tf_ff: 4
  narx_delay: 3
  narx_hidden: 4
eval:
  horizons: [2, 5]
  repetitions: 10
  alpha_grid: [2.0, 3.0]
  noise_grid: [1.0e-5, 1.0e-4]
  power_grid: [0.5, 1.0]
  replay_m_carol: 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return str(p)


def _err(capsys):
    return capsys.readouterr().err.strip()


def test_unknown_key_names_nearest(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("swarm:\n  n_partcles: 4\n")
    assert cli.main(["optimize", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    err = _err(capsys)
    assert err.startswith("mapredict: error[config]:") and "swarm.n_particles" in err and ":2:" in err
    assert "\n" not in err


def test_type_error_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nscenario:\n  kappa: high\n")
    assert cli.main(["gen-data", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert ":3:" in _err(capsys)


def test_missing_input_is_io_error(tmp_path, capsys):
    assert cli.main(["train", "--dataset", str(tmp_path / "nope.mapd"), "--out", str(tmp_path)]) == cli.EXIT_IO
    assert "error[io]" in _err(capsys)


def test_infeasible_box(tmp_path, capsys):
    p = tmp_path / "inf.yaml"
    p.write_text("scenario:\n  d_min: 0.01\n  box_lo: [0, 0, 0]\n  box_hi: [0.001, 0.001, 0]\n")
    assert cli.main(["optimize", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_INFEASIBLE
    assert "error[infeasible]" in _err(capsys)


def test_divergence_exit_code(tmp_path, small_cfg, capsys, monkeypatch):
    assert cli.main(["gen-data", "--config", small_cfg, "--out", str(tmp_path)]) == 0

    def boom(*a, **k):
        raise TrainingDivergedError(7, float("nan"))

    monkeypatch.setattr(cli, "train", boom)
    code = cli.main(["train", "--config", small_cfg, "--dataset", str(tmp_path / "dataset.mapd"),
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_NUMERIC and "epoch 7" in _err(capsys)


def test_negative_threads_rejected(tmp_path, capsys):
    assert cli.main(["optimize", "--threads", "-1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_help_lists_units():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            if action.dest in ("help",):
                continue
            assert action.help and "(" in action.help, (name, action.dest)
        assert "--out" in text or name == "default-config"


def test_default_config_round_trip(capsys):
    assert cli.main(["default-config"]) == 0
    text = capsys.readouterr().out
    assert RunConfig.from_text(text).data == RunConfig.defaults().data


def test_optimize_is_deterministic(tmp_path, small_cfg):
    for d in ("a", "b"):
        assert cli.main(["optimize", "--config", small_cfg, "--slot", "4", "--out", str(tmp_path / d)]) == 0
    for name in ("pso_history_slot4.csv", "pso_layout_slot4.csv", "pso_convergence_slot4.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "pso_history_slot4.csv") as fh:
        rows = list(csv.DictReader(fh))
    g = [float(r["gbest_fit"]) for r in rows]
    assert len(rows) == 7 and g == sorted(g)


def test_optimize_slot_matches_dataset_inputs(tmp_path, small_cfg):
    # slot positions come from the same streams as gen-data
    assert cli.main(["gen-data", "--config", small_cfg, "--out", str(tmp_path)]) == 0
    from mapredict.dataset import load_dataset

    ds = load_dataset(tmp_path / "dataset.mapd")
    bob, eve = cli._positions(RunConfig.load(small_cfg))
    assert np.array_equal(bob, ds.bob) and np.array_equal(eve, ds.eve)


def test_end_to_end(tmp_path, small_cfg):
    out = str(tmp_path / "run")
    assert cli.main(["gen-data", "--config", small_cfg, "--out", out]) == 0
    ds = os.path.join(out, "dataset.mapd")
    for kind in ("proposed", "narx"):
        assert cli.main(["train", "--config", small_cfg, "--dataset", ds, "--kind", kind, "--out", out]) == 0
    models = [os.path.join(out, f"model_{k}.mapw") for k in ("proposed", "narx")]
    assert cli.main(["eval", "--config", small_cfg, "--dataset", ds, "--models", *models, "--out", out]) == 0
    assert cli.main(["report", "--eval", out, "--out", os.path.join(out, "report")]) == 0
    files = set(os.listdir(os.path.join(out, "report")))
    assert {"manifest.csv", "metrics.csv", "timing.csv", "loss_proposed.csv", "replay_narx.csv"} <= files
    with open(os.path.join(out, "report", "metrics.csv")) as fh:
        names = {r["model"] for r in csv.DictReader(fh)}
    assert names == {"proposed", "narx", "persistence"}
    assert cli.main(["gain-pattern", "--config", small_cfg, "--dataset", ds, "--slot", "3", "--out", out]) == 0
    with open(os.path.join(out, "gain_pattern_slot3.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 361
    mrt = np.array([float(r["optimised_mrt"]) for r in rows])
    # coherent MRT gain never exceeds P * M
    assert mrt.max() <= 9 * 1.0 + 1e-9


def test_gain_pattern_without_dataset(tmp_path, small_cfg):
    assert cli.main(["gain-pattern", "--config", small_cfg, "--slot", "0", "--points", "37",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "gain_pattern_slot0.svg").exists()

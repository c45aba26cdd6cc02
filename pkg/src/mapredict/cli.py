"""Command-line entry point: dataset generation, single-slot optimisation,
training, evaluation, gain patterns and report rendering."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .channel import (
    NodeState,
    Role,
    SecrecyObjective,
    array_pattern_gain,
    direction_vector,
    equal_power_weights,
    fixed_grid_layout,
    los_angles,
    mrt_weights,
)
from .config import RunConfig, default_config_text
from .dataset import (
    _CHANNEL_STREAM,
    _SWARM_STREAM,
    _TRAJ_STREAM,
    build_dataset,
    generate_trajectory,
    load_dataset,
    round_sig,
    save_dataset,
    slot_rng,
    split_windows,
)
from .errors import ConfigError, FileFormatError, InfeasibleError, MapredictError, NumericError
from .evaluation import (
    MetricReport,
    ModelMetrics,
    accuracy_at_threshold,
    mse_stats,
    nmse,
    per_sample_mse,
    secrecy_replay,
    time_inference,
)
from .models import MODEL_KINDS, Predictor, persistence, train
from .pso import optimize_slot, write_diagnostics
from .report import convergence_chart, emit_report, gain_pattern_chart

log = logging.getLogger("mapredict")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 2, 3, 4, 5

DATASET_NAME = "dataset.mapd"
REPORT_JSON = "report.json"


# ---------------------------------------------------------------- helpers


def _config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig.defaults()
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    return rc


def _out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _write_rows(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in r) + "\n")


def _positions(rc):
    # same streams as build_dataset, so slot t here is slot t of the dataset
    bob = round_sig(generate_trajectory(rc.bob_spec(), slot_rng(rc.seed, 0, _TRAJ_STREAM)))
    eve = round_sig(generate_trajectory(rc.eve_spec(), slot_rng(rc.seed, 1, _TRAJ_STREAM)))
    return bob, eve


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    rc = _config(args)
    out = _out(args)

    def progress(t, s):
        if t % 20 == 0:
            log.info("slot %d: secrecy %.4f bit/s/Hz", t, s)

    ds = build_dataset(rc.scenario(), rc.bob_spec(), rc.eve_spec(), rc.swarm_config(), rc.m_carol, rc.seed, progress)
    path = os.path.join(out, DATASET_NAME)
    save_dataset(ds, path)
    print(path)
    return EXIT_OK


def cmd_optimize(args):
    rc = _config(args)
    out = _out(args)
    sc = rc.scenario()
    T = rc.bob_spec().T
    if not 0 <= args.slot < T:
        raise ConfigError(f"--slot {args.slot} outside 0..{T - 1}", key="slot")
    bob, eve = _positions(rc)
    t = args.slot
    obj = SecrecyObjective(sc, NodeState(bob[t], Role.BOB), NodeState(eve[t], Role.EVE), rc.m_carol,
                           slot_rng(rc.seed, 0, _CHANNEL_STREAM))
    res = optimize_slot(obj.evaluate, rc.swarm_config(), slot_rng(rc.seed, t, _SWARM_STREAM), vectorized=True)
    hist_path = os.path.join(out, f"pso_history_slot{t}.csv")
    write_diagnostics(res.diagnostics, hist_path)
    _write_rows(os.path.join(out, f"pso_layout_slot{t}.csv"), ["antenna", "x_m", "y_m", "z_m"],
                [[m, *map(float, p)] for m, p in enumerate(res.layout.positions)])
    convergence_chart(res.history, os.path.join(out, f"pso_convergence_slot{t}.svg"))
    grid = obj(fixed_grid_layout(sc).positions)
    log.info("slot %d: optimised %.4f vs fixed grid %.4f bit/s/Hz", t, res.fitness, grid)
    print(hist_path)
    return EXIT_OK


def cmd_train(args):
    rc = _config(args)
    out = _out(args)
    ds = load_dataset(_require(args.dataset))
    cfg = rc.model_config(args.kind).with_(seed=rc.seed)
    w = rc.windows
    split = split_windows(ds, cfg.win, cfg.pre, w["stride"], tuple(w["fractions"]))
    sc = ds.scenario()

    def on_epoch(e, tr, va):
        if e % 25 == 0 or e == cfg.epochs - 1:
            log.info("%s epoch %d: train %.3e val %.3e", cfg.kind, e, tr, va)

    res = train(split, cfg, sc.box_lo, sc.box_hi, on_epoch)
    model_path = os.path.join(out, f"model_{cfg.kind}.mapw")
    res.predictor.save(model_path)
    # deterministic curve and wall-clock timings live in separate files
    _write_rows(os.path.join(out, f"loss_{cfg.kind}.csv"), ["epoch", "train_nmse", "val_nmse"],
                [[i, a, b] for i, (a, b) in enumerate(zip(res.train_curve, res.val_curve))])
    _write_rows(os.path.join(out, f"epoch_time_{cfg.kind}.csv"), ["epoch", "wall_ms"],
                [[i, round(c, 3)] for i, c in enumerate(res.wall_ms)])
    print(model_path)
    return EXIT_OK


def evaluate_models(rc: RunConfig, ds, predictors: dict, loss_curves=None, timing=True) -> MetricReport:
    """Score predictors (name -> Predictor) plus the persistence reference on the test windows."""
    ev = rc.eval
    horizons = sorted(ev["horizons"])
    report = MetricReport(ev["eps"], horizons, loss_curves=dict(loss_curves or {}))
    wins = {}
    sc = ds.scenario()
    fixed = fixed_grid_layout(sc).positions
    w = rc.windows
    for name, pred in predictors.items():
        key = (pred.cfg.win, pred.cfg.pre)
        if key not in wins:
            wins[key] = split_windows(ds, *key, w["stride"], tuple(w["fractions"])).test
        test = wins[key]
        if len(test) == 0:
            raise ConfigError("test split holds no windows; lengthen the trajectory or shorten the horizon")
        P = pred.predict(test.X).positions
        _add_metrics(report, name, P, test, horizons, ev["eps"])
        if timing:
            report.models[-1].inference = time_inference(lambda h, p=pred: p.predict(h), test.X[0],
                                                         ev["repetitions"], ev["warmup"])
        # replay the first test window's forecast block, slot by slot
        h = max(horizons)
        slots = test.t[0] + 1 + np.arange(h)
        report.replay[name] = secrecy_replay(
            slots, ds.bob[slots], ds.eve[slots], ds.layouts[slots], P[0, :h], fixed, sc,
            ev["alpha_grid"], ev["noise_grid"], ev["power_grid"], ev["replay_m_carol"], rc.seed,
        )
        _, _, arr = report.replay[name].select("rician", "alpha")
        report.models[-1].replay_mean = dict(zip(("fixed", "optimal", "predicted"), arr.mean(axis=(0, 1)).tolist()))
    if predictors:
        pre = max(p.cfg.pre for p in predictors.values())
        win = next(iter(predictors.values())).cfg.win
        test = wins.get((win, pre)) or split_windows(ds, win, pre, w["stride"], tuple(w["fractions"])).test
        _add_metrics(report, "persistence", persistence(test.X, pre), test, horizons, ev["eps"])
    return report


def _add_metrics(report, name, P, test, horizons, eps):
    Y = test.Y
    report.models.append(ModelMetrics(
        name,
        {h: nmse(P[:, :h], Y[:, :h]) for h in horizons},
        {h: accuracy_at_threshold(P[:, :h], Y[:, :h], eps) for h in horizons},
        mse_stats(per_sample_mse(P[:, :max(horizons)], Y[:, :max(horizons)])),
    ))


def cmd_eval(args):
    rc = _config(args)
    out = _out(args)
    ds = load_dataset(_require(args.dataset))
    predictors, curves = {}, {}
    for path in args.models:
        p = Predictor.load(_require(path))
        predictors[p.kind] = p
        loss = os.path.join(os.path.dirname(path) or ".", f"loss_{p.kind}.csv")
        if os.path.exists(loss):
            data = np.genfromtxt(loss, delimiter=",", names=True)
            curves[p.kind] = (np.atleast_1d(data["train_nmse"]).tolist(), np.atleast_1d(data["val_nmse"]).tolist())
    report = evaluate_models(rc, ds, predictors, curves, timing=not args.no_timing)
    path = os.path.join(out, REPORT_JSON)
    report.to_json(path)
    for m in report.models:
        log.info("%s: %s", m.name, ", ".join(f"NMSE@{h}={m.nmse[h]:.4g}" for h in report.horizons))
    print(path)
    return EXIT_OK


def cmd_gain_pattern(args):
    rc = _config(args)
    out = _out(args)
    if args.dataset:
        ds = load_dataset(_require(args.dataset))
        if not 0 <= args.slot < len(ds):
            raise ConfigError(f"--slot {args.slot} outside 0..{len(ds) - 1}", key="slot")
        sc = ds.scenario()
        optimised = ds.layouts[args.slot]
        bob = ds.bob[args.slot]
    else:
        sc = rc.scenario()
        bob_path, eve_path = _positions(rc)
        t = args.slot
        obj = SecrecyObjective(sc, NodeState(bob_path[t], Role.BOB), NodeState(eve_path[t], Role.EVE), rc.m_carol,
                               slot_rng(rc.seed, 0, _CHANNEL_STREAM))
        optimised = optimize_slot(obj.evaluate, rc.swarm_config(), slot_rng(rc.seed, t, _SWARM_STREAM),
                                  vectorized=True).layout.positions
        bob = bob_path[t]
    fixed = fixed_grid_layout(sc).positions
    theta_b, phi_b = los_angles(sc.array_reference, bob)
    az = np.linspace(-180.0, 180.0, args.points)
    phis = np.deg2rad(az)
    thetas = np.full_like(phis, theta_b)
    # MRT toward Bob's line-of-sight steering vector on the optimised layout
    a_bob = np.exp(1j * (2 * np.pi / sc.wavelength) * (optimised @ direction_vector(theta_b, phi_b)))
    series = {
        "fixed grid": array_pattern_gain(fixed, equal_power_weights(sc.n_antennas, sc.tx_power), thetas, phis,
                                         sc.wavelength),
        "optimised": array_pattern_gain(optimised, equal_power_weights(sc.n_antennas, sc.tx_power), thetas, phis,
                                        sc.wavelength),
        "optimised + MRT": array_pattern_gain(optimised, mrt_weights(a_bob, sc.tx_power), thetas, phis,
                                              sc.wavelength),
    }
    csv_path = os.path.join(out, f"gain_pattern_slot{args.slot}.csv")
    _write_rows(csv_path, ["azimuth_deg", "fixed", "optimised", "optimised_mrt"],
                [[float(a), float(series["fixed grid"][i]), float(series["optimised"][i]),
                  float(series["optimised + MRT"][i])] for i, a in enumerate(az)])
    gain_pattern_chart(az, series, os.path.join(out, f"gain_pattern_slot{args.slot}.svg"),
                       title=f"slot {args.slot}, Bob at azimuth {np.rad2deg(phi_b):.1f} deg")
    print(csv_path)
    return EXIT_OK


def cmd_report(args):
    src = _require(os.path.join(args.eval, REPORT_JSON) if os.path.isdir(args.eval) else args.eval)
    report = MetricReport.from_json(src)
    rows = emit_report(report, _out(args))
    print(os.path.join(args.out, "manifest.csv"))
    log.info("%d files written", len(rows))
    return EXIT_OK


def cmd_default_config(args):
    sys.stdout.write(default_config_text())
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p, out_default):
    p.add_argument("--config", metavar="PATH", help="YAML run configuration (path; defaults built in)")
    p.add_argument("--seed", type=int, metavar="N", help="master random seed (integer; overrides the config)")
    p.add_argument("--out", metavar="DIR", default=out_default, help=f"output directory (path; default {out_default})")
    p.add_argument("--threads", type=int, metavar="N", default=0,
                   help="worker threads (count, 0 = auto); never changes numeric results")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (flag)")


def build_parser():
    ap = argparse.ArgumentParser(prog="mapredict", description=__doc__)
    subs = ap.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="optimise every slot and write the layout dataset")
    _common(p, "out")
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("optimize", help="optimise one slot and write its PSO history")
    _common(p, "out")
    p.add_argument("--slot", type=int, default=0, metavar="T", help="slot index (integer, 0-based)")
    p.set_defaults(func=cmd_optimize)

    p = subs.add_parser("train", help="train one predictor on a dataset")
    _common(p, "out")
    p.add_argument("--dataset", required=True, metavar="PATH", help="dataset file from gen-data (path)")
    p.add_argument("--kind", choices=MODEL_KINDS, default=None,
                   help="model kind (name; default from config model.kind)")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="score trained predictors and replay their secrecy")
    _common(p, "out")
    p.add_argument("--dataset", required=True, metavar="PATH", help="dataset file from gen-data (path)")
    p.add_argument("--models", nargs="+", required=True, metavar="PATH", help="model files from train (paths)")
    p.add_argument("--no-timing", action="store_true", help="skip inference timing (flag)")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("gain-pattern", help="azimuth sweep of the array pattern gain")
    _common(p, "out")
    p.add_argument("--dataset", metavar="PATH", help="take the optimised layout from this dataset (path; "
                   "default: optimise the slot afresh)")
    p.add_argument("--slot", type=int, default=0, metavar="T", help="slot index (integer, 0-based)")
    p.add_argument("--points", type=int, default=361, metavar="N", help="azimuth samples over -180..180 deg (count)")
    p.set_defaults(func=cmd_gain_pattern)

    p = subs.add_parser("report", help="render CSV tables and SVG charts from eval output")
    p.add_argument("--eval", required=True, metavar="PATH", help="eval output directory or report.json (path)")
    p.add_argument("--out", metavar="DIR", default="report", help="output directory (path; default report)")
    p.add_argument("--threads", type=int, metavar="N", default=0,
                   help="worker threads (count, 0 = auto); never changes numeric results")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (flag)")
    p.set_defaults(func=cmd_report)

    p = subs.add_parser("default-config", help="print the built-in configuration as YAML")
    p.set_defaults(func=cmd_default_config)
    return ap


def _fail(category, message, code):
    sys.stderr.write(f"mapredict: error[{category}]: {' '.join(str(message).split())}\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "threads", 0) < 0:
        return _fail("config", "--threads must be >= 0", EXIT_CONFIG)
    try:
        if getattr(args, "kind", None) is None and hasattr(args, "kind"):
            args.kind = _config(args).data["model"]["kind"]
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except InfeasibleError as exc:
        return _fail("infeasible", exc, EXIT_INFEASIBLE)
    except NumericError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (FileFormatError, OSError) as exc:
        return _fail("io", exc, EXIT_IO)
    except FloatingPointError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except MapredictError as exc:
        return _fail(exc.category, exc, 1)


if __name__ == "__main__":
    sys.exit(main())

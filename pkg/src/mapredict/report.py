"""CSV tables and standalone SVG charts for a MetricReport."""
from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MetricReport  # noqa: E402

# fixed ids and no timestamp so identical inputs give identical bytes
_RC = {"svg.hashsalt": "mapredict", "svg.fonttype": "path", "figure.figsize": (6.0, 4.0), "font.size": 9}
_META = {"Date": None, "Creator": None}

MANIFEST = "manifest.csv"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


class _Manifest:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.rows = []

    def add(self, name, kind, description, deterministic=True, header=""):
        self.rows.append((name, kind, "yes" if deterministic else "no", header, description))

    def write(self):
        _write_csv(os.path.join(self.out_dir, MANIFEST), ["file", "type", "deterministic", "columns", "description"],
                   self.rows)


def emit_report(report: MetricReport, out_dir) -> list:
    """Write every table and chart for ``report``; returns the manifest rows."""
    os.makedirs(out_dir, exist_ok=True)
    man = _Manifest(out_dir)
    with plt.rc_context(_RC):
        if report.models:
            _metrics(report, out_dir, man)
            _nmse_chart(report, out_dir, man)
            _accuracy_chart(report, out_dir, man)
            _box_chart(report, out_dir, man)
            _timing(report, out_dir, man)
        if report.replay:
            _replay(report, out_dir, man)
        if report.loss_curves:
            _loss(report, out_dir, man)
    man.write()
    return man.rows


def _metrics(report, out_dir, man):
    header = ["model", "horizon", "nmse", "accuracy", "mse_median", "mse_q1", "mse_q3", "mse_whisker_lo",
              "mse_whisker_hi"]
    rows = []
    for m in report.models:
        for h in report.horizons:
            b = m.mse
            rows.append([m.name, h, m.nmse[h], m.accuracy[h], b.median, b.q1, b.q3, b.whisker_lo, b.whisker_hi])
    _write_csv(os.path.join(out_dir, "metrics.csv"), header, rows)
    man.add("metrics.csv", "csv", f"NMSE and accuracy (eps={report.eps} m) per model and horizon; "
            "MSE box statistics over test windows at the longest horizon", header=" ".join(header))


def _nmse_chart(report, out_dir, man):
    fig, ax = plt.subplots()
    for m in report.models:
        hs = sorted(m.nmse)
        ax.plot(hs, [m.nmse[h] for h in hs], marker="o", label=m.name)
    ax.set_xlabel("prediction horizon (slots)")
    ax.set_ylabel("NMSE")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, os.path.join(out_dir, "nmse_vs_horizon.svg"))
    man.add("nmse_vs_horizon.svg", "svg", "NMSE against prediction horizon, one series per model")


def _accuracy_chart(report, out_dir, man):
    fig, ax = plt.subplots()
    names = [m.name for m in report.models]
    hs = list(report.horizons)
    width = 0.8 / max(len(hs), 1)
    x = np.arange(len(names))
    for j, h in enumerate(hs):
        ax.bar(x + j * width, [m.accuracy[h] for m in report.models], width, label=f"horizon {h}")
    ax.set_xticks(x + width * (len(hs) - 1) / 2)
    ax.set_xticklabels(names)
    ax.set_ylabel(f"fraction within {report.eps:g} m")
    ax.set_ylim(0, 1)
    ax.legend()
    _save(fig, os.path.join(out_dir, "accuracy.svg"))
    man.add("accuracy.svg", "svg", "accuracy at the distance threshold per model")


def _box_chart(report, out_dir, man):
    fig, ax = plt.subplots()
    stats = [{"label": m.name, "med": m.mse.median, "q1": m.mse.q1, "q3": m.mse.q3, "whislo": m.mse.whisker_lo,
              "whishi": m.mse.whisker_hi, "fliers": []} for m in report.models]
    ax.bxp(stats, showfliers=False)
    ax.set_ylabel("per-window MSE (m^2)")
    _save(fig, os.path.join(out_dir, "mse_box.svg"))
    man.add("mse_box.svg", "svg", "per-window MSE box plot (whiskers at 1.5 IQR)")


def _timing(report, out_dir, man):
    timed = [m for m in report.models if m.inference is not None]
    if not timed:
        return
    header = ["model", "mean_ms", "std_ms", "runs"]
    _write_csv(os.path.join(out_dir, "timing.csv"), header,
               [[m.name, m.inference.mean_ms, m.inference.std_ms, len(m.inference.runs_ms)] for m in timed])
    man.add("timing.csv", "csv", "wall-clock inference time per predict() call", deterministic=False,
            header=" ".join(header))
    fig, ax = plt.subplots()
    ax.bar([m.name for m in timed], [m.inference.mean_ms for m in timed],
           yerr=[m.inference.std_ms for m in timed])
    ax.set_ylabel("inference time (ms)")
    _save(fig, os.path.join(out_dir, "timing.svg"))
    man.add("timing.svg", "svg", "mean inference time per model", deterministic=False)


_SWEEP_LABEL = {"alpha": "path-loss exponent", "noise_power": "noise power (W)", "tx_power": "transmit power (W)"}


def _replay(report, out_dir, man):
    for name, table in report.replay.items():
        fname = f"replay_{name}.csv"
        table.to_csv(os.path.join(out_dir, fname))
        man.add(fname, "csv", f"secrecy replay for {name}: per slot and swept value, fixed grid / optimal / "
                "predicted layouts (bit/s/Hz)", header="slot channel param value fixed optimal predicted")
    channels = sorted({r[1] for t in report.replay.values() for r in t.rows})
    for param, label in _SWEEP_LABEL.items():
        for channel in channels:
            fig, ax = plt.subplots()
            drawn = False
            for k, (name, table) in enumerate(sorted(report.replay.items())):
                slots, values, arr = table.select(channel, param)
                if not slots:
                    continue
                mean = arr.mean(axis=0)
                if k == 0:
                    ax.plot(values, mean[:, 0], "k--", label="fixed grid")
                    ax.plot(values, mean[:, 1], "k-", label="optimal")
                ax.plot(values, mean[:, 2], marker="o", label=f"predicted ({name})")
                drawn = True
            if not drawn:
                plt.close(fig)
                continue
            if param == "noise_power":
                ax.set_xscale("log")
            ax.set_xlabel(label)
            ax.set_ylabel("mean secrecy rate (bit/s/Hz)")
            ax.set_title(f"{channel} channel")
            ax.legend()
            ax.grid(True, alpha=0.3)
            fname = f"secrecy_vs_{param}_{channel}.svg"
            _save(fig, os.path.join(out_dir, fname))
            man.add(fname, "svg", f"mean secrecy against {label}, {channel} channel")


def _loss(report, out_dir, man):
    fig, ax = plt.subplots()
    for name, (tr, va) in sorted(report.loss_curves.items()):
        _write_csv(os.path.join(out_dir, f"loss_{name}.csv"), ["epoch", "train_nmse", "val_nmse"],
                   [[i, a, b] for i, (a, b) in enumerate(zip(tr, va))])
        man.add(f"loss_{name}.csv", "csv", f"training curve of {name} (normalised coordinates)",
                header="epoch train_nmse val_nmse")
        line, = ax.plot(tr, label=f"{name} train")
        ax.plot(va, linestyle="--", color=line.get_color(), label=f"{name} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("NMSE")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, os.path.join(out_dir, "loss_curves.svg"))
    man.add("loss_curves.svg", "svg", "training and validation NMSE per epoch")


def gain_pattern_chart(azimuth_deg, series: dict, path, title=""):
    """Line chart of array pattern gain (dB) against azimuth for several layouts."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for name, gain in series.items():
            ax.plot(azimuth_deg, 10 * np.log10(np.maximum(gain, 1e-12)), label=name)
        ax.set_xlabel("azimuth (deg)")
        ax.set_ylabel("pattern gain (dB)")
        if title:
            ax.set_title(title)
        ax.legend()
        ax.grid(True, alpha=0.3)
        _save(fig, path)


def convergence_chart(history, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(np.arange(len(history)), history, marker=".")
        ax.set_xlabel("iteration")
        ax.set_ylabel("best expected secrecy rate (bit/s/Hz)")
        ax.grid(True, alpha=0.3)
        _save(fig, path)

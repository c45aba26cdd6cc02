"""Prediction metrics, secrecy replay of predicted layouts, and timing."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import NodeState, Role, Scenario, SecrecyObjective
from .dataset import slot_rng

_REPLAY_STREAM = 7


def nmse(pred, truth) -> float:
    """Sum of squared errors over all slots divided by the truth energy."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from truth shape {truth.shape}")
    den = np.sum(truth * truth)
    if den == 0:
        raise ValueError("NMSE undefined for an all-zero truth")
    return float(np.sum((pred - truth) ** 2) / den)


def accuracy_at_threshold(pred, truth, eps) -> float:
    """Fraction of (slot, antenna) positions within ``eps`` metres of the truth."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    err = np.linalg.norm(np.asarray(pred, float) - np.asarray(truth, float), axis=-1)
    return float(np.mean(err <= eps))


def per_sample_mse(pred, truth):
    """Mean squared coordinate error of each window (axis 0)."""
    d = np.asarray(pred, float) - np.asarray(truth, float)
    return np.mean(d.reshape(d.shape[0], -1) ** 2, axis=1)


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    n: int
    n_outliers: int


def mse_stats(samples) -> BoxStats:
    """Box-plot statistics: linear-interpolation quartiles, whiskers at the
    most extreme samples inside 1.5 IQR of the box."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size < 4:
        raise ValueError(f"box statistics need at least 4 samples, got {x.size}")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    return BoxStats(float(med), float(q1), float(q3), float(inside.min()), float(inside.max()), int(x.size),
                    int(x.size - inside.size))


# ---------------------------------------------------------------- secrecy replay

REPLAY_COLUMNS = ("slot", "channel", "param", "value", "fixed", "optimal", "predicted")


@dataclass
class ReplayTable:
    rows: list = field(default_factory=list)

    def column(self, name):
        i = REPLAY_COLUMNS.index(name)
        return [r[i] for r in self.rows]

    def select(self, channel, param):
        """(slots, values, array (S, V, 3)) for one sweep; columns fixed/optimal/predicted."""
        rows = [r for r in self.rows if r[1] == channel and r[2] == param]
        slots = sorted({r[0] for r in rows})
        values = sorted({r[3] for r in rows})
        out = np.full((len(slots), len(values), 3), np.nan)
        si = {s: i for i, s in enumerate(slots)}
        vi = {v: i for i, v in enumerate(values)}
        for r in rows:
            out[si[r[0]], vi[r[3]]] = r[4:7]
        return slots, values, out

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(REPLAY_COLUMNS) + "\n")
            for r in self.rows:
                fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]!r},{r[4]!r},{r[5]!r},{r[6]!r}\n")


def secrecy_replay(
    slots,
    bob,
    eve,
    optimal,
    predicted,
    fixed,
    scenario: Scenario,
    alpha_grid=(2.0, 3.0, 4.0),
    noise_grid=(1e-5,),
    power_grid=(1.0,),
    m_carol=16,
    seed=0,
    channels=("los", "rician"),
) -> ReplayTable:
    """Expected secrecy of fixed / optimal / predicted layouts under parameter sweeps.

    ``los`` replays the deterministic line-of-sight channel; ``rician`` uses
    the scenario's fading with the same realizations for every sweep value
    of a slot.
    """
    optimal = np.asarray(optimal, float)
    predicted = np.asarray(predicted, float)
    fixed = np.asarray(fixed, float)
    table = ReplayTable()
    sweeps = (("alpha", alpha_grid), ("noise_power", noise_grid), ("tx_power", power_grid))
    for i, t in enumerate(slots):
        layouts = np.stack([fixed, optimal[i], predicted[i]])
        b, e = NodeState(bob[i], Role.BOB), NodeState(eve[i], Role.EVE)
        for channel in channels:
            base = scenario.with_(kappa=np.inf, nlos_count=0) if channel == "los" else scenario
            mc = 1 if channel == "los" else m_carol
            for param, grid in sweeps:
                for v in grid:
                    sc = base.with_(**{param: float(v)})
                    obj = SecrecyObjective(sc, b, e, mc, slot_rng(seed, int(t), _REPLAY_STREAM))
                    vals = obj.evaluate(layouts)
                    table.rows.append((int(t), channel, param, float(v), float(vals[0]), float(vals[1]),
                                       float(vals[2])))
    return table


# ---------------------------------------------------------------- timing


@dataclass(frozen=True)
class TimingStats:
    mean_ms: float
    std_ms: float
    runs_ms: tuple


def time_inference(fn, history, repetitions=20, warmup=3) -> TimingStats:
    """Wall-clock statistics of ``fn(history)`` after discarding warm-up calls."""
    if repetitions < 10:
        raise ValueError("need at least 10 timed repetitions")
    if warmup < 3:
        raise ValueError("need at least 3 warm-up calls")
    for _ in range(warmup):
        fn(history)
    runs = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn(history)
        runs.append(1e3 * (time.perf_counter() - t0))
    return TimingStats(float(np.mean(runs)), float(np.std(runs)), tuple(runs))


# ---------------------------------------------------------------- report container


@dataclass
class ModelMetrics:
    name: str
    nmse: dict  # horizon -> value
    accuracy: dict  # horizon -> value
    mse: BoxStats
    inference: TimingStats | None = None
    replay_mean: dict = field(default_factory=dict)  # column -> mean secrecy (rician, base parameters)


@dataclass
class MetricReport:
    eps: float
    horizons: list
    models: list = field(default_factory=list)  # ModelMetrics
    replay: dict = field(default_factory=dict)  # model name -> ReplayTable
    loss_curves: dict = field(default_factory=dict)  # model name -> (train, val)

    def model(self, name) -> ModelMetrics:
        for m in self.models:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_json(self, path):
        doc = {
            "eps": self.eps,
            "horizons": list(self.horizons),
            "models": [
                {
                    "name": m.name,
                    "nmse": {str(k): v for k, v in m.nmse.items()},
                    "accuracy": {str(k): v for k, v in m.accuracy.items()},
                    "mse": asdict(m.mse),
                    "inference": None if m.inference is None else asdict(m.inference),
                    "replay_mean": m.replay_mean,
                }
                for m in self.models
            ],
            "replay": {k: [list(r) for r in t.rows] for k, t in self.replay.items()},
            "loss_curves": {k: [list(a), list(b)] for k, (a, b) in self.loss_curves.items()},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> MetricReport:
        with open(path) as fh:
            doc = json.load(fh)
        models = []
        for m in doc["models"]:
            inf = m["inference"]
            models.append(ModelMetrics(
                m["name"], {int(k): v for k, v in m["nmse"].items()}, {int(k): v for k, v in m["accuracy"].items()},
                BoxStats(**m["mse"]), None if inf is None else TimingStats(inf["mean_ms"], inf["std_ms"],
                                                                            tuple(inf["runs_ms"])),
                m.get("replay_mean", {}),
            ))
        replay = {k: ReplayTable([tuple(r) for r in rows]) for k, rows in doc["replay"].items()}
        curves = {k: (v[0], v[1]) for k, v in doc["loss_curves"].items()}
        return cls(doc["eps"], doc["horizons"], models, replay, curves)

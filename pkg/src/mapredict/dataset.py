"""Optimal-layout dataset: UAV trajectories, per-slot optimisation, file I/O
and sliding-window splits for the predictors."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayLayout, NodeState, Role, Scenario, SecrecyObjective
from .errors import MalformedHeaderError, TruncatedFileError, VersionMismatchError
from .pso import SwarmConfig, optimize_slot

log = logging.getLogger(__name__)

MAGIC = "MAPD"
FORMAT_VERSION = 1
TRAJECTORY_KINDS = ("waypoint_linear", "parametric_sinusoid", "random_walk")


# ---------------------------------------------------------------- trajectories


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str
    params: dict
    T: int
    dt: float = 1.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {TRAJECTORY_KINDS}")
        if self.T < 1:
            raise ValueError("trajectory needs T >= 1")

    def to_dict(self):
        return {"kind": self.kind, "params": self.params, "T": self.T, "dt": self.dt}


def _vec(params, key, default=None):
    if key not in params:
        if default is None:
            raise ValueError(f"trajectory parameter {key!r} is required")
        return np.asarray(default, dtype=float)
    v = np.asarray(params[key], dtype=float)
    if v.shape != (3,):
        raise ValueError(f"trajectory parameter {key!r} must be a 3-vector")
    return v


def generate_trajectory(spec: TrajectorySpec, rng=None) -> np.ndarray:
    """Positions of one UAV over ``spec.T`` slots, shape (T, 3)."""
    p = spec.params
    T = spec.T
    frac = np.arange(T) / (T - 1) if T > 1 else np.zeros(1)
    if spec.kind == "waypoint_linear":
        a, b = _vec(p, "start"), _vec(p, "end")
        path = a + frac[:, None] * (b - a)
    elif spec.kind == "parametric_sinusoid":
        a, b = _vec(p, "start"), _vec(p, "end")
        amp = float(p.get("amplitude", 0.0))
        periods = float(p.get("periods", 1.0))
        phase = float(p.get("phase", 0.0))
        if amp < 0:
            raise ValueError("amplitude must be nonnegative")
        along = b - a
        perp = np.array([-along[1], along[0], 0.0])
        n = np.linalg.norm(perp)
        perp = np.array([0.0, 1.0, 0.0]) if n == 0 else perp / n
        offset = amp * np.sin(2 * np.pi * periods * frac + phase)
        path = a + frac[:, None] * along + offset[:, None] * perp
    else:
        if rng is None:
            raise ValueError("random_walk trajectories need an rng")
        start = _vec(p, "start")
        std = float(p.get("step_std", 0.5))
        drift = _vec(p, "drift", (0.0, 0.0, 0.0))
        max_step = float(p.get("max_step", 4 * std + np.linalg.norm(drift)))
        steps = drift + std * rng.standard_normal((T - 1, 3))
        norms = np.linalg.norm(steps, axis=1, keepdims=True)
        steps = np.where(norms > max_step, steps * max_step / np.maximum(norms, 1e-300), steps)
        path = np.vstack([start, start + np.cumsum(steps, axis=0)])
        floor = float(p.get("min_altitude", 1.0))
        # reflect off the altitude floor
        below = path[:, 2] < floor
        path[below, 2] = 2 * floor - path[below, 2]
    if np.any(path[:, 2] <= 0):
        raise ValueError(f"{spec.kind} trajectory dips to altitude {path[:, 2].min():.3g} m")
    return path


# ---------------------------------------------------------------- dataset


@dataclass(frozen=True)
class SlotRecord:
    t: int
    bob: np.ndarray
    eve: np.ndarray
    layout: ArrayLayout
    secrecy: float
    pso_iters_to_converge: int


@dataclass(eq=False)
class Dataset:
    meta: dict
    t: np.ndarray  # (T,)
    bob: np.ndarray  # (T, 3)
    eve: np.ndarray  # (T, 3)
    layouts: np.ndarray  # (T, M, 3)
    secrecy: np.ndarray  # (T,)
    iters: np.ndarray  # (T,)

    def __len__(self):
        return self.t.size

    @property
    def n_antennas(self) -> int:
        return self.layouts.shape[1]

    @property
    def records(self):
        return [self.record(i) for i in range(len(self))]

    def record(self, i) -> SlotRecord:
        return SlotRecord(int(self.t[i]), self.bob[i], self.eve[i], ArrayLayout(self.layouts[i], int(self.t[i])),
                          float(self.secrecy[i]), int(self.iters[i]))

    def same_as(self, other: Dataset) -> bool:
        """Bit-exact equality of every numeric field plus metadata."""
        return self.meta == other.meta and all(
            np.asarray(getattr(self, k)).tobytes() == np.asarray(getattr(other, k)).tobytes()
            for k in ("t", "bob", "eve", "layouts", "secrecy", "iters")
        )

    def scenario(self) -> Scenario:
        return Scenario(**self.meta["config"]["scenario"])


def round_sig(x, digits=9):
    """Round to ``digits`` significant digits through the text form used on disk."""
    x = np.asarray(x, dtype=float)
    out = np.array([float(f"{v:.{digits}g}") for v in x.ravel()]).reshape(x.shape)
    return out


def _normalization(layouts):
    return {"lo": layouts.reshape(-1, 3).min(axis=0).tolist(), "hi": layouts.reshape(-1, 3).max(axis=0).tolist()}


def slot_rng(seed, slot, stream):
    """Independent, reproducible substream for (seed, slot, purpose)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(slot), int(stream)]))


_TRAJ_STREAM, _CHANNEL_STREAM, _SWARM_STREAM = 0, 1, 2


def build_dataset(
    scenario: Scenario,
    bob_spec: TrajectorySpec,
    eve_spec: TrajectorySpec,
    swarm: SwarmConfig,
    m_carol: int = 16,
    seed: int = 0,
    progress=None,
) -> Dataset:
    """Optimise the layout slot by slot along the UAV trajectories.

    Each slot is warm-started from the previous optimum, which is both the
    d_max_slot anchor and one injected particle.
    """
    T = bob_spec.T
    if eve_spec.T != T:
        raise ValueError("Bob and Eve trajectories must have equal length")
    if swarm.n_antennas != scenario.n_antennas:
        raise ValueError("swarm and scenario disagree on the antenna count")
    bob_path = round_sig(generate_trajectory(bob_spec, slot_rng(seed, 0, _TRAJ_STREAM)))
    eve_path = round_sig(generate_trajectory(eve_spec, slot_rng(seed, 1, _TRAJ_STREAM)))
    M = scenario.n_antennas
    layouts = np.empty((T, M, 3))
    secrecy = np.empty(T)
    iters = np.empty(T, dtype=np.int64)
    prev = None
    for t in range(T):
        objective = SecrecyObjective(
            scenario, NodeState(bob_path[t], Role.BOB), NodeState(eve_path[t], Role.EVE),
            m_carol, slot_rng(seed, 0, _CHANNEL_STREAM),
        )
        res = optimize_slot(
            objective.evaluate, swarm, slot_rng(seed, t, _SWARM_STREAM),
            prev_layout=prev, initial=[] if prev is None else [prev], vectorized=True,
        )
        lay = round_sig(res.layout.positions)
        layouts[t] = lay
        secrecy[t] = round_sig(objective(lay))
        iters[t] = res.iters_to_converge
        prev = lay
        if progress is not None:
            progress(t, float(secrecy[t]))
    meta = {
        "config": {
            "scenario": _scenario_dict(scenario),
            "swarm": _swarm_dict(swarm),
            "bob": bob_spec.to_dict(),
            "eve": eve_spec.to_dict(),
            "m_carol": m_carol,
        },
        "seed": int(seed),
        "M": M,
        "T_hist": T,
        "units": {"position": "m", "secrecy": "bit/s/Hz", "dt": "s"},
        "normalization": _normalization(layouts),
    }
    return Dataset(meta, np.arange(T), bob_path, eve_path, layouts, secrecy, iters)


def _scenario_dict(sc: Scenario):
    return {
        "n_antennas": sc.n_antennas, "wavelength": sc.wavelength, "bs_height": sc.bs_height,
        "beta0": sc.beta0, "alpha": sc.alpha, "kappa": sc.kappa, "los_count": sc.los_count,
        "nlos_count": sc.nlos_count, "noise_power": sc.noise_power, "tx_power": sc.tx_power,
        "box_lo": list(sc.box_lo), "box_hi": list(sc.box_hi), "d_max_slot": sc.d_max_slot, "d_min": sc.d_min,
    }


def _swarm_dict(cfg: SwarmConfig):
    d = dict(cfg.__dict__)
    d["box_lo"] = np.asarray(cfg.box_lo, dtype=float).tolist()
    d["box_hi"] = np.asarray(cfg.box_hi, dtype=float).tolist()
    return d


# ---------------------------------------------------------------- file format


def _fmt(v):
    return f"{v:.9g}"


def save_dataset(ds: Dataset, path):
    M = ds.n_antennas
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{MAGIC} v{FORMAT_VERSION}\n")
        fh.write(json.dumps(ds.meta, sort_keys=True) + "\n")
        for i in range(len(ds)):
            fields = [str(int(ds.t[i]))]
            fields += [_fmt(v) for v in ds.bob[i]]
            fields += [_fmt(v) for v in ds.eve[i]]
            fields += [_fmt(v) for v in ds.layouts[i].reshape(3 * M)]
            fields.append(_fmt(ds.secrecy[i]))
            fields.append(str(int(ds.iters[i])))
            fh.write(",".join(fields) + "\n")


def load_dataset(path) -> Dataset:
    with open(path, "r") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split()
        if len(parts) != 2 or parts[0] != MAGIC or not parts[1].startswith("v"):
            raise MalformedHeaderError(f"{path}: not a dataset file (header {header[:40]!r})")
        try:
            version = int(parts[1][1:])
        except ValueError:
            raise MalformedHeaderError(f"{path}: bad version tag {parts[1]!r}") from None
        if version != FORMAT_VERSION:
            raise VersionMismatchError(version, FORMAT_VERSION)
        try:
            meta = json.loads(fh.readline())
            T, M = int(meta["T_hist"]), int(meta["M"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedHeaderError(f"{path}: unreadable metadata record ({exc})") from None
        width = 1 + 3 + 3 + 3 * M + 2
        rows = []
        for lineno, line in enumerate(fh, start=3):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(",")
            if len(fields) != width or not line.endswith("\n"):
                raise TruncatedFileError(f"{path}:{lineno}: expected {width} fields, got {len(fields)}",
                                         expected=width, actual=len(fields))
            rows.append(fields)
    if len(rows) != T:
        raise TruncatedFileError(f"{path}: expected {T} records, found {len(rows)}", expected=T, actual=len(rows))
    t = np.array([int(r[0]) for r in rows], dtype=np.int64)
    num = np.array([[float(v) for v in r[1:-1]] for r in rows]).reshape(T, -1)
    iters = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return Dataset(meta, t, num[:, 0:3], num[:, 3:6], num[:, 6:6 + 3 * M].reshape(T, M, 3),
                   num[:, 6 + 3 * M], iters)


# ---------------------------------------------------------------- windows


@dataclass(frozen=True)
class Normalizer:
    """Per-axis min-max map onto [0, 1]; a degenerate axis maps to 0.5."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, arrays):
        flat = np.concatenate([np.asarray(a).reshape(-1, 3) for a in arrays])
        return cls(flat.min(axis=0), flat.max(axis=0))

    @property
    def _offset_scale(self):
        span = self.hi - self.lo
        degenerate = span <= 0
        scale = np.where(degenerate, 1.0, span)
        offset = np.where(degenerate, self.lo - 0.5, self.lo)
        return offset, scale

    def transform(self, x):
        offset, scale = self._offset_scale
        return (np.asarray(x) - offset) / scale

    def inverse(self, z):
        offset, scale = self._offset_scale
        return np.asarray(z) * scale + offset

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


@dataclass
class Windows:
    X: np.ndarray  # (N, win, M, 3) history, metres
    Y: np.ndarray  # (N, pre, M, 3) future, metres
    t: np.ndarray  # (N,) forecast origin: index of the last observed slot

    def __len__(self):
        return self.t.size

    def subset(self, idx):
        return Windows(self.X[idx], self.Y[idx], self.t[idx])


@dataclass
class WindowSplit:
    train: Windows
    val: Windows
    test: Windows
    normalizer: Normalizer
    win: int
    pre: int
    meta: dict = field(default_factory=dict)


def sliding_windows(layouts, win, pre, stride=1, t0=0) -> Windows:
    T = layouts.shape[0]
    if win < 1 or pre < 1 or stride < 1:
        raise ValueError("window, horizon and stride must be >= 1")
    if win + pre > T:
        raise ValueError(f"window {win} + horizon {pre} exceeds the {T} available slots")
    starts = np.arange(0, T - win - pre + 1, stride)
    X = np.stack([layouts[s:s + win] for s in starts])
    Y = np.stack([layouts[s + win:s + win + pre] for s in starts])
    return Windows(X, Y, starts + win - 1 + t0)


def split_windows(ds, win, pre, stride=1, fractions=(0.7, 0.15, 0.15)) -> WindowSplit:
    """Chronological train/val/test windows; normaliser fitted on train only.

    Windows are assigned by forecast origin, earliest to train. Partitions
    are contiguous in origin, so their origin times never interleave.
    """
    layouts = ds.layouts if isinstance(ds, Dataset) else np.asarray(ds)
    w = sliding_windows(layouts, win, pre, stride)
    n = len(w)
    f_train, f_val, _ = fractions
    n_train = max(1, int(math.floor(f_train * n + 0.5)))
    n_val = int(math.floor(f_val * n + 0.5))
    if n_train + n_val > n:
        n_val = max(0, n - n_train)
    idx = np.arange(n)
    train = w.subset(idx[:n_train])
    val = w.subset(idx[n_train:n_train + n_val])
    test = w.subset(idx[n_train + n_val:])
    norm = Normalizer.fit([train.X, train.Y])
    return WindowSplit(train, val, test, norm, win, pre)


def sinusoidal_layouts(T, scenario: Scenario, rng, amplitude_frac=0.3, period_range=(20.0, 60.0)):
    """Synthetic antenna motion: each coordinate oscillates about a grid point.

    Amplitudes are a fraction of the half-extent of the box; periods (in
    slots) and phases are drawn per coordinate. Returns (T, M, 3).
    """
    lo, hi = np.asarray(scenario.box_lo, float), np.asarray(scenario.box_hi, float)
    M = scenario.n_antennas
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    side = int(np.ceil(np.sqrt(M)))
    g = (np.arange(side) - (side - 1) / 2) / max(side, 1)
    base = np.array([(centre[0] + gx * 2 * half[0], centre[1] + gy * 2 * half[1], centre[2])
                     for gx in g for gy in g][:M])
    amp = amplitude_frac * half[None, :] * rng.uniform(0.5, 1.0, (M, 3))
    period = rng.uniform(*period_range, (M, 3))
    phase = rng.uniform(0, 2 * np.pi, (M, 3))
    t = np.arange(T)[:, None, None]
    lay = base[None] + amp[None] * np.sin(2 * np.pi * t / period[None] + phase[None])
    return np.clip(lay, lo, hi)

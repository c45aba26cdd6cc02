"""Run configuration: YAML file merged over built-in defaults.

Unknown keys and type errors are reported with the file line and, for
misspelt keys, the closest valid key.
"""
from __future__ import annotations

import copy
import difflib
from dataclasses import dataclass

import numpy as np
import yaml

from .channel import SPEED_OF_LIGHT, Scenario
from .dataset import TrajectorySpec
from .errors import ConfigError
from .models import ModelConfig
from .pso import SwarmConfig

# Wavelength of the 28 GHz carrier as usually quoted (rounded).
QUOTED_WAVELENGTH = 0.0107
WAVELENGTH_TOL = 1e-4

DEFAULTS = {
    "seed": 0,
    "scenario": {
        "n_antennas": 9,
        "frequency_hz": 28e9,
        "wavelength": None,  # derived from frequency_hz when omitted
        "bs_height": 20.0,
        "beta0": 1e-2,
        "alpha": 2.0,
        "kappa": 10.0,
        "los_count": 1,
        "nlos_count": 4,
        "noise_power": 1e-5,
        "tx_power": 1.0,
        "box_lo": None,  # metres, array-local; default (-5, -5, -1) wavelengths
        "box_hi": None,  # default (5, 5, 1) wavelengths
        "d_max_slot": None,  # default half a wavelength
        "d_min": None,  # default half a wavelength
    },
    "swarm": {
        "n_particles": 50,
        "max_iter": 60,
        "c1": 2.0,
        "c2": 2.0,
        "omega_max": 0.6,
        "omega_min": 0.1,
        "repair_passes": 50,
        "per_coordinate": True,
        "v_max_frac": 0.1,
        "m_carol": 16,
    },
    "trajectories": {
        "T_hist": 200,
        "dt": 1.0,
        # Eve stays nearer the base station than Bob along the whole flight
        "bob": {"kind": "parametric_sinusoid",
                "params": {"start": [45.0, -25.0, 60.0], "end": [45.0, 25.0, 60.0], "amplitude": 6.0, "periods": 2.0}},
        "eve": {"kind": "waypoint_linear", "params": {"start": [20.0, 10.0, 40.0], "end": [-10.0, 25.0, 45.0]}},
    },
    "windows": {"stride": 1, "fractions": [0.7, 0.15, 0.15]},
    "model": {k: v for k, v in ModelConfig().__dict__.items() if k != "n_antennas"},
    "eval": {
        "eps": 5e-4,
        "horizons": [10, 60],
        "alpha_grid": [2.0, 2.5, 3.0, 3.5, 4.0],
        "noise_grid": [1e-6, 3e-6, 1e-5, 3e-5, 1e-4],
        "power_grid": [0.1, 0.25, 0.5, 0.75, 1.0],
        "replay_m_carol": 16,
        "repetitions": 20,
        "warmup": 3,
        "models": ["proposed", "lstm", "transformer", "narx"],
    },
}

# keys whose value is a free-form mapping (not checked key by key)
_FREEFORM = {("trajectories", "bob", "params"), ("trajectories", "eve", "params")}


def _type_ok(default, value):
    if default is None or value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    if isinstance(default, dict):
        return isinstance(value, dict)
    return True


def _check(node, schema, path, source):
    """Walk the composed YAML node tree against the defaults schema."""
    if not isinstance(node, yaml.MappingNode):
        where = ".".join(path) or "top level"
        raise ConfigError(f"{source}:{node.start_mark.line + 1}: {where} must be a mapping", key=where,
                          line=node.start_mark.line + 1)
    for knode, vnode in node.value:
        key = knode.value
        line = knode.start_mark.line + 1
        full = ".".join(path + (key,))
        if key not in schema:
            near = difflib.get_close_matches(key, list(schema), n=1, cutoff=0.0)
            hint = f"; nearest valid key is {'.'.join(path + (near[0],))!r}" if near else ""
            raise ConfigError(f"{source}:{line}: unknown key {full!r}{hint}", key=full, line=line)
        sub = schema[key]
        if path + (key,) in _FREEFORM:
            if not isinstance(vnode, yaml.MappingNode):
                raise ConfigError(f"{source}:{line}: {full} must be a mapping", key=full, line=line)
            continue
        if isinstance(sub, dict):
            _check(vnode, sub, path + (key,), source)


def _merge(base, over, path, source, lines):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        full = ".".join(path + (k,))
        if isinstance(out.get(k), dict) and path + (k,) not in _FREEFORM:
            out[k] = _merge(out[k], v, path + (k,), source, lines)
            continue
        if not _type_ok(out.get(k), v):
            line = lines.get(full)
            raise ConfigError(f"{source}:{line}: {full} has type {type(v).__name__}, expected "
                              f"{type(out[k]).__name__}", key=full, line=line)
        out[k] = v
    return out


def _key_lines(node, path=(), acc=None):
    acc = {} if acc is None else acc
    if isinstance(node, yaml.MappingNode):
        for knode, vnode in node.value:
            full = path + (knode.value,)
            acc[".".join(full)] = knode.start_mark.line + 1
            _key_lines(vnode, full, acc)
    return acc


@dataclass
class RunConfig:
    data: dict
    source: str = "<defaults>"

    @classmethod
    def defaults(cls):
        return cls(copy.deepcopy(DEFAULTS)).validated()

    @classmethod
    def from_text(cls, text, source="<string>"):
        try:
            root = yaml.compose(text)
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark else None
            raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}", line=line) from None
        if root is None:
            return cls(copy.deepcopy(DEFAULTS), source).validated()
        _check(root, DEFAULTS, (), source)
        data = _merge(DEFAULTS, raw, (), source, _key_lines(root))
        return cls(data, source).validated()

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    def validated(self):
        self.scenario()
        self.swarm_config()
        self.bob_spec()
        self.eve_spec()
        self.model_config().validate()
        ev = self.data["eval"]
        if ev["eps"] <= 0:
            raise ConfigError("eval.eps must be positive", key="eval.eps")
        if ev["repetitions"] < 10 or ev["warmup"] < 3:
            raise ConfigError("eval.repetitions must be >= 10 and eval.warmup >= 3", key="eval.repetitions")
        pre = self.data["model"]["pre"]
        for h in ev["horizons"]:
            if not 1 <= h <= pre:
                raise ConfigError(f"eval horizon {h} outside 1..model.pre={pre}", key="eval.horizons")
        fr = self.data["windows"]["fractions"]
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ConfigError("windows.fractions must be three nonnegative numbers summing to 1",
                              key="windows.fractions")
        return self

    @property
    def seed(self):
        return int(self.data["seed"])

    def with_seed(self, seed):
        d = copy.deepcopy(self.data)
        d["seed"] = int(seed)
        return RunConfig(d, self.source)

    def wavelength(self):
        sc = self.data["scenario"]
        f, lam = sc["frequency_hz"], sc["wavelength"]
        if f is None and lam is None:
            raise ConfigError("scenario needs frequency_hz or wavelength", key="scenario.frequency_hz")
        if f is None:
            return float(lam)
        if f <= 0:
            raise ConfigError("scenario.frequency_hz must be positive", key="scenario.frequency_hz")
        derived = SPEED_OF_LIGHT / f
        if lam is not None and abs(lam - derived) > WAVELENGTH_TOL:
            raise ConfigError(f"scenario.wavelength {lam} m disagrees with c/frequency = {derived:.6f} m "
                              f"(tolerance {WAVELENGTH_TOL} m)", key="scenario.wavelength")
        return derived

    def scenario(self) -> Scenario:
        sc = dict(self.data["scenario"])
        sc.pop("frequency_hz")
        sc["wavelength"] = self.wavelength()
        try:
            return Scenario(**sc)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"scenario: {exc}", key="scenario") from None

    def swarm_config(self) -> SwarmConfig:
        sw = dict(self.data["swarm"])
        sw.pop("m_carol")
        sc = self.scenario()
        try:
            cfg = SwarmConfig(sc.n_antennas, sc.box_lo, sc.box_hi, d_max_slot=sc.d_max_slot, d_min=sc.d_min, **sw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"swarm: {exc}", key="swarm") from None
        return cfg

    @property
    def m_carol(self):
        return int(self.data["swarm"]["m_carol"])

    def _traj(self, who) -> TrajectorySpec:
        tr = self.data["trajectories"]
        spec = tr[who]
        try:
            return TrajectorySpec(spec["kind"], dict(spec["params"]), int(tr["T_hist"]), float(tr["dt"]))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"trajectories.{who}: {exc}", key=f"trajectories.{who}") from None

    def bob_spec(self):
        return self._traj("bob")

    def eve_spec(self):
        return self._traj("eve")

    def model_config(self, kind=None) -> ModelConfig:
        m = dict(self.data["model"])
        m["n_antennas"] = self.data["scenario"]["n_antennas"]
        if kind is not None:
            m["kind"] = kind
        return ModelConfig.from_dict(m)

    @property
    def eval(self):
        return self.data["eval"]

    @property
    def windows(self):
        return self.data["windows"]

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)


def default_config_text() -> str:
    return yaml.safe_dump(DEFAULTS, sort_keys=False)


def box_arrays(scenario: Scenario):
    return np.asarray(scenario.box_lo, float), np.asarray(scenario.box_hi, float)

"""Constrained particle swarm search over antenna layouts.

A particle is a flattened layout q = [x1, y1, z1, ..., xM, yM, zM]. After
every move the layout is projected back onto the feasible set: clamp to the
movement box, truncate each antenna's displacement from the previous slot
to ``d_max_slot``, then push apart antenna pairs closer than ``d_min``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator

from .channel import ArrayLayout, pairwise_distances
from .errors import InfeasibleError

log = logging.getLogger(__name__)

# Radial truncation stays this far inside d_max_slot so that layouts rounded
# to 9 significant digits on disk still honour the limit.
_SLACK = 2e-10


@dataclass(frozen=True)
class SwarmConfig:
    n_antennas: int
    box_lo: tuple
    box_hi: tuple
    n_particles: int = 50
    max_iter: int = 60
    c1: float = 2.0
    c2: float = 2.0
    omega_max: float = 0.6
    omega_min: float = 0.1
    d_max_slot: float = None
    d_min: float = 0.0
    repair_passes: int = 50
    per_coordinate: bool = True
    # speed cap as a fraction of the box extent per coordinate
    v_max_frac: float = 0.1

    def __post_init__(self):
        if self.n_particles < 1 or self.max_iter < 0:
            raise ValueError("need n_particles >= 1 and max_iter >= 0")
        if not self.omega_max >= self.omega_min > 0:
            raise ValueError("need omega_max >= omega_min > 0")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("learning coefficients must be nonnegative")
        if self.d_max_slot is not None and self.d_max_slot <= 0:
            raise ValueError("d_max_slot must be positive")
        lo, hi = self.bounds()
        if np.any(lo > hi):
            raise ValueError("empty movement box")

    def bounds(self):
        shape = (self.n_antennas, 3)
        lo = np.broadcast_to(np.asarray(self.box_lo, dtype=float), shape)
        hi = np.broadcast_to(np.asarray(self.box_hi, dtype=float), shape)
        return lo, hi

    @property
    def dim(self) -> int:
        return 3 * self.n_antennas


@dataclass
class SwarmState:
    q: np.ndarray  # (K, 3M)
    v: np.ndarray
    pbest_q: np.ndarray
    pbest_fit: np.ndarray
    gbest_q: np.ndarray
    gbest_fit: float
    iteration: int = 0
    history: list = field(default_factory=list)


@dataclass
class SlotResult:
    layout: ArrayLayout
    fitness: float
    history: list
    iters_to_converge: int
    diagnostics: list  # rows of (iteration, gbest_fit, mean_fit, feasibility_repairs)


def inertia(i: int, config: SwarmConfig) -> float:
    """Linearly decreasing inertia weight, omega_max at i=0, omega_min at max_iter."""
    if config.max_iter == 0:
        return config.omega_max
    return config.omega_max - (config.omega_max - config.omega_min) * i / config.max_iter


def update_velocity(v, q, pbest, gbest, omega, c1, c2, rng, per_coordinate=False):
    """omega v + c1 s1 (pbest - q) + c2 s2 (gbest - q).

    s1, s2 ~ U[0, 1] are scalars per particle (rows of a 2-D ``q``) unless
    ``per_coordinate`` is set.
    """
    q = np.asarray(q, dtype=float)
    if per_coordinate:
        shape = q.shape
    else:
        shape = q.shape[:-1] + (1,)
    s1 = rng.random(shape)
    s2 = rng.random(shape)
    return omega * np.asarray(v) + c1 * s1 * (pbest - q) + c2 * s2 * (gbest - q)


def _truncate(P, prev, radius):
    if prev is None:
        return P
    disp = P - prev
    n = np.linalg.norm(disp, axis=-1, keepdims=True)
    over = n > radius
    if np.any(over):
        scale = np.where(over, radius / np.where(over, n, 1.0), 1.0)
        P = prev + disp * scale
    return P


def _spacing_ok(P, d_min, tol=0.0):
    if d_min <= 0:
        return np.ones(P.shape[0], dtype=bool)
    d = pairwise_distances(P)
    m = P.shape[1]
    d[:, np.arange(m), np.arange(m)] = np.inf
    return np.all(d >= d_min - tol, axis=(1, 2))


def _repair(P, lo, hi, prev, radius, d_min, passes, rng):
    """Iterative pairwise repulsion; returns (P, repaired_mask, failed_mask)."""
    ok = _spacing_ok(P, d_min)
    touched = ~ok
    if d_min <= 0 or np.all(ok):
        return P, touched, np.zeros_like(ok)
    target = d_min * (1 + 1e-6)
    m = P.shape[1]
    for _ in range(passes):
        idx = np.nonzero(~ok)[0]
        if idx.size == 0:
            break
        sub = P[idx]
        diff = sub[:, :, None, :] - sub[:, None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        dist[:, np.arange(m), np.arange(m)] = np.inf
        close = dist < target
        zero = close & (dist == 0)
        dist = np.where(close, dist, 1.0)
        if np.any(zero):
            # coincident antennas: separate along a random direction
            jitter = rng.standard_normal(diff.shape)
            diff = np.where(zero[..., None], jitter - np.swapaxes(jitter, 1, 2), diff)
            dist = np.where(zero, np.linalg.norm(diff, axis=-1), dist)
        push = np.where(close, 0.5 * (target - dist) / dist, 0.0)
        sub = sub + np.sum(push[..., None] * diff, axis=2)
        sub = np.clip(sub, lo, hi)
        sub = _truncate(sub, None if prev is None else prev, radius)
        P[idx] = sub
        ok[idx] = _spacing_ok(sub, d_min)
    return P, touched, ~ok


def _sample_feasible(lo, hi, prev, radius, d_min, rng, tries=2000):
    """Sequential rejection sampling of one feasible layout."""
    m = lo.shape[0]
    if prev is not None:
        a = np.maximum(lo, prev - radius)
        b = np.minimum(hi, prev + radius)
    else:
        a, b = lo, hi
    out = np.empty((m, 3))
    for i in range(m):
        for _ in range(tries):
            cand = a[i] + rng.random(3) * (b[i] - a[i])
            if prev is not None and np.linalg.norm(cand - prev[i]) > radius:
                continue
            if i == 0 or np.min(np.linalg.norm(out[:i] - cand, axis=1)) >= d_min:
                out[i] = cand
                break
        else:
            if prev is not None:
                return prev.copy()
            j = int(np.argmin(np.linalg.norm(out[:i] - cand, axis=1))) if i else i
            raise InfeasibleError(
                f"cannot place antenna {i} at spacing {d_min:.4g} m from antenna {j} inside the box",
                pair=(j, i),
            )
    return out


def project(q, config: SwarmConfig, prev_layout=None, rng=None):
    """Map candidate particles (K, 3M) onto the feasible set.

    Returns the projected particles, a boolean mask of clamped coordinates,
    and the number of particles that needed spacing repair or resampling.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = config.bounds()
    K = q.shape[0]
    P = np.asarray(q, dtype=float).reshape(K, config.n_antennas, 3)
    clipped = np.clip(P, lo, hi)
    clamped = clipped != P
    prev = None if prev_layout is None else _prev_positions(prev_layout)
    radius = None if prev is None or config.d_max_slot is None else config.d_max_slot - _SLACK
    if radius is None:
        prev = None
    P = _truncate(clipped, prev, radius)
    P, touched, failed = _repair(P, lo, hi, prev, radius, config.d_min, config.repair_passes, rng)
    for k in np.nonzero(failed)[0]:
        log.debug("spacing repair failed for particle %d; resampling", k)
        P[k] = _sample_feasible(lo, hi, prev, radius, config.d_min, rng)
    return P.reshape(K, -1), clamped.reshape(K, -1), int(np.count_nonzero(touched))


def update_position(q, v_new, config: SwarmConfig, prev_layout=None, rng=None):
    """q + v projected onto the constraints; velocity zeroed where clamped."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    v_new = np.atleast_2d(np.asarray(v_new, dtype=float))
    q_new, clamped, repairs = project(q + v_new, config, prev_layout, rng)
    v_out = np.where(clamped, 0.0, v_new)
    return q_new, v_out, repairs


def _prev_positions(prev_layout):
    if prev_layout is None:
        return None
    if isinstance(prev_layout, ArrayLayout):
        return prev_layout.positions
    return np.asarray(prev_layout, dtype=float).reshape(-1, 3)


def _evaluate(fitness, q, config, vectorized):
    P = q.reshape(q.shape[0], config.n_antennas, 3)
    if vectorized:
        return np.asarray(fitness(P), dtype=float)
    return np.array([float(fitness(p)) for p in P])


def init_swarm(config: SwarmConfig, fitness, rng: Generator, prev_layout=None, initial=(), vectorized=False):
    """Uniform initial particles (inside the box and the d_max_slot cube),
    projected to feasibility; ``initial`` layouts replace the first particles."""
    lo, hi = config.bounds()
    K = config.n_particles
    prev = _prev_positions(prev_layout)
    if prev is not None and config.d_max_slot is not None:
        a = np.maximum(lo, prev - config.d_max_slot)
        b = np.minimum(hi, prev + config.d_max_slot)
    else:
        a, b = lo, hi
    q = (a + rng.random((K,) + lo.shape) * (b - a)).reshape(K, -1)
    for k, layout in enumerate(list(initial)[:K]):
        q[k] = _prev_positions(layout).ravel()
    q, _, _ = project(q, config, prev_layout, rng)
    span = (hi - lo).ravel()
    v = rng.uniform(-span / 10, span / 10, size=(K, config.dim))
    fit = _evaluate(fitness, q, config, vectorized)
    best = int(np.argmax(fit))
    return SwarmState(
        q=q, v=v, pbest_q=q.copy(), pbest_fit=fit.copy(),
        gbest_q=q[best].copy(), gbest_fit=float(fit[best]), iteration=0,
        history=[float(fit[best])],
    )


def step(state: SwarmState, fitness, config: SwarmConfig, rng: Generator, prev_layout=None, vectorized=False):
    """One synchronous iteration; returns (mean fitness, repair count)."""
    i = state.iteration + 1
    omega = inertia(i, config)
    v = update_velocity(state.v, state.q, state.pbest_q, state.gbest_q, omega,
                        config.c1, config.c2, rng, config.per_coordinate)
    if config.v_max_frac is not None:
        lo, hi = config.bounds()
        vmax = config.v_max_frac * (hi - lo).ravel()
        v = np.clip(v, -vmax, vmax)
    state.q, state.v, repairs = update_position(state.q, v, config, prev_layout, rng)
    fit = _evaluate(fitness, state.q, config, vectorized)
    better = fit > state.pbest_fit
    state.pbest_q[better] = state.q[better]
    state.pbest_fit[better] = fit[better]
    best = int(np.argmax(state.pbest_fit))
    if state.pbest_fit[best] > state.gbest_fit:
        state.gbest_fit = float(state.pbest_fit[best])
        state.gbest_q = state.pbest_q[best].copy()
    state.iteration = i
    state.history.append(state.gbest_fit)
    return float(np.mean(fit)), repairs


def optimize_slot(fitness, config: SwarmConfig, rng: Generator, prev_layout=None, initial=(), vectorized=False):
    """Maximise ``fitness`` over feasible layouts.

    ``fitness`` maps an (M, 3) layout to a float, or, with ``vectorized``,
    a stack (K, M, 3) to K floats.
    """
    state = init_swarm(config, fitness, rng, prev_layout, initial, vectorized)
    diagnostics = [(0, state.gbest_fit, float(np.mean(state.pbest_fit)), 0)]
    last_gain = 0
    for _ in range(config.max_iter):
        before = state.gbest_fit
        mean_fit, repairs = step(state, fitness, config, rng, prev_layout, vectorized)
        if state.gbest_fit > before:
            last_gain = state.iteration
        diagnostics.append((state.iteration, state.gbest_fit, mean_fit, repairs))
    layout = ArrayLayout(state.gbest_q.reshape(config.n_antennas, 3))
    return SlotResult(layout, state.gbest_fit, list(state.history), last_gain, diagnostics)


def write_diagnostics(rows, path):
    with open(path, "w") as fh:
        fh.write("iteration,gbest_fit,mean_fit,feasibility_repairs\n")
        for it, g, mfit, rep in rows:
            fh.write(f"{it},{g:.17g},{mfit:.17g},{rep}\n")

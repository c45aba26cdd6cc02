"""Movable-antenna channel model: geometry, Rician fading, SNR and secrecy.

Antenna coordinates are local to the array reference point (the BS mast top
plus the movement-box centre). Directions follow the elevation/azimuth
convention r = (cos t cos p, cos t sin p, sin t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numpy.random import Generator
from numpy.typing import NDArray

SPEED_OF_LIGHT = 299_792_458.0


class Role(Enum):
    BASE_STATION = "bs"
    BOB = "bob"
    EVE = "eve"


@dataclass(frozen=True)
class NodeState:
    position: NDArray[np.float64]
    role: Role

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"non-finite node position {pos}")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class ArrayLayout:
    """Positions of the M movable antennas at one slot, shape (M, 3), metres."""

    positions: NDArray[np.float64]
    slot_index: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"layout positions must have shape (M, 3), got {pos.shape}")
        object.__setattr__(self, "positions", pos)

    @property
    def n_antennas(self) -> int:
        return self.positions.shape[0]

    def violations(self, box_lo, box_hi, d_min, tol=1e-9):
        """List human-readable constraint violations (empty when feasible)."""
        out = []
        lo = np.broadcast_to(box_lo, self.positions.shape)
        hi = np.broadcast_to(box_hi, self.positions.shape)
        bad = (self.positions < lo - tol) | (self.positions > hi + tol)
        for m, axis in zip(*np.nonzero(bad)):
            out.append(f"antenna {m} axis {'xyz'[axis]} outside box")
        dist = pairwise_distances(self.positions)
        iu = np.triu_indices(self.n_antennas, 1)
        for i, j in zip(*iu):
            if dist[i, j] < d_min - tol:
                out.append(f"antennas {i},{j} spaced {dist[i, j]:.3e} < {d_min:.3e}")
        return out


@dataclass(frozen=True)
class PathSet:
    """Propagation directions; LoS entries come first."""

    los_count: int
    theta: NDArray[np.float64]
    phi: NDArray[np.float64]

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if theta.shape != phi.shape or theta.ndim != 1:
            raise ValueError("theta and phi must be 1-D arrays of equal length")
        if not 0 <= self.los_count <= theta.size:
            raise ValueError(f"los_count {self.los_count} exceeds path count {theta.size}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @property
    def total(self) -> int:
        return self.theta.size

    @property
    def nlos_count(self) -> int:
        return self.total - self.los_count

    def directions(self) -> NDArray[np.float64]:
        return direction_vectors(self.theta, self.phi)

    @classmethod
    def join(cls, los: PathSet, nlos: PathSet) -> PathSet:
        return cls(
            los.total,
            np.concatenate([los.theta, nlos.theta]),
            np.concatenate([los.phi, nlos.phi]),
        )


@dataclass(frozen=True)
class LinkBudget:
    tx_power: float
    noise_power: float
    rician_kappa: float
    wavelength: float

    def __post_init__(self):
        if self.tx_power <= 0 or self.noise_power <= 0 or self.wavelength <= 0:
            raise ValueError("tx_power, noise_power and wavelength must be positive")
        if self.rician_kappa < 0:
            raise ValueError("rician_kappa must be >= 0")


@dataclass(frozen=True)
class ChannelRealization:
    sigma_los: complex
    sigma_nlos: NDArray[np.complex128]
    distance: float
    alpha: float
    beta0: float


@dataclass(frozen=True)
class Scenario:
    """Physical scenario shared by the optimizer, the dataset and the replay."""

    n_antennas: int = 9
    wavelength: float = SPEED_OF_LIGHT / 28e9
    bs_height: float = 20.0
    beta0: float = 1e-2
    alpha: float = 2.0
    kappa: float = 10.0
    los_count: int = 1
    nlos_count: int = 4
    noise_power: float = 1e-5
    tx_power: float = 1.0
    box_lo: tuple = None
    box_hi: tuple = None
    d_max_slot: float = None
    d_min: float = None

    def __post_init__(self):
        lam = self.wavelength
        # movement range of 10 wavelengths in the array plane, 2 in height
        if self.box_lo is None:
            object.__setattr__(self, "box_lo", (-5 * lam, -5 * lam, -lam))
        if self.box_hi is None:
            object.__setattr__(self, "box_hi", (5 * lam, 5 * lam, lam))
        if self.d_max_slot is None:
            object.__setattr__(self, "d_max_slot", lam / 2)
        if self.d_min is None:
            object.__setattr__(self, "d_min", lam / 2)
        object.__setattr__(self, "box_lo", tuple(float(v) for v in self.box_lo))
        object.__setattr__(self, "box_hi", tuple(float(v) for v in self.box_hi))
        if any(lo > hi for lo, hi in zip(self.box_lo, self.box_hi)):
            raise ValueError(f"empty movement box {self.box_lo} .. {self.box_hi}")
        if self.los_count + self.nlos_count < 1:
            raise ValueError("at least one propagation path is required")
        if self.kappa > 0 and self.los_count < 1:
            raise ValueError("kappa > 0 needs at least one LoS path")
        LinkBudget(self.tx_power, self.noise_power, self.kappa, self.wavelength)

    @property
    def budget(self) -> LinkBudget:
        return LinkBudget(self.tx_power, self.noise_power, self.kappa, self.wavelength)

    @property
    def bs_position(self) -> NDArray[np.float64]:
        return np.array([0.0, 0.0, self.bs_height])

    @property
    def array_reference(self) -> NDArray[np.float64]:
        centre = 0.5 * (np.asarray(self.box_lo) + np.asarray(self.box_hi))
        return self.bs_position + centre

    def with_(self, **changes) -> Scenario:
        return replace(self, **changes)


def direction_vector(theta: float, phi: float) -> NDArray[np.float64]:
    ct = math.cos(theta)
    return np.array([ct * math.cos(phi), ct * math.sin(phi), math.sin(theta)])


def direction_vectors(theta, phi) -> NDArray[np.float64]:
    """Vectorised direction_vector; output shape theta.shape + (3,)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def los_angles(origin, target) -> tuple[float, float]:
    """Elevation and azimuth of the straight line from origin to target."""
    d = np.asarray(target, dtype=float) - np.asarray(origin, dtype=float)
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise ValueError("collocated nodes have no LoS direction")
    theta = math.asin(max(-1.0, min(1.0, d[2] / n)))
    return theta, math.atan2(d[1], d[0])


def _positions(layout) -> NDArray[np.float64]:
    if isinstance(layout, ArrayLayout):
        return layout.positions
    return np.asarray(layout, dtype=float)


def pairwise_distances(positions) -> NDArray[np.float64]:
    p = np.asarray(positions, dtype=float)
    diff = p[..., :, None, :] - p[..., None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def steering_vector(p, paths: PathSet, wavelength: float) -> NDArray[np.complex128]:
    p = np.asarray(p, dtype=float)
    return np.exp(1j * (2 * np.pi / wavelength) * (paths.directions() @ p))


def field_response_matrix(layout, paths: PathSet, wavelength: float) -> NDArray[np.complex128]:
    """L x M matrix whose m-th column is the steering vector of antenna m."""
    pos = _positions(layout)
    return np.exp(1j * (2 * np.pi / wavelength) * (paths.directions() @ pos.T))


def sample_nlos_paths(rng: Generator, count: int) -> PathSet:
    if count < 0:
        raise ValueError("count must be >= 0")
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size=count)
    phi = rng.uniform(-np.pi, np.pi, size=count)
    return PathSet(0, theta, phi)


def complex_normal(rng: Generator, size, variance: float) -> NDArray[np.complex128]:
    """Circularly-symmetric CN(0, variance) samples."""
    s = math.sqrt(variance / 2)
    return s * rng.standard_normal(size) + 1j * s * rng.standard_normal(size)


def rician_weights(kappa: float) -> tuple[float, float]:
    if math.isinf(kappa):
        return 1.0, 0.0
    return math.sqrt(kappa / (kappa + 1)), math.sqrt(1 / (kappa + 1))


def draw_path_responses(distance, alpha, beta0, nlos_count, rng) -> ChannelRealization:
    """LoS amplitude is deterministic; NLoS gains share power beta0 d^-alpha."""
    if distance <= 0:
        raise ValueError("link distance must be positive (collocated nodes)")
    power = beta0 * distance ** (-alpha)
    nlos = complex_normal(rng, nlos_count, power / nlos_count) if nlos_count else np.zeros(0, complex)
    return ChannelRealization(complex(math.sqrt(power)), nlos, distance, alpha, beta0)


def sample_channel(
    layout,
    node: NodeState,
    paths: PathSet,
    budget: LinkBudget,
    alpha: float,
    beta0: float,
    rng: Generator,
    origin=(0.0, 0.0, 0.0),
) -> NDArray[np.complex128]:
    """Channel vector H (length M) from the array to a single-antenna node.

    ``paths`` carries the LoS direction(s) first and the NLoS directions
    after; the NLoS path gains are drawn from ``rng``.
    """
    if node.role is Role.BASE_STATION:
        raise ValueError("channel endpoint must be Bob or Eve")
    if budget.rician_kappa > 0 and paths.los_count < 1:
        raise ValueError("kappa > 0 requires a LoS path")
    distance = float(np.linalg.norm(node.position - np.asarray(origin, dtype=float)))
    if distance == 0.0:
        raise ValueError("collocated nodes: distance is zero")
    real = draw_path_responses(distance, alpha, beta0, paths.nlos_count, rng)
    G = field_response_matrix(layout, paths, budget.wavelength)
    n_los = paths.los_count
    h_los = real.sigma_los * G[:n_los].sum(axis=0)
    h_nlos = real.sigma_nlos @ G[n_los:]
    a, b = rician_weights(budget.rician_kappa)
    return a * h_los + b * h_nlos


def equal_power_weights(n_antennas: int, tx_power: float) -> NDArray[np.complex128]:
    return np.full(n_antennas, math.sqrt(tx_power / n_antennas), dtype=complex)


def snr(H, w, noise_power: float) -> float:
    return abs(np.vdot(H, w)) ** 2 / noise_power


def secrecy_rate(gamma_b, gamma_e):
    """[log2(1 + gamma_b) - log2(1 + gamma_e)]^+ ; works elementwise."""
    r = np.maximum(0.0, np.log2(1.0 + np.asarray(gamma_b)) - np.log2(1.0 + np.asarray(gamma_e)))
    return float(r) if r.ndim == 0 else r


def mrt_weights(H_bob, tx_power: float) -> NDArray[np.complex128]:
    H = np.asarray(H_bob, dtype=complex)
    n = np.linalg.norm(H)
    if n == 0.0:
        raise ValueError("MRT needs a nonzero channel")
    return math.sqrt(tx_power) * H / n


def array_pattern_gain(layout, w, theta, phi, wavelength: float):
    """|a(theta, phi)^H w|^2 with a_m = exp(i 2pi/lambda p_m . r).

    Conjugating the steering vector keeps this consistent with the SNR
    convention, so a pure-LoS SNR equals path gain * pattern / noise.
    """
    pos = _positions(layout)
    r = direction_vectors(theta, phi)
    phase = (2 * np.pi / wavelength) * (r @ pos.T)
    g = np.abs(np.exp(-1j * phase) @ np.asarray(w, dtype=complex)) ** 2
    return float(g) if g.ndim == 0 else g


@dataclass
class _LinkDraws:
    los_dirs: NDArray[np.float64]  # (L_los, 3)
    los_amp: float
    nlos_dirs: NDArray[np.float64]  # (R, L_nlos, 3)
    nlos_gain: NDArray[np.complex128]  # (R, L_nlos)


@dataclass
class SecrecyObjective:
    """Monte Carlo secrecy rate of a layout for fixed Bob/Eve positions.

    All NLoS realizations are drawn once at construction, so the objective is
    a deterministic function of the layout (common random numbers across
    candidate layouts). ``evaluate`` accepts a stack of layouts (N, M, 3).
    """

    scenario: Scenario
    bob: NodeState
    eve: NodeState
    m_carol: int
    rng: Generator
    beamforming: str = "equal"
    _links: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.m_carol < 1:
            raise ValueError("m_carol must be >= 1")
        if self.beamforming not in ("equal", "mrt"):
            raise ValueError(f"unknown beamforming mode {self.beamforming!r}")
        sc = self.scenario
        ref = sc.array_reference
        dist = {}
        los = {}
        for node in (self.bob, self.eve):
            d = float(np.linalg.norm(node.position - ref))
            if d == 0.0:
                raise ValueError(f"{node.role.value} is collocated with the array")
            dist[node.role] = d
            los[node.role] = direction_vector(*los_angles(ref, node.position))
        draws = {r: ([], []) for r in dist}
        for _ in range(self.m_carol):
            for node in (self.bob, self.eve):
                paths = sample_nlos_paths(self.rng, sc.nlos_count)
                real = draw_path_responses(dist[node.role], sc.alpha, sc.beta0, sc.nlos_count, self.rng)
                draws[node.role][0].append(paths.directions().reshape(sc.nlos_count, 3))
                draws[node.role][1].append(real.sigma_nlos)
        self._links = {}
        for role, (dirs, gains) in draws.items():
            self._links[role] = _LinkDraws(
                los_dirs=np.repeat(los[role][None, :], sc.los_count, axis=0),
                los_amp=math.sqrt(sc.beta0 * dist[role] ** (-sc.alpha)),
                nlos_dirs=np.asarray(dirs).reshape(self.m_carol, sc.nlos_count, 3),
                nlos_gain=np.asarray(gains).reshape(self.m_carol, sc.nlos_count),
            )

    def channels(self, layouts, role: Role) -> NDArray[np.complex128]:
        """Channel vectors, shape (N, R, M), for a stack of layouts."""
        sc = self.scenario
        P = np.asarray(layouts, dtype=float)
        k = 2 * np.pi / sc.wavelength
        link = self._links[role]
        a, b = rician_weights(sc.kappa)
        h_los = link.los_amp * np.exp(1j * k * (P @ link.los_dirs.T)).sum(axis=-1)  # (N, M)
        H = np.broadcast_to((a * h_los)[:, None, :], (P.shape[0], self.m_carol, P.shape[1])).copy()
        if sc.nlos_count and b > 0:
            # (N, 1, M, 3) @ (R, 3, L) -> (N, R, M, L)
            phase = np.exp(1j * k * (P[:, None] @ np.swapaxes(link.nlos_dirs, 1, 2)))
            H += b * (phase @ link.nlos_gain[:, :, None])[..., 0]
        return H

    def samples(self, layouts) -> NDArray[np.float64]:
        """Per-realization secrecy rates, shape (N, R)."""
        P = np.asarray(layouts, dtype=float)
        sc = self.scenario
        Hb = self.channels(P, Role.BOB)
        He = self.channels(P, Role.EVE)
        if self.beamforming == "equal":
            w = math.sqrt(sc.tx_power / P.shape[1])
            gb = np.abs(Hb.conj().sum(axis=-1) * w) ** 2
            ge = np.abs(He.conj().sum(axis=-1) * w) ** 2
        else:
            nb = np.linalg.norm(Hb, axis=-1)
            w = np.sqrt(sc.tx_power) * Hb / nb[..., None]
            gb = (sc.tx_power * nb**2)
            ge = np.abs(np.sum(He.conj() * w, axis=-1)) ** 2
        return np.asarray(secrecy_rate(gb / sc.noise_power, ge / sc.noise_power))

    def evaluate(self, layouts) -> NDArray[np.float64]:
        return self.samples(layouts).mean(axis=-1)

    def __call__(self, layout) -> float:
        return float(self.evaluate(_positions(layout)[None])[0])


def expected_secrecy_rate(layout, bob: NodeState, eve: NodeState, scenario: Scenario, m_carol: int, rng: Generator) -> float:
    """Mean secrecy rate over ``m_carol`` independent NLoS realizations."""
    return SecrecyObjective(scenario, bob, eve, m_carol, rng)(layout)


def fixed_grid_layout(scenario: Scenario, spacing: float = None) -> ArrayLayout:
    """Conventional half-wavelength planar grid centred in the movement box."""
    m = scenario.n_antennas
    side = int(round(math.sqrt(m)))
    if side * side != m:
        raise ValueError(f"fixed grid needs a square antenna count, got {m}")
    spacing = scenario.wavelength / 2 if spacing is None else spacing
    centre = 0.5 * (np.asarray(scenario.box_lo) + np.asarray(scenario.box_hi))
    offs = (np.arange(side) - (side - 1) / 2) * spacing
    xx, yy = np.meshgrid(offs, offs, indexing="ij")
    pos = np.stack([xx.ravel(), yy.ravel(), np.zeros(m)], axis=1) + centre
    return ArrayLayout(pos)

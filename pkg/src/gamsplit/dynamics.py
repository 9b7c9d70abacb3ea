"""Concrete Markov-chain models: discretized overdamped Langevin dynamics
over the test potentials, plus the absorbing random walk used as an exact
oracle.

Every factory wires both the Python-level contract (transition kernel,
regions, coordinate) and the ids of the compiled kernels.  The Python
transition and the compiled step use the same arithmetic expressions and the
same draw counts, so a fixed seed reproduces the same trajectory through
either route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .paths import ChainModel


@dataclass
class Potential:
    """Scalar potential with analytic gradient."""

    name: str
    dimension: int
    value: Callable
    gradient: Callable


@dataclass
class LangevinScheme:
    """Euler-Maruyama discretization parameters of overdamped Langevin."""

    dt: float
    beta: float
    potential: Potential

    def __post_init__(self):
        if self.dt <= 0 or self.beta <= 0:
            raise ValueError("dt and beta must be positive")


def em_step(x: np.ndarray, scheme: LangevinScheme, gaussian_draw: np.ndarray) -> np.ndarray:
    """One explicit Euler-Maruyama step: x - dt*grad(x) + sqrt(2 dt/beta)*G."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(scheme.potential.gradient(x), dtype=float)
    return x - scheme.dt * g + np.sqrt(2.0 * scheme.dt / scheme.beta) * np.asarray(gaussian_draw)


# --- potentials ------------------------------------------------------------

def drift_potential(mu: float) -> Potential:
    """Linear potential mu*x whose Langevin dynamics is drifted Brownian motion."""
    return Potential(
        name="linear-drift",
        dimension=1,
        value=lambda p: mu * float(np.asarray(p).reshape(-1)[0]),
        gradient=lambda p: np.array([mu]),
    )


def bichannel_potential() -> Potential:
    """Double-minimum potential whose minima are connected by two channels."""

    def value(p):
        x, y = float(p[0]), float(p[1])
        return (0.2 * x ** 4 + 0.2 * (y - 1.0 / 3.0) ** 4
                + 3.0 * np.exp(-x * x - (y - 1.0 / 3.0) ** 2)
                - 3.0 * np.exp(-x * x - (y - 5.0 / 3.0) ** 2)
                - 5.0 * np.exp(-(x - 1.0) ** 2 - y * y)
                - 5.0 * np.exp(-(x + 1.0) ** 2 - y * y))

    def gradient(p):
        # expression order mirrors the compiled kernel bit for bit
        x, y = float(p[0]), float(p[1])
        y13 = y - 1.0 / 3.0
        y53 = y - 5.0 / 3.0
        e1 = np.exp(-x * x - y13 * y13)
        e2 = np.exp(-x * x - y53 * y53)
        e3 = np.exp(-(x - 1.0) * (x - 1.0) - y * y)
        e4 = np.exp(-(x + 1.0) * (x + 1.0) - y * y)
        gx = (0.8 * (x * x * x) - 6.0 * x * e1 + 6.0 * x * e2
              + 10.0 * (x - 1.0) * e3 + 10.0 * (x + 1.0) * e4)
        gy = (0.8 * (y13 * y13 * y13) - 6.0 * y13 * e1
              + 6.0 * y53 * e2 + 10.0 * y * e3 + 10.0 * y * e4)
        return np.array([gx, gy])

    return Potential(name="bichannel", dimension=2, value=value, gradient=gradient)


def allen_cahn_potential(gamma: float) -> Potential:
    """Two-site discretized Allen-Cahn energy: gamma*(x-y)^2 + (V(x)+V(y))/2."""

    def v(z):
        return z ** 4 / 4.0 - z ** 2 / 2.0

    def value(p):
        x, y = float(p[0]), float(p[1])
        return gamma * (x - y) ** 2 + 0.5 * (v(x) + v(y))

    def gradient(p):
        x, y = float(p[0]), float(p[1])
        gx = 2.0 * gamma * (x - y) + 0.5 * (x * x * x - x)
        gy = -2.0 * gamma * (x - y) + 0.5 * (y * y * y - y)
        return np.array([gx, gy])

    return Potential(name="allen-cahn", dimension=2, value=value, gradient=gradient)


# --- reaction coordinates for the 2-d models -------------------------------

def _xi_batch(xi_id: int, m_a, m_b):
    xa, ya = m_a
    xb, yb = m_b
    ref = np.sqrt((xb - xa) ** 2 + (yb - ya) ** 2)

    def xi(states):
        s = np.asarray(states, dtype=float)
        x = s[..., 0]
        y = s[..., 1]
        if xi_id == kernels.XI_NORM_A:
            return np.sqrt((x - xa) ** 2 + (y - ya) ** 2)
        if xi_id == kernels.XI_NORM_B:
            return ref - np.sqrt((x - xb) ** 2 + (y - yb) ** 2)
        if xi_id == kernels.XI_ABSCISSA:
            return x
        return 0.5 * (x + y)

    return xi


_XI_IDS = {"xi1": kernels.XI_NORM_A, "xi2": kernels.XI_NORM_B,
           "xi3": kernels.XI_ABSCISSA, "xi4": kernels.XI_MAGNET}


# --- model factories --------------------------------------------------------

def random_walk_model(p_up: float, start: int = 1, top: int = 9,
                      z_max: float | None = None, path_cap: int = 1_000_000) -> ChainModel:
    """Nearest-neighbour walk on {0..top} absorbed at both ends.

    A = {0}, B = {top}, xi = identity.  The closed-form hitting probability
    makes this the exact-oracle model for unbiasedness tests.
    """
    if not 0.0 < p_up < 1.0:
        raise ValueError("p_up must lie in (0, 1)")
    if not 0 < start < top:
        raise ValueError("start must lie strictly between the barriers")
    params = np.array([p_up, float(top)])

    def transition(s, rng):
        x = float(s[0])
        return np.array([x + 1.0 if rng.random() < p_up else x - 1.0])

    return ChainModel(
        name="random-walk",
        x0=np.array([float(start)]),
        dim=1,
        transition=transition,
        region_a=lambda s: float(s[0]) <= 0.0,
        region_b=lambda s: float(s[0]) >= float(top),
        xi=lambda states: np.asarray(states, dtype=float)[..., 0],
        z_max=float(top) - 0.5 if z_max is None else z_max,
        path_cap=path_cap,
        kernel_id=kernels.MODEL_WALK,
        xi_id=kernels.XI_IDENTITY,
        kernel_params=params,
        sample_b_state=lambda rng: np.array([float(top)]),
    )


def drifted_bm_model(mu: float = 1.0, beta: float = 8.0, dt: float = 0.1,
                     a: float = 0.1, b: float = 1.9, x0: float = 1.0,
                     path_cap: int = 1_000_000) -> ChainModel:
    """Drifted Brownian motion, X_{i+1} = X_i - mu*dt + sqrt(2 dt/beta) G_i.

    A = ]-inf, a[, B = ]b, +inf[, xi = identity, z_max = b (so the
    level-bound assumption holds with equality of thresholds).
    """
    if mu <= 0:
        raise ValueError("mu must be positive: the drift must oppose B")
    if not a < x0 < b:
        raise ValueError("x0 must lie strictly between the barriers")
    LangevinScheme(dt=dt, beta=beta, potential=drift_potential(mu))  # validates
    params = np.array([mu, beta, dt, a, b])

    def transition(s, rng):
        # delegate to the compiled step so seeds replay identically through
        # the interpreted and compiled routes
        nx, _ = kernels.step(kernels.MODEL_DRIFTED_BM, params, float(s[0]), 0.0, rng)
        return np.array([nx])

    return ChainModel(
        name="drifted-bm",
        x0=np.array([x0]),
        dim=1,
        transition=transition,
        region_a=lambda s: float(s[0]) < a,
        region_b=lambda s: float(s[0]) > b,
        xi=lambda states: np.asarray(states, dtype=float)[..., 0],
        z_max=b,
        path_cap=path_cap,
        kernel_id=kernels.MODEL_DRIFTED_BM,
        xi_id=kernels.XI_IDENTITY,
        kernel_params=params,
        sample_b_state=lambda rng: np.array([b + rng.exponential(0.1)]),
    )


def _ball_model(name, kernel_id, potential, params, x0, m_a, m_b, rho,
                xi_choice, z_max_table, dt, beta, path_cap):
    if xi_choice not in z_max_table:
        raise ValueError(f"unknown reaction coordinate {xi_choice!r} for {name}")
    xi_id = _XI_IDS[xi_choice]
    LangevinScheme(dt=dt, beta=beta, potential=potential)  # validates
    xa, ya = m_a
    xb, yb = m_b
    rho2 = rho * rho

    def transition(s, rng):
        # compiled step keeps trajectories seed-reproducible across routes;
        # it agrees with em_step under this potential up to one ulp of exp
        nx, ny = kernels.step(kernel_id, params, float(s[0]), float(s[1]), rng)
        return np.array([nx, ny])

    def sample_b_state(rng):
        # uniform in the open ball around m_B
        while True:
            p = rng.uniform(-rho, rho, size=2)
            if p[0] ** 2 + p[1] ** 2 < rho2:
                return np.array([xb, yb]) + p

    return ChainModel(
        name=name,
        x0=np.asarray(x0, dtype=float),
        dim=2,
        transition=transition,
        region_a=lambda s: (s[0] - xa) ** 2 + (s[1] - ya) ** 2 < rho2,
        region_b=lambda s: (s[0] - xb) ** 2 + (s[1] - yb) ** 2 < rho2,
        xi=_xi_batch(xi_id, m_a, m_b),
        z_max=z_max_table[xi_choice],
        path_cap=path_cap,
        kernel_id=kernel_id,
        xi_id=xi_id,
        kernel_params=params,
        channel_rule=(0.0, 0.5),
        sample_b_state=sample_b_state,
    )


def bichannel_model(beta: float, rho: float = 0.05, xi_choice: str = "xi1",
                    dt: float = 0.05, path_cap: int = 1_000_000) -> ChainModel:
    """Bi-channel potential between balls around (-1, 0) and (1, 0).

    Coordinates: xi1 = distance to m_A (z_max 1.9), xi2 = shifted distance
    to m_B (z_max 1.9), xi3 = abscissa (z_max 0.9).
    """
    m_a, m_b = (-1.0, 0.0), (1.0, 0.0)
    params = np.array([0.0, beta, dt, rho, m_a[0], m_a[1], m_b[0], m_b[1], 0.0, 0.5])
    return _ball_model(
        "bichannel", kernels.MODEL_BICHANNEL, bichannel_potential(), params,
        (-0.9, 0.0), m_a, m_b, rho, xi_choice,
        {"xi1": 1.9, "xi2": 1.9, "xi3": 0.9}, dt, beta, path_cap)


def allen_cahn_model(gamma: float, beta: float, xi_choice: str = "xi1",
                     rho: float = 0.05, dt: float = 0.05,
                     path_cap: int = 1_000_000) -> ChainModel:
    """Two-site Allen-Cahn model between balls around (-1,-1) and (1,1).

    Coordinates xi1/xi2 stop at sqrt(7.6); the abscissa xi3 and the
    magnetization xi4 = (x+y)/2 stop at 0.9.
    """
    m_a, m_b = (-1.0, -1.0), (1.0, 1.0)
    params = np.array([gamma, beta, dt, rho, m_a[0], m_a[1], m_b[0], m_b[1], 0.0, 0.5])
    z = math.sqrt(7.6)
    return _ball_model(
        "allen-cahn", kernels.MODEL_ALLEN_CAHN, allen_cahn_potential(gamma), params,
        (-0.9, -0.9), m_a, m_b, rho, xi_choice,
        {"xi1": z, "xi2": z, "xi3": 0.9, "xi4": 0.9}, dt, beta, path_cap)

"""Algorithmic variants: exactly-k rejection resampling and the Gaussian
bridge as a non-path state space.

The exactly-k variant swaps the resampling kernel: the child copies its
parent strictly below the branch index and redraws the state at the branch
index from the transition kernel conditioned (by rejection) on exceeding the
level.  Ties between maximum levels then have probability zero on
continuous-state models, so exactly k replicas retire at every iteration and
extinction cannot occur.

The bridge model samples a discrete Brownian bridge pinned at zero on both
ends.  Its sequential conditional law is

    X_j | X_{j-1} = a, endpoint b after d increments  ~  N(a + (b-a)/d, (d-1)/d)

which must agree with the dense covariance-factorization sampler in
`oracle`; the test suite enforces that agreement before the variant is
trusted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kernels
from .engine import RejectionCapError
from .paths import ChainModel, StoppedPath, entrance_time, simulate_path


def exact_k_model(model: ChainModel, reject_cap: int = 1_000_000) -> ChainModel:
    """Clone of a chain model that resamples with the exactly-k kernel."""
    return replace(model, resample_kind=kernels.RS_EXACT_K, reject_cap=reject_cap)


def exact_k_resample(parent: StoppedPath, z: float, model: ChainModel, rng) -> StoppedPath:
    """Branch with the first above-level state redrawn conditionally.

    Copies indices ``0 .. T_z(parent)-1``, draws the state at index
    ``T_z(parent)`` from the transition kernel conditioned on its level
    exceeding z (rejection sampling), then continues freely to absorption.
    """
    t = entrance_time(parent, z)
    if t == math.inf:
        raise ValueError("exact-k resampling requires a parent exceeding the level")
    if t == 0:
        raise RuntimeError("entrance at index 0: levels produced by the algorithm "
                           "are bounded below by the initial state's level")
    prev = parent.states[t - 1]
    cand = None
    for _ in range(model.reject_cap):
        draw = model.transition(prev, rng)
        if float(model.xi(draw)) > z:
            cand = draw
            break
    if cand is None:
        raise RejectionCapError(
            f"model {model.name}: no draw above level {z} within "
            f"{model.reject_cap} attempts (level near the kernel's reachable supremum)")
    cont = simulate_path(model, cand, t, rng)
    states = np.concatenate([parent.states[:t], cont.states])
    xi = np.concatenate([parent.xi[:t], cont.xi])
    return StoppedPath(states, xi, cont.stop_code)


@dataclass
class BridgeState:
    """A realized bridge: kappa values pinned to zero at both virtual ends."""

    values: np.ndarray

    @property
    def kappa(self) -> int:
        return self.values.shape[0]


class BridgeModel:
    """Discrete Brownian bridge in R^kappa as a splitting state space.

    The maximum level is the largest coordinate; resampling at level z
    copies the coordinates through the first one strictly above z and
    redraws the remainder from the bridge pinned at that value and zero.
    """

    def __init__(self, kappa: int, z_max: float):
        if kappa < 1:
            raise ValueError("kappa must be at least 1")
        self.name = "gaussian-bridge"
        self.kappa = kappa
        self.z_max = float(z_max)
        self.dim = 1
        self.x0 = np.array([0.0])
        self.kernel_id = kernels.MODEL_BRIDGE
        self.xi_id = kernels.XI_IDENTITY
        self.kernel_params = np.array([float(kappa)])
        self.event_kind = kernels.EVENT_MAX_GT_ZMAX
        self.resample_kind = kernels.RS_STRICT
        self.path_cap = kappa + 1
        self.reject_cap = 0
        self.channel_rule = None

    @property
    def has_kernel(self) -> bool:
        return True

    def sample_initial(self, rng) -> BridgeState:
        buf, xi, _ = kernels.initial_path(
            self.kernel_id, self.xi_id, self.kernel_params, 0.0, 0.0,
            self.path_cap, rng)
        return BridgeState(values=xi)

    def max_level(self, state: BridgeState) -> float:
        return float(state.values.max())

    def resample(self, state: BridgeState, z: float, rng) -> BridgeState:
        t = kernels.entrance_index(state.values, z, True)
        if t < 0:
            return state
        cont, cont_xi, _ = kernels.continue_path(
            self.kernel_id, self.xi_id, self.kernel_params,
            state.values[t], 0.0, t, self.path_cap, rng)
        return BridgeState(values=np.concatenate([state.values[:t], cont_xi]))

    def reached_event(self, state: BridgeState) -> bool:
        return float(state.values.max()) > self.z_max

    def prefix_equal(self, a: BridgeState, b: BridgeState, z: float) -> bool:
        t = kernels.entrance_index(a.values, z, True)
        if t < 0:
            return np.array_equal(a.values, b.values)
        return np.array_equal(a.values[:t + 1], b.values[:t + 1])


def bridge_model(kappa: int, z_max: float) -> BridgeModel:
    """Gaussian-bridge model whose rare event is {max coordinate > z_max}."""
    return BridgeModel(kappa, z_max)


def sequential_bridge_sample(kappa: int, rng) -> np.ndarray:
    """One draw of the bridge via the sequential conditional construction."""
    _, xi, _ = kernels.initial_path(
        kernels.MODEL_BRIDGE, kernels.XI_IDENTITY, np.array([float(kappa)]),
        0.0, 0.0, kappa + 1, rng)
    return xi

"""Stopped Markov-chain paths: the replica state for the dynamic setting.

A path is the trajectory of a Markov chain run until it enters the
metastable region A (or B, see below), together with the reaction-coordinate
value of every visited state.  Three quantities drive the splitting engine:

* the maximum level ``Xi(x)``: the supremum of the coordinate along the path,
* the entrance time ``T_z(x)``: the first index whose coordinate STRICTLY
  exceeds ``z`` (the strictness is essential for unbiasedness),
* the branch-and-continue resampling: copy the parent up to and including
  ``T_z``, then continue with the transition kernel.

Simulation stops on entering A or B.  Stopping at B is sound because
``B`` lies inside ``{xi > z_max}``: every engine-visible functional of a
path (entrance times at levels <= z_max, the maximum level compared against
computed levels, the hit-B-before-A indicator) is already determined when B
is entered, while for metastable dynamics the return leg from B to A would
take practically forever to simulate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .kernels import STOP_A, STOP_B, STOP_CAP, STOP_END


class PathCapError(RuntimeError):
    """A trajectory exhausted the path cap before absorption."""


@dataclass
class StoppedPath:
    """A finite chain trajectory stopped on absorption.

    ``states`` has one row per visited state (``(n, d)``), ``xi`` the
    matching coordinate values, ``stop_code`` the reason the simulation
    ended.  ``max_xi`` is cached at construction and always equals
    ``xi.max()``.
    """

    states: np.ndarray
    xi: np.ndarray
    stop_code: int
    max_xi: float = field(init=False)

    def __post_init__(self):
        if self.states.ndim == 1:
            self.states = self.states.reshape(-1, 1)
        self.max_xi = float(self.xi.max())

    @property
    def length(self) -> int:
        return self.states.shape[0]

    @property
    def stopped_in_a(self) -> bool:
        return self.stop_code == STOP_A

    @property
    def stopped_in_b(self) -> bool:
        return self.stop_code == STOP_B


@dataclass
class ChainModel:
    """A Markov chain with regions, a reaction coordinate and a level bound.

    ``transition(state, rng)`` draws one step; ``xi`` maps a batch of states
    (``(n, d)`` array) to coordinate values.  ``kernel_id``/``xi_id``/
    ``kernel_params`` select the compiled fast kernels when available; custom
    models may leave them unset and run through the pure Python engine.
    """

    name: str
    x0: np.ndarray
    dim: int
    transition: Callable
    region_a: Callable
    region_b: Callable
    xi: Callable
    z_max: float
    path_cap: int = 100_000
    kernel_id: Optional[int] = None
    xi_id: int = kernels.XI_IDENTITY
    kernel_params: Optional[np.ndarray] = None
    resample_kind: int = kernels.RS_STRICT
    reject_cap: int = 1_000_000
    channel_rule: Optional[tuple] = None  # (crossing threshold, side threshold)
    sample_b_state: Optional[Callable] = None  # rng -> state inside B, for hyp-B audits

    event_kind: int = kernels.EVENT_HIT_B

    @property
    def has_kernel(self) -> bool:
        return self.kernel_id is not None

    # --- engine contract -------------------------------------------------
    def sample_initial(self, rng) -> StoppedPath:
        return simulate_path(self, self.x0, 0, rng)

    def max_level(self, path: StoppedPath) -> float:
        return path.max_xi

    def resample(self, path: StoppedPath, z: float, rng) -> StoppedPath:
        if self.resample_kind == kernels.RS_EXACT_K:
            from .variants import exact_k_resample
            if entrance_time(path, z) == math.inf:
                return path  # Dirac case
            return exact_k_resample(path, z, self, rng)
        return branch_resample(path, z, self, rng)

    def reached_event(self, path: StoppedPath) -> bool:
        return path.stopped_in_b

    def prefix_equal(self, a: StoppedPath, b: StoppedPath, z: float) -> bool:
        """Do the two paths agree on the prefix copied when branching at z?"""
        strict = self.resample_kind != kernels.RS_GE
        t = entrance_time(a, z, strict=strict)
        if t == math.inf:
            return a.length == b.length and np.array_equal(a.states, b.states)
        end = t if self.resample_kind == kernels.RS_EXACT_K else t + 1
        if b.length < end:
            return False
        return np.array_equal(a.states[:end], b.states[:end])


def _xi_of(model: ChainModel, states: np.ndarray) -> np.ndarray:
    return np.atleast_1d(np.asarray(model.xi(states), dtype=float))


def _as_row(state) -> np.ndarray:
    return np.atleast_1d(np.asarray(state, dtype=float))


def simulate_path(model: ChainModel, from_state, from_time: int, rng) -> StoppedPath:
    """Run the chain from ``from_state`` until absorption.

    ``from_time`` is the absolute index of the start state within the
    trajectory being built (0 for fresh paths); it only affects how much of
    the path cap is still available.
    """
    start = _as_row(from_state)
    cap_left = model.path_cap - from_time
    if cap_left <= 0:
        raise PathCapError(f"model {model.name}: no cap budget left at t={from_time}")
    if model.has_kernel:
        buf, xi, code = kernels.continue_path(
            model.kernel_id, model.xi_id, model.kernel_params,
            start[0], start[1] if model.dim > 1 else 0.0,
            from_time, cap_left, rng)
        if code == STOP_CAP:
            raise PathCapError(
                f"model {model.name}: path cap {model.path_cap} hit before absorption")
        return StoppedPath(buf[:, :model.dim].copy(), xi, int(code))

    # generic python stepping for custom models
    if model.region_a(start):
        raise ValueError("simulate_path must start outside region A")
    states = [start]
    x = start
    code = STOP_B if model.region_b(x) else -1
    while code < 0:
        if len(states) >= cap_left:
            raise PathCapError(
                f"model {model.name}: path cap {model.path_cap} hit before absorption")
        x = _as_row(model.transition(x, rng))
        states.append(x)
        if model.region_a(x):
            code = STOP_A
        elif model.region_b(x):
            code = STOP_B
    arr = np.asarray(states, dtype=float)
    return StoppedPath(arr, _xi_of(model, arr), int(code))


def entrance_time(path: StoppedPath, z: float, xi: Optional[Callable] = None,
                  strict: bool = True):
    """First index whose level strictly exceeds z; ``math.inf`` when none.

    The strict inequality at the boundary is load-bearing: a state whose
    coordinate equals z exactly does NOT trigger the entrance time.
    """
    values = path.xi if xi is None else np.asarray([xi(s) for s in path.states])
    t = kernels.entrance_index(values, z, strict)
    return math.inf if t < 0 else int(t)


def max_level(path: StoppedPath, xi: Optional[Callable] = None) -> float:
    """Supremum of the coordinate along the stopped path."""
    if xi is None:
        return path.max_xi
    return float(max(xi(s) for s in path.states))


def branch_resample(parent: StoppedPath, z: float, model: ChainModel, rng) -> StoppedPath:
    """Branch-and-continue resampling kernel at level z.

    If the parent never exceeds z the kernel is a Dirac mass (the parent is
    returned unchanged).  Otherwise the child copies the parent up to and
    including the entrance index, then continues with the transition kernel
    until absorption.  A resampled path may fall back and tie the parent's
    maximum level exactly; that is expected behaviour and must not be
    patched away.
    """
    t = entrance_time(parent, z)
    if t == math.inf:
        return parent
    cont = simulate_path(model, parent.states[t], t, rng)
    states = np.concatenate([parent.states[:t + 1], cont.states[1:]])
    xi = np.concatenate([parent.xi[:t + 1], cont.xi[1:]])
    return StoppedPath(states, xi, cont.stop_code)


def reached_b_before_a(path: StoppedPath, model: ChainModel) -> bool:
    """True iff a state of the stored path lies in B before the A-stop."""
    for j in range(path.length):
        s = path.states[j]
        if model.region_b(s):
            return True
        if model.region_a(s):
            return False
    return False


def dump_path(path: StoppedPath, fh) -> None:
    """Write one record per state: time, coordinates, level."""
    d = path.states.shape[1]
    cols = "\t".join(f"x{i}" for i in range(d))
    fh.write(f"t\t{cols}\txi\n")
    for t in range(path.length):
        coords = "\t".join(repr(float(v)) for v in path.states[t])
        fh.write(f"{t}\t{coords}\t{repr(float(path.xi[t]))}\n")

"""Generalized adaptive splitting engine over weighted replica systems.

The engine maintains a fixed-size population of weighted replicas and
iterates three steps against any model satisfying the contract below:

1. level computation - the k-th smallest maximum level among the working
   replicas (optionally over a random subset); if no working replica sits
   strictly above that value the level is +inf (extinction rule);
2. splitting - replicas at or below the level retire and keep their weight
   frozen; each of the K retired slots draws a parent independently and
   uniformly among the survivors; surviving and newborn replicas have their
   weight multiplied by (n_rep - K)/n_rep;
3. resampling - each newborn state is drawn from the model's level-indexed
   resampling kernel applied to its parent.

The run stops once the level exceeds ``z_max``.  The probability estimator
is ``p_hat = P_corr * prod_j (n_rep - K_j)/n_rep`` where the corrector
``P_corr`` is the fraction of final working replicas that realized the rare
event; more general observables are estimated by the weighted sum over all
replicas ever created, retired ones included.

Model contract (duck-typed; see `paths.ChainModel` / `variants.BridgeModel`):

* ``sample_initial(rng) -> state``
* ``max_level(state) -> float``
* ``resample(state, z, rng) -> state`` (Dirac when the state never exceeds z)
* ``reached_event(state) -> bool``
* ``prefix_equal(a, b, z) -> bool`` (testing hook)

Two interchangeable run loops exist: the Python reference loop built from
the step operations in this module (supports custom models, observables,
weight audits and branching policies) and a compiled loop for the shipped
models.  Both consume the run's random stream identically, so fixed seeds
produce bit-identical results through either route; tests rely on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import kernels, streams
from .paths import PathCapError

FULL_SORT = "full-sort"
RANDOM_SUBSET = "random-subset"


class MaxIterationsError(RuntimeError):
    """The iteration safety cap was exceeded (mis-configured z_max or trap)."""

    def __init__(self, message: str, k_history):
        super().__init__(message)
        self.k_history = np.asarray(k_history, dtype=np.int64)


class RejectionCapError(RuntimeError):
    """Conditioned resampling exceeded its attempt cap."""


@dataclass(frozen=True)
class GamsConfig:
    """Run parameters of the splitting algorithm."""

    n_rep: int
    k: int
    z_max: float
    level_strategy: str = FULL_SORT
    subset_size: Optional[int] = None
    max_iterations: int = 1_000_000
    seed: int = 0
    keep_retired: bool = False
    audit_weights: bool = False

    def __post_init__(self):
        if self.n_rep < 2:
            raise ValueError("n_rep must be at least 2")
        if not 1 <= self.k <= self.n_rep - 1:
            raise ValueError("k must lie in [1, n_rep-1]")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if self.level_strategy not in (FULL_SORT, RANDOM_SUBSET):
            raise ValueError(f"unknown level strategy {self.level_strategy!r}")
        if self.level_strategy == RANDOM_SUBSET:
            if self.subset_size is None or not self.k <= self.subset_size <= self.n_rep:
                raise ValueError("random-subset requires k <= subset_size <= n_rep")


@dataclass
class Replica:
    """One weighted replica (view object; storage is array-based)."""

    label: int
    state: object
    weight: float
    max_level: float
    status: str = "working"
    parent: Optional[int] = None
    birth_iteration: int = 0


@dataclass
class ReplicaSummary:
    """What survives of a final working replica once states are dropped."""

    label: int
    max_level: float
    reached: bool
    root_label: int
    weight: float
    channel: Optional[int] = None  # 1 upper / 2 lower / 0 not crossed


@dataclass
class BranchingPlan:
    """Outcome of one splitting step."""

    level: float
    k_retired: int
    retired_slots: np.ndarray
    survivor_slots: np.ndarray
    child_parent_slots: np.ndarray
    child_labels: np.ndarray
    child_weights: np.ndarray
    branching_numbers: np.ndarray  # aligned with survivor_slots
    retired_snapshots: List[Replica] = field(default_factory=list)


@dataclass
class RunResult:
    """Per-realization output of one splitting run."""

    p_hat: float
    p_corr: float
    q_iter: int
    k_history: np.ndarray
    extinct: bool
    final_working: List[ReplicaSummary]
    per_iteration_weight_sums: np.ndarray
    phi_hat: Optional[float] = None

    @property
    def m_b(self) -> int:
        return sum(1 for s in self.final_working if s.reached)

    @property
    def m_b_upper(self) -> Optional[int]:
        if not self.final_working or self.final_working[0].channel is None:
            return None
        return sum(1 for s in self.final_working if s.reached and s.channel == 1)

    @property
    def m_b_lower(self) -> Optional[int]:
        if not self.final_working or self.final_working[0].channel is None:
            return None
        return sum(1 for s in self.final_working if s.reached and s.channel == 2)


class ReplicaSystem:
    """The weighted population at one iteration (array-backed)."""

    def __init__(self, states, maxima, labels, weights, keep_retired: bool):
        self.states = list(states)
        self.maxima = np.asarray(maxima, dtype=float)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=float)
        n = len(self.states)
        self.roots = self.labels.copy()
        self.births = np.zeros(n, dtype=np.int64)
        self.parent_of: dict = {}
        self.retired: Optional[List[Replica]] = [] if keep_retired else None
        self.retired_weight = 0.0
        self.retired_count = 0
        self.current_level = -math.inf
        self.iteration = 0
        self.k_history: List[int] = []
        self.weight_sums: List[float] = []
        self.next_label = n + 1

    @property
    def n_working(self) -> int:
        return len(self.states)

    def total_weight(self) -> float:
        return float(self.weights.sum()) + self.retired_weight

    def working_replicas(self) -> List[Replica]:
        return [
            Replica(
                label=int(self.labels[i]),
                state=self.states[i],
                weight=float(self.weights[i]),
                max_level=float(self.maxima[i]),
                status="working",
                parent=self.parent_of.get(int(self.labels[i])),
                birth_iteration=int(self.births[i]),
            )
            for i in range(self.n_working)
        ]

    def root_of(self, label: int) -> int:
        while label in self.parent_of:
            label = self.parent_of[label]
        return label


# --- step operations ---------------------------------------------------------

def initialize_system(model, cfg: GamsConfig, rng) -> ReplicaSystem:
    """Draw n_rep i.i.d. replicas with uniform weights 1/n_rep."""
    states = [model.sample_initial(rng) for _ in range(cfg.n_rep)]
    maxima = [model.max_level(s) for s in states]
    labels = np.arange(1, cfg.n_rep + 1, dtype=np.int64)
    weights = np.full(cfg.n_rep, 1.0 / cfg.n_rep)
    return ReplicaSystem(states, maxima, labels, weights, cfg.keep_retired)


def compute_level(system: ReplicaSystem, k: int, strategy: str = FULL_SORT,
                  rng=None, subset_size: Optional[int] = None) -> float:
    """k-th smallest maximum level; +inf when nothing sits strictly above it."""
    maxima = system.maxima
    if strategy == FULL_SORT:
        if system.n_working < k:
            raise ValueError("need at least k working replicas")
        z = np.partition(maxima, k - 1)[k - 1]
    elif strategy == RANDOM_SUBSET:
        if subset_size is None or subset_size < k:
            raise ValueError("random-subset requires subset_size >= k")
        idx = rng.permutation(system.n_working)[:subset_size]
        z = np.partition(maxima[idx], k - 1)[k - 1]
    else:
        raise ValueError(f"unknown level strategy {strategy!r}")
    if not (maxima > z).any():
        return math.inf
    return float(z)


def split_step(system: ReplicaSystem, z: float, rng,
               branching_policy: Optional[Callable] = None) -> BranchingPlan:
    """Retire replicas at or below z, select parents, update weights.

    With the default policy, each retired slot draws one parent
    independently and uniformly among the survivors and every working
    replica's weight is multiplied by (n_rep - K)/n_rep.

    A custom ``branching_policy(system, z, retired_slots, survivor_slots,
    rng)`` must return ``(branching_numbers, conditional_expectations)``
    aligned with the survivors, with every branching number >= 1, total
    offspring ``sum(b - 1) == K`` (the population size is preserved) and
    positive conditional expectations.  The policy may only use information
    available below the current level (states truncated at their entrance
    time); this measurability requirement is the policy author's
    responsibility and cannot be checked here.  Weights follow the general
    rule G' = G / E[B | current information].
    """
    if not math.isfinite(z):
        raise ValueError("split_step requires a finite level")
    n_rep = system.n_working
    retire_mask = system.maxima <= z
    kq = int(retire_mask.sum())
    retired_slots = np.flatnonzero(retire_mask)
    survivor_slots = np.flatnonzero(~retire_mask)
    if survivor_slots.size == 0:
        raise RuntimeError("split_step called on an extinct system; "
                           "the caller must detect extinction first")
    if kq == 0:
        raise RuntimeError("split_step called with no replica to retire")

    snapshots = [
        Replica(
            label=int(system.labels[i]),
            state=system.states[i],
            weight=float(system.weights[i]),
            max_level=float(system.maxima[i]),
            status="retired",
            parent=system.parent_of.get(int(system.labels[i])),
            birth_iteration=int(system.births[i]),
        )
        for i in retired_slots
    ]

    if branching_policy is None:
        parent_pos = rng.integers(0, survivor_slots.size, size=kq)
        child_parent_slots = survivor_slots[parent_pos]
        b_numbers = np.bincount(parent_pos, minlength=survivor_slots.size) + 1
        factor = (n_rep - kq) / n_rep
        child_weights = system.weights[child_parent_slots] * factor
        system.weights[survivor_slots] *= factor
    else:
        b_numbers, b_expect = branching_policy(
            system, z, retired_slots.copy(), survivor_slots.copy(), rng)
        b_numbers = np.asarray(b_numbers, dtype=np.int64)
        b_expect = np.asarray(b_expect, dtype=float)
        if b_numbers.shape != (survivor_slots.size,) or b_expect.shape != b_numbers.shape:
            raise ValueError("branching policy output must align with survivors")
        if (b_numbers < 1).any():
            raise ValueError("branching numbers must be >= 1 (no survivor killing)")
        if int((b_numbers - 1).sum()) != kq:
            raise ValueError("branching policy must preserve the population size")
        if (b_expect <= 0).any():
            raise ValueError("conditional branching expectations must be positive")
        child_parent_slots = np.repeat(survivor_slots, b_numbers - 1)
        system.weights[survivor_slots] /= b_expect
        child_weights = system.weights[child_parent_slots].copy()

    child_labels = np.arange(system.next_label, system.next_label + kq, dtype=np.int64)
    system.next_label += kq

    # retired replicas keep their weight from now on
    system.retired_weight += sum(r.weight for r in snapshots)
    system.retired_count += kq
    if system.retired is not None:
        system.retired.extend(snapshots)
    system.k_history.append(kq)

    return BranchingPlan(
        level=z,
        k_retired=kq,
        retired_slots=retired_slots,
        survivor_slots=survivor_slots,
        child_parent_slots=child_parent_slots,
        child_labels=child_labels,
        child_weights=child_weights,
        branching_numbers=b_numbers,
        retired_snapshots=snapshots,
    )


def resample_step(system: ReplicaSystem, model, z: float, plan: BranchingPlan,
                  rng) -> ReplicaSystem:
    """Fill the retired slots by branching the selected parents at level z.

    A resampled path may fall back and tie its parent's maximum level
    exactly; the engine must not correct for that.
    """
    for j, slot in enumerate(plan.retired_slots):
        parent_slot = int(plan.child_parent_slots[j])
        parent_label = int(system.labels[parent_slot])
        child = model.resample(system.states[parent_slot], z, rng)
        label = int(plan.child_labels[j])
        system.states[slot] = child
        system.maxima[slot] = model.max_level(child)
        system.weights[slot] = plan.child_weights[j]
        system.labels[slot] = label
        system.roots[slot] = system.roots[parent_slot]
        system.births[slot] = system.iteration + 1
        system.parent_of[label] = parent_label
    return system


def survival_product(n_rep: int, k_history: Sequence[int]) -> float:
    """prod_j (n_rep - K_j) / n_rep, accumulated in iteration order."""
    prod = 1.0
    for kq in k_history:
        prod *= (n_rep - kq) / n_rep
    return prod


def estimate_observable(replicas: Sequence[Replica], observable: Callable) -> float:
    """Weighted sum of the observable over the given replicas."""
    return float(sum(r.weight * observable(r.state) for r in replicas))


# --- run loops ---------------------------------------------------------------

def _subset_size(cfg: GamsConfig) -> int:
    return cfg.subset_size if cfg.level_strategy == RANDOM_SUBSET else 0


def _audit_hyp_b(model, summaries, z_max: float) -> None:
    for s in summaries:
        if s.reached and not s.max_level > z_max:
            raise AssertionError(
                f"model {getattr(model, 'name', '?')}: a replica reached B with "
                f"maximum level {s.max_level} <= z_max {z_max}; the level-bound "
                "assumption on B is violated")


def _run_python(model, cfg: GamsConfig, rng, observable=None,
                branching_policy=None, fixed_q: Optional[int] = None) -> RunResult:
    system = initialize_system(model, cfg, rng)
    classify = getattr(model, "channel_rule", None)
    phi_retired = 0.0
    if cfg.audit_weights:
        system.weight_sums.append(system.total_weight())

    final_level = -math.inf
    while True:
        if fixed_q is not None and system.iteration >= fixed_q:
            break
        z = compute_level(system, cfg.k, cfg.level_strategy, rng, cfg.subset_size)
        if z == math.inf:
            final_level = math.inf
            break
        if fixed_q is None and z > cfg.z_max:
            final_level = z
            break
        if z <= system.current_level:
            raise RuntimeError("levels failed to strictly increase; "
                               "broken model contract")
        if system.iteration >= cfg.max_iterations:
            raise MaxIterationsError(
                f"exceeded {cfg.max_iterations} iterations "
                f"(z_max={cfg.z_max}, last level={z})", system.k_history)
        plan = split_step(system, z, rng, branching_policy)
        if observable is not None:
            for r in plan.retired_snapshots:
                phi_retired += r.weight * observable(r.state)
        resample_step(system, model, z, plan, rng)
        system.current_level = z
        system.iteration += 1
        if cfg.audit_weights:
            system.weight_sums.append(system.total_weight())

    reached = [bool(model.reached_event(s)) for s in system.states]
    p_corr = sum(reached) / cfg.n_rep
    p_hat = survival_product(cfg.n_rep, system.k_history) * p_corr
    extinct = final_level == math.inf and float(system.maxima.max()) <= cfg.z_max

    phi_hat = None
    if observable is not None:
        phi_hat = phi_retired + float(
            sum(system.weights[i] * observable(system.states[i])
                for i in range(cfg.n_rep)))

    summaries = []
    for i in range(cfg.n_rep):
        channel = None
        if classify is not None:
            arr = np.asarray(system.states[i].states, dtype=float)
            channel = int(kernels.classify_path(arr, classify[0], classify[1]))
        summaries.append(ReplicaSummary(
            label=int(system.labels[i]),
            max_level=float(system.maxima[i]),
            reached=reached[i],
            root_label=int(system.roots[i]),
            weight=float(system.weights[i]),
            channel=channel,
        ))
    if fixed_q is None and getattr(model, "event_kind", kernels.EVENT_HIT_B) == kernels.EVENT_HIT_B:
        _audit_hyp_b(model, summaries, cfg.z_max)

    return RunResult(
        p_hat=float(p_hat),
        p_corr=float(p_corr),
        q_iter=system.iteration,
        k_history=np.asarray(system.k_history, dtype=np.int64),
        extinct=extinct,
        final_working=summaries,
        per_iteration_weight_sums=np.asarray(system.weight_sums, dtype=float),
        phi_hat=phi_hat,
    )


def _run_fast(model, cfg: GamsConfig, rng) -> RunResult:
    x0 = np.atleast_1d(np.asarray(model.x0, dtype=float))
    want_channel = getattr(model, "channel_rule", None) is not None
    (status, p_hat, p_corr, q_iter, final_level, ext_rule,
     k_hist, maxima, reached, roots, channels, labels) = kernels.ams_loop(
        model.kernel_id, model.xi_id, model.kernel_params,
        model.event_kind, model.resample_kind,
        x0[0], x0[1] if x0.size > 1 else 0.0,
        cfg.n_rep, cfg.k, cfg.z_max, model.path_cap, cfg.max_iterations,
        _subset_size(cfg), model.reject_cap, want_channel, rng)

    if status == kernels.RUN_CAP_BREACH:
        raise PathCapError(
            f"model {model.name}: path cap {model.path_cap} hit during a run")
    if status == kernels.RUN_MAX_ITER:
        raise MaxIterationsError(
            f"exceeded {cfg.max_iterations} iterations (z_max={cfg.z_max})", k_hist)
    if status == kernels.RUN_REJECT_CAP:
        raise RejectionCapError(
            f"model {model.name}: conditioned resampling exceeded "
            f"{model.reject_cap} attempts (level near the kernel's reachable supremum)")
    if status == kernels.RUN_NO_SURVIVOR:
        raise RuntimeError("levels failed to strictly increase; broken model contract")

    extinct = bool(ext_rule) and float(maxima.max()) <= cfg.z_max
    final_weight = survival_product(cfg.n_rep, k_hist) / cfg.n_rep
    summaries = [
        ReplicaSummary(
            label=int(labels[i]),
            max_level=float(maxima[i]),
            reached=bool(reached[i]),
            root_label=int(roots[i]),
            weight=final_weight,
            channel=int(channels[i]) if want_channel else None,
        )
        for i in range(cfg.n_rep)
    ]
    if model.event_kind == kernels.EVENT_HIT_B:
        _audit_hyp_b(model, summaries, cfg.z_max)
    return RunResult(
        p_hat=float(p_hat),
        p_corr=float(p_corr),
        q_iter=int(q_iter),
        k_history=k_hist,
        extinct=extinct,
        final_working=summaries,
        per_iteration_weight_sums=np.empty(0),
    )


def run_ams(model, cfg: GamsConfig, rng=None, observable: Optional[Callable] = None,
            branching_policy: Optional[Callable] = None,
            force_python: bool = False) -> RunResult:
    """One realization of the splitting algorithm against the given model.

    Returns the probability estimator together with the corrector, the
    iteration count, the retirement-count history and summaries of the
    final working replicas.  When an ``observable`` is supplied, its
    weighted estimate over all replicas (retired included) is evaluated in
    streaming fashion and returned as ``phi_hat``.
    """
    if rng is None:
        rng = streams.run_generator(cfg.seed, 0)
    use_fast = (
        not force_python
        and getattr(model, "has_kernel", False)
        and observable is None
        and branching_policy is None
        and not cfg.keep_retired
        and not cfg.audit_weights
    )
    if use_fast:
        return _run_fast(model, cfg, rng)
    return _run_python(model, cfg, rng, observable, branching_policy)


def run_fixed_iterations(model, cfg: GamsConfig, q0: int,
                         observable: Callable, rng=None) -> float:
    """Weighted estimate of the observable after exactly q0 iterations.

    The estimator after any deterministic number of iterations is unbiased
    for the plain expectation of the observable, which is what the
    martingale acceptance test exercises.  Extinction freezes the system:
    remaining iterations leave the estimator unchanged.
    """
    if rng is None:
        rng = streams.run_generator(cfg.seed, 0)
    result = _run_python(model, cfg, rng, observable=observable, fixed_q=q0)
    return float(result.phi_hat)

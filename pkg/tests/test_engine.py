import math

import numpy as np
import pytest

import gamsplit as g
from gamsplit import engine, kernels
from gamsplit.engine import (GamsConfig, MaxIterationsError, compute_level,
                             initialize_system, resample_step, run_ams,
                             run_fixed_iterations, split_step,
                             survival_product)
from gamsplit.paths import ChainModel, StoppedPath


def constant_model(value=1.0):
    """Every sampled path is the same single-state path (deterministic)."""
    return ChainModel(
        name="const", x0=np.array([value]), dim=1,
        transition=lambda s, rng: np.array([-1.0]),
        region_a=lambda s: s[0] < 0.0,
        region_b=lambda s: s[0] > 10.0,
        xi=lambda st: np.asarray(st, dtype=float)[..., 0],
        z_max=10.0, path_cap=50)


def system_with_maxima(maxima, n_rep=None):
    """Hand-built replica system carrying the given maximum levels."""
    maxima = np.asarray(maxima, dtype=float)
    n = maxima.size if n_rep is None else n_rep
    states = [StoppedPath(np.array([[m]]), np.array([m]), kernels.STOP_A)
              for m in maxima]
    return engine.ReplicaSystem(
        states, maxima, np.arange(1, n + 1), np.full(n, 1.0 / n), keep_retired=False)


def test_config_validation():
    with pytest.raises(ValueError):
        GamsConfig(n_rep=1, k=1, z_max=1.0)
    with pytest.raises(ValueError):
        GamsConfig(n_rep=10, k=10, z_max=1.0)
    with pytest.raises(ValueError):
        GamsConfig(n_rep=10, k=0, z_max=1.0)
    with pytest.raises(ValueError):
        GamsConfig(n_rep=10, k=1, z_max=1.0, max_iterations=0)
    with pytest.raises(ValueError):
        GamsConfig(n_rep=10, k=2, z_max=1.0, level_strategy="random-subset",
                   subset_size=1)


def test_initialize_uniform_weights():
    cfg = GamsConfig(n_rep=4, k=1, z_max=10.0)
    system = initialize_system(constant_model(), cfg, np.random.default_rng(0))
    assert np.all(system.weights == 0.25)
    assert system.total_weight() == 1.0
    assert list(system.labels) == [1, 2, 3, 4]
    assert system.iteration == 0 and system.current_level == -math.inf


def test_initialize_deterministic_model_equal_maxima():
    cfg = GamsConfig(n_rep=2, k=1, z_max=10.0)
    system = initialize_system(constant_model(), cfg, np.random.default_rng(0))
    assert system.maxima[0] == system.maxima[1]


def test_initialize_drifted_bm_maxima_bounded_below():
    # xi(x0) = 1 bounds every path's maximum level from below
    model = g.drifted_bm_model(beta=8.0)
    cfg = GamsConfig(n_rep=100, k=1, z_max=1.9)
    rng = g.run_generator(20, 0)
    seen = 0
    while seen < 1000:
        system = initialize_system(model, cfg, rng)
        assert np.all(np.isfinite(system.maxima))
        assert np.all(system.maxima >= 1.0)
        seen += cfg.n_rep


def test_compute_level_and_split_retires_ties():
    system = system_with_maxima([0.3, 0.5, 0.5, 0.9])
    z = compute_level(system, k=2)
    assert z == 0.5
    plan = split_step(system, z, np.random.default_rng(0))
    assert plan.k_retired == 3  # ties make K exceed k


def test_compute_level_extinction():
    system = system_with_maxima([0.4, 0.4, 0.4, 0.4])
    assert compute_level(system, k=1) == math.inf


def test_compute_level_distinct():
    assert compute_level(system_with_maxima([1.0, 2.0, 3.0, 4.0]), k=1) == 1.0


def test_compute_level_random_subset():
    system = system_with_maxima(np.arange(1.0, 11.0))
    rng = g.run_generator(1, 0)
    z = compute_level(system, k=2, strategy="random-subset", rng=rng, subset_size=4)
    assert z in set(np.arange(1.0, 11.0))
    with pytest.raises(ValueError):
        compute_level(system, k=5, strategy="random-subset", rng=rng, subset_size=4)


def test_split_weight_rule():
    # n_rep=4, K=2: every working weight becomes (1/4)*(2/4)
    system = system_with_maxima([0.1, 0.2, 0.7, 0.9])
    plan = split_step(system, 0.2, np.random.default_rng(0))
    assert plan.k_retired == 2
    resample_step(system, constant_model(0.8), 0.2, plan, np.random.default_rng(0))
    assert np.allclose(system.weights, 0.125)
    assert abs(system.total_weight() - 1.0) < 1e-15
    # retired replicas froze their original weight
    assert system.retired_weight == 0.5
    assert all(r.weight == 0.25 for r in plan.retired_snapshots)


def test_split_branching_numbers_consistent():
    system = system_with_maxima([0.1, 0.2, 0.7, 0.9])
    plan = split_step(system, 0.2, np.random.default_rng(3))
    assert plan.branching_numbers.sum() == 4  # survivors' offspring restore n_rep
    assert np.all(plan.branching_numbers >= 1)


def test_split_parent_selection_uniform():
    # two survivors: each child picks either parent with equal probability
    rng = np.random.default_rng(7)
    counts = np.zeros(2)
    for _ in range(1000):
        system = system_with_maxima([0.1, 0.2, 0.7, 0.9])
        plan = split_step(system, 0.2, rng)
        for slot in plan.child_parent_slots:
            counts[slot - 2] += 1
    frac = counts[0] / counts.sum()
    assert 0.45 < frac < 0.55


def test_split_errors():
    system = system_with_maxima([0.4, 0.4])
    with pytest.raises(RuntimeError):
        split_step(system, 0.4, np.random.default_rng(0))  # extinct
    with pytest.raises(ValueError):
        split_step(system, math.inf, np.random.default_rng(0))


def test_resample_keeps_survivors():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=6, k=1, z_max=8.5)
    rng = g.run_generator(5, 1)
    system = initialize_system(model, cfg, rng)
    z = compute_level(system, 1)
    survivors_before = {int(system.labels[i]): system.states[i]
                        for i in np.flatnonzero(system.maxima > z)}
    plan = split_step(system, z, rng)
    resample_step(system, model, z, plan, rng)
    for i in range(6):
        lbl = int(system.labels[i])
        if lbl in survivors_before:
            assert system.states[i] is survivors_before[lbl]
        else:
            parent_label = system.parent_of[lbl]
            assert system.births[i] == 1
            assert parent_label in survivors_before


def test_phat_arithmetic_example():
    # n_rep=4, K=(2,1), P_corr=3/4 -> (2/4)*(3/4)*(3/4)
    assert survival_product(4, [2, 1]) * 0.75 == 0.28125


def test_run_ams_identity_and_invariants():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=20, k=2, z_max=8.5)
    for m in range(50):
        r = run_ams(model, cfg, g.run_generator(30, m))
        assert r.p_hat == survival_product(cfg.n_rep, r.k_history) * r.p_corr
        assert np.all(r.k_history >= cfg.k)
        assert len(r.final_working) == cfg.n_rep
        if r.extinct:
            assert r.p_hat == 0.0


def test_strict_level_increase_and_working_above_level():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=15, k=1, z_max=8.5)
    rng = g.run_generator(31, 4)
    system = initialize_system(model, cfg, rng)
    prev = -math.inf
    while True:
        z = compute_level(system, cfg.k)
        if z == math.inf or z > cfg.z_max:
            break
        assert z > prev
        prev = z
        plan = split_step(system, z, rng)
        resample_step(system, model, z, plan, rng)
        # every working replica sits strictly above the level afterwards
        assert np.all(system.maxima > z)
        system.current_level = z
        system.iteration += 1


def test_extinction_gives_zero_estimate():
    # zero-noise drift: every initial path is identical, the first level
    # computation already ties the whole population
    model = g.drifted_bm_model(beta=1e12, x0=1.0)
    cfg = GamsConfig(n_rep=8, k=1, z_max=1.9)
    r = run_ams(model, cfg, g.run_generator(32, 0))
    assert r.extinct
    assert r.p_hat == 0.0
    assert r.q_iter == 0


def test_full_success_is_not_flagged_extinct():
    # on the walk, runs that push every replica to the top level stop via
    # the +inf rule but are successes, not extinctions
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=10, k=1, z_max=8.5)
    hits = [run_ams(model, cfg, g.run_generator(33, m)) for m in range(30)]
    full = [r for r in hits if r.p_corr == 1.0]
    assert full and all(not r.extinct for r in full)


def test_mass_conservation_and_weight_formula():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=25, k=1, z_max=8.5, audit_weights=True,
                     keep_retired=True)
    for m in range(100):
        rng = g.run_generator(34, m)
        r = run_ams(model, cfg, rng, observable=lambda s: 1.0)
        assert np.all(np.abs(r.per_iteration_weight_sums - 1.0) <= 1e-12)
        w_expect = 1.0 / cfg.n_rep
        for kq in r.k_history:
            w_expect *= (cfg.n_rep - kq) / cfg.n_rep
        for s in r.final_working:
            assert abs(s.weight - w_expect) <= 1e-12
        # phi == 1 with mass conservation gives exactly 1
        assert abs(r.phi_hat - 1.0) <= 1e-12


def test_observable_indicator_matches_phat():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=20, k=1, z_max=8.5)
    for m in range(25):
        r = run_ams(model, cfg, g.run_generator(35, m),
                    observable=lambda s: float(s.stopped_in_b))
        assert math.isclose(r.phi_hat, r.p_hat, rel_tol=0, abs_tol=1e-15)


@pytest.mark.parametrize("build,cfg_kw", [
    (lambda: g.random_walk_model(0.4, 1, 9), dict(n_rep=20, k=1, z_max=8.5)),
    (lambda: g.random_walk_model(0.4, 1, 9), dict(n_rep=20, k=3, z_max=8.5)),
    (lambda: g.drifted_bm_model(beta=8.0), dict(n_rep=30, k=1, z_max=1.9)),
    (lambda: g.drifted_bm_model(beta=8.0),
     dict(n_rep=30, k=2, z_max=1.9, level_strategy="random-subset", subset_size=8)),
    (lambda: g.bichannel_model(beta=5.0, xi_choice="xi1"), dict(n_rep=16, k=1, z_max=1.9)),
    (lambda: g.allen_cahn_model(gamma=1.0, beta=10.0, xi_choice="xi4"),
     dict(n_rep=12, k=1, z_max=0.9)),
    (lambda: g.exact_k_model(g.drifted_bm_model(beta=8.0), reject_cap=10**8),
     dict(n_rep=20, k=1, z_max=1.9)),
    (lambda: g.bridge_model(7, 2.0), dict(n_rep=20, k=2, z_max=2.0)),
])
def test_compiled_loop_matches_reference(build, cfg_kw):
    # the compiled loop and the step-operation reference loop consume the
    # run's stream identically: bit-equal results, seed for seed
    model = build()
    cfg = GamsConfig(**cfg_kw)
    for m in range(8):
        fast = run_ams(model, cfg, g.run_generator(36, m))
        ref = run_ams(model, cfg, g.run_generator(36, m), force_python=True)
        assert fast.p_hat == ref.p_hat
        assert fast.p_corr == ref.p_corr
        assert fast.q_iter == ref.q_iter
        assert fast.extinct == ref.extinct
        assert np.array_equal(fast.k_history, ref.k_history)
        assert [s.label for s in fast.final_working] == [s.label for s in ref.final_working]
        assert [s.max_level for s in fast.final_working] == [s.max_level for s in ref.final_working]
        assert [s.root_label for s in fast.final_working] == [s.root_label for s in ref.final_working]
        assert [s.channel for s in fast.final_working] == [s.channel for s in ref.final_working]


def test_max_iterations_error_carries_history():
    model = g.drifted_bm_model(beta=8.0)
    cfg = GamsConfig(n_rep=20, k=1, z_max=1.9, max_iterations=3)
    with pytest.raises(MaxIterationsError) as exc:
        run_ams(model, cfg, g.run_generator(37, 0))
    assert exc.value.k_history.size == 3


def test_fixed_iterations_streaming_matches_manual():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=10, k=1, z_max=8.5, keep_retired=True)
    phi = lambda s: float(s.max_xi > 5.0)
    est = run_fixed_iterations(model, cfg, 3, phi, g.run_generator(38, 0))
    # manual: replay with retained replicas and sum weights * phi
    rng = g.run_generator(38, 0)
    system = initialize_system(model, cfg, rng)
    for _ in range(3):
        z = compute_level(system, cfg.k)
        if z == math.inf:
            break
        plan = split_step(system, z, rng)
        resample_step(system, model, z, plan, rng)
        system.iteration += 1
        system.current_level = z
    manual = sum(r.weight * phi(r.state) for r in system.retired)
    manual += sum(system.weights[i] * phi(system.states[i]) for i in range(10))
    assert math.isclose(est, manual, rel_tol=1e-12)


def round_robin_policy(system, z, retired_slots, survivor_slots, rng):
    """Deterministic population-preserving policy: children dealt to
    survivors in slot order.  Deterministic given the partition, so the
    conditional branching expectation equals the branching number."""
    n_children = retired_slots.size
    b = np.ones(survivor_slots.size, dtype=np.int64)
    for j in range(n_children):
        b[j % survivor_slots.size] += 1
    return b, b.astype(float)


def test_branching_policy_hook_unbiased():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=20, k=1, z_max=8.5, audit_weights=True)
    vals = []
    for m in range(3000):
        r = run_ams(model, cfg, g.run_generator(39, m),
                    branching_policy=round_robin_policy)
        assert np.all(np.abs(r.per_iteration_weight_sums - 1.0) <= 1e-12)
        vals.append(r.p_hat)
    agg = g.aggregate(vals)
    from gamsplit.diagnostics import z_score
    assert z_score(agg, g.gamblers_ruin_exact(0.4, 1, 9)) <= 4.0


def test_branching_policy_validation():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=10, k=1, z_max=8.5)

    def bad_total(system, z, retired, survivors, rng):
        return np.ones(survivors.size, dtype=np.int64), np.ones(survivors.size)

    def kills(system, z, retired, survivors, rng):
        b = np.ones(survivors.size, dtype=np.int64)
        b[0] = 0
        b[-1] += retired.size + 1
        return b, b.astype(float)

    with pytest.raises(ValueError):
        run_ams(model, cfg, g.run_generator(40, 0), branching_policy=bad_total)
    with pytest.raises(ValueError):
        run_ams(model, cfg, g.run_generator(40, 1), branching_policy=kills)


def test_estimate_observable_over_views():
    model = g.random_walk_model(0.4, 1, 9)
    cfg = GamsConfig(n_rep=10, k=1, z_max=8.5, keep_retired=True)
    rng = g.run_generator(41, 0)
    system = initialize_system(model, cfg, rng)
    while True:
        z = compute_level(system, cfg.k)
        if z == math.inf or z > cfg.z_max:
            break
        plan = split_step(system, z, rng)
        resample_step(system, model, z, plan, rng)
    replicas = system.working_replicas() + system.retired
    total = engine.estimate_observable(replicas, lambda s: 1.0)
    assert abs(total - 1.0) <= 1e-12

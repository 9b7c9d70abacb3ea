import math

import numpy as np
import pytest

import gamsplit as g
from gamsplit.paths import (ChainModel, PathCapError, StoppedPath,
                            branch_resample, dump_path, entrance_time,
                            max_level, reached_b_before_a, simulate_path)
from gamsplit import kernels


def make_path(xi_values, stop_code=kernels.STOP_A):
    xi = np.asarray(xi_values, dtype=float)
    return StoppedPath(xi.reshape(-1, 1).copy(), xi, stop_code)


def jump_model(target=5.0):
    """Kernel that jumps straight into A."""
    return ChainModel(
        name="jump", x0=np.array([1.0]), dim=1,
        transition=lambda s, rng: np.array([-1.0]),
        region_a=lambda s: s[0] < 0.0,
        region_b=lambda s: s[0] > target,
        xi=lambda st: np.asarray(st, dtype=float)[..., 0],
        z_max=target, path_cap=100)


def test_entrance_time_strict_at_boundary():
    p = make_path([0.2, 0.5, 0.5, 0.8])
    assert entrance_time(p, 0.5) == 3  # the value 0.5 does NOT trigger


def test_entrance_time_never_exceeded():
    assert entrance_time(make_path([0.2, 0.3]), 0.9) == math.inf


def test_entrance_time_initial_state():
    assert entrance_time(make_path([0.2, 0.1, 0.5]), 0.1) == 0


def test_entrance_time_ulp_perturbation():
    rng = np.random.default_rng(0)
    for _ in range(200):
        vals = rng.uniform(0, 1, size=rng.integers(2, 20))
        p = make_path(vals)
        z = float(rng.uniform(0, 1))
        while z in set(vals.tolist()):
            z = float(rng.uniform(0, 1))
        assert entrance_time(p, z) == entrance_time(p, np.nextafter(z, -np.inf))


def test_entrance_time_monotone_nesting():
    rng = np.random.default_rng(1)
    for _ in range(200):
        p = make_path(rng.normal(size=rng.integers(2, 30)))
        z1, z2 = sorted(rng.normal(size=2))
        assert entrance_time(p, z1) <= entrance_time(p, z2)


def test_max_level_examples():
    assert max_level(make_path([0.2, 0.5, 0.8, 0.3])) == 0.8
    assert max_level(make_path([0.7, 0.7, 0.7])) == 0.7


def test_max_iff_entrance_infinite():
    # {Xi(x) <= z} and {T_z(x) = +inf} are the same event
    rng = np.random.default_rng(2)
    for _ in range(1000):
        p = make_path(rng.normal(size=rng.integers(1, 25)))
        z = float(rng.normal())
        assert (max_level(p) <= z) == (entrance_time(p, z) == math.inf)


def test_simulate_immediate_absorption():
    path = simulate_path(jump_model(), np.array([1.0]), 0, np.random.default_rng(0))
    assert path.length == 2
    assert path.stopped_in_a


def test_simulate_drifted_bm_hitting_time():
    # mean hitting time of A from x0=1 is about (1-0.1)/(mu*dt) = 9 steps
    model = g.drifted_bm_model(beta=8.0)
    rng = g.run_generator(10, 0)
    lengths = [simulate_path(model, model.x0, 0, rng).length - 1 for _ in range(10_000)]
    assert 9 * 0.7 <= np.mean(lengths) <= 9 * 1.3


def test_simulate_cap_breach_errors():
    stuck = ChainModel(
        name="stuck", x0=np.array([1.0]), dim=1,
        transition=lambda s, rng: s,  # never approaches A
        region_a=lambda s: s[0] < 0.0,
        region_b=lambda s: s[0] > 10.0,
        xi=lambda st: np.asarray(st, dtype=float)[..., 0],
        z_max=10.0, path_cap=100)
    with pytest.raises(PathCapError):
        simulate_path(stuck, stuck.x0, 0, np.random.default_rng(0))
    model = g.drifted_bm_model(beta=8.0, path_cap=3)
    with pytest.raises(PathCapError):
        for _ in range(50):
            simulate_path(model, model.x0, 0, np.random.default_rng(1))


def test_branch_resample_dirac():
    model = g.drifted_bm_model(beta=8.0)
    rng = g.run_generator(11, 0)
    parent = simulate_path(model, model.x0, 0, rng)
    child = branch_resample(parent, parent.max_xi + 1.0, model, rng)
    assert child is parent


def test_branch_resample_prefix_bits():
    model = g.drifted_bm_model(beta=8.0)
    rng = g.run_generator(11, 1)
    done = 0
    while done < 50:
        parent = simulate_path(model, model.x0, 0, rng)
        if parent.max_xi <= 1.0:  # never left the starting level
            continue
        done += 1
        z = 0.5 * (1.0 + parent.max_xi)  # strictly below the max
        t = entrance_time(parent, z)
        child = branch_resample(parent, z, model, rng)
        assert t != math.inf
        assert np.array_equal(child.states[:t + 1], parent.states[:t + 1])
        assert model.prefix_equal(parent, child, z)
        # branch state itself is above z, so the child max always is
        assert child.max_xi > z


def test_children_of_same_parent_diverge():
    # two children of one parent never share the post-branch suffix
    model = g.drifted_bm_model(beta=8.0)
    rng = g.run_generator(11, 2)
    collisions = 0
    for _ in range(1000):
        parent = simulate_path(model, model.x0, 0, rng)
        z = 0.5 * (1.0 + parent.max_xi)
        t = entrance_time(parent, z)
        c1 = branch_resample(parent, z, model, rng)
        c2 = branch_resample(parent, z, model, rng)
        n = min(c1.length, c2.length)
        if n > t + 1 and np.array_equal(c1.states[t + 1:n], c2.states[t + 1:n]):
            collisions += 1
    assert collisions == 0


def test_branch_resample_can_tie_parent_max():
    # a resampled path may fall back and reproduce the parent's maximum level
    model = g.drifted_bm_model(beta=8.0)
    rng = g.run_generator(11, 3)
    ties = 0
    for _ in range(300):
        parent = simulate_path(model, model.x0, 0, rng)
        if parent.max_xi <= 1.0:
            continue
        z = np.nextafter(parent.max_xi, -np.inf)  # branch just under the max
        child = branch_resample(parent, z, model, rng)
        ties += child.max_xi == parent.max_xi
    assert ties > 0


def test_reached_b_before_a():
    model = jump_model()
    a_path = make_path([1.0, -0.5], stop_code=kernels.STOP_A)
    assert not reached_b_before_a(a_path, model)
    b_path = make_path([1.0, 3.0, 6.0], stop_code=kernels.STOP_B)
    assert reached_b_before_a(b_path, model)


def test_reached_b_matches_stop_code_on_simulated_paths():
    model = g.drifted_bm_model(beta=4.0)  # warm enough to see B hits
    rng = g.run_generator(12, 0)
    seen_b = 0
    for _ in range(2000):
        p = simulate_path(model, model.x0, 0, rng)
        assert reached_b_before_a(p, model) == p.stopped_in_b
        seen_b += p.stopped_in_b
    assert seen_b > 0


def test_dump_path_format(tmp_path):
    p = make_path([0.1, 0.7])
    out = tmp_path / "p.tsv"
    with open(out, "w") as fh:
        dump_path(p, fh)
    lines = out.read_text().splitlines()
    assert lines[0] == "t\tx0\txi"
    assert lines[1].split("\t") == ["0", "0.1", "0.1"]
    assert len(lines) == 3

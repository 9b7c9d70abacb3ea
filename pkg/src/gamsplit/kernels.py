"""Compiled kernels for the shipped models and the splitting run loop.

Everything here is a top-level ``@njit(cache=True)`` function dispatching on
small integer ids, so compilation happens once and is reused from the on-disk
cache by every process.  The Python modules (`dynamics`, `engine`, `variants`,
`biased`, `oracle`) wrap these kernels behind the public contracts; the pure
Python reference engine consumes the exact same per-step draws, which is what
makes seeded replay tests across the two paths meaningful.

State convention: a path is a pair ``(states, xi)`` where ``states`` is an
``(n, 2)`` float64 buffer (column 1 unused for 1-d models) and ``xi`` holds
the reaction-coordinate value of each state.  Row 0 is the initial state of
the segment.  ``code`` records why the simulation stopped.

Draw protocol (fixed so that seeds reproduce trajectories):
  * one ``random()`` per random-walk step,
  * one ``standard_normal()`` per coordinate per Euler-Maruyama step
    (x first, then y),
  * one ``standard_normal()`` per bridge coordinate,
  * one ``integers(0, n_survivors, size=K)`` call per splitting step,
  * one ``permutation(n_rep)`` call per randomized level computation.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from numba.typed import List

# Model ids
MODEL_WALK = 0
MODEL_DRIFTED_BM = 1
MODEL_BICHANNEL = 2
MODEL_ALLEN_CAHN = 3
MODEL_BRIDGE = 4

# Reaction coordinate ids
XI_IDENTITY = 0  # 1-d models: xi(x) = x
XI_NORM_A = 1    # distance to m_A
XI_NORM_B = 2    # xi1(m_B) - distance to m_B
XI_ABSCISSA = 3  # x coordinate
XI_MAGNET = 4    # (x + y) / 2

# Why a simulated segment stopped
STOP_A = 0    # entered region A
STOP_B = 1    # entered region B
STOP_CAP = 2  # path cap hit before absorption
STOP_END = 3  # fixed-length state fully drawn (bridge)

# How the rare event is read off a final replica
EVENT_HIT_B = 0        # stop code is STOP_B
EVENT_MAX_GT_ZMAX = 1  # maximum level exceeds z_max (bridge)

# Resampling kinds
RS_STRICT = 0   # copy through the first index with xi > z (classical)
RS_EXACT_K = 1  # copy through T-1, redraw index T conditioned on xi > z
RS_GE = 2       # copy through the first index with xi >= z (biased demo)

# Run loop exit status
RUN_OK = 0
RUN_CAP_BREACH = 1
RUN_MAX_ITER = 2
RUN_REJECT_CAP = 3
RUN_NO_SURVIVOR = 4  # biased variant ran out of eligible parents

_GROW = 256  # path buffer growth quantum


@njit(cache=True)
def xi_value(model_id, xi_id, params, x, y):
    """Reaction coordinate of a single state."""
    if model_id == MODEL_WALK or model_id == MODEL_DRIFTED_BM or model_id == MODEL_BRIDGE:
        return x
    xa = params[4]
    ya = params[5]
    xb = params[6]
    yb = params[7]
    if xi_id == XI_NORM_A:
        return np.sqrt((x - xa) ** 2 + (y - ya) ** 2)
    if xi_id == XI_NORM_B:
        ref = np.sqrt((xb - xa) ** 2 + (yb - ya) ** 2)
        return ref - np.sqrt((x - xb) ** 2 + (y - yb) ** 2)
    if xi_id == XI_ABSCISSA:
        return x
    return 0.5 * (x + y)  # XI_MAGNET


@njit(cache=True)
def grad2(model_id, params, x, y):
    """Gradient of the 2-d potentials."""
    # cubes written as explicit products so the compiled and interpreted
    # evaluations agree bit for bit (pow() may differ by one ulp)
    if model_id == MODEL_BICHANNEL:
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
        return gx, gy
    # Allen-Cahn: gamma*(x-y)^2 + (V(x)+V(y))/2, V(z) = z^4/4 - z^2/2
    gamma = params[0]
    gx = 2.0 * gamma * (x - y) + 0.5 * (x * x * x - x)
    gy = -2.0 * gamma * (x - y) + 0.5 * (y * y * y - y)
    return gx, gy


@njit(cache=True)
def step(model_id, params, x, y, gen):
    """One transition-kernel draw from state (x, y)."""
    if model_id == MODEL_WALK:
        if gen.random() < params[0]:
            return x + 1.0, 0.0
        return x - 1.0, 0.0
    if model_id == MODEL_DRIFTED_BM:
        mu = params[0]
        beta = params[1]
        dt = params[2]
        return x - mu * dt + np.sqrt(2.0 * dt / beta) * gen.standard_normal(), 0.0
    # 2-d Euler-Maruyama
    beta = params[1]
    dt = params[2]
    sig = np.sqrt(2.0 * dt / beta)
    gx, gy = grad2(model_id, params, x, y)
    nx = x - dt * gx + sig * gen.standard_normal()
    ny = y - dt * gy + sig * gen.standard_normal()
    return nx, ny


@njit(cache=True)
def _stop_code(model_id, params, x, y):
    """Absorption test for chain models: A, B, or -1 (keep going)."""
    if model_id == MODEL_WALK:
        if x <= 0.0:
            return STOP_A
        if x >= params[1]:
            return STOP_B
        return -1
    if model_id == MODEL_DRIFTED_BM:
        if x < params[3]:
            return STOP_A
        if x > params[4]:
            return STOP_B
        return -1
    # 2-d: open balls of radius rho around m_A and m_B
    rho2 = params[3] * params[3]
    if (x - params[4]) ** 2 + (y - params[5]) ** 2 < rho2:
        return STOP_A
    if (x - params[6]) ** 2 + (y - params[7]) ** 2 < rho2:
        return STOP_B
    return -1


@njit(cache=True)
def continue_path(model_id, xi_id, params, sx, sy, t0, cap_left, gen):
    """Extend a trajectory from state (sx, sy) sitting at absolute index t0.

    Returns (states, xi, code); row 0 is the start state itself.  Chain
    models run the Markov kernel until absorption (A or B) or until the
    remaining cap is exhausted.  The bridge model fills the remaining
    coordinates from the pinned conditional law.
    """
    if model_id == MODEL_BRIDGE:
        kappa = int(params[0])
        n = kappa - t0
        buf = np.empty((n, 2))
        xi = np.empty(n)
        buf[0, 0] = sx
        buf[0, 1] = 0.0
        xi[0] = sx
        prev = sx
        for r in range(1, n):
            j = t0 + r  # 0-based coordinate index
            d = float(kappa + 1 - j)
            prev = prev * (d - 1.0) / d + np.sqrt((d - 1.0) / d) * gen.standard_normal()
            buf[r, 0] = prev
            buf[r, 1] = 0.0
            xi[r] = prev
        return buf, xi, STOP_END

    cap_total = int(cap_left)
    size = _GROW if cap_total > _GROW else cap_total
    buf = np.empty((size, 2))
    xi = np.empty(size)
    x = sx
    y = sy
    buf[0, 0] = x
    buf[0, 1] = y
    xi[0] = xi_value(model_id, xi_id, params, x, y)
    n = 1
    code = _stop_code(model_id, params, x, y)
    while code < 0:
        if n >= cap_total:
            code = STOP_CAP
            break
        x, y = step(model_id, params, x, y, gen)
        if n >= size:
            new_size = size * 2 if size * 2 < cap_total else cap_total
            nbuf = np.empty((new_size, 2))
            nxi = np.empty(new_size)
            nbuf[:n] = buf[:n]
            nxi[:n] = xi[:n]
            buf = nbuf
            xi = nxi
            size = new_size
        buf[n, 0] = x
        buf[n, 1] = y
        xi[n] = xi_value(model_id, xi_id, params, x, y)
        n += 1
        code = _stop_code(model_id, params, x, y)
    return buf[:n], xi[:n], code


@njit(cache=True)
def initial_path(model_id, xi_id, params, x0x, x0y, cap, gen):
    """Draw one state from the model's initial distribution."""
    if model_id == MODEL_BRIDGE:
        kappa = int(params[0])
        buf = np.empty((kappa, 2))
        xi = np.empty(kappa)
        prev = 0.0
        for j in range(kappa):
            d = float(kappa + 1 - j)
            prev = prev * (d - 1.0) / d + np.sqrt((d - 1.0) / d) * gen.standard_normal()
            buf[j, 0] = prev
            buf[j, 1] = 0.0
            xi[j] = prev
        return buf, xi, STOP_END
    return continue_path(model_id, xi_id, params, x0x, x0y, 0, cap, gen)


@njit(cache=True)
def entrance_index(xi, z, strict):
    """First index with xi > z (strict) or xi >= z; -1 when never reached."""
    for j in range(xi.shape[0]):
        if xi[j] > z or (not strict and xi[j] == z):
            return j
    return -1


@njit(cache=True)
def resample_path(model_id, xi_id, params, rs_kind, pstates, pxi, pcode,
                  z, cap, reject_cap, gen):
    """Branch a parent path at level z.

    Returns (states, xi, code, status).  Dirac case (parent never exceeds z)
    hands the parent arrays back unchanged.
    """
    strict = rs_kind != RS_GE
    t = entrance_index(pxi, z, strict)
    if t < 0:
        return pstates, pxi, pcode, RUN_OK

    if rs_kind == RS_EXACT_K:
        if t == 0:
            # cannot happen for levels produced by the algorithm: the initial
            # state's level is a lower bound for every computed level
            return pstates, pxi, pcode, RUN_REJECT_CAP
        px = pstates[t - 1, 0]
        py = pstates[t - 1, 1]
        accepted = False
        cx = 0.0
        cy = 0.0
        for _ in range(reject_cap):
            cx, cy = step(model_id, params, px, py, gen)
            if xi_value(model_id, xi_id, params, cx, cy) > z:
                accepted = True
                break
        if not accepted:
            return pstates, pxi, pcode, RUN_REJECT_CAP
        cont, cont_xi, code = continue_path(
            model_id, xi_id, params, cx, cy, t, cap - t, gen)
        n = t + cont.shape[0]
        buf = np.empty((n, 2))
        xi = np.empty(n)
        buf[:t] = pstates[:t]
        xi[:t] = pxi[:t]
        buf[t:] = cont
        xi[t:] = cont_xi
        status = RUN_CAP_BREACH if code == STOP_CAP else RUN_OK
        return buf, xi, code, status

    # RS_STRICT / RS_GE: branch point (index t) is copied inclusively
    cont, cont_xi, code = continue_path(
        model_id, xi_id, params, pstates[t, 0], pstates[t, 1], t, cap - t, gen)
    m = cont.shape[0] - 1  # row 0 duplicates the branch state
    n = t + 1 + m
    buf = np.empty((n, 2))
    xi = np.empty(n)
    buf[:t + 1] = pstates[:t + 1]
    xi[:t + 1] = pxi[:t + 1]
    if m > 0:
        buf[t + 1:] = cont[1:]
        xi[t + 1:] = cont_xi[1:]
    status = RUN_CAP_BREACH if code == STOP_CAP else RUN_OK
    return buf, xi, code, status


@njit(cache=True)
def classify_path(states, cross_thr, side_thr):
    """Channel tag: 0 = never crossed, 1 = upper, 2 = lower."""
    for j in range(states.shape[0]):
        if states[j, 0] > cross_thr:
            if states[j, 1] > side_thr:
                return 1
            return 2
    return 0


@njit(cache=True)
def _reached(event_kind, code, max_level, z_max):
    if event_kind == EVENT_HIT_B:
        return code == STOP_B
    return max_level > z_max


@njit(cache=True)
def ams_loop(model_id, xi_id, params, event_kind, rs_kind, x0x, x0y,
             n_rep, k, z_max, path_cap, max_iter, subset_size, reject_cap,
             want_channel, gen):
    """One full splitting run.

    Returns (status, p_hat, p_corr, q_iter, final_level, ext_rule_fired,
    k_history, maxima, reached, roots, channels, labels).
    """
    states_l = List()
    xi_l = List()
    codes = np.empty(n_rep, dtype=np.int8)
    maxima = np.empty(n_rep)
    labels = np.empty(n_rep, dtype=np.int64)
    roots = np.empty(n_rep, dtype=np.int64)
    status = RUN_OK
    for i in range(n_rep):
        buf, xi, code = initial_path(model_id, xi_id, params, x0x, x0y, path_cap, gen)
        states_l.append(buf)
        xi_l.append(xi)
        codes[i] = code
        maxima[i] = xi.max()
        labels[i] = i + 1
        roots[i] = i + 1
        if code == STOP_CAP:
            status = RUN_CAP_BREACH

    k_buf = np.empty(64, dtype=np.int64)
    n_k = 0
    next_label = n_rep + 1
    prod = 1.0
    q = 0
    final_level = -np.inf
    ext_rule = False
    prev_z = -np.inf

    while status == RUN_OK:
        # level computation: k-th smallest maximum level (over a random
        # subset when requested), +inf when every working replica sits at
        # or below it (extinction rule)
        if subset_size > 0:
            idx = gen.permutation(n_rep)[:subset_size]
            sub = np.empty(subset_size)
            for j in range(subset_size):
                sub[j] = maxima[idx[j]]
            z = np.partition(sub, k - 1)[k - 1]
        else:
            z = np.partition(maxima, k - 1)[k - 1]
        n_surv = 0
        for i in range(n_rep):
            if maxima[i] > z:
                n_surv += 1
        if n_surv == 0:
            ext_rule = True
            final_level = np.inf
            break
        if z > z_max:
            final_level = z
            break
        if z <= prev_z:
            # classical AMS levels strictly increase; a violation means a
            # broken model contract
            status = RUN_NO_SURVIVOR
            break
        prev_z = z

        if q >= max_iter:
            status = RUN_MAX_ITER
            break

        # splitting step: retire everything at or below z
        kq = n_rep - n_surv
        surv = np.empty(n_surv, dtype=np.int64)
        ret = np.empty(kq, dtype=np.int64)
        a = 0
        b = 0
        for i in range(n_rep):
            if maxima[i] > z:
                surv[a] = i
                a += 1
            else:
                ret[b] = i
                b += 1
        parent_pos = gen.integers(0, n_surv, size=kq)
        prod *= (n_rep - kq) / n_rep
        if n_k >= k_buf.shape[0]:
            nk = np.empty(k_buf.shape[0] * 2, dtype=np.int64)
            nk[:n_k] = k_buf[:n_k]
            k_buf = nk
        k_buf[n_k] = kq
        n_k += 1

        # resampling step
        for j in range(kq):
            slot = ret[j]
            psl = surv[parent_pos[j]]
            buf, xi, code, st = resample_path(
                model_id, xi_id, params, rs_kind,
                states_l[psl], xi_l[psl], codes[psl], z, path_cap, reject_cap, gen)
            if st != RUN_OK:
                status = st
                break
            states_l[slot] = buf
            xi_l[slot] = xi
            codes[slot] = code
            maxima[slot] = xi.max()
            labels[slot] = next_label
            roots[slot] = roots[psl]
            next_label += 1
        q += 1

    k_hist = k_buf[:n_k].copy()
    reached = np.zeros(n_rep, dtype=np.int8)
    channels = np.zeros(n_rep, dtype=np.int8)
    n_reached = 0
    for i in range(n_rep):
        if _reached(event_kind, codes[i], maxima[i], z_max):
            reached[i] = 1
            n_reached += 1
        if want_channel:
            channels[i] = classify_path(states_l[i], params[8], params[9])
    p_corr = n_reached / n_rep
    p_hat = prod * p_corr
    return (status, p_hat, p_corr, q, final_level, ext_rule,
            k_hist, maxima, reached, roots, channels, labels)


@njit(cache=True)
def biased_loop(parents_ge, branch_ge, model_id, xi_id, params, x0x, x0y,
                n_rep, k, z_max, path_cap, max_iter, want_channel, gen):
    """Deliberately biased AMS (demonstration only).

    Both variants retire exactly the k lowest replicas per iteration (ties
    broken by label order) and use the fixed weight factor
    ((n_rep-k)/n_rep)^Q_iter.  ``parents_ge`` admits parents whose maximum
    level equals the level (instead of strictly above only); ``branch_ge``
    branches at the first index with xi >= z (instead of the strict
    entrance time).
    """
    states_l = List()
    xi_l = List()
    codes = np.empty(n_rep, dtype=np.int8)
    maxima = np.empty(n_rep)
    labels = np.empty(n_rep, dtype=np.int64)
    roots = np.empty(n_rep, dtype=np.int64)
    status = RUN_OK
    for i in range(n_rep):
        buf, xi, code = initial_path(model_id, xi_id, params, x0x, x0y, path_cap, gen)
        states_l.append(buf)
        xi_l.append(xi)
        codes[i] = code
        maxima[i] = xi.max()
        labels[i] = i + 1
        roots[i] = i + 1
        if code == STOP_CAP:
            status = RUN_CAP_BREACH

    next_label = n_rep + 1
    q = 0
    final_level = -np.inf
    retired = np.zeros(n_rep, dtype=np.int8)
    order = np.empty(k, dtype=np.int64)
    n_tie_iters = 0
    n_boundary_events = 0

    while status == RUN_OK:
        # k lowest by (maximum level, label), lexicographically
        for i in range(n_rep):
            retired[i] = 0
        for j in range(k):
            best = -1
            for i in range(n_rep):
                if retired[i] == 1:
                    continue
                if best < 0:
                    best = i
                elif maxima[i] < maxima[best] or (
                        maxima[i] == maxima[best] and labels[i] < labels[best]):
                    best = i
            order[j] = best
            retired[best] = 1
        z = maxima[order[k - 1]]
        if z > z_max:
            final_level = z
            break
        if q >= max_iter:
            status = RUN_MAX_ITER
            break
        # a surviving replica tied to the level is where this variant and the
        # classical algorithm part ways
        tie = False
        for i in range(n_rep):
            if retired[i] == 0 and maxima[i] == z:
                tie = True
        if tie:
            n_tie_iters += 1

        # eligible parents: every remaining replica when parents_ge,
        # otherwise only those strictly above z
        n_elig = 0
        for i in range(n_rep):
            if retired[i] == 1:
                continue
            if parents_ge or maxima[i] > z:
                n_elig += 1
        if n_elig == 0:
            final_level = np.inf
            break
        elig = np.empty(n_elig, dtype=np.int64)
        a = 0
        for i in range(n_rep):
            if retired[i] == 1:
                continue
            if not (parents_ge or maxima[i] > z):
                continue
            elig[a] = i
            a += 1

        parent_pos = gen.integers(0, n_elig, size=k)
        # refill retired slots in ascending slot order, matching the
        # classical loop so that tie-free runs replay identically
        order_sorted = np.sort(order)
        rs_kind = RS_GE if branch_ge else RS_STRICT
        for j in range(k):
            slot = order_sorted[j]
            psl = elig[parent_pos[j]]
            if branch_ge:
                t_ge = entrance_index(xi_l[psl], z, False)
                t_strict = entrance_index(xi_l[psl], z, True)
                if t_ge != t_strict:
                    n_boundary_events += 1
            buf, xi, code, st = resample_path(
                model_id, xi_id, params, rs_kind,
                states_l[psl], xi_l[psl], codes[psl], z, path_cap, 0, gen)
            if st != RUN_OK:
                status = st
                break
            states_l[slot] = buf
            xi_l[slot] = xi
            codes[slot] = code
            maxima[slot] = xi.max()
            labels[slot] = next_label
            roots[slot] = roots[psl]
            next_label += 1
        q += 1

    reached = np.zeros(n_rep, dtype=np.int8)
    channels = np.zeros(n_rep, dtype=np.int8)
    n_reached = 0
    for i in range(n_rep):
        if codes[i] == STOP_B:
            reached[i] = 1
            n_reached += 1
        if want_channel:
            channels[i] = classify_path(states_l[i], params[8], params[9])
    p_corr = n_reached / n_rep
    p_hat = ((n_rep - k) / n_rep) ** q * p_corr
    return (status, p_hat, p_corr, q, final_level,
            maxima, reached, roots, channels, labels,
            n_tie_iters, n_boundary_events)


@njit(cache=True)
def direct_mc_batch(model_id, xi_id, params, x0x, x0y, n_paths, path_cap,
                    max_threshold, gen):
    """Plain Monte Carlo over independent paths, without storing them.

    Returns (n_hit_b, n_exceed_threshold, n_cap_breach, total_steps) where
    the second counter tracks paths whose maximum level exceeds
    ``max_threshold`` (useful as an independent oracle for path observables).
    """
    hits = 0
    exceed = 0
    breach = 0
    steps = 0
    for m in range(n_paths):
        x = x0x
        y = x0y
        mx = xi_value(model_id, xi_id, params, x, y)
        code = _stop_code(model_id, params, x, y)
        n = 1
        while code < 0 and n < path_cap:
            x, y = step(model_id, params, x, y, gen)
            v = xi_value(model_id, xi_id, params, x, y)
            if v > mx:
                mx = v
            n += 1
            code = _stop_code(model_id, params, x, y)
        steps += n
        if code == STOP_B:
            hits += 1
        elif code < 0:
            breach += 1
        if mx > max_threshold:
            exceed += 1
    return hits, exceed, breach, steps

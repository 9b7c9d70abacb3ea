"""Deliberately biased splitting variants (demonstration only).

These reproduce two classical implementation mistakes and exist purely to
measure the damage they cause; nothing in this module should be used to
estimate probabilities for real.

Version 1 resamples exactly k replicas per iteration even when more than k
share the retirement level, never splits replicas whose maximum level equals
the level, and estimates with the fixed factor ((n_rep-k)/n_rep)^Q_iter.

Version 2 additionally admits parents whose maximum level equals the level.
Both variants branch at the first index whose level is >= z (large
inequality) instead of the strict entrance time.

On runs without maximum-level ties and without boundary-equal branch points
both variants coincide with the classical algorithm draw for draw; the bias
comes entirely from the tie handling.
"""

from __future__ import annotations

import enum

import numpy as np

from . import kernels
from .engine import GamsConfig, MaxIterationsError, ReplicaSummary, RunResult
from .paths import PathCapError


class BiasedVariantKind(enum.Enum):
    VERSION1 = 1
    VERSION2 = 2


# (parents may tie the level, branch at the large-inequality time)
#
# Version 1 keeps tied replicas unsplittable (parents strictly above the
# level) but branches at the large-inequality time; that combination
# reproduces the published order-of-magnitude underestimate.  Retiring the
# tie group one-at-a-time with a strict branch turns out to overestimate
# instead, so it is not shipped.  Version 2 admits tied parents and also
# branches at the large-inequality time.
_RULES = {
    BiasedVariantKind.VERSION1: (False, True),
    BiasedVariantKind.VERSION2: (True, True),
}


def run_biased(model, cfg: GamsConfig, kind: BiasedVariantKind, rng) -> RunResult:
    """One realization of a biased variant on a compiled chain model.

    The result additionally carries ``n_tie_iterations`` and
    ``n_boundary_events`` attributes counting the situations in which the
    variant's behaviour departed from the classical algorithm.
    """
    if not getattr(model, "has_kernel", False):
        raise ValueError("biased variants are shipped for the compiled chain models only")
    parents_ge, branch_ge = _RULES[kind]
    x0 = np.atleast_1d(np.asarray(model.x0, dtype=float))
    want_channel = getattr(model, "channel_rule", None) is not None

    (status, p_hat, p_corr, q_iter, final_level,
     maxima, reached, roots, channels, labels,
     n_tie_iters, n_boundary) = kernels.biased_loop(
        parents_ge, branch_ge, model.kernel_id, model.xi_id, model.kernel_params,
        x0[0], x0[1] if x0.size > 1 else 0.0,
        cfg.n_rep, cfg.k, cfg.z_max, model.path_cap, cfg.max_iterations,
        want_channel, rng)

    if status == kernels.RUN_CAP_BREACH:
        raise PathCapError(
            f"model {model.name}: path cap {model.path_cap} hit during a biased run")
    if status == kernels.RUN_MAX_ITER:
        raise MaxIterationsError(
            f"biased variant exceeded {cfg.max_iterations} iterations",
            np.full(q_iter, cfg.k, dtype=np.int64))

    final_weight = ((cfg.n_rep - cfg.k) / cfg.n_rep) ** q_iter / cfg.n_rep
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
    result = RunResult(
        p_hat=float(p_hat),
        p_corr=float(p_corr),
        q_iter=int(q_iter),
        k_history=np.full(q_iter, cfg.k, dtype=np.int64),
        extinct=final_level == np.inf and float(maxima.max()) <= cfg.z_max,
        final_working=summaries,
        per_iteration_weight_sums=np.empty(0),
    )
    result.n_tie_iterations = int(n_tie_iters)
    result.n_boundary_events = int(n_boundary)
    return result

"""Independent ground truth used to validate the splitting estimators:
closed forms, plain Monte Carlo, and a dense Gaussian-bridge sampler.

None of these share sampling code with the estimators they validate; the
direct Monte Carlo runner only reuses the models' transition kernels (which
is the quantity under test), and the dense bridge sampler factorizes the
joint precision matrix rather than using the sequential construction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .paths import ChainModel, simulate_path


@dataclass
class OracleResult:
    """A ground-truth value with its sampling error (zero for exact oracles)."""

    value: float
    standard_error: float
    method: str
    n_samples: Optional[int] = None
    hits: Optional[int] = None
    degenerate: bool = False


def gamblers_ruin_exact(p_up: float, start: int, top: int) -> float:
    """P(hit ``top`` before 0) for the nearest-neighbour walk started at ``start``.

    Closed form (1 - r^start) / (1 - r^top) with r = (1-p_up)/p_up; reduces
    to start/top for the symmetric walk.
    """
    if not 0.0 < p_up < 1.0:
        raise ValueError("p_up must lie in (0, 1)")
    if not 0 < start < top:
        raise ValueError("start must lie strictly between the barriers")
    if p_up == 0.5:
        return start / top
    r = (1.0 - p_up) / p_up
    return (1.0 - r ** start) / (1.0 - r ** top)


def _direct_counts(model: ChainModel, n_samples: int, rng, threshold: float):
    if model.has_kernel:
        x0 = np.atleast_1d(np.asarray(model.x0, dtype=float))
        hits, exceed, breach, _ = kernels.direct_mc_batch(
            model.kernel_id, model.xi_id, model.kernel_params,
            x0[0], x0[1] if x0.size > 1 else 0.0,
            n_samples, model.path_cap, threshold, rng)
        if breach:
            raise RuntimeError(f"{breach} paths hit the cap during direct MC")
        return int(hits), int(exceed)
    hits = 0
    exceed = 0
    for _ in range(n_samples):
        path = simulate_path(model, model.x0, 0, rng)
        hits += path.stopped_in_b
        exceed += path.max_xi > threshold
    return hits, exceed


def _binomial_result(hits: int, n: int, method: str) -> OracleResult:
    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    if hits == 0:
        return OracleResult(0.0, 0.0, method, n, 0, degenerate=True)
    if hits < 10:
        warnings.warn(
            f"direct MC saw only {hits} hits; the error bar is unreliable",
            stacklevel=3)
    return OracleResult(p, se, method, n, hits)


def direct_mc(model: ChainModel, n_samples: int, rng) -> OracleResult:
    """Fraction of independent paths that reach B before A."""
    hits, _ = _direct_counts(model, n_samples, rng, math.inf)
    return _binomial_result(hits, n_samples, "direct-mc")


def direct_mc_max_level(model: ChainModel, threshold: float,
                        n_samples: int, rng) -> OracleResult:
    """Fraction of independent paths whose maximum level exceeds threshold."""
    _, exceed = _direct_counts(model, n_samples, rng, threshold)
    return _binomial_result(exceed, n_samples, "direct-mc-max-level")


def bridge_precision(kappa: int) -> np.ndarray:
    """Tridiagonal precision matrix of the pinned bridge: 2 on, -1 off."""
    q = 2.0 * np.eye(kappa)
    for i in range(kappa - 1):
        q[i, i + 1] = -1.0
        q[i + 1, i] = -1.0
    return q


def dense_bridge_sampler(kappa: int, rng, size: Optional[int] = None) -> np.ndarray:
    """Exact joint bridge draws via Cholesky of the tridiagonal precision.

    With L L^T = Q, draws x = L^{-T} z have covariance Q^{-1}.  Used only to
    validate the sequential sampler and bridge-crossing probabilities.
    """
    q = bridge_precision(kappa)
    try:
        chol = np.linalg.cholesky(q)
    except np.linalg.LinAlgError as exc:  # positive definite by construction
        raise RuntimeError("bridge precision factorization failed") from exc
    linv = np.linalg.inv(chol)
    if size is None:
        return rng.standard_normal(kappa) @ linv
    return rng.standard_normal((size, kappa)) @ linv

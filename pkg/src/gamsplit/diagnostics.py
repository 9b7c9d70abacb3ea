"""Aggregation and heavy-tail/channel analysis across independent runs.

The empirical confidence interval follows the convention used throughout
the numerical studies: delta_N = 2 * 1.96/sqrt(N) * sqrt(second_moment -
mean^2) with the biased (1/N) second moment, and delta_N is the FULL width
of the 95% interval.  Estimator distributions here are heavy tailed, so
partial averages over the largest realizations are first-class diagnostics
rather than outlier cleanup.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import kernels


class Channel(enum.IntEnum):
    NOT_CROSSED = 0
    UPPER = 1
    LOWER = 2


@dataclass
class Aggregate:
    """Empirical mean and 95% interval width over independent runs."""

    n_runs: int
    mean: float
    ci_width: float  # delta_N, the full interval width

    @property
    def half_width(self) -> float:
        return self.ci_width / 2.0

    @property
    def lo(self) -> float:
        return self.mean - self.half_width

    @property
    def hi(self) -> float:
        return self.mean + self.half_width

    def overlaps(self, other: "Aggregate") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def aggregate(values: Sequence[float]) -> Aggregate:
    """Empirical mean and delta_N over at least two values."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ValueError("need at least two values to aggregate")
    mean = float(v.mean())
    var = float((v * v).mean() - mean * mean)
    if var < 0.0:  # rounding on near-constant inputs
        var = 0.0
    delta = 2.0 * 1.96 / math.sqrt(n) * math.sqrt(var)
    return Aggregate(n_runs=n, mean=mean, ci_width=delta)


def standard_error(agg: Aggregate) -> float:
    """Plain Monte Carlo standard error implied by the interval width."""
    return agg.ci_width / (2.0 * 1.96)


def z_score(agg: Aggregate, reference: float) -> float:
    se = standard_error(agg)
    if se == 0.0:
        return 0.0 if agg.mean == reference else math.inf
    return abs(agg.mean - reference) / se


def partial_averages(values: Sequence[float], n0: int):
    """Means over the n0 largest values and over the rest.

    The recombination p_bar = (n0/N)*large + (1-n0/N)*small is an exact
    algebraic identity and is asserted by the tests.
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if not 0 < n0 < n:
        raise ValueError("n0 must lie strictly between 0 and the sample size")
    large = float(v[n - n0:].mean())
    small = float(v[:n - n0].mean())
    return large, small


def classify_channel(path, cross_threshold: float = 0.0,
                     side_threshold: float = 0.5) -> Channel:
    """Locate the first crossing of the dividing coordinate and read the side.

    A path crossing exactly on the side threshold counts as LOWER (the
    large inequality sits on the lower side).
    """
    states = np.asarray(getattr(path, "states", path), dtype=float)
    if states.ndim != 2 or states.shape[1] < 2:
        raise ValueError("channel classification needs 2-d paths")
    return Channel(int(kernels.classify_path(states, cross_threshold, side_threshold)))


@dataclass
class RunRecord:
    """Compact per-run record, one CSV row."""

    run_index: int
    p_hat: float = math.nan
    p_corr: float = math.nan
    q_iter: int = 0
    extinct: bool = False
    m_b: int = 0
    m_b_upper: Optional[int] = None
    m_b_lower: Optional[int] = None
    n_roots: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def channel_split(self):
        """(p_hat_upper, p_hat_lower) with an exactly-summing float split.

        Single-channel runs split trivially.  For mixed runs the upper share
        is snapped onto the ulp grid of p_hat (a sub-ulp adjustment), which
        makes the complement subtraction exact, so the per-run identity
        p_hat_upper + p_hat_lower == p_hat holds in floating point.
        """
        if self.m_b_upper is None or self.m_b == 0:
            return 0.0, 0.0
        if self.m_b_upper == 0:
            return 0.0, self.p_hat
        if self.m_b_lower == 0:
            return self.p_hat, 0.0
        q = math.ulp(self.p_hat)
        up = self.p_hat * self.m_b_upper / self.m_b
        up = round(up / q) * q
        up = min(max(up, q), self.p_hat - q)
        return up, self.p_hat - up

    @property
    def p_hat_upper(self) -> float:
        return self.channel_split()[0]

    @property
    def p_hat_lower(self) -> float:
        return self.channel_split()[1]


def record_from_result(run_index: int, result) -> RunRecord:
    return RunRecord(
        run_index=run_index,
        p_hat=result.p_hat,
        p_corr=result.p_corr,
        q_iter=result.q_iter,
        extinct=result.extinct,
        m_b=result.m_b,
        m_b_upper=result.m_b_upper,
        m_b_lower=result.m_b_lower,
        n_roots=len({s.root_label for s in result.final_working}),
    )


def ancestry_report(run_result) -> int:
    """Number of distinct initialization-era ancestors of the final replicas."""
    if not run_result.final_working:
        raise ValueError("ancestry was not recorded for this run")
    return len({s.root_label for s in run_result.final_working})


@dataclass
class ChannelStats:
    """Channel decomposition over the runs with a nonzero estimate."""

    n_runs: int
    n_nonzero: int
    r_n: float
    rho_upper: float
    rho_lower: float
    rho_mix: float
    p_tilde_upper: float
    p_tilde_lower: float
    p_tilde_mix: float
    p_bar: float
    p_bar_upper: float
    p_bar_lower: float
    delta_upper: float
    delta_lower: float

    def decomposition(self) -> float:
        """R_N * (rho_up p~up + rho_low p~low + rho_mix p~mix); equals p_bar."""
        return self.r_n * (self.rho_upper * self.p_tilde_upper
                           + self.rho_lower * self.p_tilde_lower
                           + self.rho_mix * self.p_tilde_mix)


def channel_stats(records: Sequence[RunRecord]) -> ChannelStats:
    recs = [r for r in records if r.ok]
    n = len(recs)
    if n == 0:
        raise ValueError("no successful runs")
    nz = [r for r in recs if r.p_hat != 0.0]
    upper = [r for r in nz if r.m_b_lower == 0]
    lower = [r for r in nz if r.m_b_upper == 0]
    mix = [r for r in nz if r.m_b_upper != 0 and r.m_b_lower != 0]

    def _mean(rs):
        return sum(r.p_hat for r in rs) / len(rs) if rs else 0.0

    card = len(nz)
    up_bar = aggregate([r.p_hat_upper for r in recs]) if n >= 2 else None
    low_bar = aggregate([r.p_hat_lower for r in recs]) if n >= 2 else None
    return ChannelStats(
        n_runs=n,
        n_nonzero=card,
        r_n=card / n,
        rho_upper=len(upper) / card if card else 0.0,
        rho_lower=len(lower) / card if card else 0.0,
        rho_mix=len(mix) / card if card else 0.0,
        p_tilde_upper=_mean(upper),
        p_tilde_lower=_mean(lower),
        p_tilde_mix=_mean(mix),
        p_bar=sum(r.p_hat for r in recs) / n,
        p_bar_upper=up_bar.mean if up_bar else 0.0,
        p_bar_lower=low_bar.mean if low_bar else 0.0,
        delta_upper=up_bar.ci_width if up_bar else 0.0,
        delta_lower=low_bar.ci_width if low_bar else 0.0,
    )


# --- output formats ----------------------------------------------------------

CSV_HEADER = ("run_index,p_hat,p_corr,q_iter,extinct,"
              "m_b,m_b_upper,m_b_lower,n_roots,error")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(float(v))  # plain float repr, numpy scalars included
    return str(v)


def write_runs_csv(path, records: Sequence[RunRecord]) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            row = [r.run_index, r.p_hat, r.p_corr, r.q_iter, r.extinct,
                   r.m_b, r.m_b_upper, r.m_b_lower, r.n_roots, r.error]
            fh.write(",".join(_csv_cell(c) for c in row) + "\n")


def read_runs_csv(path) -> List[RunRecord]:
    records = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected per-run CSV header: {header!r}")
        for line in fh:
            c = line.rstrip("\n").split(",")
            records.append(RunRecord(
                run_index=int(c[0]),
                p_hat=float(c[1]),
                p_corr=float(c[2]),
                q_iter=int(c[3]),
                extinct=c[4] == "1",
                m_b=int(c[5]),
                m_b_upper=int(c[6]) if c[6] else None,
                m_b_lower=int(c[7]) if c[7] else None,
                n_roots=int(c[8]),
                error=c[9] if c[9] else None,
            ))
    return records


def trace_checkpoints(n: int, per_decade: int = 12) -> List[int]:
    """Logarithmically spaced checkpoint counts, always ending at n."""
    pts = sorted({min(n, max(2, round(10 ** (j / per_decade))))
                  for j in range(0, per_decade * 12)
                  if 10 ** (j / per_decade) <= n} | ({n} if n >= 2 else set()))
    return pts


def write_trace_csv(path, p_hats: Sequence[float]) -> None:
    """Running mean and interval width at log-spaced run counts."""
    v = np.asarray(p_hats, dtype=float)
    cum = np.cumsum(v)
    cum2 = np.cumsum(v * v)
    with open(path, "w") as fh:
        fh.write("n,p_bar,delta\n")
        for n in trace_checkpoints(v.size):
            mean = float(cum[n - 1] / n)
            var = max(float(cum2[n - 1] / n) - mean * mean, 0.0)
            delta = 2.0 * 1.96 / math.sqrt(n) * math.sqrt(var)
            fh.write(f"{n},{repr(mean)},{repr(delta)}\n")


def summary_dict(records: Sequence[RunRecord], partial_n0: int = 100,
                 meta: Optional[dict] = None) -> dict:
    """Summary of one experiment: aggregate, partial averages, channel stats."""
    ok = [r for r in records if r.ok]
    errors = [r for r in records if not r.ok]
    out = dict(meta or {})
    out["n_runs"] = len(records)
    out["n_errors"] = len(errors)
    if errors:
        out["error_samples"] = [
            {"run_index": r.run_index, "error": r.error} for r in errors[:10]]
    if len(ok) >= 2:
        agg = aggregate([r.p_hat for r in ok])
        out["p_bar"] = agg.mean
        out["delta"] = agg.ci_width
        out["ci"] = [agg.lo, agg.hi]
        out["n_extinct"] = sum(1 for r in ok if r.extinct)
        out["mean_q_iter"] = sum(r.q_iter for r in ok) / len(ok)
        n0 = min(partial_n0, len(ok) - 1)
        if n0 >= 1:
            large, small = partial_averages([r.p_hat for r in ok], n0)
            out["partial_averages"] = {"n0": n0, "largest": large, "smallest": small}
        if ok and ok[0].m_b_upper is not None:
            cs = channel_stats(ok)
            out["channels"] = {
                "r_n": cs.r_n,
                "rho_upper": cs.rho_upper,
                "rho_lower": cs.rho_lower,
                "rho_mix": cs.rho_mix,
                "p_tilde_upper": cs.p_tilde_upper,
                "p_tilde_lower": cs.p_tilde_lower,
                "p_tilde_mix": cs.p_tilde_mix,
                "p_bar_upper": cs.p_bar_upper,
                "p_bar_lower": cs.p_bar_lower,
                "delta_upper": cs.delta_upper,
                "delta_lower": cs.delta_lower,
            }
    return out


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

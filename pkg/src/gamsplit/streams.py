"""Counter-based random number streams for reproducible parallel runs.

Every independent realization of an algorithm gets its own stream derived
from ``(master_seed, run_index, grid_index)``.  We use the Philox
counter-based bit generator: all streams share the key (the master seed)
and differ only in the 256-bit counter block, so

* run ``m`` of grid point ``g`` always produces the same draws, no matter
  how runs are scheduled across processes,
* adding grid points or runs never perturbs existing streams,
* streams are non-overlapping as long as a single run consumes fewer than
  2**66 draws (word 0 of the counter is the in-stream position; words 1
  and 2 hold the run and grid indices).

Reserved grid lanes (word 2) keep unrelated consumers apart: experiment
grid points use small indices, Monte Carlo oracle shards use
``ORACLE_LANE + shard``.
"""

from __future__ import annotations

import numpy as np

# Grid-lane offset reserved for direct Monte Carlo oracle shards.
ORACLE_LANE = 1 << 48


def run_generator(master_seed: int, run_index: int, grid_index: int = 0) -> np.random.Generator:
    """Return the dedicated generator for one run of one grid point."""
    if master_seed < 0 or run_index < 0 or grid_index < 0:
        raise ValueError("seed, run_index and grid_index must be nonnegative")
    bitgen = np.random.Philox(
        key=np.uint64(master_seed),
        counter=np.array([0, run_index, grid_index, 0], dtype=np.uint64),
    )
    return np.random.Generator(bitgen)


def oracle_generator(master_seed: int, shard_index: int, lane: int = 0) -> np.random.Generator:
    """Stream for oracle (direct MC) shards, disjoint from experiment runs."""
    return run_generator(master_seed, shard_index, ORACLE_LANE + lane)

"""Rare-event sampling by adaptive multilevel splitting on Markov chain
paths, with a generalized splitting engine, unbiasedness oracles, variants
and an experiment harness."""

from .diagnostics import (Aggregate, Channel, ChannelStats, aggregate,
                          ancestry_report, channel_stats, classify_channel,
                          partial_averages)
from .dynamics import (LangevinScheme, Potential, allen_cahn_model,
                       allen_cahn_potential, bichannel_model,
                       bichannel_potential, drifted_bm_model, em_step,
                       random_walk_model)
from .engine import (BranchingPlan, GamsConfig, MaxIterationsError,
                     RejectionCapError, Replica, ReplicaSummary,
                     ReplicaSystem, RunResult, compute_level,
                     estimate_observable, initialize_system, resample_step,
                     run_ams, run_fixed_iterations, split_step,
                     survival_product)
from .oracle import (OracleResult, dense_bridge_sampler, direct_mc,
                     direct_mc_max_level, gamblers_ruin_exact)
from .paths import (ChainModel, PathCapError, StoppedPath, branch_resample,
                    dump_path, entrance_time, max_level, reached_b_before_a,
                    simulate_path)
from .streams import oracle_generator, run_generator
from .variants import (BridgeModel, BridgeState, bridge_model,
                       exact_k_model, exact_k_resample,
                       sequential_bridge_sample)

__version__ = "0.1.0"

"""Exact competitive-ratio evaluation and search for online scheduling
algorithm maps: instance simplification, brute-force offline optima,
canonical configuration classes, and map enumeration over bounded adversary
universes."""

from .core import (
    DomainError,
    Epsilon,
    Instance,
    Job,
    MachineEnv,
    Objective,
    PrecisionError,
    RefusalError,
    SchemeConfig,
    release_weight,
)
from .schedule import (
    CompletionRecord,
    Piece,
    Schedule,
    check_schedule_feasibility,
    evaluate_objective,
)
from .simplify import (
    LossCertificate,
    assign_safety_nets,
    bound_ptimes_unrelated,
    bound_speeds_related,
    cap_small_volume,
    classify_job_classes,
    classify_relevance,
    classify_sizes,
    pack_tiny_jobs,
    partition_periods,
    prune_large_jobs,
    rescale_parts_nonpreemptive,
    round_instance,
    simplify_pipeline,
    theoretical_constants,
)
from .oracle import OracleCache, OracleResult, lower_bounds, opt_value
from .algmap import (
    AlgorithmMap,
    EngineContext,
    MapIncompleteError,
    RuleMap,
    builtin_map,
    canonicalize_action,
    canonicalize_configuration,
    enumerate_actions,
    equivalent_configurations,
    simulate,
)
from .search import (
    CompetitiveReport,
    RandomizedMap,
    RandomizedRuleMap,
    Universe,
    build_universe,
    detect_cycle,
    discretize_map,
    embed_deterministic,
    evaluate_map,
    evaluate_randomized_map,
    explicit_universe,
    offset_split,
    reachable_classes,
    search_best_map,
    verify_cycle,
)

__version__ = "0.1.0"

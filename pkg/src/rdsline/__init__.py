"""Random dynamical systems on the real line: simulation, classification, stationary measures."""
from .homeo import (
    CustomMap,
    MapError,
    MonotoneMap,
    PiecewiseLinearMap,
    SinPerturbationMap,
    affine,
    compose,
    identity,
    invert,
    piecewise_linear,
    translation,
    validate,
)
from .system import RandomSystem, SystemReport, check_shiftability, inverse_system, make_system, validate_system
from .walk import (
    ClassVerdict,
    PhiEstimate,
    SimParams,
    TrajectoryOutcome,
    classify_system,
    classify_trajectory,
    estimate_phi,
    recurrence_stats,
    sample_trajectory,
)
from .harmonic import GridFunction, NotConverged, harmonic_residual, solve_phi_window
from .measure import (
    GridMeasure,
    Refusal,
    StoppingFunction,
    WindowTooSmall,
    build_case2_semi,
    build_case3_radon,
    build_case4_measure,
    stationarity_residual,
    stopped_distribution,
)
from .monster import MonsterSystem, RankState, RankTrace, check_rank_lemmas, position_vs_interval, run_monster

__version__ = "0.1.0"

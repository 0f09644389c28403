"""Random subshifts of finite type, pressure, shrinking targets, dimension.

The package realizes a random iterated function system driven by a finite
ergodic Markov environment, computes topological pressure and its roots
(the attractor dimension and the shrinking-target dimension), builds
finite-depth shrinking-target covers and nested mass-carrying families, and
estimates dimensions numerically by box counting and mass-exponent probing.
"""

from .environment import (
    EnvironmentModel,
    EnvState,
    OmegaPath,
    sample_environment_path,
    stationary_frequencies,
)
from .subshift import (
    MixingCertificate,
    Word,
    count_cylinders,
    enumerate_cylinders,
    is_admissible,
    join_words,
    mixing_index,
)
from .geometry import (
    ContractionMap,
    CylinderBox,
    DistortionBudget,
    MapFamily,
    attractor_boxes,
    birkhoff_sum,
    calibrate_distortion,
    cylinder_box,
    fixed_point,
    log_contraction_potential,
    project_point,
    validate_maps,
)
from .potentials import Potential, average_sup, table_potential, zero_potential
from .thermo import (
    GibbsDiagnostic,
    PressureCurve,
    RootResult,
    gibbs_ratio_diagnostic,
    gibbs_weights,
    partition_function_log,
    pressure_estimate,
    solve_pressure_root,
)
from .targets import (
    HitRecord,
    ReachabilityReport,
    TargetCell,
    TargetSpec,
    build_target_cover,
    hit_margin,
    hit_test,
    sample_target_points,
    verify_target_reachability,
)
from .moran import (
    MoranNode,
    ProbeRow,
    ScheduleSpec,
    build_moran_tree,
    mass_exponent_probe,
    mass_of_ball,
)
from .dimension import BoxCountResult, DimensionReport, box_count, dimension_report
from .config import ExperimentConfig, load_config

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

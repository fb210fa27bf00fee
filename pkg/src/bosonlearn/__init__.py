"""bosonlearn: shot-efficient learning of bosonic Hamiltonian coefficients
on a simulated continuous-variable device.

Displacements move the hidden Hamiltonian's coefficients into a constant term,
random phase rotations isolate it, and robust phase estimation reads it out at
Heisenberg-limited cost; classical least squares and an exact operator algebra
recover the normal-ordered (and, through a Bogoliubov frame search, the
physical quadrature-basis) coefficients.
"""

from .bogoliubov import (
    U_FEASIBLE_MAX,
    BisectionResult,
    BogoliubovFrame,
    FeasibilityError,
    FirstQResult,
    TransformT,
    TwoModeResult,
    bisection_search,
    build_T,
    conjugate_spec_by_mismatch,
    frame_from_ratio,
    frame_from_signed_r,
    learn_firstq,
    nb_expansion,
    normal_to_symmetrized,
    overlap_feasible,
    parallel_two_mode_search,
    symmetrized_to_normal,
)
from .device import NoiseModel, ShotRequest, SimulatedDevice, TimeLedger
from .fockspace import (
    CutoffError,
    FockCutoff,
    adaptive_cutoff,
    annihilation_matrix,
    creation_matrix,
    displacement_matrix,
    number_matrix,
    rotation_matrix,
    squeeze_matrix,
    vacuum_state,
)
from .hamiltonian import (
    HamiltonianSpec,
    HermiticityError,
    TermKey,
    admissible_keys,
    build_matrix,
    canonical_key,
    constant_term,
    effective_diagonal,
    effective_exact,
    load_spec,
    phase_averaged_matrix,
    random_spec,
    save_spec,
    single_key,
    spec_from_dict,
    spec_to_dict,
    validate_hermitian,
)
from .protocol import (
    LearnedCoefficients,
    PhaseEstimate,
    RpeConfig,
    derive_config,
    joint_grid,
    learn_multimode_hierarchical,
    learn_multimode_simultaneous,
    learn_single_mode,
    rpe_estimate,
)
from .recovery import (
    CovarianceOrdering,
    CovarianceReport,
    RadialDesign,
    SingleModePipeline,
    SpamReport,
    angular_idft,
    chebyshev_nodes,
    coefficient_order_sums,
    covariance_compare,
    lipschitz_bound,
    multidim_fit,
    predict_covariance,
    radial_design,
    radial_fit,
    single_mode_pipeline,
    spam_bound,
)

__version__ = "0.1.0"

__all__ = [
    "U_FEASIBLE_MAX",
    "BisectionResult",
    "BogoliubovFrame",
    "CovarianceOrdering",
    "CovarianceReport",
    "CutoffError",
    "FeasibilityError",
    "FirstQResult",
    "FockCutoff",
    "HamiltonianSpec",
    "HermiticityError",
    "LearnedCoefficients",
    "NoiseModel",
    "PhaseEstimate",
    "RadialDesign",
    "RpeConfig",
    "ShotRequest",
    "SimulatedDevice",
    "SingleModePipeline",
    "SpamReport",
    "TermKey",
    "TimeLedger",
    "TransformT",
    "TwoModeResult",
    "adaptive_cutoff",
    "admissible_keys",
    "angular_idft",
    "annihilation_matrix",
    "bisection_search",
    "build_T",
    "build_matrix",
    "canonical_key",
    "chebyshev_nodes",
    "coefficient_order_sums",
    "conjugate_spec_by_mismatch",
    "constant_term",
    "covariance_compare",
    "creation_matrix",
    "derive_config",
    "displacement_matrix",
    "effective_diagonal",
    "effective_exact",
    "frame_from_ratio",
    "frame_from_signed_r",
    "joint_grid",
    "learn_firstq",
    "learn_multimode_hierarchical",
    "learn_multimode_simultaneous",
    "learn_single_mode",
    "lipschitz_bound",
    "load_spec",
    "multidim_fit",
    "nb_expansion",
    "normal_to_symmetrized",
    "number_matrix",
    "overlap_feasible",
    "parallel_two_mode_search",
    "phase_averaged_matrix",
    "predict_covariance",
    "radial_design",
    "radial_fit",
    "random_spec",
    "rotation_matrix",
    "rpe_estimate",
    "save_spec",
    "single_key",
    "single_mode_pipeline",
    "spam_bound",
    "spec_from_dict",
    "spec_to_dict",
    "squeeze_matrix",
    "symmetrized_to_normal",
    "vacuum_state",
    "validate_hermitian",
]

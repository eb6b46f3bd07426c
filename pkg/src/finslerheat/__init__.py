"""Numerical laboratory for nonlinear heat flow on flat weighted tori.

Solves the flow generated by an anisotropic (possibly asymmetric)
Minkowski norm, realizes the linearized transport semigroup along
recorded trajectories, and verifies parabolic gradient bounds, Harnack
inequalities, and entropy estimates with explicit discretization
tolerances.
"""

from ._version import __version__
from .errors import (
    AlphaSignChange,
    CflViolation,
    ConfigError,
    DegenerateField,
    DegenerateVector,
    DomainError,
    FinslerHeatError,
    IndexRange,
    NoConvergence,
    NoRoot,
    ProfileInadmissible,
    SolverDivergence,
    Unbounded,
    UnsupportedFamily,
)
from .geometry import (
    CurvatureBound,
    CovectorField,
    MeasureField,
    ScalarField,
    TorusGrid,
    VectorField,
    finsler_distance,
    gradient_energy,
    gradient_field,
    integrate,
    log_gradient_energy,
    ricci_lower_bound,
)
from .harnack import (
    CallableFlow,
    ThetaDescriptor,
    harnack_bound_integral,
    harnack_bound_lf,
    report_only_bounds,
    theta,
    theta_conjugate,
    theta_descriptor,
    verify_harnack,
)
from .heat import (
    BochnerResult,
    DiffusionAssembly,
    Trajectory,
    bochner_residual,
    heat_step,
    nonlinear_laplacian,
    solve_heat_flow,
    weighted_laplacian,
)
from .liyau import (
    LiYauCoefficients,
    LiYauProfile,
    PsiEvaluator,
    PsiRoots,
    alpha_phi,
    check_exp_uu,
    check_log_sob_weak,
    entropy_H,
    entropy_production,
    kernel_equality_residual,
    linearize_psi,
    psi_roots,
    residual_linear,
    residual_psi,
    tau_lambda,
)
from .metrics import (
    Asym1DNorm,
    EuclideanNorm,
    MetricConstants,
    MetricField,
    MinkowskiNorm,
    RandersNorm,
    RiemannianNorm,
    dual_norm,
    dual_norm_sampled,
    fundamental_tensor,
    legendre,
    legendre_inverse,
    metric_constants,
    norm,
)
from .reporting import InequalityReport, compare, discretization_tolerance
from .semigroup import (
    TransportPlan,
    check_cauchy_schwarz,
    check_conservative,
    check_contraction,
    check_duality,
    check_order_and_bounds,
    check_positivity,
    check_semigroup_law,
    gradient_estimate_check,
    laplacian_commutation,
    lipschitz_decay,
    local_logsob_check,
    plan_for_times,
    transport,
    variance_identity,
)

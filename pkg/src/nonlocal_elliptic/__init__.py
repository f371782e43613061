"""Numerical toolbox for nonsymmetric nonlocal elliptic operators.

Kernels comparable to the fractional Laplacian of order sigma in [1, 2),
with critically scaling drifts.  The package evaluates extremal (Pucci
type) operators by adaptive polar quadrature, verifies barrier functions,
computes convex-envelope contact estimates, solves Dirichlet problems on
lattices with monotone schemes, and measures regularity of the results.
"""

from .abp import (
    ABPReport,
    BumpField,
    ConvexEnvelope,
    CubeCover,
    abp_inequality_check,
    batch_constant,
    convex_envelope,
    dyadic_cover,
    envelope_invariants,
    make_abp_instance,
    subdifferential_measure,
)
from .barriers import (
    BarrierReport,
    BarrierSearch,
    BarrierSpec,
    indicator_limit_check,
    search_barrier_params,
    verify_boundary_barrier,
    verify_localized_barrier,
    verify_special_function,
)
from .errors import ConfigurationError, NumericError, RejectedInstance
from .kernel_family import (
    KernelParams,
    KernelSpec,
    LinearOpSpec,
    OperatorDictionary,
    compensated_shell,
    default_dictionary,
    drift_admissibility,
    drift_profile,
    eval_kernel,
    critical_samples,
    extremal_minus,
    extremal_plus,
    fractional,
    kernel_bounds_check,
    moment,
    rescale_operator,
    shell_tilted,
    tilted,
)
from .nonlocal_eval import (
    EvalResult,
    GridFunction,
    QuadratureConfig,
    delta,
    eval_extremal_with_drift,
    eval_linear,
    eval_pucci,
    extremal_bracket,
    second_order_target,
    sigma2_limit_check,
)
from .profiles import (
    Affine,
    BoundaryCone,
    Constant,
    GaussianBumps,
    InverseCap,
    LocalizedWell,
    OutsideIndicator,
    QuadraticForm,
    RadialPower,
    SphericalCap,
)
from .regularity import (
    DecayTable,
    TailReport,
    difference_quotient_regularity,
    oscillation_decay,
    point_estimate_check,
)
from .solver import (
    DiscreteScheme,
    GridConfig,
    SolveResult,
    comparison_check,
    discretize,
    load_checkpoint,
    residual,
    save_checkpoint,
    solve_dirichlet,
)

__version__ = "0.1.0"

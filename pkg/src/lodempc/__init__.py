"""Physics-informed GP model predictive control for nonlinear ODE systems.

A nonlinear system is linearized about an asymptotically stable equilibrium,
the linear ODEs are compiled (via the Smith normal form of their operator
matrix) into a Gaussian process whose realizations solve them, and tracking
control is obtained by conditioning that process on the current state and on
constraint pseudo-observations.
"""
from .gp import (
    DataPoint,
    Dataset,
    IllConditionedError,
    OptimizerConfig,
    Posterior,
    build_gram,
    condition,
    log_marginal_likelihood,
    optimize_hyperparameters,
    posterior_cov,
    posterior_mean,
)
from .linearize import (
    ConvergenceError,
    LinearizationError,
    LinearizedSystem,
    MarginalStabilityError,
    NonlinearSystem,
    build_operator_matrix,
    check_asymptotic_stability,
    find_equilibrium,
    jacobians,
    linearize,
)
from .lodegp import (
    Hyperparameters,
    LatentEntry,
    LatentKind,
    LodeGpModel,
    UnsupportedSystemError,
    build_lodegp_model,
    construct_latent_kernel,
    covariance,
    ode_residual,
    prior_mean,
    se_mixed_derivative,
)
from .metrics import MetricsReport, constraint_violation, control_error, mean_control_input
from .mpc import (
    BoxConstraints,
    ClosedLoopTrace,
    ConstraintMode,
    ControllerState,
    MpcConfig,
    assemble_dataset,
    make_endpoint,
    make_init_point,
    make_soft_constraints,
    mpc_step,
    run_closed_loop,
)
from .plant import TwoTankParams, rk4_step, simulate_hold, two_tank_rhs, two_tank_system
from .polyalg import (
    OperatorMatrix,
    OperatorPoly,
    SmithDecomposition,
    det,
    poly_add,
    poly_divmod,
    poly_mul,
    rational_from_float,
    smith_normal_form,
)

__version__ = "0.1.0"

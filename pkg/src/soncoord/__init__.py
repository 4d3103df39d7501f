"""Stability analysis and coordination of parallel self-optimizing control loops."""

from ._validation import NumericalError
from .coordination import (
    Coordinator,
    GradientCoordinator,
    coordinated_field,
    coordinated_kpi,
    distributed_update_direction,
    synthesize_gradient_coordinator,
    verify_coordinated,
)
from .dynamics import SASchedule, Trajectory, convergence_stats, integrate_ode, simulate_sa
from .estimation import (
    AffineFieldRegressor,
    ConditionDB,
    SampleSet,
    jacobian_fd,
    least_squares_fit,
    linearize,
    offset_estimate,
)
from .model import (
    InteractionGraph,
    LinearSystem,
    SingularMatrixError,
    VectorField,
    ZeroFindingSpec,
    equilibrium,
    interaction_graph,
    make_linear_field,
    standalone_field,
    zero_finding_field,
)
from .stability import (
    LyapunovCertificate,
    StabilityVerdict,
    eigen_stability,
    expm,
    instability_det_2x2,
    linear_solution,
    lyapunov_solve,
    lyapunov_value,
    standalone_check,
)

__version__ = "0.1.0"

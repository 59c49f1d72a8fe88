"""Sparse stabilization and optimal control of Cucker-Smale alignment models."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AgentCloud,
    CommKernel,
    CuckerSmaleKernel,
    GeneralKernel,
    NonIntegrableKernelError,
    bilinear_B,
    diagnostics,
    disagreement_V,
    dispersion_X,
    gamma_quadrature,
    gamma_threshold,
    mean_consensus,
    perp_projection,
)
from .dynamics import IntegrationError, Trajectory, integrate, sampling_solve  # noqa: E402
from .controls import (  # noqa: E402
    ControlVector,
    DistributedFeedback,
    SparseFeedback,
    admissibility_check,
    classify_region,
    decay_rate_bound_check,
    distributed_feedback,
    sparse_feedback,
)
from .analysis import (  # noqa: E402
    consensus_number_bound,
    consensus_region_check,
    lemma_checkers,
    max_sampling_time,
    stabilization_bounds,
    steering_time_bound,
)
from .controllability import (  # noqa: E402
    SingularGramianError,
    controllability_gramian,
    kalman_test,
    linearize_at_consensus,
    minimal_energy_steering,
)
from .optimal import (  # noqa: E402
    ConvergenceError,
    Extremal,
    adjoint_rhs,
    classify_costate_region,
    cost_functional,
    forward_backward_solve,
    hamiltonian_minimizer,
)

__all__ = [
    "__version__",
    "AgentCloud",
    "CommKernel",
    "CuckerSmaleKernel",
    "GeneralKernel",
    "NonIntegrableKernelError",
    "bilinear_B",
    "diagnostics",
    "disagreement_V",
    "dispersion_X",
    "gamma_quadrature",
    "gamma_threshold",
    "mean_consensus",
    "perp_projection",
    "IntegrationError",
    "Trajectory",
    "integrate",
    "sampling_solve",
    "ControlVector",
    "DistributedFeedback",
    "SparseFeedback",
    "admissibility_check",
    "classify_region",
    "decay_rate_bound_check",
    "distributed_feedback",
    "sparse_feedback",
    "consensus_number_bound",
    "consensus_region_check",
    "lemma_checkers",
    "max_sampling_time",
    "stabilization_bounds",
    "steering_time_bound",
    "SingularGramianError",
    "controllability_gramian",
    "kalman_test",
    "linearize_at_consensus",
    "minimal_energy_steering",
    "ConvergenceError",
    "Extremal",
    "adjoint_rhs",
    "classify_costate_region",
    "cost_functional",
    "forward_backward_solve",
    "hamiltonian_minimizer",
]

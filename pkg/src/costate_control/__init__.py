"""Costate-trajectory neural controllers for control-affine OCPs.

Pipeline: boundary-value data generation -> costate network training
(prediction + continuity losses) -> box-constrained closed-loop control,
with a per-step solver reference and a direct-collocation baseline.
"""

from .collocation import CollocationNlp, NlpResult, compare_trajectories, solve_nlp, transcribe
from .data import (
    Dataset,
    DatasetFormatError,
    GenerationError,
    Window,
    generate_dataset,
    load_dataset,
    save_dataset,
    windows,
)
from .loop import (
    ClosedLoopResult,
    DisturbanceSchedule,
    PlantDivergedError,
    plant_step,
    reference_closed_loop,
    saturate,
    simulate_closed_loop,
    solve_input_qp,
    write_result_csv,
)
from .network import (
    CostateNet,
    ModelFormatError,
    TrainConfig,
    gradients,
    load_model,
    loss_continuity,
    loss_prediction,
    save_model,
    train,
)
from .problems import (
    OcpProblem,
    PmpPoint,
    costate_rhs,
    dynamics_rhs,
    get_problem,
    hamiltonian,
    linear1d,
    paper1d,
    pmp_residual,
    unconstrained_control,
)
from .tpbvp import (
    IntegrationDivergedError,
    SolverConfig,
    TrajectoryPair,
    continuation_solve,
    integrate_pmp_ode,
    solve_tpbvp,
)

__version__ = "0.1.0"

"""GA-based NMPC with a learned best-smallest-margin search space.

Library layout:

* ``models``    -- plant dynamics, RK4 stepping, noise injection
* ``nmpc``      -- rollouts, cost, fitness, feasibility/terminal screening
* ``ga``        -- the margin-restricted genetic solver and clocks
* ``svr``       -- SMO-trained epsilon-insensitive SVR
* ``margins``   -- confidence gating, margin selection, population sizing
* ``dataset``   -- reference generation and (E, delta) record construction
* ``baselines`` -- OG/MG/PSO/DE comparison solvers
* ``bench``     -- closed-loop benchmark harness, sweeps and reports
* ``cli``       -- the ``ganmpc`` command
"""

from .errors import (
    ConfigError,
    DatasetFormatError,
    DimensionError,
    DivergenceError,
    GanmpcError,
    GimbalLockError,
    IsolationError,
    LowSpeedError,
    ModelDomainError,
    SvrTrainingError,
)
from .models import (
    ModelSpec,
    NoiseConfig,
    default_spec,
    perturb_input,
    perturb_measurement,
    sfjr_derivatives,
    sfjr_spec,
    spec_from_config,
    step,
    uav_derivatives,
    uav_hover_speed,
    uav_spec,
    vehicle_derivatives,
    vehicle_spec,
)
from .nmpc import (
    HorizonSolution,
    ReferenceTrack,
    TerminalSet,
    check_feasibility,
    check_terminal,
    error_vector,
    evaluate_cost,
    fitness,
    rollout,
)
from .ga import (
    CycleOutcome,
    GaConfig,
    ManualClock,
    SimulatedClock,
    WallClock,
    bootstrap_solution,
    crossover,
    mutate,
    sample_population,
    solve_cycle,
    tournament_select,
)
from .svr import SvrModel, kernel, load_svr, predict_margin, save_svr, train_svr
from .margins import (
    BsmConfig,
    MarginPredictor,
    MarginVector,
    bsm_from_solutions,
    confidence,
    overall_confidence,
    population_size,
    select_margin,
    train_margin_predictor,
)
from .dataset import (
    CycleRecord,
    ReferenceGenConfig,
    build_dataset,
    generate_references,
    read_dataset,
    write_dataset,
)
from .baselines import DeConfig, PsoConfig, SolverKind, de_solve, mg_solve, og_solve, pso_solve
from .bench import ExperimentConfig, PlantSim, RunMetrics, run_closed_loop, sweep

__version__ = "0.1.0"

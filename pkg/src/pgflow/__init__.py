"""Flow-matching GFlowNets with meta and personalized meta training."""

from .envs import (
    CLIFF_WALKING,
    DOWN,
    ENV_KINDS,
    FROZEN_LAKE,
    GRID_WORLD,
    RIGHT,
    STOP,
    State,
    Task,
    TaskGenerationError,
    TaskParamError,
    TaskSpec,
    make_task,
    parse_task_spec,
    serialize_task_spec,
)
from .net import (
    FlowNet,
    NumericsError,
    TabularFlowNet,
    encode_state,
    load_checkpoint,
    net_for_task,
    param_axpy,
    param_norm,
    param_scale,
    param_sub,
    save_checkpoint,
)
from .objective import (
    Batch,
    GreedyNetPolicy,
    NetPolicy,
    TablePolicy,
    Trajectory,
    fm_loss,
    fm_loss_grad,
    policy_probs,
    sample_batch,
    sample_trajectory,
    uniform_policy,
)
from .oracle import (
    exact_flows,
    exact_policy_distribution,
    exact_target_distribution,
    exact_visit_mass,
    flow_policy,
)
from .metrics import (
    MetricRecord,
    averaged_reward,
    empirical_l1,
    l1_exact,
    mode_set,
    modes_found_curve,
)
from .meta import (
    MetaConfig,
    PlateauDetector,
    TrainTrace,
    gflowmeta_train,
    per_task_optimum_train,
    pooled_gflownet_train,
    task_rngs,
)
from .pmeta import (
    PMetaConfig,
    PMetaResult,
    SolveStats,
    aggregate_relaxed,
    aux_meta_update,
    meta_gradient,
    pgflowmeta_train,
    prox_objective_grad,
    solve_personalized,
    solve_proximal,
)
from .theory import (
    ConvergenceReport,
    TheoryReport,
    build_theory_report,
    compute_env_constants,
    compute_L_ell,
    convergence_trace_report,
    zeta_bound,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_config,
    save_config,
    serialize_config,
    with_overrides,
)
from .harness import (
    HarnessError,
    format_comparison,
    generate_task_suite,
    load_task_suite,
    run_experiment,
)

__version__ = "0.1.0"

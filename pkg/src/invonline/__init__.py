"""Online inverse optimization for parameterized convex QPs.

Learn unknown cost and/or right-hand-side parameters of a convex quadratic
program from a stream of (signal, noisy decision) pairs.  Each round the
learner evaluates the squared distance from the observed decision to the
optimal solution set of the current hypothesis and applies an implicit
(proximal) update solved to global optimality.
"""

from .experiments import (
    BaselineConfig,
    ConsumerScenario,
    ExperimentReport,
    NoiseModel,
    TransshipmentScenario,
    batch_baseline,
    consumer_problem_budget,
    consumer_problem_utility,
    gen_consumer_stream,
    gen_transshipment_stream,
    metrics,
    regret_series,
    transshipment_problem,
)
from .fileio import (
    ConfigError,
    export_bigm_mip,
    load_config,
    load_problem,
    load_qp,
    save_problem,
    save_qp,
)
from .learner import (
    LearnerConfig,
    NotStronglyConvex,
    RunTrace,
    regret_bound,
    run,
    schedule_eta,
    warm_start,
)
from .loss import InfeasibleForward, LossValue, eval_loss, kkt_projection
from .model import (
    ConcreteQP,
    ModelError,
    Observation,
    ParamQP,
    ParameterBox,
    TheoryConstants,
    ValidationReport,
    validate,
)
from .qp import Infeasible, IterationLimit, QpSolution, Unbounded, enumerate_kkt, solve
from .update import (
    InfeasibleUpdate,
    UpdateResult,
    bnb_projection,
    implicit_update,
    relax_bound,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "ConcreteQP",
    "ConfigError",
    "ConsumerScenario",
    "ExperimentReport",
    "Infeasible",
    "InfeasibleForward",
    "InfeasibleUpdate",
    "IterationLimit",
    "LearnerConfig",
    "LossValue",
    "ModelError",
    "NoiseModel",
    "NotStronglyConvex",
    "Observation",
    "ParamQP",
    "ParameterBox",
    "QpSolution",
    "RunTrace",
    "TheoryConstants",
    "TransshipmentScenario",
    "Unbounded",
    "UpdateResult",
    "ValidationReport",
    "batch_baseline",
    "bnb_projection",
    "consumer_problem_budget",
    "consumer_problem_utility",
    "enumerate_kkt",
    "eval_loss",
    "export_bigm_mip",
    "gen_consumer_stream",
    "gen_transshipment_stream",
    "implicit_update",
    "kkt_projection",
    "load_config",
    "load_problem",
    "load_qp",
    "metrics",
    "regret_bound",
    "regret_series",
    "relax_bound",
    "run",
    "save_problem",
    "save_qp",
    "schedule_eta",
    "solve",
    "transshipment_problem",
    "validate",
    "warm_start",
]

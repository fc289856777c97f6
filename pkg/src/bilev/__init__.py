"""Inexact stochastic bilevel learning toolkit.

Library layout:

* ``schedules``      accuracy/step-size sequences, admissibility checks,
                     rate-regime prediction, weighting diagnostics
* ``problems``       denoising/inpainting tasks, sampling vectors, losses,
                     PSNR, PGM and synthetic-image I/O
* ``regularizers``   quadratic toy, convex ridge (CRR) and input-convex
                     (ICNN) regularizers with analytic derivatives
* ``lower_solver``   certified accelerated gradient solver for the
                     strongly convex lower-level problems
* ``linear_solver``  matrix-free conjugate gradients for inverse-Hessian
                     products
* ``hypergradient``  inexact stochastic hypergradients with error budgets
* ``optimizers``     ISGD / inexact-Adam training loops with run logs
* ``rate_harness``   gradient-norm proxies, slope fits, parameter sweeps
* ``cli``            ``bilev run|rates|check|export``
"""

from .cost import CostCounter
from .hypergradient import (
    ErrorBudget,
    HypergradResult,
    LocalConstants,
    WarmStartStore,
    error_budget,
    fd_hypergradient_oracle,
    inexact_hypergradient,
    mixed_jvp,
)
from .linear_solver import CgResult, NotSpdError, SpdOperator, cg_solve
from .lower_solver import (
    LowerSolution,
    SolverConfig,
    grad_h,
    hess_vp_h,
    objective_h,
    solve,
    strong_convexity_floor,
)
from .optimizers import (
    AdamParams,
    AdamState,
    BatchSpec,
    OptimizerKind,
    RunConfig,
    RunLog,
    iadam_step,
    isgd_step,
    run,
)
from .problems import (
    OpKind,
    ProblemInstance,
    SamplingMode,
    SamplingVector,
    load_pgm,
    make_denoising,
    make_inpainting,
    psnr,
    sample_v,
    save_pgm,
    synth_images,
    upper_grad,
    upper_loss,
)
from .rate_harness import (
    RateFit,
    SweepBase,
    SweepCell,
    SweepSummary,
    emit_plots,
    fit_rate,
    gradient_proxy,
    sweep,
)
from .regularizers import (
    CRRRegularizer,
    ICNNRegularizer,
    Potential,
    PotentialKind,
    QuadToyRegularizer,
    Regularizer,
    ThetaParams,
    ZeroRegularizer,
    clamp_nonneg,
    load_checkpoint,
    potential_eval,
    save_checkpoint,
    smoothed_clipped_relu,
    spectral_normalize,
)
from .schedules import (
    RateRegime,
    Regime,
    Schedule,
    ScheduleKind,
    WeightDiagnostics,
    compute_weights,
    format_schedule,
    l_k_sum,
    parse_schedule,
    predicted_rate,
    validate_step_schedule,
)

__version__ = "0.1.0"

"""Upper-level training loops driven by inexact stochastic hypergradients.

Two optimizers share the loop: plain inexact SGD
(theta <- theta - alpha_k z_k) and inexact Adam, which feeds the same
inexact hypergradient through the standard bias-corrected Adam recursion.
Both follow schedule-driven accuracies eps_k and step sizes alpha_k,
enforce a hard training-cost budget, apply the regularizer's projection
after every step, and log a per-iteration trace. Gradient-norm proxies
and test PSNR evaluations are charged to a separate evaluation counter so
the training budget covers training computation only.

Runs are deterministic per seed; re-running the same configuration
reproduces the run log byte for byte.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .cost import CostCounter
from .hypergradient import (
    ErrorBudget,
    LocalConstants,
    WarmStartStore,
    full_batch_gradient_norm,
    inexact_hypergradient,
)
from .lower_solver import SolverConfig, solve
from .problems import ProblemInstance, SamplingMode, psnr, sample_v
from .regularizers import Regularizer, ThetaParams
from .schedules import Schedule

__all__ = [
    "OptimizerKind",
    "AdamParams",
    "AdamState",
    "BatchSpec",
    "RunConfig",
    "LogRow",
    "RunLog",
    "RUNLOG_HEADER",
    "isgd_step",
    "iadam_step",
    "run",
]


class OptimizerKind(Enum):
    ISGD = "isgd"
    IADAM = "iadam"


@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.eps_hat > 0:
            raise ValueError("eps_hat must be > 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim))


@dataclass(frozen=True)
class BatchSpec:
    mode: SamplingMode = SamplingMode.BINOMIAL
    size: int | None = None


@dataclass
class RunConfig:
    step: Schedule
    acc: Schedule
    budget: int
    optimizer: OptimizerKind = OptimizerKind.ISGD
    adam: AdamParams = field(default_factory=AdamParams)
    batch: BatchSpec = field(default_factory=BatchSpec)
    seed: int = 0
    log_every: int = 1
    proxy_every: int = 0
    psnr_every: int = 0
    max_outer: int | None = None
    warm_start: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    constants: LocalConstants | None = None
    budget_override: ErrorBudget | None = None
    proxy_eps: float = 1e-6
    psnr_eps: float = 1e-4
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.step.value(0) <= 0:
            raise ValueError("step schedule must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class LogRow:
    k: int
    cum_cost: int
    epsilon_k: float
    alpha_k: float
    batch_loss: float
    grad_proxy: float | None = None
    test_psnr: float | None = None


RUNLOG_HEADER = "k,cum_cost,epsilon_k,alpha_k,batch_loss,grad_proxy,test_psnr"


@dataclass
class RunLog:
    rows: list[LogRow] = field(default_factory=list)
    status: str = "Completed"
    total_cost: int = 0
    eval_cost: int = 0
    theta_final: ThetaParams | None = None

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUNLOG_HEADER.split(","))
        for r in self.rows:
            w.writerow(
                [
                    r.k,
                    r.cum_cost,
                    repr(r.epsilon_k),
                    repr(r.alpha_k),
                    repr(r.batch_loss),
                    "" if r.grad_proxy is None else repr(r.grad_proxy),
                    "" if r.test_psnr is None else repr(r.test_psnr),
                ]
            )
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv_text())

    @staticmethod
    def from_csv(path) -> "RunLog":
        rows = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if ",".join(header) != RUNLOG_HEADER:
                raise ValueError(f"unexpected run-log header {header}")
            for rec in reader:
                rows.append(
                    LogRow(
                        k=int(rec[0]),
                        cum_cost=int(rec[1]),
                        epsilon_k=float(rec[2]),
                        alpha_k=float(rec[3]),
                        batch_loss=float(rec[4]),
                        grad_proxy=float(rec[5]) if rec[5] else None,
                        test_psnr=float(rec[6]) if rec[6] else None,
                    )
                )
        return RunLog(rows=rows)


def isgd_step(theta_flat: np.ndarray, z: np.ndarray, alpha: float) -> np.ndarray:
    """theta' = theta - alpha z (projections are applied by the caller)."""
    if not alpha > 0:
        raise ValueError("step size must be > 0")
    if theta_flat.shape != z.shape:
        raise ValueError("parameter/gradient shape mismatch")
    return theta_flat - alpha * z


def iadam_step(
    state: AdamState,
    theta_flat: np.ndarray,
    z: np.ndarray,
    alpha: float,
    params: AdamParams,
) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam recursion fed with the inexact hypergradient."""
    if not alpha > 0:
        raise ValueError("step size must be > 0")
    if theta_flat.shape != z.shape:
        raise ValueError("parameter/gradient shape mismatch")
    t = state.t + 1
    m = params.beta1 * state.m + (1.0 - params.beta1) * z
    v = params.beta2 * state.v + (1.0 - params.beta2) * z * z
    m_hat = m / (1.0 - params.beta1**t)
    v_hat = v / (1.0 - params.beta2**t)
    theta_new = theta_flat - alpha * m_hat / (np.sqrt(v_hat) + params.eps_hat)
    return AdamState(m=m, v=v, t=t), theta_new


def _mean_test_psnr(
    test_instances: list[ProblemInstance],
    reg: Regularizer,
    theta: ThetaParams,
    eps: float,
    solver: SolverConfig,
    eval_cost: CostCounter,
    warm: dict[int, np.ndarray],
) -> float:
    cfg = replace(solver, max_iters=max(solver.max_iters, 20_000), grad_tol=None)
    vals = []
    for i, inst in enumerate(test_instances):
        x0 = warm.get(i, inst.adjoint(inst.y))
        sol = solve(inst, reg, theta, x0, eps, cfg, cost=eval_cost)
        warm[i] = sol.x_tilde
        vals.append(psnr(sol.x_tilde, inst.x_star))
    return float(np.mean(vals))


def run(
    instances: list[ProblemInstance],
    reg: Regularizer,
    cfg: RunConfig,
    theta0: ThetaParams | None = None,
    test_instances: list[ProblemInstance] | None = None,
    on_step: Callable[[int, int, ThetaParams], None] | None = None,
) -> RunLog:
    """Run one training loop until the budget (or iteration cap) is hit.

    Each outer iteration samples v^k, evaluates the inexact hypergradient
    at accuracy eps_k, steps with alpha_k, projects, and logs. The loop
    stops (without stepping or logging) on the first evaluation that would
    exceed the budget, so every logged cum_cost is within budget and the
    remaining headroom is smaller than the skipped evaluation.
    """
    m = len(instances)
    if m == 0:
        raise ValueError("need at least one training instance")
    root = np.random.SeedSequence(cfg.seed)
    init_ss, sample_ss = root.spawn(2)
    if theta0 is None:
        theta = reg.init_theta(instances[0].y.shape, np.random.default_rng(init_ss))
    else:
        theta = theta0.copy()
    rng = np.random.default_rng(sample_ss)

    cost = CostCounter()
    eval_cost = CostCounter()
    warm = WarmStartStore() if cfg.warm_start else None
    proxy_warm = WarmStartStore()
    psnr_warm: dict[int, np.ndarray] = {}
    adam = AdamState.zeros(theta.size)
    log = RunLog()
    status = "Completed"
    last_logged_cost = -1

    k = 0
    while True:
        if cfg.max_outer is not None and k >= cfg.max_outer:
            status = "MaxItersReached"
            break
        eps_k = cfg.acc.value(k)
        alpha_k = cfg.step.value(k)
        snapshot = cost.total
        v = sample_v(m, cfg.batch.mode, rng, b=cfg.batch.size)
        res = inexact_hypergradient(
            list(zip(instances, v.weights.tolist())),
            reg,
            theta,
            eps_k,
            warm=warm,
            cost=cost,
            solver_cfg=cfg.solver,
            constants=cfg.constants,
            budget_override=cfg.budget_override,
            threads=cfg.threads,
        )
        if cost.total > cfg.budget:
            # roll back: the step that would overdraw the budget is skipped
            status = "BudgetExhausted"
            log.total_cost = snapshot
            break
        if not np.all(np.isfinite(res.z)):
            status = f"Aborted(non-finite hypergradient at k={k})"
            log.total_cost = snapshot
            break

        proxy_val = None
        if cfg.proxy_every > 0 and k % cfg.proxy_every == 0:
            proxy_val = full_batch_gradient_norm(
                instances,
                reg,
                theta,
                cfg.proxy_eps,
                cost=eval_cost,
                solver_cfg=cfg.solver,
                constants=cfg.constants,
                warm=proxy_warm,
            )
        psnr_val = None
        if cfg.psnr_every > 0 and test_instances and k % cfg.psnr_every == 0:
            psnr_val = _mean_test_psnr(
                test_instances, reg, theta, cfg.psnr_eps, cfg.solver, eval_cost, psnr_warm
            )

        if cfg.optimizer is OptimizerKind.ISGD:
            new_flat = isgd_step(theta.flat, res.z, alpha_k)
        else:
            adam, new_flat = iadam_step(adam, theta.flat, res.z, alpha_k, cfg.adam)
        theta = reg.project(theta.with_flat(new_flat))

        if k % cfg.log_every == 0 or proxy_val is not None or psnr_val is not None:
            cum = cost.total
            if cum > last_logged_cost:  # keep cum_cost strictly increasing
                log.rows.append(
                    LogRow(
                        k=k,
                        cum_cost=cum,
                        epsilon_k=eps_k,
                        alpha_k=alpha_k,
                        batch_loss=res.batch_loss,
                        grad_proxy=proxy_val,
                        test_psnr=psnr_val,
                    )
                )
                last_logged_cost = cum
        log.total_cost = cost.total
        if on_step is not None:
            on_step(k, cost.total, theta)
        k += 1
        if cost.total >= cfg.budget:
            status = "BudgetExhausted"
            break

    log.status = status
    log.eval_cost = eval_cost.total
    log.theta_final = theta
    return log

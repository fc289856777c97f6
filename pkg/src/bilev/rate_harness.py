"""Empirical validation of the convergence-rate theory.

Pieces: a deterministic full-batch gradient-norm proxy (the expected
gradient norm is not observable; the inexact hypergradient at tight
accuracy stands in), log-log slope fits on the running minimum of proxy
series, multi-seed sweeps over (p, q, eps0, alpha0) grids, and CSV/SVG
emission. Sweep cells run concurrently in worker processes; aggregation
is deterministic because rows are keyed and sorted.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .cost import CostCounter
from .hypergradient import LocalConstants, default_threads, full_batch_gradient_norm
from .lower_solver import SolverConfig
from .optimizers import RunConfig, RunLog, run
from .problems import ProblemInstance
from .regularizers import Regularizer, ThetaParams
from .schedules import Schedule, ScheduleKind

__all__ = [
    "RateFit",
    "gradient_proxy",
    "fit_rate",
    "SweepCell",
    "SweepBase",
    "CellStats",
    "SweepSummary",
    "sweep",
    "SUMMARY_HEADER",
    "emit_plots",
    "cell_schedules",
]


def gradient_proxy(
    instances: list[ProblemInstance],
    reg: Regularizer,
    theta: ThetaParams,
    tight_eps: float = 1e-6,
    cost: CostCounter | None = None,
    solver_cfg: SolverConfig | None = None,
    constants: LocalConstants | None = None,
) -> float:
    """Full-batch (v = 1) inexact hypergradient norm at tight accuracy.

    Deterministic (no sampling noise); the cost goes to the caller's
    proxy counter, never the training budget.
    """
    return full_batch_gradient_norm(
        instances, reg, theta, tight_eps, cost=cost, solver_cfg=solver_cfg, constants=constants
    )


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    n_points: int


def fit_rate(
    series: list[tuple[float, float]], window: tuple[float, float] | None = None
) -> RateFit:
    """Least-squares line on (log k, log running-min value).

    The running minimum is taken over the whole series before windowing,
    matching the min-over-iterations quantity the theory bounds. Requires
    at least 5 windowed points spanning >= 1.5 decades.
    """
    pts = sorted((float(k), float(v)) for k, v in series)
    if not pts:
        raise ValueError("empty proxy series")
    run_min: list[tuple[float, float]] = []
    cur = math.inf
    for k, v in pts:
        cur = min(cur, v)
        run_min.append((k, cur))
    lo, hi = window if window is not None else (pts[0][0], pts[-1][0])
    sel = [(k, v) for k, v in run_min if lo <= k <= hi and k >= 1 and v > 0]
    if len(sel) < 5:
        raise ValueError(f"need >= 5 points in window [{lo}, {hi}], got {len(sel)}")
    ks = np.log10([k for k, _ in sel])
    vs = np.log10([v for _, v in sel])
    if ks.max() - ks.min() < 1.5:
        raise ValueError("window must span at least 1.5 decades of iterations")
    slope, intercept = np.polyfit(ks, vs, 1)
    resid = vs - (slope * ks + intercept)
    ss_tot = float(np.sum((vs - vs.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - float(np.sum(resid**2)) / ss_tot))
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        window=(lo, hi),
        n_points=len(sel),
    )


# -- sweeps ------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    p: float
    q: float
    eps0: float
    alpha0: float


def cell_schedules(cell: SweepCell) -> tuple[Schedule, Schedule]:
    """(step, accuracy) schedules of a sweep cell; exponent 0 means constant."""
    step = (
        Schedule(ScheduleKind.CONSTANT, cell.alpha0)
        if cell.q == 0
        else Schedule(ScheduleKind.POLYNOMIAL, cell.alpha0, cell.q)
    )
    acc = (
        Schedule(ScheduleKind.CONSTANT, cell.eps0)
        if cell.p == 0
        else Schedule(ScheduleKind.POLYNOMIAL, cell.eps0, cell.p)
    )
    return step, acc


@dataclass
class SweepBase:
    """Everything a sweep cell needs besides its (p, q, eps0, alpha0).

    ``build(seed)`` constructs the problem set, regularizer and initial
    parameters; it must be picklable (module-level function or partial)
    when the sweep runs in worker processes.
    """

    build: Callable[[int], tuple[list[ProblemInstance], Regularizer, ThetaParams | None]]
    cfg: RunConfig
    fit_window: tuple[float, float] = (1e2, 1e4)


@dataclass
class CellStats:
    cell: SweepCell
    seed: int
    final_loss: float | None = None
    best_psnr: float | None = None
    slope: float | None = None
    r_squared: float | None = None
    total_cost: int | None = None
    error: str | None = None


def _run_cell(args) -> CellStats:
    base, cell, cell_idx, seed = args
    try:
        run_seed = int(np.random.SeedSequence([seed, cell_idx]).generate_state(1)[0])
        instances, reg, theta0 = base.build(seed)
        step, acc = cell_schedules(cell)
        cfg = replace(base.cfg, step=step, acc=acc, seed=run_seed)
        log = run(instances, reg, cfg, theta0=theta0)
        losses = [r.batch_loss for r in log.rows]
        psnrs = [r.test_psnr for r in log.rows if r.test_psnr is not None]
        proxies = [(r.k, r.grad_proxy) for r in log.rows if r.grad_proxy is not None]
        slope = r2 = None
        if len(proxies) >= 5:
            try:
                fit = fit_rate(proxies, window=base.fit_window)
                slope, r2 = fit.slope, fit.r_squared
            except ValueError:
                pass
        return CellStats(
            cell=cell,
            seed=seed,
            final_loss=losses[-1] if losses else None,
            best_psnr=max(psnrs) if psnrs else None,
            slope=slope,
            r_squared=r2,
            total_cost=log.total_cost,
        )
    except Exception as exc:  # individual cell failures are recorded, sweep continues
        return CellStats(cell=cell, seed=seed, error=f"{type(exc).__name__}: {exc}")


SUMMARY_HEADER = "p,q,eps0,alpha0,seed,final_loss,best_psnr,slope,r2,total_cost"


@dataclass
class SweepSummary:
    rows: list[CellStats] = field(default_factory=list)
    failures: list[CellStats] = field(default_factory=list)

    def by_cell(self) -> dict[SweepCell, list[CellStats]]:
        out: dict[SweepCell, list[CellStats]] = {}
        for r in self.rows:
            out.setdefault(r.cell, []).append(r)
        return out

    def to_csv(self, path) -> None:
        """Per-(cell, seed) rows plus one mean+-std aggregate row per cell
        (seed column 'agg'); failed runs appear with empty metric fields."""

        def fmt(x):
            return "" if x is None else repr(float(x))

        def agg(vals):
            vals = [v for v in vals if v is not None]
            if not vals:
                return ""
            return f"{np.mean(vals):.6g}±{np.std(vals):.3g}"

        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SUMMARY_HEADER.split(","))
            groups = self.by_cell()
            for cell in sorted(groups, key=lambda c: (c.p, c.q, c.eps0, c.alpha0)):
                stats = sorted(groups[cell], key=lambda s: s.seed)
                for s in stats:
                    w.writerow(
                        [
                            repr(cell.p),
                            repr(cell.q),
                            repr(cell.eps0),
                            repr(cell.alpha0),
                            s.seed,
                            fmt(s.final_loss),
                            fmt(s.best_psnr),
                            fmt(s.slope),
                            fmt(s.r_squared),
                            "" if s.total_cost is None else s.total_cost,
                        ]
                    )
                w.writerow(
                    [
                        repr(cell.p),
                        repr(cell.q),
                        repr(cell.eps0),
                        repr(cell.alpha0),
                        "agg",
                        agg([s.final_loss for s in stats]),
                        agg([s.best_psnr for s in stats]),
                        agg([s.slope for s in stats]),
                        agg([s.r_squared for s in stats]),
                        agg([s.total_cost for s in stats]),
                    ]
                )


def sweep(
    grid: list[SweepCell],
    base: SweepBase,
    seeds: list[int],
    processes: int | None = None,
    out_csv=None,
) -> SweepSummary:
    """Run every (cell, seed) pair, optionally in worker processes.

    The worker count is capped by BILEV_THREADS. Results are aggregated in
    sorted cell order regardless of completion order, so output is
    deterministic under any parallelism.
    """
    if not grid:
        raise ValueError("empty sweep grid")
    jobs = [
        (base, cell, cell_idx, seed)
        for cell_idx, cell in enumerate(grid)
        for seed in seeds
    ]
    if processes is None:
        processes = min(len(jobs), os.cpu_count() or 1, default_threads())
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    summary = SweepSummary()
    for stats in results:
        if stats.error is not None:
            summary.failures.append(stats)
        summary.rows.append(stats)
    summary.rows.sort(key=lambda s: (s.cell.p, s.cell.q, s.cell.eps0, s.cell.alpha0, s.seed))
    summary.failures.sort(key=lambda s: (s.cell.p, s.cell.q, s.cell.eps0, s.cell.alpha0, s.seed))
    if out_csv is not None:
        summary.to_csv(out_csv)
    return summary


# -- plots ---------------------------------------------------------------


def emit_plots(csv_paths: list, out_dir, labels: list[str] | None = None) -> list[Path]:
    """Render run-log CSVs as SVG line plots on a log-x cost axis.

    A loss plot is always written (empty axes for empty logs); PSNR and
    proxy plots appear when any input has those columns populated. Plots
    are a pure function of the CSV contents.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logs = [RunLog.from_csv(p) for p in csv_paths]
    if labels is None:
        labels = [Path(p).stem for p in csv_paths]

    def line_plot(fname, ys_of, ylabel):
        fig, ax = plt.subplots(figsize=(6, 4))
        for log_, label in zip(logs, labels):
            pts = [(r.cum_cost, y) for r in log_.rows if (y := ys_of(r)) is not None]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, label=label)
        ax.set_xscale("log")
        ax.set_xlabel("computational cost")
        ax.set_ylabel(ylabel)
        if logs and any(log_.rows for log_ in logs):
            ax.legend(fontsize=8)
        path = out_dir / fname
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path

    written = [line_plot("loss.svg", lambda r: r.batch_loss, "batch loss")]
    if any(r.test_psnr is not None for log_ in logs for r in log_.rows):
        written.append(line_plot("psnr.svg", lambda r: r.test_psnr, "test PSNR [dB]"))
    if any(r.grad_proxy is not None for log_ in logs for r in log_.rows):
        written.append(line_plot("proxy.svg", lambda r: r.grad_proxy, "gradient-norm proxy"))
    return written

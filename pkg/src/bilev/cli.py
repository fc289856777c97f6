"""Command-line front end: ``bilev run|rates|check|export``.

Configs are INI files with ``key = value`` lines; schedules use the
``poly:<base>:<exponent>`` / ``log:<base>:<exponent>`` / ``const:<base>``
mini-grammar. Output directories are content-addressed by a hash of the
config text, so re-running a config overwrites its own artifacts and
collisions are detectable. Exit codes: 0 success, 2 validation error,
3 runtime abort.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hypergradient import LocalConstants, fd_hypergradient_oracle, inexact_hypergradient
from .linear_solver import SpdOperator, cg_solve
from .lower_solver import SolverConfig, solve, strong_convexity_floor
from .optimizers import AdamParams, BatchSpec, OptimizerKind, RunConfig, run
from .problems import (
    OpKind,
    ProblemInstance,
    SamplingMode,
    make_denoising,
    make_inpainting,
    synth_images,
)
from .rate_harness import SweepBase, SweepCell, emit_plots, sweep
from .regularizers import (
    CRRRegularizer,
    ICNNRegularizer,
    Potential,
    PotentialKind,
    QuadToyRegularizer,
    save_checkpoint,
)
from .schedules import l_k_sum, parse_schedule

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "main"]

CHECKPOINT_FRACTIONS = (0.05, 0.10, 0.50, 1.00)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "toy"
    sigma: float = 25.0 / 255.0
    keep_prob: float = 0.3
    xi: float = 1e-6
    n_train: int = 16
    n_test: int = 4
    train_size: int = 32
    test_size: int = 64
    toy_dim: int = 8
    reg_kind: str = "quad"
    channels: tuple[int, ...] = (4, 8)
    kernel_size: int = 5
    potential: str = "huber"
    beta: float = 1.0
    nu: float = 1e-3
    quad_diagonal: bool = False
    step: Schedule = field(default_factory=lambda: parse_schedule("const:0.01"))
    acc: Schedule = field(default_factory=lambda: parse_schedule("poly:1:2"))
    optimizer: str = "isgd"
    budget: int = 10_000
    batch_mode: str = "minibatch"
    batch_size: int | None = 8
    log_every: int = 1
    proxy_every: int = 0
    psnr_every: int = 0
    max_outer: int | None = None
    warm_start: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    out_dir: str = "runs"
    seed: int = 0
    # rates sweep section
    p_values: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0, 2.0)
    q_values: tuple[float, ...] = (0.0, 0.5, 1.0)
    eps0_values: tuple[float, ...] = (1.0,)
    alpha0_values: tuple[float, ...] = (0.01,)
    n_seeds: int = 3
    fit_window: tuple[float, float] = (1e2, 1e4)
    config_text: str = ""


def _get(cp, section, key, cast, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return cast(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(t) for t in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(t) for t in raw.replace(",", " ").split())


def parse_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    e = ExperimentConfig(config_text=text)
    e.problem = _get(cp, "problem", "kind", str, e.problem)
    if e.problem not in ("denoise", "inpaint", "toy"):
        raise ConfigError(f"[problem] kind: unknown problem {e.problem!r}")
    e.sigma = _get(cp, "problem", "sigma", float, e.sigma)
    e.keep_prob = _get(cp, "problem", "keep_prob", float, e.keep_prob)
    e.xi = _get(cp, "problem", "xi", float, e.xi)
    e.n_train = _get(cp, "dataset", "train", int, e.n_train)
    e.n_test = _get(cp, "dataset", "test", int, e.n_test)
    e.train_size = _get(cp, "dataset", "train_size", int, e.train_size)
    e.test_size = _get(cp, "dataset", "test_size", int, e.test_size)
    e.toy_dim = _get(cp, "dataset", "toy_dim", int, e.toy_dim)
    e.reg_kind = _get(cp, "regularizer", "kind", str, e.reg_kind)
    if e.reg_kind not in ("quad", "crr", "icnn"):
        raise ConfigError(f"[regularizer] kind: unknown regularizer {e.reg_kind!r}")
    e.channels = _get(cp, "regularizer", "channels", _ints, e.channels)
    e.kernel_size = _get(cp, "regularizer", "kernel_size", int, e.kernel_size)
    e.potential = _get(cp, "regularizer", "potential", str, e.potential)
    if e.potential not in ("huber", "logcosh"):
        raise ConfigError(f"[regularizer] potential: unknown potential {e.potential!r}")
    e.beta = _get(cp, "regularizer", "beta", float, e.beta)
    e.nu = _get(cp, "regularizer", "nu", float, e.nu)
    e.quad_diagonal = _get(cp, "regularizer", "diagonal", _bool, e.quad_diagonal)
    try:
        e.step = _get(cp, "schedules", "step", parse_schedule, e.step)
    except ValueError as exc:
        raise ConfigError(f"[schedules] step: {exc}") from None
    try:
        e.acc = _get(cp, "schedules", "accuracy", parse_schedule, e.acc)
    except ValueError as exc:
        raise ConfigError(f"[schedules] accuracy: {exc}") from None
    e.optimizer = _get(cp, "optimizer", "kind", str, e.optimizer)
    if e.optimizer not in ("isgd", "iadam"):
        raise ConfigError(f"[optimizer] kind: unknown optimizer {e.optimizer!r}")
    e.budget = _get(cp, "optimizer", "budget", int, e.budget)
    if e.budget < 1:
        raise ConfigError("[optimizer] budget: must be >= 1")
    batch = _get(cp, "optimizer", "batch", str, str(e.batch_size or "binomial"))
    if batch == "binomial":
        e.batch_mode, e.batch_size = "binomial", None
    else:
        try:
            e.batch_mode, e.batch_size = "minibatch", int(batch)
        except ValueError:
            raise ConfigError(f"[optimizer] batch: expected 'binomial' or an integer, got {batch!r}")
    e.log_every = _get(cp, "optimizer", "log_every", int, e.log_every)
    e.proxy_every = _get(cp, "optimizer", "proxy_every", int, e.proxy_every)
    e.psnr_every = _get(cp, "optimizer", "psnr_every", int, e.psnr_every)
    e.max_outer = _get(cp, "optimizer", "max_outer", int, e.max_outer)
    e.warm_start = _get(cp, "optimizer", "warm_start", _bool, e.warm_start)
    e.beta1 = _get(cp, "optimizer", "beta1", float, e.beta1)
    e.beta2 = _get(cp, "optimizer", "beta2", float, e.beta2)
    e.eps_hat = _get(cp, "optimizer", "eps_hat", float, e.eps_hat)
    e.out_dir = _get(cp, "output", "dir", str, e.out_dir)
    e.seed = _get(cp, "run", "seed", int, e.seed)
    e.p_values = _get(cp, "rates", "p_values", _floats, e.p_values)
    e.q_values = _get(cp, "rates", "q_values", _floats, e.q_values)
    e.eps0_values = _get(cp, "rates", "eps0_values", _floats, e.eps0_values)
    e.alpha0_values = _get(cp, "rates", "alpha0_values", _floats, e.alpha0_values)
    e.n_seeds = _get(cp, "rates", "seeds", int, e.n_seeds)
    window = _get(cp, "rates", "fit_window", _floats, e.fit_window)
    if len(window) != 2:
        raise ConfigError("[rates] fit_window: expected two values")
    e.fit_window = (window[0], window[1])
    return e


def make_quad_toy_family(
    m: int, n: int, seed: int, target: float = 0.5, dispersion: float = 0.1
) -> list[ProblemInstance]:
    """m quadratic-toy tasks: y_i smooth positive vectors, x*_i = c_i y_i.

    The per-task factors c_i cluster around ``target`` with the given
    dispersion, so the tasks disagree about the best regularization weight
    and the sampled hypergradient keeps noise at the optimum.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x70F, seed]))
    out = []
    for _ in range(m):
        y = rng.uniform(0.6, 1.4, size=n)
        c = float(np.clip(target + dispersion * rng.normal(), 0.05, 0.95))
        out.append(ProblemInstance(op_kind=OpKind.IDENTITY, y=y, x_star=c * y))
    return out


def build_regularizer(e: ExperimentConfig):
    if e.reg_kind == "quad":
        n = e.toy_dim if e.quad_diagonal else 1
        return QuadToyRegularizer(n_params=n)
    if e.reg_kind == "crr":
        pot = Potential(PotentialKind(e.potential), beta=e.beta)
        return CRRRegularizer(potential=pot, channels=e.channels, kernel_size=e.kernel_size)
    return ICNNRegularizer(
        channels=(e.channels[0], e.channels[-1]), kernel_size=e.kernel_size, nu=e.nu
    )


def build_problem(e: ExperimentConfig, seed: int):
    """Construct (train instances, test instances) for a config."""
    ss = np.random.SeedSequence([0xDA7A, seed])
    data_rng = np.random.default_rng(ss)
    if e.problem == "toy":
        return make_quad_toy_family(e.n_train, e.toy_dim, seed), []
    train_imgs = synth_images(e.n_train, e.train_size, data_rng)
    test_imgs = synth_images(e.n_test, e.test_size, data_rng)
    if e.problem == "denoise":
        return (
            make_denoising(train_imgs, e.sigma, data_rng),
            make_denoising(test_imgs, e.sigma, data_rng),
        )
    return (
        make_inpainting(train_imgs, e.keep_prob, e.sigma, e.xi, data_rng),
        make_inpainting(test_imgs, e.keep_prob, e.sigma, e.xi, data_rng),
    )


def run_config_from_experiment(e: ExperimentConfig) -> RunConfig:
    return RunConfig(
        step=e.step,
        acc=e.acc,
        budget=e.budget,
        optimizer=OptimizerKind(e.optimizer),
        adam=AdamParams(beta1=e.beta1, beta2=e.beta2, eps_hat=e.eps_hat),
        batch=BatchSpec(
            mode=SamplingMode.BINOMIAL if e.batch_mode == "binomial" else SamplingMode.MINIBATCH_SCALED,
            size=e.batch_size,
        ),
        seed=e.seed,
        log_every=e.log_every,
        proxy_every=e.proxy_every,
        psnr_every=e.psnr_every,
        max_outer=e.max_outer,
        warm_start=e.warm_start,
    )


def config_hash(e: ExperimentConfig) -> str:
    return hashlib.sha256(e.config_text.encode("utf-8")).hexdigest()[:12]


def _sweep_build(e: ExperimentConfig, seed: int):
    instances, _ = build_problem(e, seed)
    return instances, build_regularizer(e), None


def cmd_run(config_path) -> int:
    try:
        e = parse_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(e.out_dir) / config_hash(e)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(e.config_text)
    train, test = build_problem(e, e.seed)
    reg = build_regularizer(e)
    cfg = run_config_from_experiment(e)

    pending = [(f, int(round(f * cfg.budget))) for f in CHECKPOINT_FRACTIONS]

    def on_step(k, cum_cost, theta):
        while pending and cum_cost >= pending[0][1]:
            frac, _ = pending.pop(0)
            save_checkpoint(theta, out / f"theta_{int(frac * 100):03d}.ckpt")

    log = run(train, reg, cfg, test_instances=test or None, on_step=on_step)
    log.to_csv(out / "runlog.csv")
    if log.theta_final is not None:
        save_checkpoint(log.theta_final, out / "theta_final.ckpt")
    emit_plots([out / "runlog.csv"], out)
    print(f"run {log.status}: {len(log.rows)} rows, cost {log.total_cost}, output {out}")
    return 3 if log.status.startswith("Aborted") else 0


def cmd_rates(config_path) -> int:
    try:
        e = parse_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    grid = [
        SweepCell(p=p, q=q, eps0=eps0, alpha0=a0)
        for p in e.p_values
        for q in e.q_values
        for eps0 in e.eps0_values
        for a0 in e.alpha0_values
    ]
    if not grid:
        print("config error: [rates] grid is empty", file=sys.stderr)
        return 2
    out = Path(e.out_dir) / config_hash(e)
    out.mkdir(parents=True, exist_ok=True)
    from functools import partial

    base = SweepBase(
        build=partial(_sweep_build, e),
        cfg=run_config_from_experiment(e),
        fit_window=e.fit_window,
    )
    summary = sweep(grid, base, seeds=list(range(e.n_seeds)), out_csv=out / "summary.csv")
    if summary.failures:
        with open(out / "failures.csv", "w") as f:
            f.write("p,q,eps0,alpha0,seed,error\n")
            for s in summary.failures:
                f.write(
                    f"{s.cell.p},{s.cell.q},{s.cell.eps0},{s.cell.alpha0},{s.seed},{s.error}\n"
                )
    print(
        f"sweep done: {len(summary.rows)} runs, {len(summary.failures)} failures, "
        f"summary {out / 'summary.csv'}"
    )
    return 0


def _check(name, tol, measured, failures) -> None:
    ok = measured <= tol
    print(f"{'PASS' if ok else 'FAIL'}  {name}: measured {measured:.3e} (tolerance {tol:.1e})")
    if not ok:
        failures.append(name)


def cmd_check(level: str) -> int:
    """Oracle self-checks: FD agreement, closed-form hypergradient, CG vs
    dense solve, and the decay-regime table of the error average."""
    from .regularizers import ThetaParams

    failures: list[str] = []
    rng = np.random.default_rng(1)

    # schedule evaluation exactness
    poly = parse_schedule("poly:1:2")
    _check("schedule poly(1,2) at k=10", 1e-15, abs(poly.value(10) - 0.01), failures)

    # CG versus a dense direct solve
    a = rng.normal(size=(8, 8))
    spd = a @ a.T + 8 * np.eye(8)
    b = rng.normal(size=8)
    res = cg_solve(SpdOperator(apply=lambda v: spd @ v, dim=8), b, tol=1e-10, max_iters=64)
    _check("cg vs dense solve", 1e-8, float(np.linalg.norm(res.q - np.linalg.solve(spd, b))), failures)

    # closed-form hypergradient on the quadratic toy
    toy = QuadToyRegularizer()
    inst = ProblemInstance(op_kind=OpKind.IDENTITY, y=np.array([1.0]), x_star=np.array([0.0]))
    theta = ThetaParams.from_tensors([("log_weight", np.zeros(1))])
    out = inexact_hypergradient([(inst, 1.0)], toy, theta, eps=1e-8)
    _check("quad-toy hypergradient vs closed form", 1e-6, abs(out.z[0] + 0.25), failures)

    # FD agreement for the conv regularizers
    size = 8 if level == "fast" else 16
    for reg, tag in ((CRRRegularizer(), "crr"), (ICNNRegularizer(), "icnn")):
        theta_r = reg.init_theta((1, size, size), rng)
        x = rng.uniform(0.2, 0.8, size=(1, size, size))
        d = rng.normal(size=x.shape)
        d /= np.linalg.norm(d)
        t = 1e-6
        fd = (reg.value(x + t * d, theta_r) - reg.value(x - t * d, theta_r)) / (2 * t)
        an = float(np.vdot(reg.grad_x(x, theta_r), d))
        _check(f"{tag} grad_x vs FD", 1e-5, abs(an - fd) / max(abs(fd), 1e-12), failures)

    # hypergradient vs FD oracle on a tiny denoising task
    if level == "full":
        reg = CRRRegularizer(channels=(2, 3), kernel_size=3)
        theta_r = reg.init_theta((1, 8, 8), rng)
        imgs = synth_images(2, 8, rng)
        batch = [(i, 1.0) for i in make_denoising(imgs, 0.1, rng)]
        z = inexact_hypergradient(batch, reg, theta_r, eps=1e-8).z
        dirs = rng.normal(size=(3, theta_r.size))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        fd = fd_hypergradient_oracle(batch, reg, theta_r, fd_step=1e-5, directions=dirs)
        num = float(np.max(np.abs(fd - dirs @ z)))
        _check("hypergradient vs FD oracle", 1e-4 * max(1.0, float(np.abs(fd).max())), num, failures)

    # decay-regime table of the error average
    horizons = [10**3, 10**4, 10**5] + ([10**6] if level == "full" else [])
    rows = [
        ("accuracy-limited", 0.1, 0.6, -0.2),
        ("step-limited", 0.5, 0.75, -0.25),
    ]
    for name, p, q, expected in rows:
        step = parse_schedule(f"poly:1:{q}")
        acc = parse_schedule(f"poly:1:{p}")
        vals = [l_k_sum(step, acc, K) for K in horizons]
        slope = np.polyfit(np.log10(horizons), np.log10(vals), 1)[0]
        _check(f"L_K slope {name} (p={p}, q={q})", 0.1, abs(slope - expected) / abs(expected), failures)

    # strong-convexity certificate on the closed-form toy
    inst2 = ProblemInstance(op_kind=OpKind.IDENTITY, y=np.full(4, 1.0), x_star=np.zeros(4))
    sol = solve(inst2, toy, theta, inst2.y.copy(), 1e-6, SolverConfig())
    xhat = inst2.y / 2.0
    _check("lower-solver certificate (toy)", 1e-6, float(np.linalg.norm(sol.x_tilde - xhat)), failures)
    mu = strong_convexity_floor(inst2, toy, theta)
    _check("strong-convexity floor (toy, s=0)", 1e-12, abs(mu - 4.0), failures)

    print(f"{len(failures)} failures" if failures else "all checks passed")
    return 1 if failures else 0


def cmd_export(run_dir) -> int:
    run_dir = Path(run_dir)
    csv_path = run_dir / "runlog.csv"
    if not csv_path.exists():
        print(f"export error: {csv_path} not found", file=sys.stderr)
        return 2
    written = emit_plots([csv_path], run_dir)
    print(f"exported {len(written)} plots to {run_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bilev", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one training configuration")
    p_run.add_argument("--config", required=True)
    p_rates = sub.add_parser("rates", help="run a (p, q) sweep and emit the summary table")
    p_rates.add_argument("--config", required=True)
    p_check = sub.add_parser("check", help="run the oracle self-check suite")
    p_check.add_argument("--level", choices=("fast", "full"), default="fast")
    p_export = sub.add_parser("export", help="re-emit plots from a finished run directory")
    p_export.add_argument("--run-dir", required=True)
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "rates":
        return cmd_rates(args.config)
    if args.command == "check":
        return cmd_check(args.level)
    return cmd_export(args.run_dir)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

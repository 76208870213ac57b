"""TRSVR, its parameter calculator, and the baseline optimizers.

Epoch conventions:

* nested-loop methods (TRSVR, SVRG, SARAH) count one epoch per outer loop;
* single-loop methods (SGD, Adam, SAGA, TRish, classic TR) count one epoch
  per effective pass, i.e. per ``N`` oracle evaluations including
  Hessian-vector probes.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimator import (
    EvalCounter,
    SagaTable,
    SarahState,
    SvrgReference,
    sample_minibatch,
    sarah_step,
    svrg_parts,
)
from .metrics import Recorder, Trajectory
from .tr_solver import (
    HessianMode,
    SolverError,
    TrSubproblem,
    build_hessian,
    radius,
    steihaug_cg,
)


class Method(str, enum.Enum):
    TRSVR = "trsvr"
    SGD = "sgd"
    ADAM = "adam"
    SVRG = "svrg"
    SAGA = "saga"
    SARAH = "sarah"
    CLASSIC_TR = "classic_tr"
    TRISH = "trish"


class ConfigError(ValueError):
    pass


@dataclass
class TrsvrConfig:
    alpha: float
    batch_size: int
    inner_len: int
    hessian_mode: HessianMode = HessianMode.ESTH
    cg_max_iters: int = 200
    epochs: int = 10
    seed: int = 0
    fd_eps: float = 1e-6
    cg_tol_abs: float = 1e-8
    cg_tol_rel: float = 0.01
    record_every: int | None = None
    check_cauchy_bound: bool = True
    method: str = field(default=Method.TRSVR.value, init=False)

    def __post_init__(self):
        self.hessian_mode = HessianMode(self.hessian_mode)

    def validate(self, n_samples: int) -> None:
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not 1 <= self.batch_size <= n_samples:
            raise ConfigError(f"batch_size must lie in [1, {n_samples}]")
        if self.inner_len < 1:
            raise ConfigError("inner_len must be >= 1")
        if self.cg_max_iters < 1:
            raise ConfigError("cg_max_iters must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hessian_mode"] = self.hessian_mode.value
        return d


@dataclass
class BaselineConfig:
    method: Method
    lr: float | None = None
    alpha: float | None = None
    batch_size: int = 1
    inner_len: int | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    delta0: float = 1.0
    delta_max: float | None = None
    eta_accept: float = 1e-4
    gamma1: float | None = None
    gamma2: float | None = None
    hessian_mode: HessianMode = HessianMode.ESTH
    cg_max_iters: int = 500
    fd_eps: float = 1e-6
    cg_tol_abs: float = 1e-8
    cg_tol_rel: float = 0.01
    epochs: float = 10
    max_iters: int | None = None
    grad_tol_sq: float = 0.0
    seed: int = 0
    record_every: int | None = None

    def __post_init__(self):
        self.method = Method(self.method)
        self.hessian_mode = HessianMode(self.hessian_mode)

    def validate(self, n_samples: int) -> None:
        m = self.method
        if m is Method.TRSVR:
            raise ConfigError("use TrsvrConfig for TRSVR")
        if m in (Method.SGD, Method.ADAM, Method.SVRG, Method.SAGA, Method.SARAH):
            if self.lr is None or not self.lr > 0:
                raise ConfigError(f"{m.value} needs a positive lr")
        if not 1 <= self.batch_size <= n_samples:
            raise ConfigError(f"batch_size must lie in [1, {n_samples}]")
        if m is Method.SAGA and self.batch_size != 1:
            raise ConfigError("SAGA is single-sample (batch_size=1)")
        if self.inner_len is not None and self.inner_len < 1:
            raise ConfigError("inner_len must be >= 1")
        if m is Method.CLASSIC_TR and not self.delta0 > 0:
            raise ConfigError("classic TR needs delta0 > 0")
        if m is Method.TRISH:
            if self.alpha is None or not self.alpha > 0:
                raise ConfigError("TRish needs a positive alpha")
            if self.gamma1 is None or self.gamma2 is None or not self.gamma1 > self.gamma2 > 0:
                raise ConfigError("TRish needs gamma1 > gamma2 > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        d["hessian_mode"] = self.hessian_mode.value
        return d


def _cg_tol(cfg, g):
    return min(cfg.cg_tol_abs, cfg.cg_tol_rel * float(np.linalg.norm(g)))


def _start(problem, cfg, x0, recorder, method):
    cfg.validate(problem.n_samples)
    x = np.array(x0, dtype=np.float64)
    if x.shape != (problem.dim,) or not np.all(np.isfinite(x)):
        raise ConfigError("x0 must be a finite vector of the problem dimension")
    counter = EvalCounter(problem.n_samples)
    rec = recorder if recorder is not None else Recorder(problem, method=method, seed=cfg.seed)
    rec.restart_clock()
    rng = np.random.default_rng(cfg.seed)
    return x, counter, rec, rng


def _finish(method, rec, x, counter, diverged, **extra):
    return Trajectory(method, rec.records, x, counter, diverged or rec.diverged, **extra)


# ---------------------------------------------------------------------------
# TRSVR
# ---------------------------------------------------------------------------

def trsvr_run(problem, config: TrsvrConfig, x0, recorder: Recorder | None = None) -> Trajectory:
    """Trust-region steps with radius ``alpha * ||g_bar||`` over SVRG gradients.

    Every inner step is taken (no acceptance test). Records are written at
    every outer boundary and every ``record_every`` inner steps.
    """
    cfg = config
    x, counter, rec, rng = _start(problem, cfg, x0, recorder, f"trsvr-{cfg.hessian_mode.value}")
    N, b, S = problem.n_samples, cfg.batch_size, cfg.inner_len
    every = cfg.record_every or math.ceil(S / 10)
    stationary: list[tuple[int, int]] = []
    outer_log: list[dict] = []
    violations = 0
    diverged = False
    rec.record(0.0, counter, x)
    for k in range(cfg.epochs):
        before = counter.snapshot()
        cg_total = 0
        ref = SvrgReference.anchor(problem, x, counter)
        for s in range(S):
            batch = sample_minibatch(N, b, rng)
            sub = problem.subsample(batch.indices)
            counter.add_components(2 * b)
            g_bar, g_tilde = svrg_parts(sub, x, ref)
            delta = radius(cfg.alpha, g_bar)
            if delta == 0.0:
                stationary.append((k, s))
            H = build_hessian(cfg.hessian_mode, sub, x, g_tilde, cfg.fd_eps, counter)
            try:
                step = steihaug_cg(TrSubproblem(g_bar, H, delta, cfg.cg_max_iters, _cg_tol(cfg, g_bar)))
            except SolverError:
                diverged = True
                break
            cg_total += step.cg_iters
            if cfg.check_cauchy_bound and step.cg_iters and not cauchy_bound_holds(step, g_bar, delta):
                violations += 1
            x = x + step.step
            if not np.all(np.isfinite(x)):
                diverged = True
                break
            if (s + 1) % every == 0 and s + 1 < S:
                rec.record(k + (s + 1) / S, counter, x)
                if rec.diverged:
                    break
        after = counter.snapshot()
        outer_log.append({
            "outer": k,
            "component_grad_evals": after[0] - before[0],
            "full_grad_evals": after[1] - before[1],
            "hvp_probe_evals": after[2] - before[2],
            "cg_iters": cg_total,
        })
        if diverged or rec.diverged:
            rec.record(k + 1, counter, x)
            break
        rec.record(k + 1, counter, x)
    if violations:
        warnings.warn(f"Cauchy-decrease bound violated on {violations} inner steps", RuntimeWarning)
    return _finish(rec.method, rec, x, counter, diverged, stationary_events=stationary,
                   cauchy_bound_violations=violations, outer_log=outer_log)


def cauchy_bound_holds(step, g_bar, delta, h_norm: float | None = None, atol: float = 1e-10) -> bool:
    """Check ``m(step) - m(0) <= -||g|| delta + 0.5 ||H|| delta^2``.

    Without ``h_norm`` the largest Rayleigh quotient seen by the solver is
    used, a lower bound on ``||H||`` that makes the check at least as strict.
    """
    kappa = step.max_curvature if h_norm is None else h_norm
    if not math.isfinite(kappa):
        kappa = 0.0
    gnorm = float(np.linalg.norm(g_bar))
    bound = -gnorm * delta + 0.5 * max(kappa, 0.0) * delta * delta
    slack = atol + 1e-12 * (gnorm * delta + abs(kappa) * delta * delta)
    return step.model_decrease <= bound + slack


# ---------------------------------------------------------------------------
# Theory calculator
# ---------------------------------------------------------------------------

@dataclass
class TheoryParams:
    N: int
    mu0: float
    mu1: float
    gamma_exp: float
    L: float
    kappa_H: float
    derived_alpha: float
    derived_b: int
    S_max: int
    z_value: float
    lambda_schedule: np.ndarray
    """``lambda_schedule[s]`` for ``s = 0..S``; the last entry is 0."""
    Lambda_min: float
    Lambda_min_lower_bound: float
    v0_estimate: float
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def theorem_params(N: int, gamma_exp: float, mu0: float, mu1: float, L: float, kappa_H: float,
                   inner_len: int | None = None, max_schedule: int = 10**6) -> TheoryParams:
    """Step, batch and inner-loop lengths that the convergence theorem prescribes.

    Hypothesis violations (``alpha`` outside ``(0, 1]``, ``S_max < 1``) are
    listed in ``violations`` rather than clipped. ``v0_estimate`` is reported
    as computed; a nonpositive value makes the rate bound vacuous but is not
    treated as an error.
    ``inner_len`` overrides the schedule length, which otherwise is ``S_max``.
    """
    if N < 1 or L <= 0 or kappa_H < 0:
        raise ValueError("need N >= 1, L > 0, kappa_H >= 0")
    for name, v in (("gamma_exp", gamma_exp), ("mu1", mu1)):
        if not 0 < v <= 1:
            raise ValueError(f"{name} must lie in (0, 1]")
    if not 0 <= mu0 <= 1:
        raise ValueError("mu0 must lie in [0, 1]")
    violations = []
    Ng = N**gamma_exp
    b = math.ceil(mu1 * Ng * (1 - 1e-12))
    LH = L + 2 * kappa_H
    alpha = mu0 * b / (2 * LH * Ng)
    if not 0 < alpha <= 1:
        violations.append(f"alpha={alpha:g} outside (0, 1]")
    if mu0 > 0:
        S_max = math.floor(N ** (1.5 * gamma_exp) / (mu0 * (b + mu0 * L**2 * b / (2 * LH))))
    else:
        S_max = 0
    if S_max < 1:
        violations.append(f"S_max={S_max} < 1")
    z = 2 * LH / N ** (gamma_exp / 2)
    S = S_max if inner_len is None else int(inner_len)
    if S > max_schedule:
        raise ValueError(f"schedule length {S} exceeds max_schedule; pass inner_len")
    lam = np.zeros(max(S, 0) + 1)
    if alpha > 0:
        c = alpha**2 * L**2 * LH / (2 * b)
        growth = 1 + alpha * z + (alpha**2 + alpha / z) * L**2 / b
        for s in range(S - 1, -1, -1):
            lam[s] = c + lam[s + 1] * growth
        Lam = alpha / 4 - lam[1:] * (1 + 1 / (alpha * z)) * alpha**2 if S >= 1 else np.array([alpha / 4])
        Lambda_min = float(Lam.min())
    else:
        Lambda_min = 0.0
    v0 = 0.25 - mu0 * L**2 * (math.e - 1) * (mu0 * b + 1) / (16 * LH**2)
    lower = mu0 * b * v0 / (2 * (L + kappa_H) * Ng)
    return TheoryParams(N, mu0, mu1, gamma_exp, L, kappa_H, alpha, b, S_max, z, lam,
                        Lambda_min, lower, v0, tuple(violations))


# ---------------------------------------------------------------------------
# First-order baselines
# ---------------------------------------------------------------------------

def _single_loop(problem, cfg, x0, recorder, name, step_fn, setup=None):
    """Shared driver: ``step_fn(x, state, counter, rng) -> x_new`` until the pass budget is spent."""
    x, counter, rec, rng = _start(problem, cfg, x0, recorder, name)
    state = setup(x, counter) if setup is not None else None
    every = cfg.record_every or max(1, math.ceil(problem.n_samples / cfg.batch_size / 10))
    rec.record(0.0, counter, x)
    diverged = False
    it = 0
    max_iters = cfg.max_iters if cfg.max_iters is not None else math.inf
    while counter.effective_passes < cfg.epochs and it < max_iters:
        x = step_fn(x, state, counter, rng)
        it += 1
        if not np.all(np.isfinite(x)):
            diverged = True
            break
        if it % every == 0:
            rec.record(counter.effective_passes, counter, x)
            if rec.diverged:
                break
    rec.record(counter.effective_passes, counter, x)
    return _finish(name, rec, x, counter, diverged)


def sgd_momentum_run(problem, config: BaselineConfig, x0, recorder=None) -> Trajectory:
    """Heavy-ball SGD: ``v <- mu v + g``, ``x <- x - lr v``."""
    cfg = config
    N, b = problem.n_samples, cfg.batch_size

    def setup(x, counter):
        return {"v": np.zeros_like(x)}

    def step(x, st, counter, rng):
        idx = sample_minibatch(N, b, rng).indices
        counter.add_components(b)
        st["v"] = cfg.momentum * st["v"] + problem.subsample(idx).gradient(x)
        return x - cfg.lr * st["v"]

    return _single_loop(problem, cfg, x0, recorder, "sgd", step, setup)


def adam_run(problem, config: BaselineConfig, x0, recorder=None) -> Trajectory:
    """Adam with bias-corrected moments."""
    cfg = config
    N, b = problem.n_samples, cfg.batch_size

    def setup(x, counter):
        return {"m": np.zeros_like(x), "v": np.zeros_like(x), "t": 0}

    def step(x, st, counter, rng):
        idx = sample_minibatch(N, b, rng).indices
        counter.add_components(b)
        g = problem.subsample(idx).gradient(x)
        st["t"] += 1
        t = st["t"]
        st["m"] = cfg.beta1 * st["m"] + (1 - cfg.beta1) * g
        st["v"] = cfg.beta2 * st["v"] + (1 - cfg.beta2) * g * g
        m_hat = st["m"] / (1 - cfg.beta1**t)
        v_hat = st["v"] / (1 - cfg.beta2**t)
        return x - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)

    return _single_loop(problem, cfg, x0, recorder, "adam", step, setup)


def trish_radius(alpha: float, gamma1: float, gamma2: float, g_norm: float) -> float:
    """Three-zone radius; both zone boundaries belong to the middle zone."""
    if g_norm < 1.0 / gamma1:
        return alpha * gamma1 * g_norm
    if g_norm <= 1.0 / gamma2:
        return alpha
    return alpha * gamma2 * g_norm


def trish_run(problem, config: BaselineConfig, x0, recorder=None) -> Trajectory:
    """Fully stochastic trust region with the three-zone radius rule; every step is taken."""
    cfg = config
    N, b = problem.n_samples, cfg.batch_size

    def step(x, st, counter, rng):
        idx = sample_minibatch(N, b, rng).indices
        sub = problem.subsample(idx)
        counter.add_components(b)
        g = sub.gradient(x)
        delta = trish_radius(cfg.alpha, cfg.gamma1, cfg.gamma2, float(np.linalg.norm(g)))
        H = build_hessian(cfg.hessian_mode, sub, x, g, cfg.fd_eps, counter)
        res = steihaug_cg(TrSubproblem(g, H, delta, cfg.cg_max_iters, _cg_tol(cfg, g)))
        return x + res.step

    return _single_loop(problem, cfg, x0, recorder, "trish", step)


def classic_tr_run(problem, config: BaselineConfig, x0, recorder=None) -> Trajectory:
    """Deterministic trust region with ratio test on full gradients and function values."""
    cfg = config
    x, counter, rec, rng = _start(problem, cfg, x0, recorder, "classic_tr")
    delta = cfg.delta0
    delta_max = cfg.delta_max if cfg.delta_max is not None else 10.0 * cfg.delta0
    max_iters = cfg.max_iters if cfg.max_iters is not None else math.inf
    rec.record(0.0, counter, x)
    counter.add_full()
    g = problem.gradient(x)
    f = problem.value(x)
    it = 0
    diverged = False
    radii = [delta]
    while counter.effective_passes < cfg.epochs and it < max_iters:
        if float(g @ g) <= cfg.grad_tol_sq:
            break
        H = build_hessian(cfg.hessian_mode, problem, x, g, cfg.fd_eps, counter)
        step = steihaug_cg(TrSubproblem(g, H, delta, cfg.cg_max_iters, _cg_tol(cfg, g)))
        it += 1
        pred = -step.model_decrease
        if pred <= 0.0:
            if float(g @ g) > 0:
                diverged = True
            break
        x_try = x + step.step
        f_try = problem.value(x_try)
        if pred <= 1e-14 * max(1.0, abs(f)):
            rho = 1.0
        else:
            rho = (f - f_try) / pred
        if rho > cfg.eta_accept:
            x, f = x_try, f_try
            counter.add_full()
            g = problem.gradient(x)
        if rho < 0.25:
            delta = delta / 4.0
        elif rho > 0.75 and step.hit_boundary:
            delta = min(2.0 * delta, delta_max)
        radii.append(delta)
        if not np.all(np.isfinite(x)):
            diverged = True
            break
        if cfg.record_every is None or it % cfg.record_every == 0:
            rec.record(counter.effective_passes, counter, x)
    rec.record(counter.effective_passes, counter, x)
    traj = _finish("classic_tr", rec, x, counter, diverged)
    traj.outer_log = [{"radius": r} for r in radii]
    return traj


def vr_descent_run(problem, config: BaselineConfig, x0, recorder=None) -> Trajectory:
    """Plain descent on SVRG, SARAH (nested loops) or SAGA (single loop) estimates."""
    cfg = config
    if cfg.method is Method.SAGA:
        N = problem.n_samples

        def setup(x, counter):
            return SagaTable(problem, x, counter)

        def step(x, table, counter, rng):
            i = int(rng.integers(0, N))
            return x - cfg.lr * table.step(i, x, counter)

        return _single_loop(problem, cfg, x0, recorder, "saga", step, setup)
    if cfg.method not in (Method.SVRG, Method.SARAH):
        raise ConfigError(f"{cfg.method.value} is not a variance-reduced descent method")

    name = cfg.method.value
    x, counter, rec, rng = _start(problem, cfg, x0, recorder, name)
    N, b = problem.n_samples, cfg.batch_size
    S = cfg.inner_len or math.ceil(N / b)
    every = cfg.record_every or math.ceil(S / 10)
    diverged = False
    rec.record(0.0, counter, x)
    for k in range(int(cfg.epochs)):
        if cfg.method is Method.SVRG:
            ref = SvrgReference.anchor(problem, x, counter)
        else:
            state = SarahState.anchor(problem, x, counter)
        for s in range(S):
            batch = sample_minibatch(N, b, rng)
            if cfg.method is Method.SVRG:
                counter.add_components(2 * b)
                est, _ = svrg_parts(problem.subsample(batch.indices), x, ref)
            else:
                est, state = sarah_step(problem, batch, x, state, counter)
            x = x - cfg.lr * est
            if not np.all(np.isfinite(x)):
                diverged = True
                break
            if (s + 1) % every == 0 and s + 1 < S:
                rec.record(k + (s + 1) / S, counter, x)
                if rec.diverged:
                    break
        rec.record(k + 1, counter, x)
        if diverged or rec.diverged:
            break
    return _finish(name, rec, x, counter, diverged)


def run_method(problem, config, x0, recorder=None) -> Trajectory:
    """Dispatch on the config's method."""
    if isinstance(config, TrsvrConfig):
        return trsvr_run(problem, config, x0, recorder)
    m = config.method
    if m is Method.SGD:
        return sgd_momentum_run(problem, config, x0, recorder)
    if m is Method.ADAM:
        return adam_run(problem, config, x0, recorder)
    if m is Method.CLASSIC_TR:
        return classic_tr_run(problem, config, x0, recorder)
    if m is Method.TRISH:
        return trish_run(problem, config, x0, recorder)
    return vr_descent_run(problem, config, x0, recorder)

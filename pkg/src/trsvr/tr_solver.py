"""Trust-region subproblem machinery.

Hessian operators are matrix-free: anything with an ``apply(v)`` method and a
``probe_cost`` (component evaluations charged per application) will do.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .estimator import EvalCounter


class HessianMode(str, enum.Enum):
    IDENTITY = "id"
    ESTH = "esth"
    EXACT = "exact"


class Termination(str, enum.Enum):
    RESIDUAL_TOL = "residual_tol"
    BOUNDARY = "boundary"
    NEGATIVE_CURVATURE = "negative_curvature"
    MAX_ITERS = "max_iters"


class SolverError(FloatingPointError):
    """Raised when the Hessian operator returns non-finite values."""


class _CountingOperator:
    probe_cost = 0
    counter: EvalCounter | None = None

    def apply(self, v):
        if self.counter is not None and self.probe_cost:
            self.counter.add_probes(self.probe_cost)
        return self._apply(np.asarray(v, dtype=np.float64))

    __call__ = apply


class IdentityHessian(_CountingOperator):
    kind = HessianMode.IDENTITY
    norm = 1.0

    def _apply(self, v):
        return v.copy()


class DenseHessian(_CountingOperator):
    """Explicit symmetric matrix; mostly for tests and small problems."""

    kind = HessianMode.EXACT

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)

    @property
    def norm(self):
        return float(np.linalg.norm(self.matrix, 2))

    def _apply(self, v):
        return self.matrix @ v


class ExactHessian(_CountingOperator):
    """Closed-form Hessian of ``problem`` (a full problem or a mini-batch view) at ``w``."""

    kind = HessianMode.EXACT

    def __init__(self, problem, w, counter: EvalCounter | None = None):
        self.problem = problem
        self.w = np.asarray(w, dtype=np.float64)
        self.counter = counter
        self.probe_cost = problem.n_samples

    def _apply(self, v):
        return self.problem.hvp(self.w, v)


class EstimatedHessian(_CountingOperator):
    """Forward-difference Hessian of ``problem``'s gradient at ``w``.

    ``base_gradient`` (the gradient at ``w`` on the same samples) is reused when
    given, so each application costs one extra gradient over the samples.
    """

    kind = HessianMode.ESTH

    def __init__(self, problem, w, base_gradient=None, eps0: float = 1e-6,
                 counter: EvalCounter | None = None):
        self.problem = problem
        self.w = np.asarray(w, dtype=np.float64)
        self.base_gradient = problem.gradient(self.w) if base_gradient is None else base_gradient
        self.eps = eps0 * (1.0 + float(np.linalg.norm(self.w)))
        self.counter = counter
        self.probe_cost = problem.n_samples

    def _apply(self, v):
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return np.zeros_like(v)
        shifted = self.problem.gradient(self.w + (self.eps / nv) * v)
        return (shifted - self.base_gradient) * (nv / self.eps)


def finite_diff_hvp(problem, w, v, eps0: float = 1e-6, batch=None, base_gradient=None,
                    counter: EvalCounter | None = None):
    """Forward-difference Hessian-vector product of the mini-batch gradient.

    Both gradient evaluations use the same samples (``batch`` if given).
    The probe direction is normalized, the step is ``eps0 * (1 + ||w||)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        raise ValueError("finite_diff_hvp needs a nonzero direction")
    if batch is not None:
        problem = problem.subsample(getattr(batch, "indices", batch))
    op = EstimatedHessian(problem, w, base_gradient, eps0, counter)
    return op.apply(v)


def operator_norm(op, dim: int, iters: int = 30, seed: int = 0) -> float:
    """Power-iteration estimate of ``||op||`` (uses ``op._apply``, so no probes are charged)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        hv = op._apply(v)
        est = float(np.linalg.norm(hv))
        if est == 0.0:
            return 0.0
        v = hv / est
    return est


def build_hessian(mode, problem, w, base_gradient=None, eps0: float = 1e-6,
                  counter: EvalCounter | None = None):
    mode = HessianMode(mode)
    if mode is HessianMode.IDENTITY:
        return IdentityHessian()
    if mode is HessianMode.EXACT:
        return ExactHessian(problem, w, counter)
    return EstimatedHessian(problem, w, base_gradient, eps0, counter)


def default_cg_tol(g_norm: float) -> float:
    return min(1e-8, 0.01 * g_norm)


@dataclass
class TrSubproblem:
    g_bar: np.ndarray
    H: object
    radius: float
    cg_max_iters: int = 200
    cg_tol: float | None = None

    def __post_init__(self):
        self.g_bar = np.asarray(self.g_bar, dtype=np.float64)
        if self.cg_tol is None:
            self.cg_tol = default_cg_tol(float(np.linalg.norm(self.g_bar)))


@dataclass
class TrStep:
    step: np.ndarray
    model_decrease: float
    hit_boundary: bool
    cg_iters: int
    termination: Termination
    max_curvature: float = -math.inf
    """Largest Rayleigh quotient of H seen along the CG directions (a lower bound on ||H||)."""


def radius(alpha: float, g_bar) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha * float(np.linalg.norm(g_bar))


def model_value(sub: TrSubproblem, p) -> float:
    p = np.asarray(p, dtype=np.float64)
    return float(sub.g_bar @ p + 0.5 * (p @ sub.H.apply(p)))


def cauchy_point(sub: TrSubproblem) -> TrStep:
    g = sub.g_bar
    gnorm = _robust_norm(g)
    if gnorm == 0.0:
        raise ValueError("Cauchy point undefined for a zero gradient")
    ghat = g / gnorm
    curv = float(ghat @ sub.H.apply(ghat))
    delta = sub.radius
    tau = 1.0 if curv <= 0 else min(1.0, gnorm / (delta * curv))
    p = (-tau * delta) * ghat
    return TrStep(p, model_value(sub, p), tau == 1.0,
                  1, Termination.BOUNDARY if tau == 1.0 else Termination.RESIDUAL_TOL, curv)


def _to_boundary(p, d, delta):
    """Positive root tau of ||p + tau d|| = delta, for ||p|| <= delta.

    Works on the unit direction and never squares ``delta``, so it stays
    finite for radii near the overflow threshold.
    """
    dn = _robust_norm(d)
    u = d / dn
    pu = float(p @ u)
    pn = min(_robust_norm(p), delta)
    q = math.sqrt(delta - pn) * math.sqrt(delta + pn)
    h = math.hypot(pu, q)
    if pu > 0:
        root = q * (q / (pu + h)) if pu + h > 0 else 0.0
    else:
        root = h - pu
    return root / dn


def _robust_norm(x) -> float:
    m = float(np.max(np.abs(x)))
    return m * float(np.linalg.norm(x / m)) if m > 0 and math.isfinite(m) else m


def steihaug_cg(sub: TrSubproblem, callback=None) -> TrStep:
    """Steihaug-Toint truncated conjugate gradient from ``p = 0``.

    ``callback(p)`` is called on every accepted iterate, including the final
    step. The model decrease is tracked through the CG recurrences, so the
    operator is applied exactly once per iteration.

    The iteration runs on ``g / ||g||`` with radius and tolerance scaled to
    match (the solution scales linearly), which keeps tiny or huge gradients
    away from under- and overflow.
    """
    g = sub.g_bar
    delta = float(sub.radius)
    dim = g.shape[0]
    if delta <= 0.0 or not np.any(g):
        return TrStep(np.zeros(dim), 0.0, False, 0, Termination.RESIDUAL_TOL)
    if sub.cg_max_iters < 1:
        raise ValueError("cg_max_iters must be >= 1")
    scale = _robust_norm(g)
    if not math.isfinite(scale):
        raise SolverError("non-finite gradient")
    H = sub.H
    if callback is not None:
        user_cb = callback

        def callback(q):
            user_cb(scale * q)

    r = g / scale
    delta = delta / scale
    p = np.zeros(dim)
    Hp = np.zeros(dim)
    d = -r
    rr = float(r @ r)
    tol2 = (float(sub.cg_tol) / scale) ** 2
    max_curv = -math.inf
    termination = Termination.MAX_ITERS
    iters = 0
    hit = False
    while iters < sub.cg_max_iters:
        Hd = H.apply(d)
        iters += 1
        if not np.all(np.isfinite(Hd)):
            raise SolverError("Hessian operator produced non-finite values")
        dHd = float(d @ Hd)
        dd = float(d @ d)
        max_curv = max(max_curv, dHd / dd)
        step_len = rr / dHd if dHd > 0.0 else math.inf
        if dHd <= 0.0 or not math.isfinite(step_len):
            tau = _to_boundary(p, d, delta)
            termination = Termination.NEGATIVE_CURVATURE if dHd <= 0.0 else Termination.BOUNDARY
            hit = True
            p, Hp = p + tau * d, Hp + tau * Hd
            break
        p_next = p + step_len * d
        if _robust_norm(p_next) >= delta:
            tau = _to_boundary(p, d, delta)
            termination, hit = Termination.BOUNDARY, True
            p, Hp = p + tau * d, Hp + tau * Hd
            break
        p = p_next
        Hp = Hp + step_len * Hd
        r = r + step_len * Hd
        rr_new = float(r @ r)
        if callback is not None:
            callback(p)
        if rr_new <= tol2:
            termination = Termination.RESIDUAL_TOL
            break
        d = -r + (rr_new / rr) * d
        rr = rr_new

    pnorm = _robust_norm(p)
    if pnorm > delta:
        p = p * (delta / pnorm)
        Hp = Hp * (delta / pnorm)
    if hit and callback is not None:
        callback(p)
    decrease = float((g / scale) @ p + 0.5 * (p @ Hp))
    if not (math.isfinite(decrease) and np.all(np.isfinite(p))):
        raise SolverError("radius too large relative to the gradient scale")
    return TrStep(scale * p, scale * (scale * decrease), hit, iters, termination, max_curv)

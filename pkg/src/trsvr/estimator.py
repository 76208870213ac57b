"""Mini-batch sampling and gradient estimators with evaluation accounting.

All estimators take a finite-sum ``problem`` (see :mod:`trsvr.problem`) and
charge the component-gradient evaluations they perform to an
:class:`EvalCounter`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass
class EvalCounter:
    """Running totals of oracle calls for one optimizer run."""

    n_samples: int
    component_grad_evals: int = 0
    full_grad_evals: int = 0
    hvp_probe_evals: int = 0

    def add_components(self, count: int) -> None:
        self.component_grad_evals += int(count)

    def add_full(self) -> None:
        self.full_grad_evals += 1
        self.component_grad_evals += self.n_samples

    def add_probes(self, count: int) -> None:
        self.hvp_probe_evals += int(count)

    @property
    def effective_passes(self) -> float:
        return (self.component_grad_evals + self.hvp_probe_evals) / self.n_samples

    def snapshot(self) -> tuple[int, int, int]:
        return (self.component_grad_evals, self.full_grad_evals, self.hvp_probe_evals)


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray

    @property
    def b(self) -> int:
        return len(self.indices)

    def __len__(self):
        return len(self.indices)


def sample_minibatch(n_samples: int, batch_size: int, rng: np.random.Generator) -> MiniBatch:
    """Draw ``batch_size`` indices i.i.d. uniform on ``[0, n_samples)``, with replacement."""
    if not 1 <= batch_size <= n_samples:
        raise ValueError(f"batch size {batch_size} outside [1, {n_samples}]")
    return MiniBatch(rng.integers(0, n_samples, size=batch_size))


def _charge(counter, count):
    if counter is not None:
        counter.add_components(count)


def minibatch_gradient(problem, batch: MiniBatch, w, counter: EvalCounter | None = None):
    """Average of the component gradients over ``batch``."""
    _charge(counter, batch.b)
    return problem.subsample(batch.indices).gradient(w)


@dataclass
class SvrgReference:
    """Outer-loop anchor ``x_ref`` and the full gradient there."""

    x_ref: np.ndarray
    g_ref: np.ndarray

    @classmethod
    def anchor(cls, problem, x, counter: EvalCounter | None = None) -> "SvrgReference":
        x = np.array(x, dtype=np.float64)
        if counter is not None:
            counter.add_full()
        return cls(x, problem.gradient(x))


def svrg_parts(sub, w, ref: SvrgReference):
    """Return ``(g_bar, g_tilde)`` for an already-subsampled problem ``sub``.

    ``g_tilde`` is the plain mini-batch gradient at ``w``; ``g_bar`` is the
    variance-reduced estimate. When ``w`` equals the anchor the two batch terms
    cancel exactly and ``g_bar`` is the anchor gradient bit for bit.
    """
    g_tilde = sub.gradient(w)
    g_bar = (g_tilde - sub.gradient(ref.x_ref)) + ref.g_ref
    return g_bar, g_tilde


def svrg_gradient(problem, batch: MiniBatch, w, ref: SvrgReference, counter: EvalCounter | None = None):
    _charge(counter, 2 * batch.b)
    g_bar, _ = svrg_parts(problem.subsample(batch.indices), w, ref)
    return g_bar


class SagaTable:
    """Scalar-per-sample SAGA memory for logistic-type problems.

    Stores the loss derivative ``r_i`` with respect to the margin at the last
    visit of sample ``i``; the stored data-term gradient is ``r_i * x_i``.
    The regularizer gradient is added exactly at each step.
    """

    def __init__(self, problem, w, counter: EvalCounter | None = None, refresh_every: int | None = None):
        self.problem = problem
        w = np.asarray(w, dtype=np.float64)
        self.residuals = problem.residuals(problem.margins(w))
        self.running_avg = (problem.data.X.T @ self.residuals) / problem.n_samples
        self.refresh_every = refresh_every or problem.n_samples
        self._updates = 0
        _charge(counter, problem.n_samples)

    def recompute_average(self) -> None:
        self.running_avg = (self.problem.data.X.T @ self.residuals) / self.problem.n_samples

    def step(self, i: int, w, counter: EvalCounter | None = None):
        prob = self.problem
        if not 0 <= i < prob.n_samples:
            raise IndexError(f"sample index {i} out of range")
        X = prob.data.X
        lo, hi = X.indptr[i], X.indptr[i + 1]
        cols, vals = X.indices[lo:hi], X.data[lo:hi]
        yi = prob.data.y[i]
        r_new = -yi * expit(-yi * float(vals @ w[cols]))
        delta = r_new - self.residuals[i]
        est = self.running_avg + prob.reg_gradient(w)
        est[cols] += delta * vals
        self.residuals[i] = r_new
        self.running_avg[cols] += (delta / prob.n_samples) * vals
        self._updates += 1
        if self._updates % self.refresh_every == 0:
            self.recompute_average()
        _charge(counter, 1)
        return est


def saga_step_gradient(problem, i: int, w, table: SagaTable, counter: EvalCounter | None = None):
    """SAGA estimate at ``w`` using sample ``i``; updates ``table`` in place."""
    return table.step(i, np.asarray(w, dtype=np.float64), counter), table


@dataclass
class SarahState:
    v: np.ndarray
    x_prev: np.ndarray

    @classmethod
    def anchor(cls, problem, x, counter: EvalCounter | None = None) -> "SarahState":
        x = np.array(x, dtype=np.float64)
        if counter is not None:
            counter.add_full()
        return cls(problem.gradient(x), x)


def sarah_step(problem, batch: MiniBatch, w, state: SarahState, counter: EvalCounter | None = None):
    """Recursive SARAH update; both batch gradients use the same ``batch``."""
    _charge(counter, 2 * batch.b)
    sub = problem.subsample(batch.indices)
    w = np.array(w, dtype=np.float64)
    v_new = sub.gradient(w) - sub.gradient(state.x_prev) + state.v
    state.v = v_new
    state.x_prev = w
    return v_new, state

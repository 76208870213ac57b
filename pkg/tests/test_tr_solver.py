import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import exact_tr_solution, model, random_subproblem
from trsvr.estimator import EvalCounter, MiniBatch
from trsvr.problem import Dataset, LogisticProblem, ObjectiveSpec, exact_hvp
from trsvr.tr_solver import (
    DenseHessian,
    EstimatedHessian,
    ExactHessian,
    HessianMode,
    IdentityHessian,
    SolverError,
    Termination,
    TrSubproblem,
    build_hessian,
    cauchy_point,
    default_cg_tol,
    finite_diff_hvp,
    model_value,
    operator_norm,
    radius,
    steihaug_cg,
)


def logistic(rng, n, d, spec=None):
    X = rng.standard_normal((n, d))
    return LogisticProblem(spec or ObjectiveSpec.nonconvex(), Dataset(sp.csr_matrix(X), rng.choice([-1.0, 1.0], n)))


# --- radius and model -------------------------------------------------------------

def test_radius_examples():
    assert radius(0.06, np.array([1.0, 0.0])) == 0.06
    assert radius(0.06, np.zeros(3)) == 0.0
    assert radius(0.5, np.array([3.0, 4.0])) == 2.5
    with pytest.raises(ValueError):
        radius(0.0, np.ones(2))


def test_model_value_examples():
    sub = TrSubproblem(np.array([1.0, 0.0]), IdentityHessian(), 1.0)
    assert model_value(sub, np.zeros(2)) == 0.0
    assert model_value(sub, np.array([-1.0, 0.0])) == -0.5


def test_model_value_is_parabola():
    rng = np.random.default_rng(0)
    g, H, delta = random_subproblem(rng, 6)
    sub = TrSubproblem(g, DenseHessian(H), delta)
    p = rng.standard_normal(6)
    ts = np.array([0.0, 0.7, -1.3])
    coef = np.polyfit(ts, [model_value(sub, t * p) for t in ts], 2)
    for t in (2.5, -4.0):
        assert model_value(sub, t * p) == pytest.approx(np.polyval(coef, t), rel=1e-10, abs=1e-12)


def test_model_value_applies_operator_once():
    c = EvalCounter(1)
    H = DenseHessian(np.eye(2))
    H.counter, H.probe_cost = c, 1
    model_value(TrSubproblem(np.ones(2), H, 1.0), np.ones(2))
    assert c.hvp_probe_evals == 1


# --- Cauchy point ---------------------------------------------------------------

def test_cauchy_interior():
    step = cauchy_point(TrSubproblem(np.array([3.0, 4.0]), IdentityHessian(), 10.0))
    np.testing.assert_allclose(step.step, [-3.0, -4.0])
    assert step.model_decrease == pytest.approx(-12.5)


def test_cauchy_boundary():
    step = cauchy_point(TrSubproblem(np.array([3.0, 4.0]), IdentityHessian(), 1.0))
    np.testing.assert_allclose(step.step, [-0.6, -0.8])
    assert step.model_decrease == pytest.approx(-4.5)


def test_cauchy_negative_curvature_hits_boundary():
    rng = np.random.default_rng(1)
    for _ in range(50):
        g = rng.standard_normal(4)
        H = -np.eye(4) + 0.1 * np.diag(rng.random(4))
        delta = rng.uniform(0.1, 5)
        step = cauchy_point(TrSubproblem(g, DenseHessian(H), delta))
        assert np.linalg.norm(step.step) == pytest.approx(delta, rel=1e-14)


def test_cauchy_zero_gradient_rejected():
    with pytest.raises(ValueError):
        cauchy_point(TrSubproblem(np.zeros(2), IdentityHessian(), 1.0))


# --- Steihaug-CG -------------------------------------------------------------------

def test_steihaug_identity_interior():
    step = steihaug_cg(TrSubproblem(np.array([3.0, 4.0]), IdentityHessian(), 10.0))
    np.testing.assert_allclose(step.step, [-3.0, -4.0])
    assert step.cg_iters == 1 and step.termination is Termination.RESIDUAL_TOL
    assert not step.hit_boundary


def test_steihaug_identity_boundary():
    step = steihaug_cg(TrSubproblem(np.array([3.0, 4.0]), IdentityHessian(), 1.0))
    np.testing.assert_allclose(step.step, [-0.6, -0.8])
    assert step.termination is Termination.BOUNDARY and step.hit_boundary


def test_steihaug_negative_curvature():
    g, H = np.array([1.0, 1.0]), np.diag([1.0, -1.0])
    step = steihaug_cg(TrSubproblem(g, DenseHessian(H), 2.0))
    assert step.termination is Termination.NEGATIVE_CURVATURE
    assert np.linalg.norm(step.step) == pytest.approx(2.0, rel=1e-14)
    opt = exact_tr_solution(g, H, 2.0)
    assert model(g, H, opt) <= step.model_decrease + 1e-12


def test_steihaug_zero_gradient_is_zero_step():
    step = steihaug_cg(TrSubproblem(np.zeros(3), IdentityHessian(), 0.0))
    assert not np.any(step.step) and step.model_decrease == 0.0 and step.cg_iters == 0


def test_steihaug_max_iters_and_bad_cap():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((10, 10))
    H = A @ A.T + np.eye(10)
    g = rng.standard_normal(10)
    step = steihaug_cg(TrSubproblem(g, DenseHessian(H), 1e6, cg_max_iters=2, cg_tol=1e-14))
    assert step.termination is Termination.MAX_ITERS and step.cg_iters == 2
    with pytest.raises(ValueError):
        steihaug_cg(TrSubproblem(g, DenseHessian(H), 1.0, cg_max_iters=0))


def test_steihaug_nonfinite_operator_raises():
    class Bad(IdentityHessian):
        def _apply(self, v):
            return np.full_like(v, np.nan)

    with pytest.raises(SolverError):
        steihaug_cg(TrSubproblem(np.ones(2), Bad(), 1.0))


def test_steihaug_model_decrease_matches_direct_evaluation():
    rng = np.random.default_rng(3)
    for _ in range(200):
        d = int(rng.integers(1, 12))
        g, H, delta = random_subproblem(rng, d, indefinite=bool(rng.integers(2)))
        sub = TrSubproblem(g, DenseHessian(H), delta)
        step = steihaug_cg(sub)
        assert step.model_decrease == pytest.approx(model(g, H, step.step), rel=1e-9, abs=1e-12)


def test_steihaug_iterates_monotone_in_model():
    rng = np.random.default_rng(4)
    for _ in range(100):
        d = int(rng.integers(2, 15))
        g, H, delta = random_subproblem(rng, d, indefinite=bool(rng.integers(2)))
        seen = []
        steihaug_cg(TrSubproblem(g, DenseHessian(H), delta), callback=lambda p: seen.append(model(g, H, p)))
        assert all(b <= a + 1e-12 * max(1, abs(a)) for a, b in zip(seen, seen[1:]))


def test_steihaug_exact_on_interior_spd():
    rng = np.random.default_rng(5)
    for _ in range(50):
        d = int(rng.integers(2, 15))
        A = rng.standard_normal((d, d))
        H = A @ A.T + 0.5 * np.eye(d)
        g = rng.standard_normal(d)
        newton = -np.linalg.solve(H, g)
        delta = 2 * np.linalg.norm(newton)
        step = steihaug_cg(TrSubproblem(g, DenseHessian(H), delta, cg_max_iters=200, cg_tol=1e-12))
        np.testing.assert_allclose(step.step, newton, rtol=1e-6, atol=1e-9)


ENTRY = st.one_of(st.just(0.0), st.floats(1e-6, 10.0), st.floats(-10.0, -1e-6))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 8).flatmap(lambda d: st.tuples(
    arrays(np.float64, d, elements=ENTRY),
    arrays(np.float64, (d, d), elements=ENTRY),
    st.floats(1e-3, 1e3))))
def test_steihaug_feasible_and_beats_cauchy(args):
    g, A, delta = args
    H = 0.5 * (A + A.T)
    if not np.any(g):
        return
    sub = TrSubproblem(g, DenseHessian(H), delta)
    step = steihaug_cg(sub)
    assert np.linalg.norm(step.step) <= delta * (1 + 1e-12)
    assert step.model_decrease <= 0.0
    cp = cauchy_point(sub)
    assert step.model_decrease <= cp.model_decrease + 1e-9 * max(1.0, abs(cp.model_decrease))
    gn = np.linalg.norm(g)
    bound = -gn * delta + 0.5 * np.linalg.norm(H, 2) * delta**2
    assert step.model_decrease <= bound + 1e-10 + 1e-12 * (gn * delta + np.linalg.norm(H, 2) * delta**2)


@pytest.mark.parametrize("s", [1e-200, 1e-8, 1.0, 1e150])
def test_steihaug_scale_covariant_in_radius_rule(s):
    rng = np.random.default_rng(16)
    g, H, _ = random_subproblem(rng, 6)
    ref = steihaug_cg(TrSubproblem(g, DenseHessian(H), 0.3, cg_tol=1e-10))
    step = steihaug_cg(TrSubproblem(s * g, DenseHessian(H), 0.3 * s, cg_tol=1e-10 * s))
    np.testing.assert_allclose(step.step, s * ref.step, rtol=1e-12, atol=0)
    assert step.termination is ref.termination and step.cg_iters == ref.cg_iters


def test_default_cg_tol():
    assert default_cg_tol(1.0) == 1e-8
    assert default_cg_tol(1e-8) == pytest.approx(1e-10)
    sub = TrSubproblem(np.array([3.0, 4.0]), IdentityHessian(), 1.0)
    assert sub.cg_tol == 1e-8


# --- Hessian operators ----------------------------------------------------------------

def test_identity_operator():
    v = np.array([1.0, -2.0])
    assert np.array_equal(IdentityHessian().apply(v), v)


def test_fd_hvp_pure_quadratic():
    data = Dataset(sp.csr_matrix((4, 3)), [1.0, -1.0, 1.0, 1.0])
    prob = LogisticProblem(ObjectiveSpec.convex(0.3), data)
    rng = np.random.default_rng(6)
    for _ in range(20):
        w, v = rng.standard_normal((2, 3))
        hv = finite_diff_hvp(prob, w, v)
        np.testing.assert_allclose(hv, 0.3 * v, rtol=0, atol=1e-9 * max(1, np.linalg.norm(v)))


def test_fd_hvp_vs_exact():
    rng = np.random.default_rng(7)
    for spec in (ObjectiveSpec.convex(), ObjectiveSpec.nonconvex()):
        prob = logistic(rng, 40, 6, spec)
        for _ in range(50):
            w, v = rng.standard_normal((2, 6))
            idx = rng.integers(0, 40, 8)
            hv = finite_diff_hvp(prob, w, v, batch=MiniBatch(idx))
            ex = exact_hvp(spec, prob.data, idx, w, v)
            assert np.linalg.norm(hv - ex) <= 1e-4 * np.linalg.norm(ex)


def test_fd_hvp_scaling_and_zero():
    rng = np.random.default_rng(8)
    prob = logistic(rng, 20, 5)
    w, v = rng.standard_normal((2, 5))
    a = finite_diff_hvp(prob, w, v)
    b = finite_diff_hvp(prob, w, 10 * v)
    np.testing.assert_allclose(b, 10 * a, rtol=1e-8)
    with pytest.raises(ValueError):
        finite_diff_hvp(prob, w, np.zeros(5))


def test_fd_hvp_counts_batch_probes():
    rng = np.random.default_rng(9)
    prob = logistic(rng, 20, 3)
    c = EvalCounter(20)
    finite_diff_hvp(prob, np.zeros(3), np.ones(3), batch=MiniBatch(np.array([1, 2, 2, 9])), counter=c)
    assert c.hvp_probe_evals == 4 and c.component_grad_evals == 0


def test_esth_reuses_base_gradient():
    rng = np.random.default_rng(10)
    sub = logistic(rng, 30, 4).subsample(np.array([0, 5, 7]))
    w = rng.standard_normal(4)
    base = sub.gradient(w)
    op = EstimatedHessian(sub, w, base)
    assert op.base_gradient is base
    assert op.eps == pytest.approx(1e-6 * (1 + np.linalg.norm(w)))


def test_esth_symmetry_statistical():
    rng = np.random.default_rng(11)
    prob = logistic(rng, 50, 6)
    kappa = prob.lipschitz().L
    for _ in range(100):
        w = rng.uniform(-1, 1, 6)
        sub = prob.subsample(rng.integers(0, 50, 10))
        op = EstimatedHessian(sub, w)
        u, v = rng.standard_normal((2, 6))
        assert abs(u @ op.apply(v) - v @ op.apply(u)) <= 1e-3 * kappa * np.linalg.norm(u) * np.linalg.norm(v)


def test_exact_operator_symmetric_and_bounded():
    rng = np.random.default_rng(12)
    prob = logistic(rng, 30, 5)
    R = 2.0
    kappa = prob.lipschitz(ball_radius=R).L
    for _ in range(50):
        w = rng.uniform(-R, R, 5)
        op = ExactHessian(prob, w)
        u, v = rng.standard_normal((2, 5))
        assert abs(u @ op.apply(v) - v @ op.apply(u)) <= 1e-8 * np.linalg.norm(u) * np.linalg.norm(v)
        assert np.linalg.norm(op.apply(v)) <= kappa * np.linalg.norm(v) * (1 + 1e-12)


def test_operator_norm_power_iteration():
    H = np.diag([3.0, -7.0, 1.0])
    assert operator_norm(DenseHessian(H), 3, iters=200) == pytest.approx(7.0, rel=1e-6)
    assert DenseHessian(H).norm == pytest.approx(7.0)


def test_build_hessian_modes_and_probe_costs():
    rng = np.random.default_rng(13)
    prob = logistic(rng, 25, 3)
    sub = prob.subsample(np.arange(4))
    c = EvalCounter(25)
    w = np.zeros(3)
    assert isinstance(build_hessian("id", sub, w, counter=c), IdentityHessian)
    op = build_hessian(HessianMode.ESTH, sub, w, counter=c)
    op.apply(np.ones(3))
    assert c.hvp_probe_evals == 4
    op = build_hessian("exact", prob, w, counter=c)
    op.apply(np.ones(3))
    assert c.hvp_probe_evals == 29
    with pytest.raises(ValueError):
        build_hessian("bogus", sub, w)


def test_cg_with_esth_counts_one_probe_batch_per_iteration():
    rng = np.random.default_rng(14)
    prob = logistic(rng, 40, 8)
    sub = prob.subsample(rng.integers(0, 40, 6))
    w = rng.standard_normal(8)
    g = sub.gradient(w)
    c = EvalCounter(40)
    op = EstimatedHessian(sub, w, g, counter=c)
    step = steihaug_cg(TrSubproblem(g, op, 10.0))
    assert c.hvp_probe_evals == 6 * step.cg_iters


def test_cauchy_bound_with_power_iteration_estimate():
    rng = np.random.default_rng(15)
    prob = logistic(rng, 60, 6)
    for _ in range(50):
        w = rng.standard_normal(6)
        sub = prob.subsample(rng.integers(0, 60, 8))
        g = sub.gradient(w) + 0.1 * rng.standard_normal(6)
        op = EstimatedHessian(sub, w)
        delta = rng.uniform(0.01, 3.0)
        step = steihaug_cg(TrSubproblem(g, op, delta))
        kappa = 1.1 * operator_norm(op, 6)
        gn = np.linalg.norm(g)
        assert step.model_decrease <= -gn * delta + 0.5 * kappa * delta**2 + 1e-10
        assert step.max_curvature <= kappa
        assert math.isfinite(step.max_curvature)

"""
Nonconvex ablation: variance reduction vs a plain stochastic trust region
=========================================================================

Both methods take trust-region steps with the same finite-difference
Hessian. TRSVR feeds them SVRG gradients and a radius proportional to their
norm; TRish uses plain mini-batch gradients with a three-zone radius.
"""

import numpy as np

from trsvr.metrics import Recorder
from trsvr.optimizer import BaselineConfig, Method, TrsvrConfig, trish_run, trsvr_run
from trsvr.problem import LogisticProblem, ObjectiveSpec, generate_synthetic

# Logistic loss plus a small ridge and a double-well penalty around +-0.5.
data, _ = generate_synthetic(2000, 50, 10.0, seed=0)
problem = LogisticProblem(ObjectiveSpec.nonconvex(l2_coef=1e-4, dw_coef=1e-4, dw_center=0.5), data)
x0 = np.random.default_rng(1).standard_normal(50)

trsvr = trsvr_run(problem, TrsvrConfig(0.15, 100, 100, "esth", cg_max_iters=500, epochs=40),
                  x0, Recorder(problem, "trsvr-esth", wall_clock=False))

# TRish gets exactly the same budget of effective passes.
budget = trsvr.final.effective_passes
trish = trish_run(problem, BaselineConfig(Method.TRISH, alpha=0.40, gamma1=4.91, gamma2=0.03,
                                          batch_size=100, cg_max_iters=500, epochs=budget),
                  x0, Recorder(problem, "trish", wall_clock=False))

print(f"{'passes':>8}{'TRSVR |g|^2':>16}{'TRish |g|^2':>16}")
for p in np.linspace(0, budget, 9):
    row = []
    for traj in (trsvr, trish):
        vals = [r.grad_norm_sq for r in traj.records if r.effective_passes <= p]
        row.append(f"{vals[-1]:16.3e}")
    print(f"{p:8.1f}" + "".join(row))

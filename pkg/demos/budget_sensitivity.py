"""
Batch size against inner-loop length at a fixed budget
======================================================

Each cell trades batch size b for inner-loop length S while keeping the
sampled gradients per outer loop, b * S, constant.
"""

import dataclasses

from trsvr.harness import RunConfig, SyntheticSource, budget_sweep, compute_fstar, run_budget_sweep
from trsvr.optimizer import TrsvrConfig
from trsvr.problem import ObjectiveSpec

budget = 8000
cells = budget_sweep(budget, [10, 20, 40, 100, 200, 400, 800])
for c in cells:
    assert c.batch_size * c.inner_len == budget

base = RunConfig(SyntheticSource(4000, 32, 1e3, seed=0), ObjectiveSpec.convex(1e-4),
                 TrsvrConfig(0.06, 10, 800, "esth"), epochs=6, wall_clock=False)
problem = base.build_problem()
base = dataclasses.replace(base, f_star=compute_fstar(problem).f_star)

results = run_budget_sweep(base, cells, problem)
print(f"{'b':>6}{'S':>6}{'passes':>10}{'gap':>12}{'|g|^2':>12}")
for c, res in zip(cells, results):
    fin = res.trajectory.final
    print(f"{c.batch_size:6d}{c.inner_len:6d}{fin.effective_passes:10.1f}"
          f"{fin.optimality_gap:12.3e}{fin.grad_norm_sq:12.3e}")

"""
Parameters prescribed by the convergence theorem
================================================

Given N, the exponent gamma and the constants mu0, mu1, L and kappa_H, the
calculator returns the batch size, the radius constant, the longest
admissible inner loop and the Lyapunov weights lambda_s.
"""

import numpy as np

from trsvr.optimizer import theorem_params

t = theorem_params(N=10**6, gamma_exp=2 / 3, mu0=1.0, mu1=1.0, L=1.0, kappa_H=1.0)
print(f"b = {t.derived_b}, alpha = {t.derived_alpha:.6f}, S_max = {t.S_max}, z = {t.z_value:.4f}")
print(f"lambda_0 = {t.lambda_schedule[0]:.3e}, lambda_S = {t.lambda_schedule[-1]}")
print(f"hypotheses hold: {t.ok}  (v0 estimate {t.v0_estimate:.3g})")

# How the prescriptions scale with N at a fixed exponent.
print(f"\n{'N':>10}{'b':>8}{'alpha':>10}{'S_max':>8}")
for N in np.logspace(4, 8, 5).astype(int):
    t = theorem_params(int(N), 2 / 3, 1.0, 1.0, 1.0, 1.0)
    print(f"{N:10d}{t.derived_b:8d}{t.derived_alpha:10.4f}{t.S_max:8d}")

# A step constant above one breaks the hypotheses and is flagged, not clipped.
bad = theorem_params(10, 1.0, 1.0, 1.0, 0.01, 0.0)
print("\nviolations:", bad.violations)

"""Integration by parts on a discretized Wiener space.

Builds a few functionals and integrands, computes Skorohod integrals pathwise
and checks the duality E[F δ(u)] = E<DF, u>_H by Monte Carlo.

    python demos/duality_and_gaussian_law.py
"""

from scipy import stats

from skortight.grid import kernel_norm
from skortight.rng import RngStream
from skortight.skorohod import StepIntegrand, duality_residual, sample_integrals
from skortight.suites import duality_pairs, gaussian_kernels

rng = RngStream(2024)

print("deterministic integrands: δ(h) should be N(0, |h|_H^2)")
for j, (name, h) in enumerate(gaussian_kernels(8).items()):
    x = sample_integrals(StepIntegrand.deterministic(h), 50_000, rng.child(j))
    ks = stats.kstest(x, "norm", args=(0.0, float(kernel_norm(h))))
    print(f"  {name:<14} var {x.var():.4f} vs {float(kernel_norm(h)) ** 2:.4f}   KS p = {ks.pvalue:.3f}")

print("\nduality residuals (z-scores should be O(1))")
for j, (name, (F, u)) in enumerate(duality_pairs(8).items()):
    r = duality_residual(F, u, 50_000, rng.child(100 + j))
    kind = "adapted" if u.adapted else "anticipating"
    print(f"  {name:<24} {kind:<13} E[F δ(u)] = {r.lhs:+.4f}  E<DF,u> = {r.rhs:+.4f}  z = {r.z_score:+.2f}")

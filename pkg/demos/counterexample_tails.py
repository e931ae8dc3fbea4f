"""A family that is not exponentially tight at any polynomial speed.

F_ε = √ε δ(f(W(1)) 1_[0,1]) with f(z) = z^{3/4} on (0, 1) reduces pathwise to
√ε (f(z) z - f'(z)). Its tail decays only like ε^2, so ε^α log P(|F_ε| > L)
drifts to zero for every α. The Gaussian baseline √ε W(1) is shown alongside.

    python demos/counterexample_tails.py
"""

import numpy as np

from skortight.rng import RngStream
from skortight.tightness import counterexample, deterministic_gaussian, speed_scan, tail_mc, tail_quadrature

eps_grid = np.logspace(-2, -6, 9)

for fam in (deterministic_gaussian(), counterexample()):
    print(f"{fam.family_id}: ε log P(|F_ε| > 2)")
    scan = speed_scan(fam, 1.0, 2.0, eps_grid)
    for eps, v in zip(scan.eps_grid, scan.values):
        print(f"  ε = {eps:8.1e}   {v:+.5f}")
    if fam.family_id == "counterexample_thm1":
        print(f"  slope of log P against log ε: {scan.trend['log_p_slope']:.3f}")
    print()

# Monte Carlo agrees with the quadrature where hits are frequent enough
# (95% Clopper-Pearson intervals, so an occasional miss is expected)
fam = counterexample()
rng = RngStream(7)
for k, (eps, L) in enumerate([(1e-2, 0.3), (4e-2, 0.5)]):
    mc = tail_mc(fam, eps, L, 1_000_000, rng.child(k))
    q = tail_quadrature(fam, eps, L)
    print(f"ε = {eps:g}, L = {L:g}: MC {mc.p_est:.3e} [{mc.ci_lo:.3e}, {mc.ci_hi:.3e}]  quadrature {q.p_est:.3e}")

"""
Adaptive versus exact line-search steps
=======================================

For a block ``A_J`` and residual ``r`` the adaptive rule
``||A_J||_F^2 ||r||^2 / ||A_J r||^2`` always dominates the exact
line-search step. Both equal 1 for a single column and ``tau`` for a
block with orthogonal columns of equal norm.
"""

import numpy as np

from kbz.solvers import adaptive_step_z, exact_line_search_z

rng = np.random.default_rng(0)

print("single column:", adaptive_step_z(rng.standard_normal((5, 1)), np.array([0.7])))

Q, _ = np.linalg.qr(rng.standard_normal((8, 4)))
r = rng.standard_normal(4)
print("orthogonal 4-column block:", adaptive_step_z(3 * Q, r), exact_line_search_z(3 * Q, r))

###############################################################################
# On random blocks the adaptive step extrapolates past the exact one.

ratios = []
for _ in range(1000):
    A_J = rng.standard_normal((8, 5))
    r = A_J.T @ rng.standard_normal(8)
    ratios.append(adaptive_step_z(A_J, r) / exact_line_search_z(A_J, r))
ratios = np.array(ratios)
print(f"adaptive / exact: min {ratios.min():.4f}, median {np.median(ratios):.4f}, max {ratios.max():.4f}")

"""
Minimum-norm least squares
==========================

With the quadratic objective the Bregman-Kaczmarz iteration converges to
the pseudo-inverse solution ``A^+ b``, even for a rank-deficient ``A``.
"""

from kbz import InstanceSpec, SolverConfig, pseudo_inverse_solution, relative_error, run

spec = InstanceSpec("structured", m=200, n=100, kind="minnorm", rank=80, kappa=10.0)
problem = spec.build(seed=3)

# The reference stored on the instance is the SVD pseudo-inverse solution.
x_pinv = pseudo_inverse_solution(problem.matrix, problem.b)
print("reference is A^+ b:", relative_error(problem.x_hat, x_pinv) < 1e-12)

###############################################################################
# REABK (constant relaxation) against the adaptive method.

for method in ("reabk", "arabebk"):
    res = run(SolverConfig(variant=method, tau=20, tol=1e-5, seed=3), problem)
    err = relative_error(res.state.x_primal, x_pinv)
    print(f"{method:<8} iterations={res.iterations:>6}  relative error={err:.2e}")

###############################################################################
# The auxiliary variable ``z`` converges to the part of ``b`` outside
# ``range(A)``, which is exactly the injected noise here.

res = run(SolverConfig(tau=20, tol=1e-8, seed=3), problem)
print("||z - e|| / ||e|| =", relative_error(res.state.z_primal, problem.noise))

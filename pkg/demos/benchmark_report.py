"""
A benchmark suite
=================

``run_benchmark`` runs every (instance, method, seed) combination and
collects iteration counts and timings. Medians over seeds are the robust
summary; the report also exports to CSV.
"""

from kbz import InstanceSpec, SuiteConfig, run_benchmark

suite = SuiteConfig(
    instances=(InstanceSpec(m=200, n=100, kind="sparse"), InstanceSpec(m=100, n=200, kind="sparse")),
    methods=("rebk", "crabebk", "arabebk"),
    seeds=tuple(range(5)),
    tau=20,
    tol=1e-5,
)
report, runs = run_benchmark(suite)
print(report.format_table())

###############################################################################
# Each run also keeps its convergence trace.

res = runs[("arabebk", "gaussian_sparse_200x100", 0)]
print("trace points:", len(res.trace), "final relative error:", res.trace[-1].rel_err)

report.to_csv("benchmark_report.csv")

"""Test problems, reference solutions, metrics and the benchmark runner."""

from __future__ import annotations

import csv
import gzip
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import median
from typing import Literal

import numpy as np

from .convex import ObjectiveSpec
from .linalg import DenseMatrix
from .solvers import RunResult, SolverConfig, relative_error, run

log = logging.getLogger(__name__)

RANK_RTOL = 1e-12
REPORT_HEADER = ("method", "instance", "seed", "iters", "setup_s", "solve_s", "final_rel_err", "final_psnr")
IDX3_MAGIC = 2051

# Independent sub-streams per seed so that e.g. changing the noise level
# does not change the matrix.
_STREAM_MATRIX, _STREAM_SOLUTION, _STREAM_NOISE = 0, 1, 2


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([stream, seed])


class NoiseUnavailableError(ValueError):
    """``null(A^T)`` is trivial, so no noise can be hidden from the normal equations."""


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def generate_gaussian(m: int, n: int, seed: int) -> DenseMatrix:
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got {m}x{n}")
    return DenseMatrix(_rng(seed, _STREAM_MATRIX).standard_normal((m, n)))


def generate_structured(m: int, n: int, r: int, kappa: float, seed: int) -> DenseMatrix:
    """``A = U D V^T`` with orthonormal ``U`` (m x r), ``V`` (n x r) and ``D`` uniform on (1, kappa)."""
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank must lie in [1, {min(m, n)}], got {r}")
    if not kappa > 1:
        raise ValueError(f"kappa must exceed 1, got {kappa}")
    rng = _rng(seed, _STREAM_MATRIX)
    U, _ = np.linalg.qr(rng.standard_normal((m, r)))
    V, _ = np.linalg.qr(rng.standard_normal((n, r)))
    d = 1.0 + (kappa - 1.0) * rng.random(r)
    return DenseMatrix((U * d) @ V.T)


def plant_sparse_solution(n: int, sparsity_fraction: float, seed: int) -> np.ndarray:
    """Vector with ``ceil(fraction * n)`` standard-normal entries at random positions."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < sparsity_fraction <= 1:
        raise ValueError(f"sparsity fraction must lie in (0, 1], got {sparsity_fraction}")
    rng = _rng(seed, _STREAM_SOLUTION)
    # guard against 0.01 * 100 = 1.0000000000000002
    s = min(n, math.ceil(round(sparsity_fraction * n, 9)))
    x = np.zeros(n)
    support = rng.choice(n, size=s, replace=False)
    x[support] = rng.standard_normal(s)
    return x


def _svd(matrix):
    A = matrix.data if isinstance(matrix, DenseMatrix) else np.asarray(matrix, dtype=np.float64)
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return A, U, s, Vt, rank


def nullspace_basis(matrix) -> np.ndarray:
    """Orthonormal basis of ``null(A^T)`` as columns (m x (m - rank))."""
    _, U, _, _, rank = _svd(matrix)
    return U[:, rank:]


def nullspace_noise(matrix, y_hat, q: float, seed: int) -> np.ndarray:
    """Noise ``e = N v`` in ``null(A^T)`` with ``||e|| = q ||y_hat||``.

    ``v`` is uniform on the sphere (normalised Gaussian draw).

    Raises
    ------
    NoiseUnavailableError
        If ``q > 0`` and ``A`` has full row rank.
    """
    if q < 0:
        raise ValueError(f"noise level must be nonnegative, got {q}")
    m = matrix.rows if isinstance(matrix, DenseMatrix) else np.shape(matrix)[0]
    if q == 0:
        return np.zeros(m)
    N = nullspace_basis(matrix)
    if N.shape[1] == 0:
        raise NoiseUnavailableError("null(A^T) is trivial; A has full row rank")
    v = _rng(seed, _STREAM_NOISE).standard_normal(N.shape[1])
    v *= q * np.linalg.norm(y_hat) / np.linalg.norm(v)
    return N @ v


def pseudo_inverse_solution(matrix, b) -> np.ndarray:
    """Minimum-norm least-squares solution ``A^+ b`` via a truncated SVD."""
    A = matrix.data if isinstance(matrix, DenseMatrix) else np.asarray(matrix, dtype=np.float64)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("matrix is zero")
    keep = s > RANK_RTOL * s[0]
    coef = (U[:, keep].T @ np.asarray(b, dtype=np.float64)) / s[keep]
    return Vt[keep].T @ coef


def psnr(x, x_hat) -> float:
    """``10 log10(sum x_hat^2 / sum (x - x_hat)^2)``; ``inf`` on exact recovery."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    sig = float(x_hat @ x_hat)
    if sig == 0:
        raise ValueError("reference signal is zero")
    err = float((x - x_hat) @ (x - x_hat))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(sig / err)


# ---------------------------------------------------------------------------
# problem instances
# ---------------------------------------------------------------------------


@dataclass
class ProblemInstance:
    matrix: DenseMatrix
    b: np.ndarray
    x_hat: np.ndarray
    y_hat: np.ndarray
    noise: np.ndarray
    noise_q: float
    kind: Literal["sparse", "minnorm"]
    lam: float = 0.0
    seed: int = 0
    name: str = ""

    @property
    def f_spec(self) -> ObjectiveSpec:
        if self.kind == "sparse":
            return ObjectiveSpec.elastic_net(self.lam)
        return ObjectiveSpec.quadratic()


def make_problem(
    matrix: DenseMatrix,
    kind: Literal["sparse", "minnorm"],
    seed: int,
    *,
    q: float = 5.0,
    lam: float = 5.0,
    sparsity: float = 0.01,
    x_true=None,
    name: str = "",
) -> ProblemInstance:
    """Build ``b = A x + e`` with noise hidden in ``null(A^T)``.

    For ``"sparse"`` the reference is the planted sparse vector (or
    ``x_true``). For ``"minnorm"`` a Gaussian (or given) ``x_true`` is
    drawn and the reference is the pseudo-inverse solution of the noisy
    system. When ``A`` has full row rank the noise is necessarily zero and
    ``noise_q`` is recorded as 0.
    """
    n = matrix.cols
    if x_true is None:
        if kind == "sparse":
            x_true = plant_sparse_solution(n, sparsity, seed)
        elif kind == "minnorm":
            x_true = _rng(seed, _STREAM_SOLUTION).standard_normal(n)
        else:
            raise ValueError(f"unknown problem kind {kind!r}")
    x_true = np.asarray(x_true, dtype=np.float64)
    y0 = matrix.data @ x_true
    try:
        e = nullspace_noise(matrix, y0, q, seed)
    except NoiseUnavailableError:
        log.info("%s: full row rank, generating consistent data", name or "instance")
        e, q = np.zeros(matrix.rows), 0.0
    b = y0 + e
    x_hat = x_true if kind == "sparse" else pseudo_inverse_solution(matrix, b)
    return ProblemInstance(
        matrix=matrix,
        b=b,
        x_hat=x_hat,
        y_hat=matrix.data @ x_hat,
        noise=e,
        noise_q=q,
        kind=kind,
        lam=lam if kind == "sparse" else 0.0,
        seed=seed,
        name=name,
    )


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for one family of test problems."""

    generator: Literal["gaussian", "structured"] = "gaussian"
    m: int = 200
    n: int = 100
    kind: Literal["sparse", "minnorm"] = "sparse"
    lam: float = 5.0
    q: float = 5.0
    rank: int | None = None
    kappa: float = 10.0
    sparsity: float = 0.01

    @property
    def label(self) -> str:
        base = f"{self.generator}_{self.kind}_{self.m}x{self.n}"
        if self.generator == "structured":
            base += f"_r{self.rank}_k{self.kappa:g}"
        return base

    def build(self, seed: int) -> ProblemInstance:
        if self.generator == "gaussian":
            A = generate_gaussian(self.m, self.n, seed)
        elif self.generator == "structured":
            A = generate_structured(self.m, self.n, self.rank or min(self.m, self.n), self.kappa, seed)
        else:
            raise ValueError(f"unknown generator {self.generator!r}")
        return make_problem(
            A, self.kind, seed, q=self.q, lam=self.lam, sparsity=self.sparsity, name=self.label
        )


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteConfig:
    instances: tuple[InstanceSpec, ...] = (InstanceSpec(),)
    methods: tuple[str, ...] = ("rebk", "crabebk", "arabebk")
    seeds: tuple[int, ...] = tuple(range(10))
    tau: int = 20
    tol: float = 1e-5
    max_iters: int = 5_000_000
    trace_stride: int = 100
    jobs: int = 1


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    instance: str
    seed: int
    iters: int
    setup_s: float
    solve_s: float
    final_rel_err: float
    final_psnr: float
    converged: bool


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow] = field(default_factory=list)

    def add(self, row: BenchmarkRow) -> None:
        key = (row.method, row.instance, row.seed)
        if any((r.method, r.instance, r.seed) == key for r in self.rows):
            raise ValueError(f"duplicate benchmark row {key}")
        self.rows.append(row)

    def select(self, method: str | None = None, instance: str | None = None) -> list[BenchmarkRow]:
        return [
            r
            for r in self.rows
            if (method is None or r.method == method) and (instance is None or r.instance == instance)
        ]

    def iterations(self, method: str, instance: str) -> dict[int, int]:
        return {r.seed: r.iters for r in self.select(method, instance)}

    def median_iterations(self, method: str, instance: str) -> float:
        return median(r.iters for r in self.select(method, instance))

    def instances(self) -> list[str]:
        return list(dict.fromkeys(r.instance for r in self.rows))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow(
                    [r.method, r.instance, r.seed, r.iters, f"{r.setup_s:.6f}", f"{r.solve_s:.6f}",
                     repr(r.final_rel_err), repr(r.final_psnr)]
                )

    def format_table(self) -> str:
        """Median iterations (IT) and CPU seconds per (instance, method), one instance per line."""
        methods = self.methods()
        head = f"{'instance':<34}" + "".join(f"{m + ' IT':>14}{m + ' CPU':>14}" for m in methods)
        lines = [head, "-" * len(head)]
        for inst in self.instances():
            cells = []
            for m in methods:
                rows = self.select(m, inst)
                if not rows:
                    cells.append(f"{'-':>14}{'-':>14}")
                    continue
                it = median(r.iters for r in rows)
                cpu = median(r.setup_s + r.solve_s for r in rows)
                cells.append(f"{it:>14g}{cpu:>14.3f}")
            lines.append(f"{inst:<34}" + "".join(cells))
        return "\n".join(lines)


def method_config(method: str, problem: ProblemInstance, suite: SuiteConfig, seed: int) -> SolverConfig:
    return SolverConfig(
        variant=method,
        f_spec=problem.f_spec,
        tau=suite.tau,
        tol=suite.tol,
        max_iters=suite.max_iters,
        trace_stride=suite.trace_stride,
        seed=seed,
    )


def _run_one(args) -> tuple[BenchmarkRow, RunResult]:
    spec, method, seed, suite = args
    problem = spec.build(seed)
    res = run(method_config(method, problem, suite, seed), problem)
    x = res.state.x_primal
    row = BenchmarkRow(
        method=method,
        instance=spec.label,
        seed=seed,
        iters=res.iterations,
        setup_s=res.setup_seconds,
        solve_s=res.solve_seconds,
        final_rel_err=relative_error(x, problem.x_hat),
        final_psnr=psnr(x, problem.x_hat) if np.any(problem.x_hat) else math.nan,
        converged=res.stop_reason == "converged",
    )
    return row, res


def run_benchmark(suite: SuiteConfig) -> tuple[BenchmarkReport, dict]:
    """Run every (instance, method, seed) combination.

    Returns the report and a dict mapping ``(method, instance, seed)`` to
    the :class:`~kbz.solvers.RunResult` of that run. With ``jobs > 1`` the
    runs are spread over worker processes; results are collected before
    anything is returned.
    """
    for spec in suite.instances:
        if spec.kind == "sparse" and "reabk" in suite.methods:
            raise ValueError("reabk cannot solve sparse instances")
    tasks = [(spec, meth, seed, suite) for spec in suite.instances for seed in suite.seeds for meth in suite.methods]
    if suite.jobs > 1:
        with ProcessPoolExecutor(max_workers=suite.jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    report = BenchmarkReport()
    runs = {}
    for row, res in results:
        report.add(row)
        runs[(row.method, row.instance, row.seed)] = res
    _check_sparse_limits(suite, runs)
    return report, runs


def _check_sparse_limits(suite: SuiteConfig, runs: dict) -> None:
    # The planted vector is only assumed to be the elastic-net minimiser; flag disagreement.
    if not {"rebk", "arabebk"} <= set(suite.methods):
        return
    for spec in suite.instances:
        if spec.kind != "sparse":
            continue
        for seed in suite.seeds:
            a = runs[("rebk", spec.label, seed)].state.x_primal
            b = runs[("arabebk", spec.label, seed)].state.x_primal
            if relative_error(a, b) > 10 * suite.tol:
                log.warning("%s seed %d: rebk and arabebk limits disagree", spec.label, seed)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


class IdxFormatError(ValueError):
    pass


def load_mnist_image(path, index: int) -> np.ndarray:
    """Image ``index`` of an IDX3-ubyte file (optionally gzipped), scaled to [0, 1].

    Returns the row-major flattening of the ``rows x cols`` grid (784
    entries for MNIST).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 16:
        raise IdxFormatError(f"{path}: truncated header at offset {len(raw)} (need 16 bytes)")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX3_MAGIC:
        raise IdxFormatError(f"{path}: bad magic number {magic} at offset 0, expected {IDX3_MAGIC}")
    if not 0 <= index < count:
        raise IndexError(f"image index {index} out of range [0, {count})")
    size = rows * cols
    start = 16 + index * size
    if len(raw) < start + size:
        raise IdxFormatError(f"{path}: truncated image data at offset {len(raw)}, need {start + size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=start).astype(np.float64) / 255.0


def write_idx3(path, images) -> None:
    """Write a stack of uint8 images (k x rows x cols) as IDX3-ubyte."""
    images = np.asarray(images, dtype=np.uint8)
    k, r, c = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX3_MAGIC, k, r, c))
        fh.write(images.tobytes())


def write_pgm(path, x, shape: tuple[int, int] = (28, 28)) -> None:
    """ASCII P2 greymap with maxval 255, pixels ``round(255 * clamp(x, 0, 1))``."""
    h, w = shape
    x = np.asarray(x, dtype=np.float64)
    if x.size != h * w:
        raise ValueError(f"vector of length {x.size} does not fit a {h}x{w} image")
    px = np.rint(255 * np.clip(x, 0.0, 1.0)).astype(int).reshape(h, w)
    with open(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in px:
            fh.write(" ".join(str(v) for v in row) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = []
    with open(path) as fh:
        for line in fh:
            tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    px = np.array(tokens[4:], dtype=int)
    if px.size != w * h or px.max(initial=0) > maxval:
        raise ValueError(f"{path}: malformed pixel data")
    return px.reshape(h, w)


def synthetic_image(size: int = 8) -> np.ndarray:
    """Small digit-like test image (a '7') with values in [0, 1], flattened row-major."""
    img = np.zeros((size, size))
    top = max(1, size // 8)
    img[top, top:size - top] = 1.0
    for r in range(top + 1, size - top):
        c = size - top - 1 - (r - top) * (size - 2 * top - 1) // (size - 2 * top)
        img[r, max(c, top)] = 0.8
    return img.ravel()


def recover_image(
    x_image,
    m: int,
    kind: Literal["sparse", "minnorm"],
    methods,
    iterations: int,
    seed: int,
    *,
    q: float = 5.0,
    lam: float = 5.0,
    tau: int = 20,
) -> dict[str, tuple[np.ndarray, float]]:
    """Recover an image from ``b = A x + e`` with a Gaussian ``A`` (m x pixels).

    Every method runs exactly ``iterations`` steps. Returns
    ``{method: (reconstruction, psnr)}``.
    """
    x_image = np.asarray(x_image, dtype=np.float64)
    A = generate_gaussian(m, x_image.size, seed)
    problem = make_problem(A, kind, seed, q=q, lam=lam, x_true=x_image, name=f"image_{kind}")
    problem = replace(problem, x_hat=x_image)
    out = {}
    for meth in methods:
        cfg = SolverConfig(
            variant=meth,
            f_spec=problem.f_spec,
            tau=min(tau, m, x_image.size),
            tol=None,
            max_iters=iterations,
            trace_stride=0,
            seed=seed,
        )
        res = run(cfg, problem)
        x = res.state.x_primal
        out[meth] = (x, psnr(x, x_image))
    return out

"""Randomized (averaging block) extended Bregman-Kaczmarz solvers.

All variants share one iteration. Each step first updates the auxiliary
dual variable ``z*`` with a sampled column block, driving ``A^T z -> 0``,
then updates the primal dual variable ``x*`` with a sampled row block of
the system ``A x = b - z*``. Primal iterates are recovered through the
conjugate gradient maps of ``g`` and ``f``. The variants only differ in
block size and in how the relaxation parameter is chosen:

========== ===== ==================================================
variant    tau   relaxation
========== ===== ==================================================
rebk       1     unit step
rabebk     tau   unit step
crabebk    tau   constant ``1 / beta_max``
reabk      tau   constant ``1 / beta_max`` (quadratic ``f`` only)
arabebk    tau   adaptive, ``delta * ||A_B||_F^2 ||r||^2 / ||A_B^T r||^2``
exls       tau   exact line search on the block residual model
========== ===== ==================================================
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Literal, NamedTuple

import numpy as np

from .convex import ObjectiveSpec, bregman_distance, conjugate_gradient_map
from .linalg import (
    BlockSpectralBounds,
    DenseMatrix,
    Partition,
    compute_spectral_bounds,
    partition_uniform,
    sample_block,
)

VARIANTS = ("rebk", "rabebk", "crabebk", "reabk", "arabebk", "exls")

# Relative (to ||b||) residual norm below which a block update is skipped.
SKIP_RTOL = 1e-14

_QUADRATIC = ObjectiveSpec.quadratic()

TRACE_HEADER = ("iter", "rel_err", "bregman_x", "dual_residual", "step_z", "step_x", "elapsed_s")


# ---------------------------------------------------------------------------
# step-size rules
# ---------------------------------------------------------------------------


def _sq(v: np.ndarray) -> float:
    return float(v @ v)


def _adaptive(frob_sq: float, r: np.ndarray, Br: np.ndarray, delta: float) -> float:
    den = _sq(Br)
    if den == 0.0:
        return 0.0
    return delta * frob_sq * _sq(r) / den


def _exact(B: np.ndarray, frob_sq: float, Br: np.ndarray) -> float:
    num = _sq(Br)
    den = _sq(B.T @ Br)
    if den == 0.0:
        return 0.0
    return num * frob_sq / den


def adaptive_step_z(A_J, r_z, delta_z: float = 1.0) -> float:
    """Adaptive relaxation for a column block ``A_J`` and residual ``r_z = A_J^T z``.

    Returns 0.0 as a skip signal when ``A_J r_z`` vanishes.
    """
    A_J = np.asarray(A_J, dtype=np.float64)
    return _adaptive(_sq(A_J.ravel()), r_z, A_J @ r_z, delta_z)


def exact_line_search_z(A_J, r_z) -> float:
    """Minimiser over ``alpha`` of ``||A_J^T (z - alpha d)||^2`` along the averaged direction."""
    A_J = np.asarray(A_J, dtype=np.float64)
    return _exact(A_J, _sq(A_J.ravel()), A_J @ r_z)


def adaptive_step_x(A_I, r_x, delta_x: float = 1.0) -> float:
    A_I = np.asarray(A_I, dtype=np.float64)
    return _adaptive(_sq(A_I.ravel()), r_x, A_I.T @ r_x, delta_x)


def exact_line_search_x(A_I, r_x) -> float:
    A_I = np.asarray(A_I, dtype=np.float64)
    return _exact(A_I.T, _sq(A_I.ravel()), A_I.T @ r_x)


@dataclass(frozen=True)
class Relaxation:
    """How the relaxation parameter of one update is chosen.

    ``value`` is the fixed ``alpha`` for ``"constant"`` and the scaling
    ``delta`` for ``"adaptive"``; it is ignored by ``"exact"``.
    """

    kind: Literal["constant", "adaptive", "exact"]
    value: float = 1.0

    def __call__(self, B: np.ndarray, frob_sq: float, r: np.ndarray, Br: np.ndarray) -> float:
        # B is A_J for z-steps and A_I^T for x-steps; Br = B @ r.
        if self.kind == "constant":
            return self.value
        if self.kind == "adaptive":
            return _adaptive(frob_sq, r, Br, self.value)
        return _exact(B, frob_sq, Br)


def constant_alpha_defaults(
    bounds: BlockSpectralBounds,
    f_spec: ObjectiveSpec,
    g_spec: ObjectiveSpec,
    mode: Literal["experiment", "theory"] = "experiment",
) -> tuple[float, float]:
    """Constant relaxation ``(alpha_z, alpha_x)``.

    ``"experiment"`` uses ``1/max(beta_rows, beta_cols)`` for both updates;
    ``"theory"`` uses ``mu_g / beta_cols`` and ``mu_f / beta_rows``.
    """
    if mode == "experiment":
        a = 1.0 / bounds.beta_max
        return a, a
    if mode == "theory":
        return g_spec.mu / bounds.beta_max_cols, f_spec.mu / bounds.beta_max_rows
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# config / state / trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    variant: str = "arabebk"
    f_spec: ObjectiveSpec = field(default_factory=ObjectiveSpec.quadratic)
    g_spec: ObjectiveSpec = field(default_factory=ObjectiveSpec.quadratic)
    tau: int = 20
    delta_z: float = 1.0
    delta_x: float = 1.0
    const_alpha_z: float | None = None
    const_alpha_x: float | None = None
    alpha_mode: Literal["experiment", "theory"] = "experiment"
    max_iters: int = 1_000_000
    tol: float | None = 1e-5
    trace_stride: int = 10
    trace_bregman: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not self.g_spec.is_quadratic:
            raise ValueError("only the quadratic data misfit g is supported")
        if self.variant == "reabk" and not self.f_spec.is_quadratic:
            raise ValueError("reabk requires the quadratic objective f")
        if self.variant == "arabebk":
            if not 0 < self.delta_z < 2 * self.g_spec.mu:
                raise ValueError(f"delta_z must lie in (0, {2 * self.g_spec.mu}), got {self.delta_z}")
            if not 0 < self.delta_x < 2 * self.f_spec.mu:
                raise ValueError(f"delta_x must lie in (0, {2 * self.f_spec.mu}), got {self.delta_x}")
        for name in ("const_alpha_z", "const_alpha_x"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.trace_stride < 0:
            raise ValueError("trace_stride must be nonnegative")

    @property
    def block_size(self) -> int:
        return 1 if self.variant == "rebk" else self.tau


@dataclass
class SolverState:
    x_dual: np.ndarray
    x_primal: np.ndarray
    z_dual: np.ndarray
    z_primal: np.ndarray
    iter: int = 0

    @classmethod
    def initial(cls, b, n: int, f_spec: ObjectiveSpec, g_spec: ObjectiveSpec) -> "SolverState":
        x_dual = np.zeros(n)
        z_dual = np.array(b, dtype=np.float64, copy=True)
        return cls(
            x_dual=x_dual,
            x_primal=conjugate_gradient_map(f_spec, x_dual),
            z_dual=z_dual,
            z_primal=conjugate_gradient_map(g_spec, z_dual),
        )

    def copy(self) -> "SolverState":
        return replace(
            self,
            x_dual=self.x_dual.copy(),
            x_primal=self.x_primal.copy(),
            z_dual=self.z_dual.copy(),
            z_primal=self.z_primal.copy(),
        )


class TraceRecord(NamedTuple):
    iter: int
    rel_err: float
    bregman_x: float
    dual_residual: float
    step_z: float
    step_x: float
    elapsed_s: float


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("trace iterations must strictly increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for r in self.records:
                w.writerow([r.iter, *(repr(float(v)) for v in r[1:])])


# ---------------------------------------------------------------------------
# single updates
# ---------------------------------------------------------------------------


def z_update(
    state: SolverState,
    matrix: DenseMatrix,
    col_partition: Partition,
    strategy: Relaxation,
    rng: np.random.Generator | None = None,
    *,
    block: int | None = None,
    g_spec: ObjectiveSpec | None = None,
    skip_eps: float = 0.0,
) -> float:
    """One auxiliary update on a column block, in place.

    ``z* <- z* - alpha / ||A_J||_F^2 * A_J A_J^T z`` followed by
    ``z = grad g*(z*)``. The block is drawn from ``rng`` unless ``block``
    is given. Returns the relaxation parameter used, 0.0 when skipped.
    """
    j = sample_block(col_partition, rng) if block is None else block
    fro = col_partition.block_frob_sq[j]
    if fro == 0.0:
        return 0.0
    A_J = matrix.block(col_partition.blocks[j], "columns")
    r = A_J.T @ state.z_primal
    if np.sqrt(_sq(r)) <= skip_eps:
        return 0.0
    Ar = A_J @ r
    alpha = strategy(A_J, fro, r, Ar)
    if alpha == 0.0:
        return 0.0
    state.z_dual -= (alpha / fro) * Ar
    state.z_primal = conjugate_gradient_map(g_spec or _QUADRATIC, state.z_dual)
    return alpha


def x_update(
    state: SolverState,
    matrix: DenseMatrix,
    row_partition: Partition,
    b: np.ndarray,
    strategy: Relaxation,
    f_spec: ObjectiveSpec,
    rng: np.random.Generator | None = None,
    *,
    block: int | None = None,
    skip_eps: float = 0.0,
) -> float:
    """One primal update on a row block, in place.

    With ``r = b_I - A_I x - z*_I`` this does
    ``x* <- x* + alpha / ||A_I||_F^2 * A_I^T r`` and ``x = grad f*(x*)``.
    """
    i = sample_block(row_partition, rng) if block is None else block
    fro = row_partition.block_frob_sq[i]
    if fro == 0.0:
        return 0.0
    blk = row_partition.blocks[i]
    A_I = matrix.block(blk, "rows")
    r = b[blk.start:blk.stop] - A_I @ state.x_primal - state.z_dual[blk.start:blk.stop]
    if np.sqrt(_sq(r)) <= skip_eps:
        return 0.0
    Atr = A_I.T @ r
    alpha = strategy(A_I.T, fro, r, Atr)
    if alpha == 0.0:
        return 0.0
    state.x_dual += (alpha / fro) * Atr
    state.x_primal = conjugate_gradient_map(f_spec, state.x_dual)
    return alpha


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def relative_error(x, x_hat) -> float:
    """``||x - x_hat|| / ||x_hat||``, or the absolute error when ``x_hat = 0``."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    err = float(np.linalg.norm(x - x_hat))
    nrm = float(np.linalg.norm(x_hat))
    return err / nrm if nrm > 0 else err


class RunResult(NamedTuple):
    state: SolverState
    trace: ConvergenceTrace
    stop_reason: str
    setup_seconds: float
    solve_seconds: float
    alpha_z: float | None = None
    alpha_x: float | None = None

    @property
    def iterations(self) -> int:
        return self.state.iter


def strategies_for(
    config: SolverConfig, matrix: DenseMatrix, row_part: Partition, col_part: Partition
) -> tuple[Relaxation, Relaxation]:
    """Relaxation rules ``(z, x)`` implied by the variant."""
    v = config.variant
    if v in ("rebk", "rabebk"):
        return Relaxation("constant", 1.0), Relaxation("constant", 1.0)
    if v == "arabebk":
        return Relaxation("adaptive", config.delta_z), Relaxation("adaptive", config.delta_x)
    if v == "exls":
        return Relaxation("exact"), Relaxation("exact")
    az, ax = config.const_alpha_z, config.const_alpha_x
    if az is None or ax is None:
        bounds = compute_spectral_bounds(matrix, row_part, col_part, with_min=False)
        dz, dx = constant_alpha_defaults(bounds, config.f_spec, config.g_spec, config.alpha_mode)
        az = dz if az is None else az
        ax = dx if ax is None else ax
    return Relaxation("constant", az), Relaxation("constant", ax)


def run(
    config: SolverConfig,
    problem,
    index_stream: Iterable[tuple[int, int]] | None = None,
) -> RunResult:
    """Iterate until the relative error drops to ``config.tol`` or ``max_iters``.

    Parameters
    ----------
    config : SolverConfig
    problem
        Anything with ``matrix`` (:class:`DenseMatrix`), ``b`` and
        ``x_hat`` (reference solution or None) attributes, e.g.
        :class:`kbz.experiments.ProblemInstance`.
    index_stream : iterable of (column_block, row_block), optional
        Replaces random block sampling, for replaying a fixed index sequence.
        The run also stops when the stream is exhausted.

    Returns
    -------
    RunResult
        Final state, trace, stop reason (``"converged"``, ``"max_iters"``
        or ``"stream_exhausted"``) and setup/solve wall-clock seconds.
    """
    matrix = problem.matrix
    if not isinstance(matrix, DenseMatrix):
        matrix = DenseMatrix(matrix)
    b = np.asarray(problem.b, dtype=np.float64)
    x_hat = getattr(problem, "x_hat", None)
    m, n = matrix.shape
    if b.shape != (m,):
        raise ValueError(f"b has shape {b.shape}, expected ({m},)")
    if x_hat is not None:
        x_hat = np.asarray(x_hat, dtype=np.float64)
        if x_hat.shape != (n,):
            raise ValueError(f"x_hat has shape {x_hat.shape}, expected ({n},)")
    tol = config.tol
    if tol is not None and x_hat is None:
        warnings.warn("tolerance stopping needs a reference solution; running to max_iters")
        tol = None
    if config.trace_bregman and x_hat is None:
        raise ValueError("Bregman tracing needs a reference solution")

    f_spec, g_spec = config.f_spec, config.g_spec
    t0 = time.perf_counter()
    tau = config.block_size
    row_part = partition_uniform(matrix, min(tau, m), "rows")
    col_part = partition_uniform(matrix, min(tau, n), "columns")
    strat_z, strat_x = strategies_for(config, matrix, row_part, col_part)
    setup_seconds = time.perf_counter() - t0

    state = SolverState.initial(b, n, f_spec, g_spec)
    rng = np.random.default_rng(config.seed)
    skip_eps = SKIP_RTOL * float(np.linalg.norm(b))
    trace = ConvergenceTrace()
    A = matrix.data
    stride = config.trace_stride
    stream = iter(index_stream) if index_stream is not None else None

    t_start = time.perf_counter()

    def record(step_z: float, step_x: float, err: float) -> None:
        breg = (
            bregman_distance(f_spec, state.x_dual, state.x_primal, x_hat)
            if config.trace_bregman
            else float("nan")
        )
        trace.append(
            TraceRecord(
                state.iter,
                err,
                breg,
                float(np.linalg.norm(A.T @ state.z_primal)),
                step_z,
                step_x,
                time.perf_counter() - t_start,
            )
        )

    def current_error() -> float:
        return relative_error(state.x_primal, x_hat) if x_hat is not None else float("nan")

    err = current_error()
    record(0.0, 0.0, err)
    stop = "max_iters"
    if tol is not None and err <= tol:
        stop = "converged"
    else:
        step_z = step_x = 0.0
        for k in range(1, config.max_iters + 1):
            jz = ix = None
            if stream is not None:
                try:
                    jz, ix = next(stream)
                except StopIteration:
                    stop = "stream_exhausted"
                    break
            step_z = z_update(
                state, matrix, col_part, strat_z, rng, block=jz, g_spec=g_spec, skip_eps=skip_eps
            )
            step_x = x_update(
                state, matrix, row_part, b, strat_x, f_spec, rng, block=ix, skip_eps=skip_eps
            )
            state.iter = k
            if x_hat is not None:
                err = relative_error(state.x_primal, x_hat)
            if tol is not None and err <= tol:
                stop = "converged"
                break
            if stride and k % stride == 0:
                record(step_z, step_x, err)
        if not trace.records or trace.records[-1].iter != state.iter:
            record(step_z, step_x, err)
    solve_seconds = time.perf_counter() - t_start
    return RunResult(
        state,
        trace,
        stop,
        setup_seconds,
        solve_seconds,
        strat_z.value if strat_z.kind == "constant" else None,
        strat_x.value if strat_x.kind == "constant" else None,
    )

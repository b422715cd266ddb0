import csv
import gzip
import math
import struct

import numpy as np
import pytest

from kbz.experiments import (
    REPORT_HEADER,
    BenchmarkReport,
    BenchmarkRow,
    IdxFormatError,
    InstanceSpec,
    NoiseUnavailableError,
    SuiteConfig,
    generate_gaussian,
    generate_structured,
    load_mnist_image,
    make_problem,
    nullspace_basis,
    nullspace_noise,
    plant_sparse_solution,
    pseudo_inverse_solution,
    psnr,
    read_pgm,
    recover_image,
    run_benchmark,
    synthetic_image,
    write_idx3,
    write_pgm,
)
from kbz.linalg import DenseMatrix
from kbz.solvers import relative_error

from oracles import jacobi_singular_values, low_rank_factors, pinv_from_factors


# generators ---------------------------------------------------------------------


def test_gaussian_statistics_and_determinism():
    A = generate_gaussian(200, 200, 3).data
    assert -0.02 <= A.mean() <= 0.02
    assert 0.95 <= A.var() <= 1.05
    assert generate_gaussian(200, 200, 3).data.tobytes() == A.tobytes()
    assert not np.array_equal(generate_gaussian(5, 4, 1).data, generate_gaussian(5, 4, 2).data)
    with pytest.raises(ValueError):
        generate_gaussian(0, 3, 0)


def test_structured_rank_and_singular_values():
    A = generate_structured(30, 20, 15, 10.0, 0).data
    s = jacobi_singular_values(A)
    assert int(np.sum(s > 1e-10 * s[0])) == 15
    assert s[0] / s[14] <= 10.0 + 1e-8
    assert np.all((s[:15] > 1.0 - 1e-10) & (s[:15] < 10.0 + 1e-10))


@pytest.mark.parametrize("r, kappa", [(0, 5.0), (21, 5.0), (5, 1.0)])
def test_structured_rejects_bad_arguments(r, kappa):
    with pytest.raises(ValueError):
        generate_structured(30, 20, r, kappa, 0)


@pytest.mark.parametrize("n, frac, nnz", [(1000, 0.01, 10), (50, 0.01, 1), (100, 0.01, 1), (7, 1.0, 7)])
def test_sparse_support_size(n, frac, nnz):
    assert np.count_nonzero(plant_sparse_solution(n, frac, 0)) == nnz


def test_sparse_support_varies_with_seed():
    supports = {tuple(np.flatnonzero(plant_sparse_solution(500, 0.01, s))) for s in range(20)}
    assert len(supports) >= 19
    with pytest.raises(ValueError):
        plant_sparse_solution(10, 0.0, 0)


# noise --------------------------------------------------------------------------


def test_noise_zero_level():
    A = generate_gaussian(6, 3, 0)
    np.testing.assert_array_equal(nullspace_noise(A, np.ones(6), 0.0, 0), np.zeros(6))


def test_noise_orthogonal_with_exact_radius():
    A = generate_gaussian(20, 8, 1)
    y = A.data @ np.ones(8)
    e = nullspace_noise(A, y, 5.0, 1)
    assert np.linalg.norm(A.data.T @ e) <= 1e-8 * np.linalg.norm(A.data) * np.linalg.norm(e)
    assert np.linalg.norm(e) == pytest.approx(5.0 * np.linalg.norm(y), rel=1e-10)


def test_nullspace_basis_dimension():
    B, C = low_rank_factors(9, 6, 4, np.random.default_rng(0))
    N = nullspace_basis(B @ C)
    assert N.shape == (9, 5)
    np.testing.assert_allclose(N.T @ N, np.eye(5), atol=1e-12)


def test_noise_unavailable_for_full_row_rank():
    A = generate_gaussian(4, 6, 0)
    with pytest.raises(NoiseUnavailableError):
        nullspace_noise(A, np.ones(4), 1.0, 0)
    with pytest.raises(ValueError):
        nullspace_noise(A, np.ones(4), -1.0, 0)


# pseudo-inverse ------------------------------------------------------------------


def test_pinv_examples():
    np.testing.assert_allclose(pseudo_inverse_solution(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_allclose(pseudo_inverse_solution(np.array([[1.0, 0], [0, 0]]), [2.0, 3.0]), [2, 0])


@pytest.mark.parametrize("m, n, r", [(10, 6, 6), (10, 6, 4), (6, 10, 6), (8, 8, 3)])
def test_pinv_matches_factorization_oracle(m, n, r):
    rng = np.random.default_rng(m * 100 + n * 10 + r)
    B, C = low_rank_factors(m, n, r, rng)
    b = rng.standard_normal(m)
    x = pseudo_inverse_solution(B @ C, b)
    np.testing.assert_allclose(x, pinv_from_factors(B, C, b), rtol=1e-9, atol=1e-10)


def test_pinv_minimal_among_perturbed_solutions():
    rng = np.random.default_rng(12)
    B, C = low_rank_factors(10, 6, 4, rng)
    A = B @ C
    b = rng.standard_normal(10)
    x = pseudo_inverse_solution(A, b)
    # null(A) = null(C); adding any null vector keeps the residual and grows the norm
    _, _, Vt = np.linalg.svd(C)
    res = np.linalg.norm(A @ x - b)
    for t in np.linspace(-1, 1, 9):
        for v in Vt[4:]:
            y = x + t * v
            assert np.linalg.norm(A @ y - b) == pytest.approx(res, rel=1e-9)
            assert np.linalg.norm(y) >= np.linalg.norm(x) - 1e-12
    # normal equations hold
    np.testing.assert_allclose(A.T @ (A @ x - b), 0, atol=1e-10)


# metrics -------------------------------------------------------------------------


def test_relative_error_examples():
    assert relative_error([3.0, 0.0], [3.0, 4.0]) == pytest.approx(0.8)
    assert relative_error([0.0, 0.0], [3.0, 4.0]) == 1.0
    assert relative_error([3.0, 4.0], [3.0, 4.0]) == 0.0


def test_psnr_examples():
    assert psnr([1.0, 0.0], [1.0, 0.0]) == math.inf
    assert psnr([0.0, 0.0], [1.0, 0.0]) == pytest.approx(0.0)
    assert psnr([0.9, 0.0], [1.0, 0.0]) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        psnr([1.0], [0.0])


# problem instances ---------------------------------------------------------------


def test_sparse_problem_invariants():
    p = InstanceSpec(m=40, n=20, kind="sparse").build(2)
    assert p.kind == "sparse" and p.f_spec.lam == 5.0
    np.testing.assert_allclose(p.b, p.y_hat + p.noise, atol=1e-12)
    assert np.linalg.norm(p.matrix.data.T @ p.noise) <= 1e-8 * np.linalg.norm(p.matrix.data) * np.linalg.norm(p.noise)
    assert np.linalg.norm(p.noise) == pytest.approx(5.0 * np.linalg.norm(p.y_hat), rel=1e-10)


def test_minnorm_reference_is_pinv():
    p = InstanceSpec(generator="structured", m=30, n=20, kind="minnorm", rank=12).build(0)
    np.testing.assert_allclose(p.x_hat, pseudo_inverse_solution(p.matrix, p.b))
    assert p.f_spec.is_quadratic


def test_full_row_rank_problem_is_consistent():
    p = make_problem(generate_gaussian(5, 10, 0), "minnorm", 0)
    assert p.noise_q == 0.0
    np.testing.assert_array_equal(p.noise, np.zeros(5))


def test_instance_labels():
    assert InstanceSpec().label == "gaussian_sparse_200x100"
    assert InstanceSpec("structured", 200, 100, "minnorm", rank=80).label == "structured_minnorm_200x100_r80_k10"


# benchmark -----------------------------------------------------------------------


def test_tiny_suite_one_row_per_method(tmp_path):
    suite = SuiteConfig(
        instances=(InstanceSpec(m=1, n=1, kind="minnorm", q=0.0),),
        methods=("rebk", "reabk", "crabebk", "arabebk"),
        seeds=(0,),
        tau=1,
    )
    report, runs = run_benchmark(suite)
    assert len(report.rows) == 4
    assert all(r.converged for r in report.rows)
    assert set(runs) == {(m, "gaussian_minnorm_1x1", 0) for m in suite.methods}
    report.to_csv(tmp_path / "r.csv")
    rows = list(csv.reader((tmp_path / "r.csv").open()))
    assert tuple(rows[0]) == REPORT_HEADER
    assert len(rows) == 5


def test_benchmark_is_deterministic():
    suite = SuiteConfig(instances=(InstanceSpec(m=30, n=15, kind="sparse"),), seeds=(0, 1), tau=5)
    r1, _ = run_benchmark(suite)
    r2, _ = run_benchmark(suite)
    strip = lambda rep: [(r.method, r.instance, r.seed, r.iters, r.final_rel_err) for r in rep.rows]
    assert strip(r1) == strip(r2)
    assert "arabebk IT" in r1.format_table()


def test_benchmark_rejects_reabk_on_sparse():
    with pytest.raises(ValueError, match="reabk"):
        run_benchmark(SuiteConfig(methods=("reabk",), seeds=(0,)))


def test_report_rejects_duplicate_keys():
    rep = BenchmarkReport()
    row = BenchmarkRow("rebk", "x", 0, 1, 0.0, 0.0, 0.0, math.inf, True)
    rep.add(row)
    with pytest.raises(ValueError, match="duplicate"):
        rep.add(row)
    assert rep.median_iterations("rebk", "x") == 1


# image I/O -----------------------------------------------------------------------


def _idx_file(path, images, magic=2051):
    images = np.asarray(images, dtype=np.uint8)
    k, r, c = images.shape
    path.write_bytes(struct.pack(">IIII", magic, k, r, c) + images.tobytes())


def test_mnist_reader_accepts_idx3(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, size=(3, 28, 28))
    _idx_file(tmp_path / "img", imgs)
    x = load_mnist_image(tmp_path / "img", 2)
    assert x.shape == (784,)
    assert 0 <= x.min() and x.max() <= 1
    np.testing.assert_allclose(x * 255, imgs[2].ravel())


def test_mnist_reader_gzip_and_writer_round_trip(tmp_path):
    imgs = np.arange(2 * 28 * 28).reshape(2, 28, 28) % 256
    write_idx3(tmp_path / "a", imgs)
    (tmp_path / "a.gz").write_bytes(gzip.compress((tmp_path / "a").read_bytes()))
    np.testing.assert_allclose(load_mnist_image(tmp_path / "a.gz", 1) * 255, imgs[1].ravel())


def test_mnist_reader_rejects_label_magic(tmp_path):
    _idx_file(tmp_path / "lbl", np.zeros((1, 28, 28)), magic=2049)
    with pytest.raises(IdxFormatError, match="offset 0"):
        load_mnist_image(tmp_path / "lbl", 0)


def test_mnist_reader_truncation_and_index(tmp_path):
    _idx_file(tmp_path / "img", np.zeros((2, 28, 28)))
    data = (tmp_path / "img").read_bytes()
    (tmp_path / "short").write_bytes(data[:-10])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_mnist_image(tmp_path / "short", 1)
    (tmp_path / "hdr").write_bytes(data[:8])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_mnist_image(tmp_path / "hdr", 0)
    with pytest.raises(IndexError):
        load_mnist_image(tmp_path / "img", 2)


def test_pgm_format(tmp_path):
    x = np.linspace(-0.5, 1.5, 784)
    write_pgm(tmp_path / "a.pgm", x)
    lines = (tmp_path / "a.pgm").read_text().splitlines()
    assert lines[:3] == ["P2", "28 28", "255"]
    px = read_pgm(tmp_path / "a.pgm")
    assert px.shape == (28, 28)
    np.testing.assert_array_equal(px.ravel(), np.rint(255 * np.clip(x, 0, 1)).astype(int))
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "b.pgm", np.zeros(10))


def test_synthetic_image():
    img = synthetic_image(8)
    assert img.shape == (64,)
    assert np.count_nonzero(img) == 11
    assert 0 <= img.min() and img.max() == 1.0


def test_recover_image_exact_budget():
    out = recover_image(synthetic_image(8), 128, "minnorm", ("reabk", "arabebk"), 50, 0, tau=16)
    assert set(out) == {"reabk", "arabebk"}
    for x, p in out.values():
        assert x.shape == (64,) and np.isfinite(p)

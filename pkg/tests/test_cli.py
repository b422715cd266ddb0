import csv
import struct
import subprocess
import sys

import numpy as np
import pytest

from kbz.cli import main, read_suite_file
from kbz.experiments import InstanceSpec, read_pgm, write_idx3
from kbz.linalg import save_matrix
from kbz.solvers import TRACE_HEADER, SolverConfig, run

SMALL = ["--m", "40", "--n", "20", "--tau", "5"]


def _rows(path):
    return list(csv.reader(open(path)))


def _strip_time(rows, cols):
    return [[v for k, v in enumerate(r) if k not in cols] for r in rows]


def test_solve_spec_example(tmp_path, capsys):
    code = main(
        ["solve", "--gen", "gaussian", "--m", "200", "--n", "100", "--kind", "sparse", "--lambda", "5",
         "--method", "arabebk", "--tau", "20", "--tol", "1e-5", "--seed", "1", "--out", str(tmp_path)]
    )
    assert code == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("method=arabebk iters=") and "stop=converged" in line
    rows = _rows(tmp_path / "trace_arabebk_seed1.csv")
    assert tuple(rows[0]) == TRACE_HEADER
    # same run in-process
    p = InstanceSpec(m=200, n=100).build(1)
    res = run(SolverConfig(f_spec=p.f_spec, tau=20, tol=1e-5, seed=1), p)
    assert f"iters={res.iterations} " in line
    assert int(rows[-1][0]) == res.iterations


def test_solve_max_iters_exit_code(tmp_path, capsys):
    code = main(["solve", "--method", "rebk", *SMALL, "--max-iters", "3", "--out", str(tmp_path)])
    assert code == 2
    assert "stop=max_iters" in capsys.readouterr().out


def test_missing_method_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve", *SMALL])
    assert exc.value.code == 1
    assert "usage:" in capsys.readouterr().err


def test_tau_zero_cites_range(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--method", "arabebk", "--tau", "0"])
    assert exc.value.code == 1
    assert ">= 1" in capsys.readouterr().err


def test_unknown_method_lists_valid_names(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--methods", "rebk,foo"])
    assert exc.value.code == 1
    err = capsys.readouterr().err
    assert "foo" in err and "arabebk" in err and "crabebk" in err


@pytest.mark.parametrize(
    "argv, needle",
    [
        (["solve", "--method", "arabebk", "--delta-z", "2.5"], "(0, 2)"),
        (["solve", "--method", "reabk", "--kind", "sparse"], "reabk"),
        (["solve", "--method", "arabebk", "--gen", "structured", "--m", "10", "--n", "5", "--rank", "6"], "--rank"),
        (["solve", "--method", "arabebk", "--gen", "file"], "--matrix"),
    ],
)
def test_invalid_configs_rejected(tmp_path, capsys, argv, needle):
    assert main([*argv, "--out", str(tmp_path)]) == 1
    assert needle in capsys.readouterr().err


def test_solve_from_files(tmp_path, capsys):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((12, 5))
    b = rng.standard_normal(12)
    save_matrix(tmp_path / "A.txt", A)
    np.savetxt(tmp_path / "b.txt", b)
    code = main(
        ["solve", "--gen", "file", "--matrix", str(tmp_path / "A.txt"), "--rhs", str(tmp_path / "b.txt"),
         "--kind", "minnorm", "--method", "arabebk", "--tau", "3", "--tol", "1e-8", "--out", str(tmp_path)]
    )
    assert code == 0
    np.savetxt(tmp_path / "short.txt", b[:5])
    code = main(
        ["solve", "--gen", "file", "--matrix", str(tmp_path / "A.txt"), "--rhs", str(tmp_path / "short.txt"),
         "--method", "arabebk", "--out", str(tmp_path)]
    )
    assert code == 1
    assert "expected 12" in capsys.readouterr().err


def test_output_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("KBZ_OUT", str(tmp_path / "env"))
    assert main(["solve", "--method", "rebk", *SMALL, "--max-iters", "2"]) == 2
    assert (tmp_path / "env" / "trace_rebk_seed0.csv").exists()


def test_solve_reproducible_except_timing(tmp_path, capsys):
    for d in ("a", "b"):
        main(["solve", "--method", "crabebk", *SMALL, "--seed", "3", "--out", str(tmp_path / d)])
    elapsed = {TRACE_HEADER.index("elapsed_s")}
    a = _strip_time(_rows(tmp_path / "a" / "trace_crabebk_seed3.csv"), elapsed)
    b = _strip_time(_rows(tmp_path / "b" / "trace_crabebk_seed3.csv"), elapsed)
    assert a == b


def test_bench_rows_and_filtering(tmp_path, capsys):
    code = main(["bench", *SMALL, "--seeds", "0-2", "--methods", "rebk,arabebk", "--out", str(tmp_path)])
    assert code == 0
    rows = _rows(tmp_path / "report.csv")
    assert rows[0] == ["method", "instance", "seed", "iters", "setup_s", "solve_s", "final_rel_err", "final_psnr"]
    assert len(rows) == 1 + 2 * 3
    assert {r[0] for r in rows[1:]} == {"rebk", "arabebk"}
    assert len(list((tmp_path / "traces").glob("*.csv"))) == 6
    table = capsys.readouterr().out
    assert "rebk IT" in table and "crabebk" not in table


def test_bench_config_file(tmp_path, capsys):
    cfg = tmp_path / "suite.txt"
    cfg.write_text("# small suite\nm = 30\nn = 15\ntau = 5\nseeds = 1,4\nmethods = crabebk\nkind = sparse\n")
    assert read_suite_file(cfg)["seeds"] == "1,4"
    code = main(["bench", "--config", str(cfg), "--m=40", "--out", str(tmp_path)])
    assert code == 0
    rows = _rows(tmp_path / "report.csv")[1:]
    assert [(r[0], r[1], r[2]) for r in rows] == [
        ("crabebk", "gaussian_sparse_40x15", "1"), ("crabebk", "gaussian_sparse_40x15", "4")
    ]


def test_bench_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "suite.txt"
    cfg.write_text("colour = blue\n")
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "unknown key" in capsys.readouterr().err


def test_recover_synthetic(tmp_path, capsys):
    code = main(["recover", "--synthetic", "--iterations", "2000", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    psnr = {ln.split()[0]: float(ln.split("psnr=")[1].split()[0]) for ln in out.strip().splitlines()}
    assert psnr["arabebk"] > psnr["rebk"]
    for name in ("original", "rebk", "crabebk", "arabebk"):
        assert read_pgm(tmp_path / f"{name}.pgm").shape == (8, 8)


def test_recover_mnist_file(tmp_path, capsys):
    img = np.zeros((1, 28, 28), dtype=np.uint8)
    img[0, 5:20, 14] = 255
    write_idx3(tmp_path / "imgs", img)
    code = main(
        ["recover", "--mnist", str(tmp_path / "imgs"), "--kind", "minnorm", "--m", "900",
         "--iterations", "20", "--out", str(tmp_path)]
    )
    assert code == 0
    lines = (tmp_path / "arabebk.pgm").read_text().splitlines()
    assert lines[:3] == ["P2", "28 28", "255"]
    assert read_pgm(tmp_path / "original.pgm").shape == (28, 28)


def test_recover_corrupt_magic(tmp_path, capsys):
    (tmp_path / "bad").write_bytes(struct.pack(">IIII", 2049, 1, 28, 28) + bytes(784))
    assert main(["recover", "--mnist", str(tmp_path / "bad"), "--out", str(tmp_path)]) == 1
    assert "offset 0" in capsys.readouterr().err


def test_inspect(capsys):
    assert main(["inspect", "--m", "6", "--n", "6", "--tau", "2"]) == 0
    out = capsys.readouterr().out
    assert "beta_max rows" in out and "crabebk alpha" in out


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "kbz.cli", "inspect", "--m", "4", "--n", "3", "--tau", "2"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "shape            4 x 3" in proc.stdout

import csv
import subprocess
import sys

import numpy as np
import pytest

from bhsne import cli
from bhsne.ingest import RunConfig, read_embedding, write_binary


@pytest.fixture(scope="module")
def blobs(tmp_path_factory):
    """Five Gaussian blobs in 20-D; CSV with a label column and a binary copy."""
    root = tmp_path_factory.mktemp("data")
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((5, 20)) * 4
    labels = rng.integers(0, 5, 500)
    X = centers[labels] + rng.standard_normal((500, 20))
    np.savetxt(root / "blobs.csv", np.column_stack([X, labels]), delimiter=",",
               fmt="%.17g")
    write_binary(root / "blobs.bin", X)
    (root / "labels.txt").write_text("\n".join(map(str, labels)) + "\n")
    return root, X, labels


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_defaults_follow_standard_setup():
    args = cli.build_parser().parse_args(
        ["embed", "--input", "data.bin", "--theta", "0.5", "--out", "emb.csv"])
    assert cli.config_from_args(args) == RunConfig(theta=0.5)


def test_embed_binary_input(blobs, tmp_path, capsys):
    root, X, labels = blobs
    out = tmp_path / "emb.csv"
    assert _run("embed", "--input", root / "blobs.bin", "--theta", 0.5, "--out", out,
                "--iters", 300) == 0
    Y, lab = read_embedding(out)
    assert Y.shape == (500, 2) and lab is None
    assert capsys.readouterr().out == ""  # no labels, no report


def test_embed_report_with_label_column(blobs, tmp_path, capsys):
    root, _, labels = blobs
    out = tmp_path / "emb.csv"
    assert _run("embed", "--input", root / "blobs.csv", "--labels", "--out", out,
                "--iters", 300, "--dims", 3) == 0
    Y, lab = read_embedding(out, has_label_column=True)
    assert Y.shape == (500, 3)
    np.testing.assert_array_equal(lab, labels)
    header, row = capsys.readouterr().out.strip().splitlines()
    report = dict(zip(header.split(","), row.split(",")))
    assert float(report["knn_error"]) < 0.05
    assert float(report["kl_cost"]) > 0 and float(report["wall_time_seconds"]) > 0


def test_embed_labels_file(blobs, tmp_path, capsys):
    root, _, labels = blobs
    out = tmp_path / "emb.csv"
    assert _run("embed", "--input", root / "blobs.bin", "--labels", root / "labels.txt",
                "--out", out, "--iters", 50) == 0
    np.testing.assert_array_equal(read_embedding(out, has_label_column=True)[1], labels)


@pytest.mark.parametrize("flags", [["--algorithm", "bh", "--theta", "0"],
                                   ["--algorithm", "dual", "--rho", "0"]])
def test_zero_parameter_matches_exact(blobs, tmp_path, flags):
    root, _, _ = blobs
    _run("embed", "--input", root / "blobs.bin", "--out", tmp_path / "exact.csv",
         "--algorithm", "exact", "--seed", 7, "--threads", 1)
    _run("embed", "--input", root / "blobs.bin", "--out", tmp_path / "tree.csv",
         *flags, "--seed", 7, "--threads", 1)
    a = read_embedding(tmp_path / "exact.csv")[0]
    b = read_embedding(tmp_path / "tree.csv")[0]
    assert np.abs(a - b).max() <= 1e-6


def test_same_seed_byte_identical(blobs, tmp_path):
    root, _, _ = blobs
    for name in ("a.csv", "b.csv"):
        assert _run("embed", "--input", root / "blobs.bin", "--out", tmp_path / name,
                    "--seed", 7, "--threads", 1, "--iters", 200) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_different_seed_differs(blobs, tmp_path):
    root, _, _ = blobs
    for seed in (1, 2):
        _run("embed", "--input", root / "blobs.bin", "--out", tmp_path / f"{seed}.csv",
             "--seed", seed, "--iters", 20)
    assert (tmp_path / "1.csv").read_bytes() != (tmp_path / "2.csv").read_bytes()


# exit codes


def test_usage_error_unknown_flag(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["embed", "--input", "x", "--out", "y", "--bogus"])
    assert info.value.code == cli.EXIT_USAGE


def test_usage_error_bad_value(blobs, tmp_path):
    root, _, _ = blobs
    assert _run("embed", "--input", root / "blobs.bin", "--out", tmp_path / "e.csv",
                "--perplexity", -3) == cli.EXIT_USAGE


def test_data_error_missing_file(tmp_path):
    assert _run("embed", "--input", tmp_path / "nope.csv", "--out",
                tmp_path / "e.csv") == cli.EXIT_DATA


def test_data_error_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert _run("embed", "--input", bad, "--out", tmp_path / "e.csv") == cli.EXIT_DATA
    assert "bad.csv:2" in capsys.readouterr().err


def test_data_error_label_count(blobs, tmp_path):
    root, _, _ = blobs
    short = tmp_path / "short.txt"
    short.write_text("0\n1\n")
    assert _run("embed", "--input", root / "blobs.bin", "--labels", short,
                "--out", tmp_path / "e.csv") == cli.EXIT_DATA


def test_numeric_failure(blobs, tmp_path, capsys):
    root, _, _ = blobs
    code = _run("embed", "--input", root / "blobs.bin", "--out", tmp_path / "e.csv",
                "--eta", 1e300, "--iters", 50)
    assert code == cli.EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


def test_exact_guard(tmp_path, capsys):
    big = tmp_path / "big.bin"
    write_binary(big, np.random.default_rng(0).random((cli.EXACT_GUARD_N + 1, 2)))
    assert _run("embed", "--input", big, "--out", tmp_path / "e.csv",
                "--algorithm", "exact") == cli.EXIT_USAGE
    assert "--force" in capsys.readouterr().err


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bhsne.cli", "embed", "--input",
                           str(tmp_path / "missing.bin"), "--out", str(tmp_path / "o.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == cli.EXIT_DATA


# benchmarks


def test_default_grids():
    assert 0.5 in cli._parse_grid(cli.DEFAULT_THETA_GRID, float)
    assert 0.25 in cli._parse_grid(cli.DEFAULT_RHO_GRID, float)
    assert cli._parse_grid(cli.DEFAULT_SIZE_GRID, int) == [1250, 2500, 5000, 10000]


def test_bench_theta_csv_and_resume(blobs, tmp_path):
    root, _, _ = blobs
    out = tmp_path / "theta.csv"
    argv = ["bench-theta", "--input", root / "blobs.csv", "--labels", "--out", out,
            "--bench-grid", "0.8,0.2", "--iters", 40, "--repeats", 2, "--exact-cap", 100]
    assert _run(*argv) == 0
    rows = _rows(out)
    assert list(rows[0].keys())[:7] == cli.BENCH_COLUMNS
    assert [float(r["param"]) for r in rows] == [0.2, 0.8]  # sorted by theta
    assert all(r["algorithm"] == "bh" and float(r["seconds"]) > 0 for r in rows)
    assert all(r["perplexity"] == "30.0" and r["iterations"] == "40" for r in rows)

    assert _run(*argv, "--resume") == 0
    assert len(_rows(out)) == 2
    assert _run(*argv[:-2], "--exact-cap", 1000, "--resume") == 0
    rows = _rows(out)
    assert [r["algorithm"] for r in rows] == ["bh", "bh", "exact"]
    assert out.read_text().count("algorithm,") == 1  # header written once


def test_bench_append_without_resume(blobs, tmp_path):
    root, _, _ = blobs
    out = tmp_path / "theta.csv"
    argv = ["bench-theta", "--input", root / "blobs.csv", "--labels", "--out", out,
            "--bench-grid", "0.5", "--iters", 20, "--repeats", 1, "--exact-cap", 0]
    _run(*argv)
    _run(*argv)
    assert len(_rows(out)) == 2


def test_bench_size_nested_subsets(blobs, tmp_path):
    root, _, _ = blobs
    out = tmp_path / "size.csv"
    assert _run("bench-size", "--input", root / "blobs.csv", "--labels", "--out", out,
                "--bench-grid", "300,150", "--iters", 30, "--repeats", 1,
                "--exact-cap", 150, "--perplexity", 10) == 0
    rows = _rows(out)
    assert [(r["algorithm"], int(r["n"])) for r in rows] == \
        [("exact", 150), ("bh", 150), ("bh", 300)]


def test_bench_size_grid_too_large(blobs, tmp_path):
    root, _, _ = blobs
    assert _run("bench-size", "--input", root / "blobs.csv", "--labels", "--out",
                tmp_path / "s.csv", "--bench-grid", "1000") == cli.EXIT_USAGE


def test_bench_dual(blobs, tmp_path):
    root, _, _ = blobs
    out = tmp_path / "rho.csv"
    assert _run("bench-dual", "--input", root / "blobs.csv", "--labels", "--out", out,
                "--bench-grid", "0.25", "--iters", 30, "--repeats", 1) == 0
    (row,) = _rows(out)
    assert row["algorithm"] == "dual" and float(row["param"]) == 0.25
    assert float(row["knn_error"]) >= 0 and float(row["final_kl"]) > 0


def test_bench_bad_grid(blobs, tmp_path):
    root, _, _ = blobs
    assert _run("bench-theta", "--input", root / "blobs.csv", "--out",
                tmp_path / "t.csv", "--bench-grid", "a,b") == cli.EXIT_USAGE


def test_bench_seconds_decrease_with_theta(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((3000, 10))
    write_binary(tmp_path / "x.bin", X)
    out = tmp_path / "t.csv"
    assert _run("bench-theta", "--input", tmp_path / "x.bin", "--out", out,
                "--bench-grid", "0.1,0.5,1.0", "--iters", 100, "--repeats", 3,
                "--exact-cap", 0) == 0
    seconds = [float(r["seconds"]) for r in _rows(out)]
    assert all(s > 0 for s in seconds)
    assert seconds[0] >= seconds[1] >= seconds[2], seconds

import csv
import io
import json

import numpy as np
import pytest

from specsum import cli
from specsum.gadgets import CircuitGadget, save_gadget
from specsum.oracle import save_matrix_file


def run(capsys, *argv):
    rc = cli.main(list(argv))
    return rc, capsys.readouterr().out


def run_json(capsys, *argv):
    rc, out = run(capsys, *argv)
    return rc, json.loads(out)


@pytest.fixture
def two_cycle(tmp_path):
    path = tmp_path / "x2cycle.herm"
    save_matrix_file(np.array([[0.0, 1.0], [1.0, 0.0]]), path)
    return str(path)


def test_logdet_of_identity_family(capsys):
    rc, d = run_json(capsys, "estimate", "logdet", "--family", "diagonal-spectrum", "--n", "4", "--kappa", "1",
                     "--eps", "0.1", "--delta", "0.01", "--seed", "1")
    assert rc == 0 and abs(d["value"]) <= 0.1


def test_odd_power_of_two_cycle(capsys, two_cycle):
    rc, d = run_json(capsys, "estimate", "power", "--p", "7", "--file", two_cycle, "--eps", "0.1", "--delta", "0.01")
    assert rc == 0 and abs(d["value"]) <= 0.1


def test_estimate_matches_compare(capsys):
    args = ["trinv", "--family", "shifted-laplacian-ring", "--n", "6", "--kappa", "4", "--eps", "0.05",
            "--delta", "0.001", "--method", "chebyshev", "--seed", "7"]
    _, e = run_json(capsys, "estimate", *args)
    _, c = run_json(capsys, "compare", *args)
    assert e["value"] == c["value"]
    assert abs(e["value"] - c["exact"]) <= 0.05 and c["pass"]


def test_compare_identity_is_exact(capsys, tmp_path):
    path = tmp_path / "eye.herm"
    save_matrix_file(np.eye(4), path)
    rc, d = run_json(capsys, "compare", "trace", "--file", str(path))
    assert rc == 0 and d["abs_err"] == 0.0


def test_compare_coverage(capsys):
    rc, d = run_json(capsys, "compare", "logdet", "--family", "diagonal-spectrum", "--n", "5", "--kappa", "4",
                     "--family-seed", "2", "--seeds", "200")
    assert rc == 0 and d["seeds"] == 200
    assert d["coverage"] >= d["required"] == pytest.approx(1 - 1e-3 - 0.02)


def test_no_timing_is_byte_identical(capsys, tmp_path):
    args = ["estimate", "logdet", "--family", "banded-random", "--n", "5", "--kappa", "4", "--seed", "3",
            "--samples", "400", "--no-timing"]
    outs = []
    for w in ("1", "2", "8"):
        out = tmp_path / f"w{w}.json"
        assert cli.main([*args, "--workers", w, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert json.loads(outs[0])["elapsed_ms"] == 0.0


def test_log10_display(capsys):
    args = ["estimate", "logdet", "--family", "shifted-laplacian-ring", "--n", "4", "--kappa", "4", "--seed", "2"]
    _, ln = run_json(capsys, *args)
    _, lg = run_json(capsys, *args, "--log10")
    assert lg["value"] == pytest.approx(ln["value"] / np.log(10))
    assert lg["log_base"] == 10


def test_csv_format(capsys):
    rc, out = run(capsys, "estimate", "trace", "--family", "shifted-laplacian-ring", "--n", "3", "--kappa", "2",
                  "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rc == 0 and len(rows) == 1 and rows[0]["target"] == "normalized-trace"


def test_hamiltonian_source(capsys, tmp_path):
    path = tmp_path / "h.localham"
    path.write_text("LOCALHAM 2 1\nTERM 1 0 1\n0.5 0\n0 0\n0 0\n1 0\n")
    rc, d = run_json(capsys, "compare", "logdet", "--hamiltonian", str(path), "--lambda-min", "0.5",
                     "--lambda-max", "1", "--eps", "0.1", "--delta", "0.01")
    assert rc == 0 and d["pass"]
    assert d["exact"] == pytest.approx(-0.34657359027997264)


def test_gadget_source(capsys, tmp_path):
    path = tmp_path / "h.gadget"
    save_gadget(CircuitGadget(1, [("h", 0)]), path)
    rc, d = run_json(capsys, "compare", "logdet", "--gadget", str(path), "--samples", "2000")
    assert rc == 0 and d["abs_err"] <= 0.05


@pytest.mark.parametrize(
    "argv,code",
    [
        (["estimate", "logdet", "--family", "nope"], 2),
        (["estimate", "logdet", "--family", "shifted-laplacian-ring", "--eps", "2"], 2),
        (["estimate", "logdet"], 2),
        (["estimate", "logdet", "--file", "/nonexistent.herm", "--kappa", "4"], 2),
        (["estimate", "trinv", "--family", "shifted-laplacian-ring", "--n", "4", "--kappa", "64",
          "--method", "chebyshev"], 3),
    ],
)
def test_exit_codes(capsys, argv, code):
    assert cli.main(argv) == code


def test_gadget_command_hadamard(capsys, tmp_path):
    path = tmp_path / "h.gadget"
    save_gadget(CircuitGadget(1, [("h", 0)]), path)
    rc, d = run_json(capsys, "gadget", "--gadget", str(path))
    assert rc == 0 and d["pass"]
    assert d["checks"]["determinant"]["predicted"][0] == pytest.approx(1 + 0.7071067811865476)
    rows = d["checks"]["brandao_sweep"]["rows"]
    assert [r["J"] for r in rows] == [1, 4, 16, 64]


def test_gadget_command_single_x(capsys, tmp_path):
    path = tmp_path / "x.gadget"
    save_gadget(CircuitGadget(1, [("x", 0)]), path)
    rc, d = run_json(capsys, "gadget", "--gadget", str(path), "--sweep", "")
    assert rc == 0 and d["checks"]["determinant"]["pass"]


def test_gadget_command_random(capsys):
    rc, d = run_json(capsys, "gadget", "--random", "2", "2", "--seed", "5")
    assert rc == 0 and d["pass"]
    assert cli.main(["gadget"]) == 2


def test_bench_csv(capsys):
    rc, out = run(capsys, "bench", "--n", "4", "--kappas", "4,64", "--ps", "50", "--samples", "20",
                  "--targets", "logdet,power", "--no-timing")
    assert rc == 0
    lines = out.splitlines()
    assert lines[0] == ",".join(cli.BENCH_HEADER)
    rows = list(csv.DictReader(io.StringIO(out)))
    deg = {(r["target"], r["method"], r["kappa_or_p"]): r["degree"] for r in rows}
    assert int(deg[("logdet", "chebyshev", "64.0")]) < int(deg[("logdet", "taylor", "64.0")])
    assert deg[("power", "chebyshev", "50")] == "21"
    assert all(r["elapsed_ms"] == "0" for r in rows)

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from hmmsv import CLIError, ModelConfig, ParameterSet, ingest, simulate
from hmmsv.cli import load_params, main, params_payload, _json_text

from conftest import random_parameters


def write(path, text):
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# ingestion


def test_ingest_prices_flat(tmp_path):
    path = write(tmp_path / "p.csv", "100\n100\n")
    series = ingest(path, prices=True)
    assert np.allclose(series.y, [0.0])


def test_ingest_prices_log_return(tmp_path):
    path = write(tmp_path / "p.csv", "100\n105\n")
    series = ingest(path, prices=True)
    assert series.y[0] == pytest.approx(4.879016416943205, abs=1e-9)


def test_ingest_returns_passthrough(tmp_path):
    path = write(tmp_path / "r.csv", "0.5\n-1.25\n2.0\n")
    series = ingest(path)
    assert np.allclose(series.y, [0.5, -1.25, 2.0])
    assert series.T == 3


def test_ingest_header_autodetect_and_named_column(tmp_path):
    text = "date,close\n2020-01-01,100\n2020-01-02,105\n2020-01-03,103\n"
    path = write(tmp_path / "px.csv", text)
    series = ingest(path, column="close", prices=True)
    assert series.T == 2
    by_index = ingest(path, column=1, prices=True)
    assert np.allclose(series.y, by_index.y)
    with pytest.raises(CLIError):
        ingest(path, column="nope")
    with pytest.raises(CLIError):
        ingest(path)  # two columns, no selector


def test_ingest_rejects_non_numeric_rows_with_lines(tmp_path):
    path = write(tmp_path / "bad.csv", "1.0\nworld\n3.0\noops\n")
    with pytest.raises(CLIError) as err:
        ingest(path)
    assert "2" in str(err.value) and "4" in str(err.value)


def test_ingest_missing_and_empty(tmp_path):
    with pytest.raises(CLIError):
        ingest(tmp_path / "absent.csv")
    path = write(tmp_path / "empty.csv", "\n\n")
    with pytest.raises(CLIError):
        ingest(path)


def test_ingest_rejects_nonpositive_prices(tmp_path):
    path = write(tmp_path / "neg.csv", "100\n-3\n105\n")
    with pytest.raises(CLIError) as err:
        ingest(path, prices=True)
    assert "2" in str(err.value)
    single = write(tmp_path / "one.csv", "100\n")
    with pytest.raises(CLIError):
        ingest(single, prices=True)


# ---------------------------------------------------------------------------
# full command flows


@pytest.fixture
def sim_csv(tmp_path):
    config = ModelConfig(k=2, h=1)
    truth = random_parameters(2, 1, np.random.default_rng(2), diag_bias=0.6, sigma_range=(0.8, 3.5))
    _, series = simulate(config, truth, 300, seed=12)
    path = tmp_path / "series.csv"
    path.write_text("\n".join(f"{v:.12g}" for v in series.y) + "\n")
    return str(path)


def test_fit_decode_predict_roundtrip(tmp_path, sim_csv, capsys):
    fit_out = str(tmp_path / "fit.json")
    rc = main(
        ["fit", "--input", sim_csv, "--h", "1", "--k", "2", "--starts", "2", "--seed", "7",
         "--max-iter", "200", "--out", fit_out]
    )
    assert rc == 0
    payload = json.loads(open(fit_out).read())
    assert set(payload) >= {"k", "h", "sigma", "early", "pi", "loglik", "npar", "bic", "trace", "converged"}
    assert payload["npar"] == 5
    assert payload["sigma"] == sorted(payload["sigma"])

    dec1 = str(tmp_path / "d1.json")
    dec2 = str(tmp_path / "d2.json")
    assert main(["decode", "--params", fit_out, "--input", sim_csv, "--out", dec1]) == 0
    assert main(["decode", "--params", fit_out, "--input", sim_csv, "--out", dec2]) == 0
    assert open(dec1, "rb").read() == open(dec2, "rb").read()
    decoded = json.loads(open(dec1).read())
    assert len(decoded["states"]) == 300
    assert set(decoded["states"]) <= {1, 2}
    marg = np.asarray(decoded["marginals"])
    assert np.allclose(marg.sum(axis=1), 1.0, atol=1e-6)
    assert np.array_equal(np.argmax(marg, axis=1) + 1, decoded["states"])

    pred = str(tmp_path / "p.json")
    assert main(["predict", "--params", fit_out, "--input", sim_csv, "--out", pred]) == 0
    p = json.loads(open(pred).read())
    assert p["next_state"] in (1, 2)
    assert sum(p["weights"]) == pytest.approx(1.0, abs=1e-6)
    capsys.readouterr()


def test_fit_byte_identical_reruns(tmp_path, sim_csv, capsys):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    args = ["fit", "--input", sim_csv, "--h", "0", "--k", "2", "--starts", "2", "--seed", "5",
            "--max-iter", "150"]
    assert main(args + ["--out", a]) == 0
    assert main(args + ["--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    capsys.readouterr()


def test_grid_single_state_closed_form(tmp_path, sim_csv, capsys):
    out = str(tmp_path / "grid.json")
    rc = main(["grid", "--input", sim_csv, "--h-list", "0", "--k-list", "1", "--out", out])
    assert rc == 0
    payload = json.loads(open(out).read())
    y = np.asarray([float(line) for line in open(sim_csv)])
    T = y.size
    sig = math.sqrt(np.mean(y**2))
    iid = sum(-0.5 * math.log(2 * math.pi * sig * sig) - 0.5 * (v / sig) ** 2 for v in y)
    cell = payload["cells"][0]
    assert cell["loglik"] == pytest.approx(iid, rel=1e-8)
    assert cell["bic"] == pytest.approx(-2 * iid + math.log(T), rel=1e-8)
    assert payload["selected"] == {"h": 0, "k": 1}
    capsys.readouterr()


def test_grid_csv_format(tmp_path, sim_csv, capsys):
    out = str(tmp_path / "grid.csv")
    rc = main(["grid", "--input", sim_csv, "--h-list", "0", "1", "--k-list", "1", "2",
               "--starts", "1", "--max-iter", "120", "--format", "csv", "--out", out])
    assert rc == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "h,k,loglik,npar,bic,converged,selected"
    assert len(lines) == 5
    assert sum(int(line.split(",")[-1]) for line in lines[1:]) == 1
    capsys.readouterr()


def test_decode_single_state(tmp_path, capsys):
    config = ModelConfig(k=1, h=0)
    params_file = tmp_path / "params.json"
    params_file.write_text(
        _json_text(params_payload(config, random_parameters(1, 0, np.random.default_rng(0))))
    )
    data = write(tmp_path / "y.csv", "0.4\n-0.1\n0.9\n")
    out = str(tmp_path / "dec.csv")
    assert main(["decode", "--params", str(params_file), "--input", data, "--format", "csv", "--out", out]) == 0
    rows = open(out).read().strip().splitlines()
    assert rows[0] == "t,state,q1"
    assert all(row.split(",")[1] == "1" and float(row.split(",")[2]) == 1.0 for row in rows[1:])
    capsys.readouterr()


def test_simulate_csv_and_json(tmp_path, capsys):
    config = ModelConfig(k=2, h=1)
    params = random_parameters(2, 1, np.random.default_rng(4))
    params_file = tmp_path / "params.json"
    params_file.write_text(_json_text(params_payload(config, params)))
    out_csv = str(tmp_path / "sim.csv")
    assert main(["simulate", "--params", str(params_file), "--length", "6", "--seed", "3", "--out", out_csv]) == 0
    rows = open(out_csv).read().strip().splitlines()
    assert rows[0] == "t,state,y"
    assert len(rows) == 7
    out_json = str(tmp_path / "sim.json")
    assert main(["simulate", "--params", str(params_file), "--length", "6", "--seed", "3",
                 "--format", "json", "--out", out_json]) == 0
    payload = json.loads(open(out_json).read())
    # same seed: the JSON and CSV routes describe the same draw
    assert [int(r.split(",")[1]) for r in rows[1:]] == payload["states"]
    # library call matches the CLI with the same seed
    states, series = simulate(config, params, 6, seed=3)
    assert payload["states"] == states.tolist()
    capsys.readouterr()


def test_simulate_then_fit_recovers_volatilities(tmp_path, capsys):
    # full command-line loop: write a generating model, simulate a series,
    # refit it, and read the recovered volatility levels back
    config = ModelConfig(k=2, h=1)
    truth = ParameterSet(
        early=(np.array([[0.5, 0.5]]),),
        pi=np.array([[0.95, 0.05], [0.05, 0.95]]),
        sigma=np.array([1.0, 3.0]),
    )
    params_file = tmp_path / "truth.json"
    params_file.write_text(_json_text(params_payload(config, truth)))
    data = str(tmp_path / "sim.csv")
    assert main(["simulate", "--params", str(params_file), "--length", "2000", "--seed", "6",
                 "--format", "csv", "--out", data]) == 0
    series = str(tmp_path / "y.csv")
    rows = open(data).read().strip().splitlines()[1:]
    open(series, "w").write("\n".join(r.split(",")[2] for r in rows) + "\n")
    fit_out = str(tmp_path / "fit.json")
    assert main(["fit", "--input", series, "--h", "1", "--k", "2", "--starts", "2",
                 "--seed", "11", "--max-iter", "300", "--out", fit_out]) == 0
    sigma_hat = np.asarray(json.loads(open(fit_out).read())["sigma"])
    assert np.all(np.abs(sigma_hat - truth.sigma) / truth.sigma <= 0.10)
    capsys.readouterr()


def test_params_file_roundtrip(tmp_path):
    config = ModelConfig(k=3, h=2)
    params = random_parameters(3, 2, np.random.default_rng(8))
    path = tmp_path / "params.json"
    path.write_text(_json_text(params_payload(config, params)))
    config2, params2 = load_params(path)
    assert (config2.k, config2.h) == (3, 2)
    assert np.abs(params2.pi - params.pi).max() < 1e-9
    assert np.abs(params2.sigma - params.sigma).max() < 1e-9


def test_load_params_rejects_broken_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"k": 2, "h": 0, "sigma": [1.0, 2.0], "early": [], "pi": [[0.7, 0.2]]}')
    with pytest.raises(CLIError):
        load_params(path)
    path.write_text("not json")
    with pytest.raises(CLIError):
        load_params(path)
    with pytest.raises(CLIError):
        load_params(tmp_path / "missing.json")


def test_cli_error_exit_codes(tmp_path, capsys):
    rc = main(["fit", "--input", str(tmp_path / "none.csv"), "--h", "1", "--k", "2"])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_module_entry_point_help():
    proc = subprocess.run(
        [sys.executable, "-m", "hmmsv", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "fit" in proc.stdout and "grid" in proc.stdout

import json
import subprocess
import sys

import numpy as np
import pytest

from hwbnn.cli import EXIT_OK, EXIT_USAGE, EXIT_WARN, main
from hwbnn.io import read_params, read_quant


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert code in (EXIT_OK, EXIT_WARN), err
    return code, out, json.loads(out)


@pytest.fixture(scope="module")
def toy_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("csv")
    r = np.random.default_rng(0)
    centers = r.normal(0, 3, (3, 5))
    for split, n in (("train", 90), ("test", 30)):
        y = np.arange(n) % 3
        X = centers[y] + r.normal(0, 0.5, (n, 5))
        rows = ["f0,f1,f2,f3,f4,label"] + [",".join(f"{v:.6f}" for v in x) + f",{c}" for x, c in zip(X, y)]
        (d / f"toy_{split}.csv").write_text("\n".join(rows) + "\n")
    return str(d / "toy_train.csv")


@pytest.fixture(scope="module")
def trained(toy_csv, tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    vib, vibq = str(d / "p.vib"), str(d / "p.vibq")
    assert main(["train", "--dataset", toy_csv, "--topology", "5,8,3", "--epochs", "20",
                 "--batch-size", "10", "--out", vib]) == EXIT_OK
    assert main(["quantize", "--params", vib, "--out", vibq]) == EXIT_OK
    return vib, vibq


class TestGen:
    def test_text_stream(self, capsys):
        code, out, _ = run(capsys, "gen", "--count", "7", "--seed", "3")
        vals = [float(v) for v in out.split()]
        assert code == EXIT_OK and len(vals) == 7

    def test_raw_sums_and_state(self, capsys, tmp_path):
        dump = tmp_path / "state.hex"
        code, out, _ = run(capsys, "gen", "--count", "100", "--raw-sums", "--dump-state", str(dump))
        sums = [int(v) for v in out.split()]
        assert code == EXIT_OK and all(0 <= s <= 255 for s in sums)
        assert dump.read_text().startswith("n 255 m 64")

    @pytest.mark.parametrize("variant", ["ring", "nss", "software"])
    def test_wallace_variants(self, capsys, variant):
        _, _, rep = run_json(capsys, "gen", "--grng", "wallace", "--variant", variant, "--count", "16")
        assert len(rep["samples"]) == 16 and rep["config"]["variant"] == variant
        assert rep["config"]["pool"] == (4096 if variant == "software" else 256)

    def test_raw_sums_rlf_only(self, capsys):
        code, _, err = run(capsys, "gen", "--grng", "wallace", "--raw-sums")
        assert code == EXIT_USAGE and "rlf only" in err

    def test_json_deterministic(self, capsys):
        a = run_json(capsys, "gen", "--count", "50", "--seed", "9")[1]
        b = run_json(capsys, "gen", "--count", "50", "--seed", "9")[1]
        c = run_json(capsys, "gen", "--count", "50", "--seed", "10")[1]
        assert a == b and a != c


class TestStats:
    @pytest.mark.parametrize("kind", ["rlf", "wallace", "nss", "software", "reference"])
    def test_report(self, capsys, kind):
        _, out, rep = run_json(capsys, "stats", "--grng", kind, "--samples", "2000", "--trials", "3")
        assert 0 <= rep["pass_rate"] <= 1
        assert rep["config"]["trials"] == 3 and rep["config"]["seed"] == 0
        assert ("binomial_gof_p" in rep) == (kind == "rlf")
        again = run_json(capsys, "stats", "--grng", kind, "--samples", "2000", "--trials", "3")[1]
        assert out == again

    def test_text_summary(self, capsys):
        code, out, _ = run(capsys, "stats", "--grng", "reference", "--samples", "1000", "--trials", "2")
        assert code == EXIT_OK and out.startswith("reference: mu_error")


class TestValidateConfig:
    def test_reference_config_warns(self, capsys):
        code, _, rep = run_json(capsys, "validate-config")
        sev = {c["name"]: c["severity"] for c in rep["constraints"]}
        assert code == EXIT_WARN
        assert sev == {"pe_count": "warning", "word_size": "pass", "square_pe": "pass", "pe_total": "pass"}

    def test_clean_config(self, capsys):
        code, _, _ = run_json(capsys, "validate-config", "--T", "1")
        assert code == EXIT_OK

    def test_invalid_field(self, capsys):
        assert run(capsys, "validate-config", "--B", "0")[0] == EXIT_USAGE


class TestModelPipeline:
    def test_train_writes_params(self, trained):
        p = read_params(trained[0])
        assert [w.shape for w in p.mu_w] == [(5, 8), (8, 3)]
        assert read_quant(trained[1]).spec.total_bits == 8

    def test_train_report_has_config(self, capsys, toy_csv, tmp_path):
        _, _, rep = run_json(capsys, "train", "--dataset", toy_csv, "--topology", "5,4,3",
                             "--epochs", "2", "--out", str(tmp_path / "x.vib"), "--seed", "5")
        assert rep["config"]["seed"] == 5 and rep["config"]["topology"] == "5,4,3"
        assert len(rep["epoch_loss"]) == 2

    def test_fnn_flag(self, capsys, toy_csv, tmp_path):
        out = str(tmp_path / "f.vib")
        code, _, _ = run(capsys, "train", "--dataset", toy_csv, "--topology", "5,4,3", "--fnn",
                         "--dropout", "0.2", "--epochs", "2", "--out", out)
        assert code == EXIT_OK
        assert np.all(read_params(out).sigma_w[0] == 0)

    @pytest.mark.parametrize("grng", ["rlf", "wallace", "reference"])
    def test_infer(self, capsys, toy_csv, trained, grng):
        _, _, rep = run_json(capsys, "infer", "--params", trained[1], "--dataset", toy_csv,
                             "--grng", grng, "--mc", "4")
        assert rep["config"]["spec"] == "s8.5" and rep["config"]["images"] == 30
        assert rep["accuracy"] > 0.9

    def test_infer_float_and_quant_flag(self, capsys, toy_csv, trained):
        f = run_json(capsys, "infer", "--params", trained[0], "--dataset", toy_csv)[2]
        q = run_json(capsys, "infer", "--params", trained[0], "--dataset", toy_csv, "--quant", "8")[2]
        assert f["config"]["spec"] == "float" and q["config"]["spec"] == "s8.5"

    def test_sweep(self, capsys, toy_csv, trained):
        _, _, rep = run_json(capsys, "sweep-bitlength", "--params", trained[0], "--dataset", toy_csv,
                             "--bits", "4,8,16", "--mc", "2")
        assert [r["bits"] for r in rep["rows"]] == [4, 8, 16]
        assert rep["threshold"] == pytest.approx(rep["float_accuracy"] - 0.006)

    def test_experiment_small_data(self, capsys, toy_csv):
        _, _, rep = run_json(capsys, "experiment", "small-data", "--dataset", toy_csv,
                             "--fraction", "1/3", "--seeds", "2", "--topology", "5,8,3", "--mc", "2")
        assert [r["seed"] for r in rep["runs"]] == [0, 1]
        assert rep["config"]["fraction"] == pytest.approx(1 / 3)
        assert rep["bnn_not_worse"] == (rep["bnn_mean"] >= rep["fnn_mean"])

    def test_reports_byte_identical(self, capsys, toy_csv, trained, tmp_path):
        cmds = [
            ["infer", "--params", trained[1], "--dataset", toy_csv, "--seed", "4"],
            ["train", "--dataset", toy_csv, "--topology", "5,4,3", "--epochs", "2",
             "--out", str(tmp_path / "d.vib"), "--seed", "4"],
            ["quantize", "--params", trained[0], "--bits", "6", "--out", str(tmp_path / "d.vibq")],
        ]
        for argv in cmds:
            assert run_json(capsys, *argv)[1] == run_json(capsys, *argv)[1]


class TestErrors:
    def test_missing_file(self, capsys, toy_csv):
        code, _, err = run(capsys, "infer", "--params", "/nonexistent.vib", "--dataset", toy_csv)
        assert code == EXIT_USAGE and "error" in err

    def test_malformed_params(self, capsys, toy_csv, tmp_path):
        bad = tmp_path / "bad.vib"
        bad.write_bytes(b"VIBP\x01\x00")
        code, _, err = run(capsys, "infer", "--params", str(bad), "--dataset", toy_csv)
        assert code == EXIT_USAGE

    def test_bad_usage(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["stats", "--no-such-flag"])
        assert e.value.code == EXIT_USAGE

    def test_bad_fraction(self, capsys, toy_csv):
        with pytest.raises(SystemExit) as e:
            main(["experiment", "small-data", "--dataset", toy_csv, "--fraction", "1/0"])
        assert e.value.code == EXIT_USAGE

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "hwbnn", "validate-config", "--json"],
                           capture_output=True, text=True)
        assert r.returncode == EXIT_WARN and json.loads(r.stdout)["config"]["M"] == 128

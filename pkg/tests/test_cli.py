import csv
import io
import math
import subprocess
import sys

import numpy as np
import pytest

from dpdynamics.cli import main
from dpdynamics.trainer import Dataset, save_dataset

from conftest import mc_records


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def table(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def meta(text):
    return dict(line[2:].split("=", 1) for line in text.splitlines() if line.startswith("# "))


ACCOUNT = "--alpha 10 --lambda 1 --sg 4 --sigma 0.02 --n 5000 --eta 0.02".split()


def test_account_converging(capsys):
    code, out, _ = run(["account", "--method", "converging", *ACCOUNT, "--K", "100"], capsys)
    assert code == 0
    rows = table(out)
    assert len(rows) == 101
    assert float(rows[-1]["epsilon"]) == pytest.approx(0.016 * (1 - math.exp(-1)), rel=1e-15)
    assert meta(out)["command"] == "account"


def test_account_zero_iterations(capsys):
    code, out, _ = run(["account", "--method", "lower", *ACCOUNT, "--K", "0"], capsys)
    assert code == 0
    assert table(out) == [{"k": "0", "method": "lower", "epsilon": "0"}]


def test_account_default_and_multiple_methods(capsys):
    code, out, _ = run(["account", *ACCOUNT, "--K", "3"], capsys)
    assert {r["method"] for r in table(out)} == {"best"}
    code, out, _ = run(["account", "--method", "recursion", "--method", "composition", *ACCOUNT, "--K", "3"], capsys)
    rows = table(out)
    assert [r["method"] for r in rows] == ["recursion"] * 4 + ["composition"] * 4


def test_account_precondition_exit_code(capsys):
    code, out, err = run(["account", "--method", "converging", *ACCOUNT, "--beta", "100", "--K", "5"], capsys)
    assert code == 3
    assert "eta < 1/beta" in err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["account", "--method", "nonsense", *ACCOUNT, "--K", "1"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--lipschitz", "1", "--lambda", "1", "--n", "10", "--d", "1"])
    assert exc.value.code == 2


def test_figure1(capsys):
    code, out, _ = run(["figure1"], capsys)
    assert code == 0
    rows = table(out)
    assert list(rows[0]) == ["K", "method", "alpha", "lambda", "epsilon"]
    conv = {(r["alpha"], r["lambda"], int(r["K"])): float(r["epsilon"]) for r in rows if r["method"] == "converging"}
    comp = {(r["alpha"], int(r["K"])): float(r["epsilon"]) for r in rows if r["method"] == "composition"}
    assert conv[("30", "1", 500)] == pytest.approx(0.048 * (1 - math.exp(-5)), abs=1e-12)
    assert comp[("30", 100)] == pytest.approx(0.024, abs=1e-12)
    assert all(v == 0 for (a, l, k), v in conv.items() if k == 0)
    assert len(conv) == 9 * 501 and len(comp) == 3 * 501
    # alpha=10, lambda=4 approaches 0.004
    assert conv[("10", "4", 500)] == pytest.approx(0.004, rel=1e-8)


def test_figure2(capsys):
    code, out, _ = run(["figure2"], capsys)
    rows = table(out)
    assert list(rows[0]) == ["K", "alpha", "our_bound", "lower_bound", "composition"]
    by = {(r["alpha"], int(r["K"])): r for r in rows}
    r = by[("30", 300)]
    assert 1.8 <= float(r["our_bound"]) / float(r["lower_bound"]) <= 2.2
    assert float(by[("10", 100)]["lower_bound"]) == pytest.approx(0.00345866, abs=1e-8)
    for a in ("10", "20", "30"):
        z = by[(a, 0)]
        assert float(z["our_bound"]) == float(z["lower_bound"]) == float(z["composition"]) == 0


def test_tightness_default_pass(capsys):
    code, out, _ = run(["tightness"], capsys)
    assert code == 0
    assert meta(out)["verdict"] == "PASS"
    rows = {int(r["K"]): r for r in table(out)}
    r = rows[100]
    assert float(r["lower"]) == pytest.approx(0.0034586589, abs=1e-10)
    assert float(r["exact"]) == pytest.approx(0.0060652786, abs=1e-10)
    assert float(r["upper"]) == pytest.approx(0.0069650971, abs=1e-10)
    assert all(float(v) == 0 for v in list(rows[0].values())[1:])


def test_tightness_short_run_fails(capsys):
    code, out, err = run(["tightness", "--K", "300"], capsys)
    assert code == 4
    assert meta(out)["verdict"] == "FAIL"


def test_plan_rdp(capsys):
    code, out, _ = run("plan --lipschitz 1 --lambda 1 --n 1000 --d 10 --alpha 2 --eps-prime 1".split(), capsys)
    assert code == 0
    kv = {r["key"]: r["value"] for r in table(out)}
    assert float(kv["sigma2"]) == 8e-6
    assert kv["k_star"] == "22"
    assert float(kv["eta"]) == 0.5
    assert float(kv["achieved_rdp"]) <= 1.0


def test_plan_dp_and_errors(capsys):
    code, out, _ = run(f"plan --lipschitz 1 --lambda 1 --n 1000 --d 10 --eps 1 --delta {math.exp(-2)!r}".split(), capsys)
    kv = {r["key"]: r["value"] for r in table(out)}
    assert kv["k_star"] == "19" and float(kv["alpha"]) == pytest.approx(5.0)
    assert float(kv["achieved_dp_eps"]) <= 1.0
    code, _, err = run("plan --lipschitz 1 --lambda 1 --n 10 --d 50 --alpha 2 --eps-prime 1".split(), capsys)
    assert code == 3
    code, _, _ = run("plan --lipschitz 1 --lambda 1 --n 1000 --d 10 --eps 9 --delta 0.1".split(), capsys)
    assert code == 3


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "data.txt"
    save_dataset(Dataset.from_records(mc_records()), path)
    return path


def test_train_deterministic_files(tmp_path, data_file, capsys):
    outs = []
    for name in ("a.csv", "b.csv"):
        target = tmp_path / name
        code, _, _ = run(["train", "--data", str(data_file), "--eta", "0.1", "--sigma", "0.5", "--K", "50", "--seed", "7", "-o", str(target)], capsys)
        assert code == 0
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]
    rows = table(outs[0].decode())
    assert rows[0]["row"] == "theta" and set(rows[0]) == {"row", "x0", "x1"}


def test_train_monte_carlo_with_oracle(data_file, capsys):
    code, out, _ = run(["train", "--data", str(data_file), "--eta", "0.1", "--sigma", "0.5", "--K", "50", "--runs", "2000", "--oracle"], capsys)
    assert code == 0
    rows = {r["row"]: r for r in table(out)}
    for c in ("x0", "x1"):
        se = float(rows["stderr"][c])
        assert abs(float(rows["mean"][c]) - float(rows["oracle_mean"][c])) <= 4 * se
        assert float(rows["var"][c]) == pytest.approx(float(rows["oracle_var"][c]), rel=0.15)


def test_train_logistic_projected(data_file, capsys):
    code, out, _ = run(["train", "--data", str(data_file), "--loss", "logistic", "--mu", "0.5", "--eta", "0.1",
                        "--sigma", "0.1", "--K", "20", "--radius", "0.2", "--theta0", "projected-gaussian"], capsys)
    assert code == 0
    theta = np.array([float(table(out)[0][c]) for c in ("x0", "x1")])
    assert np.linalg.norm(theta) <= 0.2 * (1 + 1e-12)


def test_train_missing_file_is_io_error(tmp_path, capsys):
    code, _, err = run(["train", "--data", str(tmp_path / "missing.txt"), "--eta", "0.1", "--sigma", "0.5", "--K", "5"], capsys)
    assert code == 5


def test_train_oracle_refuses_projection(data_file, capsys):
    code, _, _ = run(["train", "--data", str(data_file), "--eta", "0.1", "--sigma", "0.5", "--K", "5", "--radius", "1",
                      "--runs", "10", "--oracle"], capsys)
    assert code == 3


def test_numbers_have_17_significant_digits(capsys):
    _, out, _ = run(["account", "--method", "converging", *ACCOUNT, "--K", "7"], capsys)
    for r in table(out):
        s = r["epsilon"]
        assert float(repr(float(s))) == float(s)
        assert s == f"{float(s):.17g}"


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "dpdynamics", "account", "--method", "composition", *ACCOUNT, "--K", "2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert float(table(proc.stdout)[-1]["epsilon"]) == pytest.approx(1.6e-4, rel=1e-14)

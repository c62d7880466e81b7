import json
import subprocess
import sys

import pytest

from deconv import jsonio
from deconv.cli import main
from deconv.model import Sample, read_sample_csv, write_sample_csv
from deconv.montecarlo import BUILTIN_SCENARIOS, builtin_scenario


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def kernel_args(kernel):
    return ["--kernel", "exp" if kernel.is_exponential else "laplace", "--param", kernel.param]


def test_estimate_example(tmp_path, capsys):
    data = tmp_path / "x.csv"
    write_sample_csv(data, Sample([2.0, 4.0]))
    code, out, _ = run(["estimate", "--data", data, "--functional", "mean", "--kernel", "exp"], capsys)
    assert code == 0
    assert json.loads(out)["psi_hat"] == 2.0


def test_median_example(tmp_path, capsys):
    data = tmp_path / "x.csv"
    write_sample_csv(data, Sample([3.0, 1.0, 2.0]))
    out_path = tmp_path / "m.json"
    assert run(["median", "--data", data, "--scale", 1, "--out", out_path], capsys)[0] == 0
    d = json.loads(out_path.read_text())
    assert d["theta_hat"] == 2.0 and d["exact_var_odd"] == 0.2


def test_fit_single_observation(tmp_path, capsys):
    data = tmp_path / "x.csv"
    write_sample_csv(data, Sample([1.25]))
    code, out, _ = run(["fit", "--data", data, "--kernel", "laplace"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["support"] == [1.25] and d["weights"] == [1.0]


def test_usage_errors(capsys):
    assert run(["bogus"], capsys)[0] == 1
    assert run(["estimate", "--data", "x.csv"], capsys)[0] == 1
    assert run(["median", "--data", "x.csv", "--unknown-flag", "1"], capsys)[0] == 1


def test_runtime_errors_are_json(tmp_path, capsys):
    data = tmp_path / "x.csv"
    write_sample_csv(data, Sample([0.5, 1.5]))
    code, _, err = run(["estimate", "--data", data, "--functional", "cdf:1", "--kernel", "exp"], capsys)
    assert code == 2
    rec = json.loads(err.strip().splitlines()[-1])
    assert rec["error"] == "NotDifferentiable" and rec["detail"]
    code, _, err = run(["median", "--data", tmp_path / "missing.csv"], capsys)
    assert code == 2 and json.loads(err)["error"] == "FileNotFoundError"
    code, _, err = run(["estimate", "--data", data, "--functional", "mgf:2", "--kernel", "exp"], capsys)
    assert code == 2 and json.loads(err)["error"] == "ValueError"


@pytest.mark.parametrize("name", BUILTIN_SCENARIOS)
def test_pipeline_round_trip(name, tmp_path, capsys):
    cfg = builtin_scenario(name)
    mix = json.dumps(cfg.mixing_true.to_dict())
    data = tmp_path / "x.csv"
    k = kernel_args(cfg.kernel)
    n = min(cfg.sample_sizes[0], 200)
    assert run(["simulate", "--mixing", mix, *k, "--n", n, "--seed", 42, "--out", data], capsys)[0] == 0
    assert read_sample_csv(data).n == n
    fit = tmp_path / "fit.json"
    assert run(["fit", "--data", data, *k, "--out", fit], capsys)[0] == 0
    assert json.loads(fit.read_text())["converged"] is True
    for method in ("naive", "plugin"):
        out = tmp_path / f"est-{method}.json"
        code = run(["estimate", "--data", data, "--functional", cfg.functional.label, "--method", method,
                    *k, "--out", out], capsys)[0]
        assert code == 0
        assert json.loads(out.read_text())["n"] == n


def test_simulate_is_deterministic(tmp_path, capsys):
    mix = '{"support": [0, 1], "weights": [0.5, 0.5]}'
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        run(["simulate", "--mixing", mix, "--kernel", "exp", "--n", 50, "--seed", 9, "--out", path], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_estimate_and_study_byte_identical(tmp_path, capsys):
    mix = '{"0": 0.5, "1": 0.5}'
    data = tmp_path / "x.csv"
    run(["simulate", "--mixing", mix, "--kernel", "exp", "--n", 300, "--seed", 1, "--out", data], capsys)
    outs = []
    for i in range(2):
        p = tmp_path / f"e{i}.json"
        run(["estimate", "--data", data, "--functional", "mgf:0.5", "--method", "plugin", "--kernel", "exp",
             "--out", p], capsys)
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    cfg = json.dumps({"scenario": "exp-plugin", "sample_sizes": [40, 80], "replications": 5})
    reports = []
    for i in range(2):
        d = tmp_path / f"study{i}"
        assert run(["study", "--config", cfg, "--out-dir", d], capsys)[0] == 0
        reports.append(((d / "report.json").read_bytes(), (d / "report.csv").read_bytes()))
    assert reports[0] == reports[1]


def test_study_builtin_name_and_file(tmp_path, capsys):
    conf = tmp_path / "c.json"
    jsonio.dump({"scenario": "laplace-median", "replications": 20}, conf)
    assert run(["study", "--config", conf, "--out-dir", tmp_path / "o"], capsys)[0] == 0
    d = json.loads((tmp_path / "o" / "report.json").read_text())
    assert d["config"]["replications"] == 20
    assert run(["study", "--config", "no-such-scenario", "--out-dir", tmp_path / "p"], capsys)[0] == 2


def test_adjoint_command(capsys):
    code, out, _ = run(["adjoint", "--functional", "mean", "--kernel", "exp", "--mixing", '{"uniform": [0, 1]}',
                        "--grids", "33,65,129"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["grid_sizes"] == [33, 65, 129]
    assert d["residuals"][2] < d["residuals"][0]


def test_module_entry_point(tmp_path):
    data = tmp_path / "x.csv"
    write_sample_csv(data, Sample([1.0, 2.0, 3.0]))
    res = subprocess.run([sys.executable, "-m", "deconv", "median", "--data", str(data)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["theta_hat"] == 2.0

from pathlib import Path

import pytest

from dro_kit import cli, config
from dro_kit.errors import ConfigError, ParseError

BASE = """\
problem.loss = counterexample
problem.divergence = chi2
problem.lambda = 1.0
data.source = rademacher
optimizer.method = {method}
optimizer.step_gamma = {gamma}
optimizer.batch_S = 1
optimizer.iters_T = {iters}
optimizer.seed = 3
optimizer.x0 = 3.0
evaluation.psi_every = 10
output.dir = out
"""


def write(tmp_path, text, name="run.conf"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_lines():
    raw = config.parse_lines("# comment\nproblem.lambda = 0.5  # trailing\n\ndata.seed=2\n")
    assert raw == {"problem": {"lambda": "0.5"}, "data": {"seed": "2"}}
    with pytest.raises(ParseError, match="line 1"):
        config.parse_lines("problem.nonsense = 1\n")
    with pytest.raises(ParseError):
        config.parse_lines("lambda = 1\n")
    with pytest.raises(ParseError, match="duplicate"):
        config.parse_lines("problem.lambda = 1\nproblem.lambda = 2\n")


def test_from_text_defaults_and_validation(tmp_path):
    c = config.from_text("problem.lambda = 0.1\n", tmp_path)
    assert c.lam == 0.1 and c.method == "normalized_momentum" and c.output_dir == (tmp_path / "out").resolve()
    with pytest.raises(ConfigError):
        config.from_text("problem.lambda = -1\n", tmp_path)
    with pytest.raises(ConfigError):
        config.from_text("optimizer.method = adam\n", tmp_path)
    with pytest.raises(ConfigError):
        config.from_text("problem.lambda = abc\n", tmp_path)


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    p = write(tmp_path, BASE.format(method="normalized_momentum", gamma=0.03, iters=200))
    assert cli.main(["run", str(p)]) == 0
    out = tmp_path / "out"
    for name in ("trace.csv", "psi_curve.csv", "summary.txt"):
        assert (out / name).is_file()
    first = (out / "trace.csv").read_bytes()
    psi = (out / "psi_curve.csv").read_bytes()
    assert cli.main(["run", str(p)]) == 0
    assert (out / "trace.csv").read_bytes() == first
    assert (out / "psi_curve.csv").read_bytes() == psi
    summary = (out / "summary.txt").read_text()
    assert "status=completed" in summary and "gradient_evaluations=201" in summary
    assert psi.decode().startswith("epoch,iter,gradient_evaluations,psi\n")


def test_run_divergence_exit_code(tmp_path):
    p = write(tmp_path, BASE.format(method="sgd", gamma=0.1, iters=200))
    assert cli.main(["run", str(p)]) == 2
    assert "status=diverged" in (tmp_path / "out" / "summary.txt").read_text()


def test_run_missing_data_file(tmp_path, capsys):
    text = "problem.loss = logistic\ndata.source = csv\ndata.path = nowhere.csv\noptimizer.step_gamma = 0.1\n"
    p = write(tmp_path, text)
    assert cli.main(["run", str(p)]) == 3
    assert "nowhere.csv" in capsys.readouterr().err


def test_run_missing_config(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.conf")]) == 3


def test_run_theorem_auto(tmp_path):
    text = BASE.format(method="theorem-auto", gamma=0.1, iters=50).replace("optimizer.step_gamma = 0.1\n", "")
    p = write(tmp_path, text)
    assert cli.main(["run", str(p)]) == 0
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "T_prescribed=" in summary and "iters_T=50" in summary


def test_run_rspg_on_csv(tmp_path):
    from dro_kit.datasets import save_csv
    from dro_kit.verify import clipped_problem

    _, data = clipped_problem(n=40)
    save_csv(data, tmp_path / "d.csv")
    text = ("problem.loss = clipped_quadratic\nproblem.clip_B = 2\nproblem.lambda = 1\ndata.source = csv\n"
            "data.path = d.csv\noptimizer.method = rspg\noptimizer.step_gamma = 0.01\noptimizer.batch_S = 4\n"
            "optimizer.iters_T = 30\n")
    assert cli.main(["run", str(write(tmp_path, text))]) == 0
    assert "output_index=" in (tmp_path / "out" / "summary.txt").read_text()


def test_verify_unknown_suite(capsys):
    assert cli.main(["verify", "bogus"]) == 3
    assert "variance-bound" in capsys.readouterr().err


def test_verify_single_suite(tmp_path, capsys):
    assert cli.main(["verify", "variance-bound", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("\n") == 1 and out.startswith("variance-bound: PASS")
    assert [p.name for p in tmp_path.iterdir()] == ["variance-bound.txt"]


def test_compare(tmp_path):
    text = BASE.format(method="normalized_momentum", gamma=0.1, iters=800)
    text += "compare.methods = normalized_momentum, sgd\ncompare.grid = 3e-3, 3e-2\ncompare.threshold = 0.1\n"
    assert cli.main(["compare", str(write(tmp_path, text))]) == 0
    rows = (tmp_path / "out" / "compare.csv").read_text().splitlines()
    assert rows[0] == "optimizer,step_gamma,gradient_evaluations_to_threshold,final_psi"
    assert [r.split(",")[0] for r in rows[1:]] == ["normalized_momentum", "sgd"]
    assert (tmp_path / "out" / "traces").is_dir()


def test_compare_not_reached(tmp_path):
    text = BASE.format(method="sgd", gamma=0.1, iters=5)
    text += "compare.methods = sgd\ncompare.grid = 1e-4\ncompare.threshold = 1e-9\n"
    assert cli.main(["compare", str(write(tmp_path, text))]) == 0
    rows = (tmp_path / "out" / "compare.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].split(",")[2] == "not-reached"

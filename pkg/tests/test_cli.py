import pytest

from pgflow.cli import build_parser, main
from pgflow.config import ExperimentConfig, save_config

SMOKE = dict(
    env_kind="grid_world", algorithm="all", task_mode="distinct",
    n_tasks=2, seeds=(1,), rounds=2, inner_steps=2, batch_size=2,
    hidden=(8,), eval_n_samples=2, eval_n_batches=1,
    max_inner_solve_steps=2, env_grid_rows=2, env_grid_cols=2,
)


@pytest.fixture()
def smoke_cfg(tmp_path):
    path = tmp_path / "smoke.cfg"
    save_config(path, ExperimentConfig(**SMOKE))
    return path


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "smoke.cfg"
    save_config(cfg, ExperimentConfig(**SMOKE))
    out = root / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    return out


def test_parser_requires_subcommand(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    capsys.readouterr()


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train"])


def test_run_prints_out_dir(smoke_cfg, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", str(smoke_cfg), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert captured.out.strip() == str(out)
    assert (out / "summary.json").exists()


def test_run_seed_override(smoke_cfg, tmp_path):
    out = tmp_path / "r"
    assert main(["run", str(smoke_cfg), "--out", str(out), "--seeds", "4"]) == 0
    assert (out / "tasks" / "seed4.tasks").exists()


def test_run_missing_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "none.cfg")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_run_bad_seed_list(smoke_cfg, tmp_path, capsys):
    code = main(["run", str(smoke_cfg), "--out", str(tmp_path / "x"),
                 "--seeds", "one,two"])
    assert code == 1
    assert "bad seed list" in capsys.readouterr().err


def test_plot_run_dir(finished_run, capsys):
    assert main(["plot", str(finished_run)]) == 0
    out = capsys.readouterr().out
    assert (finished_run / "plots").is_dir()
    assert "_l1.svg" in out and "_modes.svg" in out


def test_plot_empty_dir(tmp_path, capsys):
    assert main(["plot", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_theory_reports(finished_run, capsys):
    assert main(["theory", str(finished_run)]) == 0
    out = capsys.readouterr().out
    assert "L_ell=" in out and "lambda=" in out
    assert "fit C=" in out
    assert (finished_run / "theory" / "seed1_pgflowmeta_convergence.csv").exists()


def test_theory_without_artifacts(tmp_path, capsys):
    assert main(["theory", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_sweep_and_compare(smoke_cfg, tmp_path, capsys):
    out = tmp_path / "sw"
    code = main(["sweep", str(smoke_cfg), "--param", "lambda",
                 "--values", "1,15", "--out", str(out)])
    assert code == 0
    capsys.readouterr()
    assert (out / "sweep.json").exists()
    assert (out / "lam_1" / "summary.json").exists()
    assert (out / "lam_15" / "summary.json").exists()
    assert (out / "sweep_l1.svg").exists()

    assert main(["plot", str(out)]) == 0   # sweep dirs replot via sweep.json
    capsys.readouterr()

    assert main(["compare", str(out / "lam_1"), str(out / "lam_15"),
                 "--metric", "l1"]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split()[0] == "run"
    assert "±" in table


def test_sweep_bad_param(smoke_cfg, tmp_path, capsys):
    code = main(["sweep", str(smoke_cfg), "--param", "gamma",
                 "--values", "1", "--out", str(tmp_path / "s")])
    assert code == 1
    assert "unknown sweep parameter" in capsys.readouterr().err


def test_sweep_bad_values(smoke_cfg, tmp_path, capsys):
    code = main(["sweep", str(smoke_cfg), "--param", "eta",
                 "--values", "fast", "--out", str(tmp_path / "s")])
    assert code == 1
    assert "bad values list" in capsys.readouterr().err


def test_compare_missing_run(tmp_path, capsys):
    assert main(["compare", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_compare_metric_choices():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["compare", "x", "--metric", "wall_time"])

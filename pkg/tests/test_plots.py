import json

import pytest

from pgflow.metrics import MetricRecord, write_metrics_csv
from pgflow.plots import PlotError, render_run_plots, render_sweep_plots


def fake_records(n_rounds=3, n_tasks=2):
    out = []
    for t in range(1, n_rounds + 1):
        for i in range(n_tasks):
            out.append(MetricRecord(t, i, 1.0 / t + 0.1 * i, 0.5 / t,
                                    min(t, 2), 10 * t, 0.2 * t))
    return out


def fake_run(root, name="run", stems=("seed1_gflowmeta",)):
    run = root / name
    (run / "metrics").mkdir(parents=True)
    for stem in stems:
        write_metrics_csv(run / "metrics" / f"{stem}.csv", fake_records())
    return run


def test_render_run_plots_one_trio_per_csv(tmp_path):
    run = fake_run(tmp_path, stems=("seed1_gflowmeta", "seed1_pgflowmeta_pp"))
    paths = render_run_plots(run)
    names = sorted(p.name for p in paths)
    assert names == [
        "seed1_gflowmeta_l1.svg",
        "seed1_gflowmeta_modes.svg",
        "seed1_gflowmeta_reward.svg",
        "seed1_pgflowmeta_pp_l1.svg",
        "seed1_pgflowmeta_pp_modes.svg",
        "seed1_pgflowmeta_pp_reward.svg",
    ]
    assert all(p.parent == run / "plots" for p in paths)
    for p in paths:
        body = p.read_text()
        assert body.lstrip().startswith("<?xml")


def test_render_run_plots_deterministic(tmp_path):
    run = fake_run(tmp_path)
    first = {p.name: p.read_bytes() for p in render_run_plots(run)}
    second = {p.name: p.read_bytes() for p in render_run_plots(run)}
    assert first == second


def test_render_run_plots_header_only_csv(tmp_path):
    run = fake_run(tmp_path)
    write_metrics_csv(run / "metrics" / "seed9_empty.csv", [])
    paths = render_run_plots(run)
    assert any("seed9_empty" in p.name for p in paths)


def test_render_run_plots_missing_metrics_dir(tmp_path):
    with pytest.raises(PlotError):
        render_run_plots(tmp_path / "nowhere")


def test_render_run_plots_rejects_bad_columns(tmp_path):
    run = fake_run(tmp_path)
    (run / "metrics" / "seed1_gflowmeta.csv").write_text("round,l1\n1,0.5\n")
    with pytest.raises(PlotError, match="missing columns"):
        render_run_plots(run)


def test_render_sweep_plots(tmp_path):
    sweep = tmp_path / "sweep"
    sweep.mkdir()
    runs = {}
    for value, label in ((1.0, "lam_1"), (15.0, "lam_15")):
        fake_run(sweep, name=label)
        runs[str(value)] = label
    (sweep / "sweep.json").write_text(json.dumps(
        {"param": "lam", "values": [1.0, 15.0], "runs": runs}
    ))
    paths = render_sweep_plots(sweep)
    assert sorted(p.name for p in paths) == ["sweep_l1.svg", "sweep_reward.svg"]
    body = (sweep / "sweep_l1.svg").read_text()
    assert "lam=1.0" in body and "lam=15.0" in body


def test_render_sweep_plots_requires_manifest(tmp_path):
    with pytest.raises(PlotError, match="sweep.json"):
        render_sweep_plots(tmp_path)

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from riscellfree.cli import main
from riscellfree.errors import InvalidParameterError
from riscellfree.runner import CSV_COLUMNS, ExperimentSpec, fixed_area_layout, run
from riscellfree.scenario import VARIANTS, preset, save_config

GOLDEN = Path(__file__).parent / "golden" / "tiny_cdf_samples.csv"


def _read_csv(text):
    return list(csv.reader(text.splitlines()))


def test_golden_samples_csv():
    res = run(ExperimentSpec("cdf", preset("tiny"), variants=VARIANTS, realizations=2, seed=3))
    got, want = _read_csv(res.csv_text()), _read_csv(GOLDEN.read_text())
    assert got[0] == list(CSV_COLUMNS) == want[0]
    assert len(got) == len(want)
    for g, w in zip(got[1:], want[1:]):
        assert g[:3] == w[:3]
        assert float(g[3]) == pytest.approx(float(w[3]), rel=1e-9, abs=1e-12)


def test_validate_smoke_single_trial():
    res = run(ExperimentSpec("validate", preset("tiny"), trials=1, realizations=1))
    assert res.report["drops"] and "max_relative_gap" in res.report


def test_reports_are_reproducible():
    spec = dict(kind="validate", config=preset("tiny"), trials=500, realizations=2, seed=9)
    a = run(ExperimentSpec(**spec))
    b = run(ExperimentSpec(**spec, threads=3))
    assert a.json_text() == b.json_text()
    assert a.csv_text() == b.csv_text()


def test_report_embeds_seed_and_config():
    res = run(ExperimentSpec("cdf", preset("tiny", seed=4), realizations=1))
    rep = json.loads(res.json_text())
    assert rep["seed"] == 4 and rep["config"]["seed"] == 4 and rep["csv_schema"] == "samples-v1"


def test_validate_sums_equal_per_user_values():
    res = run(ExperimentSpec("validate", preset("tiny"), trials=200))
    for d in ("uplink", "downlink"):
        drop = res.report["drops"][0][d]
        assert drop["sum_rate_closed_form_mbps"] == pytest.approx(sum(drop["rate_closed_form_mbps"]), rel=1e-15)


def test_sweep_blocking_cellfree_vanishes_without_direct_links():
    spec = ExperimentSpec("sweep_blocking", preset("tiny"), variants=("cellfree", "ris_cellfree"), realizations=2,
                          params={"p_grid": [0.0, 1.0]})
    table = run(spec).report["table"]
    zero = [t for t in table if t["variant"] == "cellfree" and t["p"] == 0.0]
    assert all(t["mean_sum_mbps"] == 0.0 for t in zero)


def test_phase_compare_without_surface_all_curves_coincide():
    cfg = preset("tiny")
    spec = ExperimentSpec("phase_compare", cfg, variants=("cellfree",), realizations=2)
    summary = run(spec).report["summary"]
    vals = {k: v["uplink"]["mean_sum_mbps"] for k, v in summary.items()}
    assert len(set(vals.values())) == 1


def test_element_size_single_setting_equals_cdf():
    cfg = preset("tiny")
    es = run(ExperimentSpec("element_size", cfg, realizations=2, params={"sizes": [(0.25, 0.25)]}))
    cdf = run(ExperimentSpec("cdf", cfg, realizations=2))
    assert [r[3] for r in es.rows] == [r[3] for r in cdf.rows]


def test_larger_elements_help():
    cfg = preset("tiny").replace(**{"ris.n_h": 4, "ris.n_v": 4})
    res = run(ExperimentSpec("element_size", cfg, variants=("ris_cellfree_nolos",), realizations=3,
                             params={"sizes": [(0.25, 0.25), (0.5, 0.5), (1.0, 1.0)]}))
    for d in ("uplink", "downlink"):
        means = [s["mean_sum_throughput_mbps"][d] for s in res.report["settings"]]
        assert means[0] < means[1] < means[2]


def test_fixed_area_layout():
    assert fixed_area_layout(10, 0.5) == (20, 20)
    n_h, n_v = fixed_area_layout(10, 1 / 3)
    assert n_h == 30 and n_v == 30
    n_h, n_v = fixed_area_layout(3, 0.7)
    assert n_h == 4 and n_h * n_v >= round((3 / 0.7) ** 2)


def test_asymptotics_rejects_unsorted_list():
    with pytest.raises(InvalidParameterError):
        run(ExperimentSpec("asymptotics", preset("tiny"), params={"m_list": [10, 5]}))


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        ExperimentSpec("validate", preset("tiny"), trials=0)
    with pytest.raises(InvalidParameterError):
        ExperimentSpec("validate", preset("tiny"), variants=("nope",))
    with pytest.raises(InvalidParameterError):
        ExperimentSpec("plot", preset("tiny"))


def test_cli_writes_outputs(tmp_path):
    assert main(["cdf", "--preset", "tiny", "--out", str(tmp_path), "--seed", "3", "--realizations", "2",
                 "--variants", ",".join(VARIANTS)]) == 0
    assert (tmp_path / "samples.csv").read_text() == run(
        ExperimentSpec("cdf", preset("tiny"), variants=VARIANTS, realizations=2, seed=3)).csv_text()
    json.loads((tmp_path / "report.json").read_text())


def test_cli_config_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    save_config(preset("tiny", seed=2), path)
    assert main(["sweep_blocking", "--config", str(path), "--p-grid", "0,0.5", "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["p_grid"] == [0.0, 0.5] and rep["seed"] == 2


def test_cli_error_record(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("network: {m_aps: 2}\nris: {n_h: 2, n_v: 2}\n")
    assert main(["cdf", "--config", str(bad)]) == 2
    record = json.loads(capsys.readouterr().err)
    assert record["status"] == "error" and record["field"] == "network.k_users"


def test_console_entry_point_exit_code(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "riscellfree.cli", "validate", "--preset", "tiny", "--trials", "0"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["status"] == "error"


def test_unwritable_output_is_reported(tmp_path, capsys):
    target = tmp_path / "file"
    target.write_text("x")
    assert main(["cdf", "--preset", "tiny", "--out", str(target / "sub")]) == 2
    assert str(target) in json.loads(capsys.readouterr().err)["message"]


def test_phase_compare_trend_at_small_scale():
    cfg = preset("tiny").replace(**{"ris.n_h": 4, "ris.n_v": 4, "network.unblocked_probability": 0.0})
    summary = run(ExperimentSpec("phase_compare", cfg, realizations=4)).report["summary"]
    for d in ("uplink", "downlink"):
        assert summary["sinc/equal"][d]["mean_sum_mbps"] > summary["sinc/random"][d]["mean_sum_mbps"]
        assert np.isclose(summary["iid/equal"][d]["mean_sum_mbps"], summary["iid/random"][d]["mean_sum_mbps"],
                          rtol=1e-9)

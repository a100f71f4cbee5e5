import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from pcfair.cli import main
from pcfair.harness.config import OUT_DIR_ENV, ConfigError, ExperimentConfig, parse_method, resolve_out_dir
from pcfair.harness.plot import aggregate, render_svg
from pcfair.harness.runner import (
    RESULT_COLUMNS,
    read_results_csv,
    rows_to_csv,
    run_experiment,
    write_outputs,
)
from pcfair.harness.verify import VerifyConfig, run_checks
from pcfair.scm import Dataset

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SVG = "{http://www.w3.org/2000/svg}"


def _small(**kw):
    raw = {"datasets": ["linear-reg"], "methods": ["erm"], "seeds": [0], "n_train": 300, "n_test": 200}
    raw.update(kw)
    return raw


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("raw", [
    _small(seeds=[]),
    _small(methods=[]),
    _small(n_test=0),
    _small(lambdas=[1.5]),
    _small(cgms=[{"kind": "psychic"}]),
    _small(cgms=[{"kind": "noisy", "alpha": -1.0}]),
    _small(methods=[{"kind": "pcf-ana", "predictor": "knn"}]),
    _small(unknown_key=3),
])
def test_config_rejects(raw):
    with pytest.raises((ConfigError, ValueError)):
        ExperimentConfig.from_dict(raw)


def test_config_grids_expand():
    cfg = ExperimentConfig.from_dict(_small(noise_grid={"beta": [0.0, 0.1], "alpha": [0.0, 0.2]},
                                            eps0=[0.1], bounded_mode="extremal"))
    assert len(cfg.cgms) == 5
    assert cfg.cgms[-1].label == "bounded-extremal"
    assert parse_method("pcf-ana").predictor.value == "analytic"
    assert parse_method({"kind": "pcf"}).predictor.value == "knn"


def test_inline_dataset():
    cfg = ExperimentConfig.from_dict(_small(datasets=[{"name": "flat", "preset": "linear-reg", "w_a": 0.0}]))
    assert cfg.datasets[0].name == "flat" and float(cfg.datasets[0].spec.w_a[0]) == 0.0


def test_out_dir_precedence(monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert resolve_out_dir(None, "cfg") == Path("cfg")
    monkeypatch.setenv(OUT_DIR_ENV, "env")
    assert resolve_out_dir(None, "cfg") == Path("env")
    assert resolve_out_dir("flag", "cfg") == Path("flag")


# ---------------------------------------------------------------- runner


def test_single_erm_row():
    res = run_experiment(ExperimentConfig.from_dict(_small()))
    assert len(res.rows) == 1 and not res.errors
    row = res.rows[0].to_dict()
    assert list(row) == list(RESULT_COLUMNS)
    assert row["te"] == pytest.approx(1.0, abs=0.3)


def test_oracle_comparison_cell_count():
    raw = json.loads((CONFIGS / "oracle_comparison.json").read_text())
    raw.update(n_train=300, n_test=100)
    res = run_experiment(ExperimentConfig.from_dict(raw))
    assert len(res.rows) == 120 and not res.errors


def test_lambda_rows_and_erm_once():
    raw = _small(methods=["erm", {"kind": "pcf", "predictor": "analytic"}], lambdas=[0.0, 0.5, 1.0])
    res = run_experiment(ExperimentConfig.from_dict(raw))
    assert [(r.method, r.lam) for r in res.rows] == [("erm", 1.0), ("pcf", 0.0), ("pcf", 0.5), ("pcf", 1.0)]


def test_cell_isolation():
    raw = _small(methods=["erm", {"kind": "cfu", "predictor": "analytic"}, "pcf"], seeds=[0, 1])
    res = run_experiment(ExperimentConfig.from_dict(raw))
    assert [r.method for r in res.rows] == ["erm", "pcf"] * 2
    assert len(res.errors) == 2 and all("method=cfu" in e for e in res.errors)
    clean = run_experiment(ExperimentConfig.from_dict(_small(methods=["erm", "pcf"], seeds=[0, 1])))
    assert rows_to_csv(res.rows) == rows_to_csv(clean.rows)


def test_dataset_level_failure_logged():
    multi = {"form": "linear", "task": "regression", "w_a": [1, 1], "w_u": [1, 1], "w_x": [1, 1],
             "w_u_prime": [1, 1], "w_y": 1.0, "p_a": 0.5, "x_dim": 2, "name": "two-d"}
    raw = _small(datasets=[multi, "linear-reg"], methods=["pcf"], cgms=["rank"])
    res = run_experiment(ExperimentConfig.from_dict(raw))
    assert len(res.rows) == 1 and res.rows[0].dataset == "linear-reg"
    assert len(res.errors) == 1 and "two-d" in res.errors[0]


def test_outputs_deterministic_and_parallel(tmp_path):
    raw = _small(datasets=["linear-reg", "linear-cls"], methods=["erm", "pcf", "cfr"], seeds=[0, 1, 2],
                 cgms=[{"kind": "noisy", "alpha": 0.1}])
    cfg = ExperimentConfig.from_dict(raw)
    a = write_outputs(run_experiment(cfg), tmp_path / "a", config=raw)
    b = write_outputs(run_experiment(cfg), tmp_path / "b", config=raw)
    c = write_outputs(run_experiment(cfg, jobs=2), tmp_path / "c", config=raw)
    for key in ("results", "summary", "errors", "config"):
        assert a[key].read_bytes() == b[key].read_bytes() == c[key].read_bytes()
    shifted = run_experiment(cfg, seed_offset=10)
    assert {r.seed for r in shifted.rows} == {10, 11, 12}


def test_summary_means_exact(tmp_path):
    raw = _small(methods=["erm", "pcf"], seeds=[0, 1, 2, 3])
    paths = write_outputs(run_experiment(ExperimentConfig.from_dict(raw)), tmp_path)
    rows = read_results_csv(paths["results"])
    with open(paths["summary"], newline="") as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == 2
    for s in summary:
        members = [r for r in rows if r["method"] == s["method"]]
        assert int(s["n_seeds"]) == len(members) == 4
        for m in ("error", "te", "te0", "te1"):
            vals = np.array([r[m] for r in members])
            assert float(s[f"{m}_mean"]) == np.mean(vals)
            assert float(s[f"{m}_std"]) == np.std(vals, ddof=1)


def test_json_format(tmp_path):
    paths = write_outputs(run_experiment(ExperimentConfig.from_dict(_small())), tmp_path, fmt="json")
    rows = json.loads(paths["results"].read_text())
    assert list(rows[0]) == list(RESULT_COLUMNS)
    with pytest.raises(ValueError):
        write_outputs(run_experiment(ExperimentConfig.from_dict(_small())), tmp_path, fmt="xml")


# ---------------------------------------------------------------- plot


def _row(method, lam=1.0, te=0.1, err=1.0, seed=0):
    return {"dataset": "linear-reg", "method": method, "predictor": "knn", "cgm": "oracle", "alpha": 0.0,
            "beta": 0.0, "eps0": 0.0, "lambda": lam, "seed": seed, "error": err, "te": te, "te0": te, "te1": te}


def _parse(svg):
    return ET.fromstring(svg)


def test_plot_empty():
    root = _parse(render_svg([]))
    assert root.tag == SVG + "svg"
    assert root.find(f".//{SVG}g[@class='axes']") is not None
    assert root.find(f".//{SVG}g[@class='legend']") is not None
    assert not root.findall(f".//{SVG}circle")


def test_plot_three_markers():
    rows = [_row(m, te=i * 0.1, err=1 + i) for i, m in enumerate(("erm", "pcf", "cfu"))]
    root = _parse(render_svg(rows, title="three"))
    assert len(root.findall(f".//{SVG}circle[@class='marker']")) == 3
    assert len(root.findall(f".//{SVG}g[@class='legend']/{SVG}rect")) == 3


def test_plot_lambda_polyline():
    rows = [_row("pcf", lam, te=1 - lam, err=1 + lam, seed=s) for lam in (0.0, 0.5, 1.0) for s in (0, 1)]
    root = _parse(render_svg(rows))
    lines = root.findall(f".//{SVG}polyline[@class='sweep']")
    assert len(lines) == 1 and len(lines[0].get("points").split()) == 3
    curve = next(iter(aggregate(rows, "te", "error", "method")["pcf"].values()))
    assert [p[0] for p in curve] == [0.0, 0.5, 1.0]


def test_plot_missing_column():
    with pytest.raises(ValueError):
        render_svg([_row("pcf")], y="accuracy")


# ---------------------------------------------------------------- verify


def test_verify_zero_effect():
    cfg = VerifyConfig.from_dict({"datasets": [{"preset": "linear-reg", "w_a": 0.0, "name": "flat"}],
                                  "checks": ["excess_risk"], "seeds": [0, 1], "n_test": 5000, "mc_n": 5000})
    (res,) = run_checks(cfg)
    assert res.passed
    assert res.details["predicted_excess"] == 0.0 and abs(res.details["empirical_excess"]) < 1e-12


def test_verify_rejects_unknown_check():
    with pytest.raises(ConfigError):
        VerifyConfig.from_dict({"datasets": ["linear-reg"], "checks": ["magic"]})


def test_verify_crash_is_failure():
    cfg = VerifyConfig.from_dict({"datasets": ["linear-cls"], "checks": ["excess_risk"], "seeds": [0],
                                  "n_test": 0, "mc_n": 100})
    (res,) = run_checks(cfg)
    assert not res.passed and res.violations


# ---------------------------------------------------------------- cli


def _write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def test_cli_run_and_plot(tmp_path, capsys):
    cfg = _write(tmp_path, _small(methods=["erm", "pcf"], lambdas=[0.0, 1.0]))
    assert main(["run", "--config", cfg, "--out-dir", str(tmp_path / "out")]) == 0
    res = tmp_path / "out" / "results.csv"
    assert res.read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)
    assert main(["plot", "--input", str(res), "--group-by", "method,predictor"]) == 0
    root = _parse((tmp_path / "out" / "results.svg").read_text())
    assert len(root.findall(f".//{SVG}circle")) == 3
    assert main(["plot", "--input", str(res), "--y", "nope"]) == 2


def test_cli_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    cfg = _write(tmp_path, _small(out_dir=str(tmp_path / "configured")))
    assert main(["run", "--config", cfg]) == 0
    assert (tmp_path / "env" / "results.csv").exists()
    assert not (tmp_path / "configured").exists()


def test_cli_simulate(tmp_path):
    assert main(["simulate", "--preset", "cubic-cls", "--n", "40", "--seed", "3", "--seed", "4",
                 "--out-dir", str(tmp_path)]) == 0
    d = Dataset.from_csv(tmp_path / "cubic-cls_seed3.csv")
    assert len(d) == 40 and (tmp_path / "cubic-cls_seed4.csv").exists()
    assert main(["simulate", "--preset", "linear-reg", "--n", "5", "--format", "json",
                 "--out-dir", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "linear-reg_seed0.json").read_text())["y"]) == 5


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    bad = _write(tmp_path, _small(seeds=[]))
    assert main(["run", "--config", bad]) == 2
    assert "seeds" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run"])


def test_cli_verify_negative_control(tmp_path, capsys):
    code = main(["verify", "--config", str(CONFIGS / "verify_negative_control.json"), "--out-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL linear-reg lipschitz" in out
    failures = json.loads((tmp_path / "failures.json").read_text())
    assert failures and failures[0]["check"] == "lipschitz"
    report = json.loads((tmp_path / "linear-reg_lipschitz.json").read_text())
    assert report["details"]["L"] == 1.0


def test_cli_verify_pass(tmp_path, capsys):
    raw = {"datasets": ["linear-reg"], "checks": ["excess_risk", "optimality", "cf_equivalence"],
           "seeds": [0], "n_test": 100000, "mc_n": 20000}
    assert main(["verify", "--config", _write(tmp_path, raw), "--out-dir", str(tmp_path / "v")]) == 0
    rep = json.loads((tmp_path / "v" / "linear-reg_excess_risk.json").read_text())
    assert rep["details"]["predicted_excess"] == pytest.approx(0.25, abs=1e-12)
    assert json.loads((tmp_path / "v" / "failures.json").read_text()) == []

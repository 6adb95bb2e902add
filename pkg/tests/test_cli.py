"""End-to-end tests for the command-line surface: exit codes, files, error cards."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.core.loaders import DATA_DIR
from main import parse_and_dispatch
from tests.helpers import simulate, two_pl

PARAMS = DATA_DIR / "params" / "2pl_four_items.json"


def _write_csv(path: Path, y: np.ndarray, names=None) -> Path:
    names = names or [f"item{j + 1}" for j in range(y.shape[1])]
    pd.DataFrame(y, columns=names).to_csv(path, index=False)
    return path


def _error_card(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def responses(tmp_path):
    params = two_pl([0.8, 1.2, 1.7, 1.4], [0.4, -0.3, 0.9, -1.1])
    return _write_csv(tmp_path / "responses.csv", simulate(params, 400, seed=41))


@pytest.fixture
def fitted(tmp_path, responses):
    out = tmp_path / "fit.json"
    assert parse_and_dispatch(["fit", "--data", str(responses), "--out", str(out), "--model", "2pl"]) == 0
    return out


# ─── fit / score ─────────────────────────────────────────────────────────────


def test_fit_small_binary_table(tmp_path, capsys):
    counts = {(0, 0, 0): 10, (1, 1, 1): 10, (1, 0, 0): 5, (0, 1, 0): 5, (0, 0, 1): 5,
              (1, 1, 0): 5, (1, 0, 1): 5, (0, 1, 1): 5}
    y = np.array([p for p, k in counts.items() for _ in range(k)])
    data = _write_csv(tmp_path / "small.csv", y, names=["q1", "q2", "q3"])
    out = tmp_path / "fit.json"

    assert parse_and_dispatch(["fit", "--data", str(data), "--out", str(out), "--model", "2pl"]) == 0
    record = json.loads(out.read_text())
    assert record["model"] == "2pl"
    assert record["n"] == 50
    assert [item["name"] for item in record["params"]["items"]] == ["q1", "q2", "q3"]
    assert np.array(record["info"]).shape == (6, 6)
    assert json.loads(capsys.readouterr().out)["output_type"] == "fit_record"


def test_non_binary_response_rejected_for_2pl(tmp_path, capsys):
    y = simulate(two_pl([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]), 30, seed=1)
    y[6, 2] = 5
    data = _write_csv(tmp_path / "bad.csv", y)
    assert parse_and_dispatch(["fit", "--data", str(data), "--model", "2pl",
                               "--out", str(tmp_path / "fit.json")]) == 2
    card = _error_card(capsys)
    assert card["violation_type"] == "category_range"
    assert card["context"] == {"row": 7, "column": "item3"}
    assert not (tmp_path / "fit.json").exists()


def test_missing_cell_rejected(tmp_path, capsys):
    path = tmp_path / "holes.csv"
    path.write_text("item1,item2\n1,0\n0,\n1,1\n")
    assert parse_and_dispatch(["fit", "--data", str(path), "--out", str(tmp_path / "fit.json")]) == 2
    card = _error_card(capsys)
    assert card["context"]["row"] == 2
    assert "Missing" in card["reason"]


def test_missing_data_file(tmp_path, capsys):
    assert parse_and_dispatch(["fit", "--data", str(tmp_path / "absent.csv")]) == 2
    assert "not found" in _error_card(capsys)["reason"]


def test_unknown_flag_is_usage_error():
    assert parse_and_dispatch(["fit", "--bogus", "1"]) == 2


def test_non_convergence_writes_fit_and_exits_3(tmp_path, responses, capsys):
    out = tmp_path / "fit.json"
    code = parse_and_dispatch(["fit", "--data", str(responses), "--out", str(out), "--max-iter", "1"])
    assert code == 3
    assert out.exists()
    assert json.loads(out.read_text())["converged"] is False
    assert _error_card(capsys)["violation_type"] == "not_converged"


def test_fit_outputs_are_reproducible(tmp_path, responses):
    docs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        assert parse_and_dispatch(["fit", "--data", str(responses), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        doc.pop("created_at")
        docs.append(doc)
    assert docs[0] == docs[1]


def test_score_writes_one_row_per_respondent(tmp_path, responses, fitted):
    out = tmp_path / "scores.csv"
    assert parse_and_dispatch(["score", "--fit", str(fitted), "--data", str(responses), "--out", str(out)]) == 0
    scores = pd.read_csv(out)
    assert list(scores.columns) == ["row", "eap", "post_var", "post_sd"]
    assert len(scores) == 400
    assert (scores["post_var"] > 0).all()
    assert np.allclose(scores["post_sd"] ** 2, scores["post_var"])


# ─── reliability ─────────────────────────────────────────────────────────────


def test_reliability_both_kinds(tmp_path, responses, fitted):
    out = tmp_path / "report.json"
    assert parse_and_dispatch(["reliability", "--fit", str(fitted), "--data", str(responses),
                               "--kind", "both", "--out", str(out)]) == 0
    reports = json.loads(out.read_text())["reports"]
    assert [r["kind"] for r in reports] == ["prmse", "ctt"]
    for r in reports:
        assert r["se"] > 0
        assert r["ci_lo"] <= r["point"] <= r["ci_hi"]
        assert r["n"] == 400 and r["m"] == 4 and r["n_quad"] == 61


def test_reliability_extras(tmp_path, responses, fitted):
    out = tmp_path / "report.json"
    assert parse_and_dispatch(["reliability", "--fit", str(fitted), "--data", str(responses),
                               "--kind", "prmse", "--model-implied", "--half-width", "0.01",
                               "--out", str(out)]) == 0
    reports = json.loads(out.read_text())["reports"]
    assert [r["jacobian"] for r in reports] == ["explicit", "model_implied"]
    assert reports[0]["planned_n"] > 0


def test_reliability_rejects_bad_alpha(tmp_path, responses, fitted, capsys):
    assert parse_and_dispatch(["reliability", "--fit", str(fitted), "--data", str(responses),
                               "--alpha", "1.2"]) == 2
    assert "alpha" in _error_card(capsys)["reason"]


# ─── oracle ──────────────────────────────────────────────────────────────────


def test_oracle_enumerate_and_monte_carlo(tmp_path):
    exact_out, mc_out = tmp_path / "exact.json", tmp_path / "mc.json"
    assert parse_and_dispatch(["oracle", "--params", str(PARAMS), "--out", str(exact_out)]) == 0
    assert parse_and_dispatch(["oracle", "--params", str(PARAMS), "--mode", "mc", "--draws", "200000",
                               "--seed", "3", "--out", str(mc_out)]) == 0
    exact, mc = json.loads(exact_out.read_text()), json.loads(mc_out.read_text())
    assert exact["mode"] == "enumerate" and exact["notes"]["patterns"] == "16"
    assert mc["mode"] == "monte_carlo" and mc["draws"] == 200000
    for kind in ("prmse", "ctt"):
        assert abs(exact["values"][kind] - mc["values"][kind]) < 0.01


def test_oracle_enumeration_cap(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr("app.commands.oracle.ENUM_CAP", 10)
    assert parse_and_dispatch(["oracle", "--params", str(PARAMS), "--out", str(tmp_path / "o.json")]) == 3
    assert _error_card(capsys)["violation_type"] == "enumeration_cap_exceeded"


# ─── simulate ────────────────────────────────────────────────────────────────


def test_simulate_writes_json_and_csv(tmp_path):
    design = tmp_path / "design.json"
    design.write_text(json.dumps({
        "model": "2pl", "n_values": [200], "m_values": [3], "replications": 2, "seed": 8,
        "grid": {"q_count": 21, "lo": -5.0, "hi": 5.0},
    }))
    out, table = tmp_path / "summary.json", tmp_path / "summary.csv"
    assert parse_and_dispatch(["simulate", "--design", str(design), "--out", str(out), "--csv", str(table)]) == 0
    summary = json.loads(out.read_text())
    assert len(summary["conditions"]) == 2
    frame = pd.read_csv(table)
    assert list(frame["kind"]) == ["prmse", "ctt"]
    assert "coverage" in frame.columns and "n_over1" in frame.columns


def test_simulate_rejects_invalid_design(tmp_path, capsys):
    design = tmp_path / "design.json"
    design.write_text(json.dumps({"model": "2pl", "n_values": [], "m_values": [3], "replications": 2}))
    assert parse_and_dispatch(["simulate", "--design", str(design)]) == 2
    assert _error_card(capsys)["violation_type"] == "invalid_input"

import json

import pytest

from gkblowup.cli import main
from gkblowup.config import DEFAULTS, RunConfig, template
from gkblowup.errors import ConfigInvalid, UnknownStage
from gkblowup.pipeline import run_scenario

SMALL = {
    "potential": {"c_grid": [0.025]},
    "flow": {"t_grid": [-0.02], "convergence_t": [-0.04, -0.02], "scaling_factors": [0.5]},
    "grids": {"model_counts": 2, "scan_counts": [2, 2, 3, 3], "scan_samples": 0, "residual_counts": [2, 2, 3, 3],
              "convergence_counts": [2, 2, 3, 3], "divisor_counts": 2, "overlap_points": 4, "annulus_points": 4},
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(p)


def test_template_round_trip():
    assert RunConfig.from_dict(json.loads(template())).data == DEFAULTS
    assert RunConfig.from_dict().data == DEFAULTS


def test_partial_config_fills_defaults():
    cfg = RunConfig.from_dict({"atlas": {"r1": 0.5}})
    assert cfg["atlas"] == {**DEFAULTS["atlas"], "r1": 0.5}


@pytest.mark.parametrize("doc, path", [
    ({"grids": {"bogus": 1}}, "grids.bogus"),
    ({"nope": 1}, "nope"),
    ({"atlas": {"r0": 0.5}}, "atlas"),
    ({"atlas": {"r_max": 2.0}}, "atlas.r_max"),
    ({"model": {"t0": 0}}, "model.t0"),
    ({"flow": {"convergence_t": [-0.08, -0.05]}}, "flow.convergence_t"),
    ({"flow": {"max_steps": True}}, "flow.max_steps"),
    ({"grids": {"scan_counts": [4, 4, 4]}}, "grids.scan_counts"),
    ({"grids": {"residual_counts": [4, 4, 1, 4]}}, "grids.residual_counts[2]"),
    ({"potential": {"c_grid": []}}, "potential.c_grid"),
    ({"derivatives": {"mode": "spectral"}}, "derivatives.mode"),
    ({"seed": -1}, "seed"),
    ({"model": 3}, "model"),
])
def test_invalid_config_names_the_field(doc, path):
    with pytest.raises(ConfigInvalid) as err:
        RunConfig.from_dict(doc)
    assert err.value.path == path


def test_replace_revalidates():
    cfg = RunConfig.from_dict()
    assert cfg.replace("seed", 7)["seed"] == 7 and cfg["seed"] == 0
    with pytest.raises(ConfigInvalid):
        cfg.replace("atlas.r2", 0.3)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigInvalid) as err:
        RunConfig.load(write(tmp_path, "{not json"))
    assert err.value.path == "<file>"
    with pytest.raises(ConfigInvalid):
        RunConfig.load(str(tmp_path / "missing.json"))
    assert RunConfig.load(write(tmp_path, SMALL))["grids"]["model_counts"] == 2


def test_print_template(capsys):
    assert main(["print-config-template"]) == 0
    assert json.loads(capsys.readouterr().out) == DEFAULTS


def test_exit_2_on_bad_config(tmp_path, capsys):
    assert main(["run", "--config", write(tmp_path, {"atlas": {"r0": 0.9}})]) == 2
    assert "atlas" in capsys.readouterr().err
    assert main(["verify", "--stage", "model", "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_exit_2_on_unknown_stage(tmp_path, capsys):
    assert main(["verify", "--stage", "plots", "--config", write(tmp_path, SMALL), "--out", str(tmp_path)]) == 2
    assert "unknown stage" in capsys.readouterr().err
    with pytest.raises(UnknownStage):
        run_scenario(RunConfig.from_dict(SMALL), None, ("model", "plots"))


def test_verify_positivity_pass(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["verify", "--stage", "positivity", "--config", write(tmp_path, SMALL), "--out", str(out)])
    text = capsys.readouterr().out
    assert code == 0, text
    assert "certified (c, t) = (0.025, -0.02)" in text
    assert sorted(p.name for p in out.iterdir()) == ["positivity.csv", "report.json"]
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == "1" and report["verdict"] == "pass"
    assert list(report["stages"]) == ["positivity"]
    assert report["config"] == RunConfig.from_dict(SMALL).data
    lines = (out / "positivity.csv").read_text().splitlines()
    assert lines[0] == "chart,coord1,coord2,coord3,coord4,min_eig,res_brane,res_nijenhuis,res_gk,notes"
    assert len(lines) > 1


def test_verify_positivity_wrong_sign_exits_1(tmp_path, capsys):
    doc = json.loads(json.dumps(SMALL))
    doc["flow"]["t_grid"] = [0.5]
    code = main(["verify", "--stage", "positivity", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "verdict: fail" in capsys.readouterr().out
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["certified"] is None

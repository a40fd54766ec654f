import json
from dataclasses import replace

import pytest

from doslab import __version__
from doslab.cli import PRESETS, ConfigError, ExperimentConfig, execute, main, preset, run
from doslab.lattice import BumpPotential, HalfSpacePotential


def test_presets_cover_named_experiments():
    for name in ("example1-free", "thm-homogeneous", "thm-stability", "asymptotic-homogeneous", "connes-check", "cwikel-check", "abelian-check", "homogeneous-halfspace"):
        assert name in PRESETS
        preset(name)


def test_example1_preset_fixture():
    cfg = preset("example1-free")
    assert cfg.method == "compare"
    assert cfg.grid == {"dim": 2, "half_width": 20.0, "spacing": 0.25, "boundary": "dirichlet"}
    assert cfg.s_grid == (0.5, 1.0, 2.0)


def test_stability_preset_is_pair_run():
    cfg = preset("thm-stability")
    assert cfg.method == "stability"
    assert cfg.potential == HalfSpacePotential(2.0)
    assert cfg.perturbation == BumpPotential(5.0, 2.0, (0.0, 0.0))
    assert cfg.half_widths == (10.0, 20.0, 40.0)


def test_unknown_preset():
    with pytest.raises(KeyError, match="available"):
        preset("unknown")
    assert main(["preset", "unknown"]) == 2


@pytest.mark.parametrize("name", [p for p in PRESETS])
def test_config_round_trip_bit_identical(name):
    cfg = preset(name)
    text = cfg.to_json()
    back = ExperimentConfig.from_json(text)
    assert back == cfg
    assert back.to_json() == text
    assert back.hash() == cfg.hash()


def test_seed_required_for_stochastic_paths():
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(method="compare", s_grid=(1.0,))
    ExperimentConfig(method="abelian")


def test_tolerances_must_be_positive_and_known():
    with pytest.raises(ConfigError, match="positive"):
        ExperimentConfig(method="abelian", tolerances={"abelian": 0.0})
    with pytest.raises(ConfigError, match="does not apply"):
        ExperimentConfig(method="abelian", tolerances={"pairwise": 0.1})


def test_line_precise_errors(tmp_path):
    text = '{\n  "method": "compare",\n  "s_grid": [1.0],\n  "seed": 0,\n  "tolerances": {"pairwise": -1}\n}\n'
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_json(text, "cfg.json")
    assert exc.value.line == 5
    assert str(exc.value).startswith("cfg.json:5:")
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_json('{\n  "method": "compare",\n  oops\n}', "bad.json")
    assert exc.value.line == 3


def test_malformed_json_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"method": ')
    assert main(["run", str(path)]) == 2
    assert "bad.json:1" in capsys.readouterr().err


def test_invalid_potential_exit_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"method": "closedform", "potential": {"kind": "half_space"}, "s_grid": [1.0]}))
    assert main(["run", str(path)]) == 2


def test_emit_config(capsys):
    assert main(["preset", "abelian-check", "--emit-config"]) == 0
    out = capsys.readouterr().out
    assert ExperimentConfig.from_json(out) == preset("abelian-check")


def test_seed_override(capsys):
    assert main(["preset", "thm-stability", "--emit-config", "--seed", "7"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 7


def test_run_writes_report_and_passes(tmp_path):
    status, report = run(preset("abelian-check"), tmp_path)
    assert status == 0
    body = json.loads((tmp_path / "report.json").read_text())
    assert set(body) >= {"config", "per_route", "comparisons", "pass", "config_hash", "version"}
    assert body["version"] == __version__
    assert body["config_hash"] == preset("abelian-check").hash()
    assert body["pass"] is True
    assert (tmp_path / "abelian.csv").read_text().startswith("function,side,x,value\n")


def test_tolerance_failure_exit_1(tmp_path):
    cfg = replace(preset("abelian-check"), tolerances={"abelian": 1e-12})
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 1


def test_closedform_method(tmp_path):
    cfg = ExperimentConfig(method="closedform", potential=HalfSpacePotential(2.0), s_grid=(1.0, 2.0), lambdas=(1.0, 3.0))
    status, report = run(cfg, tmp_path)
    assert status == 0
    assert (tmp_path / "laplace_closed_form.csv").exists()
    assert (tmp_path / "integrated_dos.csv").exists()


def test_compare_subcommand_small(tmp_path):
    out = tmp_path / "cmp"
    status = main(["compare", "--half-width", "8", "--s", "0.5", "1", "--tolerance", "0.2", "--out", str(out)])
    assert status in (0, 1)
    body = json.loads((out / "report.json").read_text())
    assert body["diagnostics"]["s_excluded"][0]["s"] == 0.5
    assert set(body["per_route"]) >= {"eigencount", "ball_average", "residue", "closed_form"}
    header = (out / "compare.csv").read_text().splitlines()[0]
    assert header == "s,eigencount,ball_average,residue,closed_form"


def test_csv_determinism(tmp_path):
    cfg = ExperimentConfig(
        method="heat_ball",
        grid={"dim": 2, "half_width": 8.0, "spacing": 0.25, "boundary": "dirichlet"},
        potential=HalfSpacePotential(2.0),
        s_grid=(1.0,),
        seed=3,
    )
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for name in ("laplace_heat_ball.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

import json

import numpy as np
import pytest

from nuclear_spde.cli import main
from nuclear_spde.runner import RunManifest, compare_manifests, run_scenario, summary_table
from nuclear_spde.scenario import (ScenarioError, dumps_scenario, load_scenario, loads_scenario,
                                   resolve_scenario, shipped_scenarios)

MINIMAL = """\
schema_version: 1
name: tiny_ou
noise:
  wiener: {q: [1.0]}
coefficients: {preset: ou}
grid: {horizon: 1.0, steps: 32}
ensemble: {paths: 200, seed: 3}
checks: [isometry, covariance, moment, uniqueness]
tolerances: {weak_modes: [1], moment_modes: [8, 16]}
"""


def write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config_fills_defaults():
    s = loads_scenario(MINIMAL)
    assert s.basis.n_modes == 8 and s.basis.eigenvalues == "hermite"
    assert s.integrand.kind == "identity" and s.semigroup.growth_rate == 0.0
    assert s.tolerances.z_limit == 3.0
    assert s.build_noise().wiener.q.shape == (1, 8)


def test_negative_paths_rejected():
    with pytest.raises(ScenarioError, match=r"ensemble.paths must be ≥ 1"):
        loads_scenario(MINIMAL.replace("paths: 200", "paths: -5"))


def test_zero_atom_rejected_with_line():
    text = MINIMAL.replace("  wiener: {q: [1.0]}\n",
                           "  wiener: {q: [1.0]}\n  atoms:\n    - {vector: [0.0, 0.0], weight: 1.0}\n")
    with pytest.raises(ScenarioError) as err:
        loads_scenario(text, "cfg.yaml")
    msg = str(err.value)
    assert "LevySpec invariant" in msg and "noise.atoms[0].vector" in msg
    assert msg.startswith("cfg.yaml:6:")


def test_parse_error_has_line():
    with pytest.raises(ScenarioError, match=r"bad.yaml:3:\d+: parse error"):
        loads_scenario("name: x\ngrid: {steps: 3\nchecks: []\n", "bad.yaml")


def test_unknown_field_and_version():
    with pytest.raises(ScenarioError, match="grid.stepz"):
        loads_scenario(MINIMAL.replace("steps: 32", "stepz: 32"))
    with pytest.raises(ScenarioError, match="unsupported schema version"):
        loads_scenario(MINIMAL.replace("schema_version: 1", "schema_version: 2"))
    with pytest.raises(ScenarioError, match="seed"):
        loads_scenario(MINIMAL.replace("seed: 3", f"seed: {2 ** 64}"))


def test_cross_reference_errors():
    with pytest.raises(ScenarioError, match="need coefficients.preset"):
        loads_scenario(MINIMAL.replace("coefficients: {preset: ou}\n", ""))
    with pytest.raises(ScenarioError, match="more than 8 modes"):
        loads_scenario(MINIMAL.replace("q: [1.0]", "q: [1, 1, 1, 1, 1, 1, 1, 1, 1]"))
    with pytest.raises(ScenarioError, match="no scenario"):
        resolve_scenario("does-not-exist")


def test_bound_violation_is_config_error(tmp_path):
    text = MINIMAL.replace("{preset: ou}", "{preset: cubic}")
    with pytest.raises(ScenarioError, match="coefficients fail"):
        run_scenario(loads_scenario(text))
    relaxed = loads_scenario(text.replace("{preset: cubic}", "{preset: cubic, validate_bounds: false}")
                             .replace("checks: [isometry, covariance, moment, uniqueness]",
                                      "checks: [uniqueness]"))
    m = run_scenario(relaxed)
    assert not m.passed and "non-contractive" in m.results[0].label


@pytest.mark.parametrize("name", sorted(shipped_scenarios()))
def test_shipped_scenarios_round_trip(name):
    s = load_scenario(shipped_scenarios()[name])
    again = loads_scenario(dumps_scenario(s))
    assert again == s and again.digest() == s.digest()


def test_empty_checks_succeed(tmp_path):
    s = loads_scenario(MINIMAL).with_overrides(checks=[])
    m = run_scenario(s, tmp_path)
    assert m.results == [] and m.passed
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "pass"


def test_reruns_are_byte_identical(tmp_path):
    s = loads_scenario(MINIMAL)
    run_scenario(s, tmp_path / "a")
    run_scenario(s.with_overrides(workers=3), tmp_path / "b")
    a = (tmp_path / "a" / "summary.tsv").read_bytes()
    assert a == (tmp_path / "b" / "summary.tsv").read_bytes()
    assert a.startswith(b"check\tlabel\testimate")


def test_manifest_round_trip_and_compare(tmp_path):
    text = MINIMAL.replace("coefficients:", "integrand: {kind: time_scaled}\ncoefficients:")
    s = loads_scenario(text).with_overrides(checks=["isometry", "moment"])
    a = run_scenario(s, tmp_path / "a")
    same = RunManifest.from_json((tmp_path / "a" / "manifest.json").read_text())
    assert summary_table(same.results) == summary_table(a.results)
    assert compare_manifests(a, same).empty

    b = run_scenario(s.with_overrides(seed=99))
    d = compare_manifests(a, b)
    kinds = {x["kind"] for x in d.entries}
    assert "estimate" in kinds and "target" not in kinds and "config-divergence" not in kinds

    c = run_scenario(s.with_overrides(steps=16))
    d = compare_manifests(a, c)
    assert any(x["kind"] == "config-divergence" and x["field"].startswith("isometry")
               for x in d.entries)

    same.version = "0.0.9"
    d = compare_manifests(a, same)
    assert d.empty and d.warnings


def test_cli_run_validate_compare(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, MINIMAL)
    assert main(["validate", "--config", str(cfg)]) == 0
    monkeypatch.setenv("NSPDE_OUT_DIR", str(tmp_path / "env"))
    assert main(["run", "--config", str(cfg), "--check", "isometry", "--paths", "100"]) == 0
    out = tmp_path / "env" / "tiny_ou"
    assert (out / "summary.tsv").read_text().count("\n") == 2
    assert main(["run", "--config", str(cfg), "--check", "isometry", "--paths", "100",
                 "--out", str(tmp_path / "x"), "--dump-paths", "2"]) == 0
    paths = (tmp_path / "x" / "paths.tsv").read_text().splitlines()
    assert paths[0].split("\t") == ["path_id", "time"] + [f"x{j}" for j in range(1, 9)] + ["seminorm"]
    assert len(paths) == 1 + 2 * 33
    assert (tmp_path / "x" / "jumps.tsv").read_text() == "path_id\ttime\tatom_index\n"
    assert main(["compare", str(out), str(tmp_path / "x")]) == 0
    capsys.readouterr()
    assert main(["run", "--config", str(cfg), "--seed", "4", "--check", "isometry",
                 "--paths", "100", "--out", str(tmp_path / "y")]) == 0
    assert main(["compare", str(out), str(tmp_path / "y" / "manifest.json")]) == 1
    assert "estimate" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    bad = write(tmp_path, MINIMAL.replace("paths: 200", "paths: 0"))
    assert main(["validate", "--config", str(bad)]) == 2
    assert "ensemble.paths must be ≥ 1" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["validate", "--config", "ou"]) == 0


def test_failing_check_sets_exit_status(tmp_path):
    text = MINIMAL.replace("tolerances: {", "tolerances: {z_limit: 0.0, ")
    cfg = write(tmp_path, text)
    assert main(["run", "--config", str(cfg), "--check", "isometry",
                 "--out", str(tmp_path / "o")]) == 1


def test_levy_scenario_small_run():
    s = load_scenario(resolve_scenario("levy_ou")).with_overrides(
        paths=300, steps=64, checks=["levy", "covariance", "isometry", "weak_residual"])
    m = run_scenario(s)
    assert m.passed, summary_table(m.results)
    lin = [r for r in m.results if r.label == "compensator linearity"][0]
    assert lin.estimate == 0.0

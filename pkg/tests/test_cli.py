import filecmp
import json

import pytest
import yaml

from defaulttimes import config
from defaulttimes.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from defaulttimes.errors import ConfigError


def report(out, name):
    return json.loads((out / name / "report.json").read_text())


def write_config(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def small_kusuoka(**extra):
    doc = config.catalog_entry("kusuoka")
    doc["name"] = "small-kusuoka"
    doc["kusuoka"].update(n_paths=1500, n_steps=20, null_replications=3, **extra)
    return doc


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


def test_cox_scenario_passes_with_immersion(tmp_path):
    assert main(["run", "cox", "--out", str(tmp_path)]) == EXIT_OK
    rep = report(tmp_path, "cox")
    assert rep["ok"] and rep["schema"] == "defaulttimes.report"
    assert rep["suites"]["hypothesis"]["immersion_characterizations"] == [True, True, True, True]
    assert (tmp_path / "cox" / "azema.csv").exists()


def test_honest_time_reports_failed_immersion_without_failing(tmp_path):
    assert main(["run", "argmax", "--out", str(tmp_path)]) == EXIT_OK
    hyp = report(tmp_path, "argmax")["suites"]["hypothesis"]
    assert hyp["immersion_characterizations"] == [False, False, False, False]
    assert hyp["f_infty_measurable"]


def test_failed_assertion_exits_one_and_still_writes(tmp_path):
    doc = config.catalog_entry("refinement")
    doc["refinement"] = {"families": ["constant"], "Ks": [4, 8, 16], "min_order": 5.0}
    path = write_config(tmp_path, doc)
    assert main(["run", path, "--out", str(tmp_path / "out")]) == EXIT_FAIL
    rep = report(tmp_path / "out", "refinement")
    assert rep["ok"] is False


@pytest.mark.parametrize(
    "text",
    [
        "version: 1\nname: x\nmode: exact\nsuites: [hypothesis]\n",
        "version: 2\nname: x\nmode: exact\nsuites: [kusuoka]\nkusuoka: {}\n",
        "version: 1\nname: x\nmode: mc\nsuites: [hypothesis]\nspace: {kind: coin}\ntau: {kind: cox}\n",
        "version: 1\nname: x\nmode: exact\nsuites: [measure]\nspace: {kind: coin}\ntau: {kind: cox}\n"
        "density: {family: fh}\n",
        "version: 1\nname: x\nmode: exact\nsuites: [representation]\nspace: {kind: coin}\ntau: {kind: cox}\n"
        "claim: {F: '__import__(1)'}\n",
        "version: 1\nname: x\n  mode: [\n",
        "- just a list\n",
    ],
)
def test_malformed_config_exits_two_and_writes_nothing(tmp_path, text, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    out = tmp_path / "out"
    assert main(["run", str(path), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_unknown_target_and_bad_arguments_exit_two(tmp_path):
    assert main(["run", "no-such-scenario", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["run", "cox", "--seed", "abc"]) == EXIT_USAGE


def test_list_names_every_catalog_entry(capsys):
    assert main(["list"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    names = [line.split()[0] for line in lines]
    assert names == list(config.CATALOG)
    assert "kusuoka" in names


def test_catalog_entries_are_valid_and_anchored():
    for name, doc in config.CATALOG.items():
        assert doc["name"] == name
        assert doc["anchor"]
        config.validate(doc)


def test_validate_prints_hash(tmp_path, capsys):
    path = write_config(tmp_path, config.catalog_entry("cox"))
    assert main(["validate", path]) == EXIT_OK
    assert config.config_hash(config.catalog_entry("cox"))[:12] in capsys.readouterr().out


def test_output_directory_comes_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DEFAULTTIMES_OUT", str(tmp_path / "env"))
    assert main(["run", "independent"]) == EXIT_OK
    assert (tmp_path / "env" / "independent" / "report.json").exists()


def test_default_output_directory(tmp_path, monkeypatch):
    monkeypatch.delenv("DEFAULTTIMES_OUT", raising=False)
    monkeypatch.chdir(tmp_path)
    assert main(["run", "independent"]) == EXIT_OK
    assert (tmp_path / "reports" / "independent" / "report.json").exists()


def test_seed_and_tol_overrides_are_recorded(tmp_path):
    assert main(["run", "cox", "--out", str(tmp_path), "--seed", "9", "--tol", "1e-9"]) == EXIT_OK
    rep = report(tmp_path, "cox")
    assert rep["seed"] == 9 and rep["tol"] == pytest.approx(1e-9)


def test_exact_reports_are_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert main(["run", "fh-density", "--out", str(tmp_path / sub)]) == EXIT_OK
    assert same_tree(tmp_path / "a" / "fh-density", tmp_path / "b" / "fh-density")


def test_monte_carlo_reports_do_not_depend_on_parallelism(tmp_path):
    path = write_config(tmp_path, small_kusuoka())
    assert main(["run", path, "--out", str(tmp_path / "serial")]) == EXIT_OK
    assert main(["run", path, "--out", str(tmp_path / "par"), "--parallel"]) == EXIT_OK
    assert same_tree(tmp_path / "serial" / "small-kusuoka", tmp_path / "par" / "small-kusuoka")


def test_monte_carlo_seed_changes_the_report(tmp_path):
    path = write_config(tmp_path, small_kusuoka())
    main(["run", path, "--out", str(tmp_path / "s0")])
    main(["run", path, "--out", str(tmp_path / "s1"), "--seed", "1"])
    a = report(tmp_path / "s0", "small-kusuoka")["suites"]["kusuoka"]
    b = report(tmp_path / "s1", "small-kusuoka")["suites"]["kusuoka"]
    assert a["default_rate"] != b["default_rate"]


def test_expression_evaluator_rejects_names_and_calls():
    assert config.evaluate_expression("1 + x/4", 2.0) == 1.5
    for bad in ("y + 1", "abs(x)", "x.real", "'a'"):
        with pytest.raises(ConfigError):
            config.parse_expression(bad)

from pathlib import Path

import pytest

from orbit_tiler.cli import main
from orbit_tiler.config import ConfigError, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_cli(tmp_path, *args):
    out = tmp_path / "out"
    code = main([*args, "--out", str(out)])
    return code, out


def test_parse_defaults_and_overrides():
    cfg = parse_config((CONFIGS / "chain_golden.ini").read_text(), "chain", {"thresholds.b": "0.4", "run.seed": "9"})
    assert cfg.b == 0.4 and cfg.seed == 9 and cfg.width == 1_000_000
    assert cfg.system["cf"] == [1] * 64


def test_unknown_key_reports_position():
    with pytest.raises(ConfigError) as info:
        parse_config("[window]\nwidth = 10\nwidht = 5\n", "sections")
    assert info.value.line == 3 and "widht" in str(info.value)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_config("[plots]\ncolor = red\n", "sections")


def test_bad_value_reports_line_and_column():
    with pytest.raises(ConfigError) as info:
        parse_config("[window]\nwidth = -5\n", "sections")
    assert (info.value.line, info.value.column) == (2, 9)


def test_two_sided_budget_checked_at_parse_time():
    text = "[system]\nkind = rotation\ncf = 1*64\n[thresholds]\na = 0.49\nb = 0.5\nepsilon = 0.01\n"
    with pytest.raises(ConfigError, match="budget"):
        parse_config(text, "chain")


def test_malformed_config_exit_2_without_artifacts(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[window]\nwidth = -5\n")
    code, out = run_cli(tmp_path, "sections", "--config", str(cfg))
    assert code == 2 and not out.exists()
    assert "bad.ini:2:9" in capsys.readouterr().err


def test_bad_set_flag(tmp_path):
    code, out = run_cli(tmp_path, "condexp", "--set", "nonsense")
    assert code == 2 and not out.exists()


def test_converge_golden(tmp_path):
    code, out = run_cli(tmp_path, "converge", "--config", str(CONFIGS / "converge_golden.ini"), "--set", "run.starts=5")
    assert code == 0
    lines = (out / "converge.csv").read_text().splitlines()
    assert lines[0] == "start,n,average,deviation" and len(lines) == 1 + 5 * 3


def test_chain_above_limit_is_not_a_failure(tmp_path, capsys):
    args = ["chain", "--config", str(CONFIGS / "chain_golden.ini"), "--set", "thresholds.b=0.55"]
    args += ["--set", "window.width=100000", "--set", "window.margin=256"]
    code, _ = run_cli(tmp_path, *args)
    assert code == 0
    assert "CapReached" in capsys.readouterr().out


def test_failed_assertion_exits_1(tmp_path):
    # a tolerance no finite average can meet
    args = ["converge", "--config", str(CONFIGS / "converge_golden.ini"), "--set", "run.tolerance=1e-12"]
    code, out = run_cli(tmp_path, *args, "--set", "run.starts=3")
    assert code == 1 and (out / "report.txt").exists()


def test_jobs_do_not_change_artifacts(tmp_path):
    base = ["converge", "--config", str(CONFIGS / "converge_bernoulli.ini"), "--set", "run.seeds=12"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([*base, "--out", str(a)]) == 0
    assert main([*base, "--out", str(b), "--jobs", "3"]) == 0
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_seed_flag_changes_sections(tmp_path):
    base = ["sections", "--config", str(CONFIGS / "sections_golden.ini")]
    a, b = tmp_path / "a", tmp_path / "b"
    main([*base, "--out", str(a)])
    main([*base, "--out", str(b), "--seed", "43"])
    assert (a / "sections.csv").read_bytes() != (b / "sections.csv").read_bytes()


@pytest.mark.parametrize("command", ["lemma1", "tile", "condexp"])
def test_shipped_configs_pass(tmp_path, command):
    cfg = next(CONFIGS.glob(f"{command}_*.ini"))
    code, out = run_cli(tmp_path, command, "--config", str(cfg))
    assert code == 0
    assert not [p for p in out.iterdir() if p.name.startswith(".")]

"""Tests for the flat key=value config format."""

import pytest

from otmeanflow.config import ConfigError, load_config, parse_config_text, render_config

MINIMAL = """
source.kind = gaussian
target.kind = eight_gaussians
"""


def test_minimal_config_uses_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg.source.kind == "gaussian"
    assert cfg.target.kind == "eight_gaussians"
    assert cfg.coupling.kind == "exact"
    assert cfg.batch_size == 256 and cfg.iterations == 10000


def test_comments_and_blank_lines_ignored():
    cfg = parse_config_text(
        "# a comment\n\nsource.kind = gaussian  # inline comment\ntarget.kind = moons\n"
    )
    assert cfg.target.kind == "moons"


def test_roundtrip_render_parse():
    cfg = parse_config_text(MINIMAL + "coupling.kind = sinkhorn\nbatch_size = 64\nlr = 0.01\n")
    assert parse_config_text(render_config(cfg)) == cfg


def test_unknown_key_reports_line_number():
    with pytest.raises(ConfigError, match=r"<config>:3.*unknown key"):
        parse_config_text("source.kind = gaussian\ntarget.kind = moons\nbogus_key = 1\n")


def test_bad_value_reports_line_number():
    with pytest.raises(ConfigError, match=r":3.*bad value"):
        parse_config_text("source.kind = gaussian\ntarget.kind = moons\nbatch_size = many\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("source.kind = gaussian\nsource.kind = moons\ntarget.kind = moons\n")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config_text("source.kind gaussian\n")


def test_missing_dataset_kind_rejected():
    with pytest.raises(ConfigError, match="source.kind"):
        parse_config_text("target.kind = moons\n")


def test_semantic_validation_wrapped_as_config_error():
    with pytest.raises(ConfigError, match="batch_size"):
        parse_config_text(MINIMAL + "batch_size = 1\n")


def test_load_config_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.txt"
    with pytest.raises(ConfigError, match="nope.txt"):
        load_config(missing)


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text(MINIMAL + "iterations = 5\n")
    cfg = load_config(path)
    assert cfg.iterations == 5


def test_error_in_file_names_file_and_line(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text("source.kind = gaussian\ntarget.kind = moons\nwhat = 1\n")
    with pytest.raises(ConfigError, match=r"run.txt:3"):
        load_config(path)

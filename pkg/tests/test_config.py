import math

import pytest

from grushin_lab.config import ConfigError, ExperimentConfig, parse_config


def _errors(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.violations


def test_minimal_config_echoes_defaults():
    cfg = parse_config("protocol:\n  N: 2\n")
    default = ExperimentConfig()
    assert cfg.protocol.N == 2
    assert cfg.physics == default.physics
    assert cfg.geometry.L2 == pytest.approx(math.pi)
    assert parse_config(None).to_dict() == default.to_dict()


def test_protocol_ordering():
    errs = _errors("protocol:\n  t1: 0.3\n  T1: 0.2\n")
    assert any(e.startswith("protocol ordering") for e in errs)


def test_gamma_range():
    errs = _errors("physics:\n  gamma: 1.5\n")
    assert any(e.startswith("gamma out of (0,1]") for e in errs)


def test_all_violations_reported():
    errs = _errors("physics:\n  gamma: 1.5\n  s: 0.2\nprotocol:\n  t1: 2.0\nbogus: 1\n")
    assert len(errs) >= 4
    assert any("bogus" in e for e in errs)
    assert any("s must exceed" in e for e in errs)


def test_unknown_section_key():
    errs = _errors("physics:\n  gama: 0.5\n")
    assert any("gama" in e for e in errs)


def test_type_errors():
    errs = _errors("discretization:\n  n_cells: lots\n")
    assert any("n_cells" in e and "integer" in e for e in errs)


def test_class_m_unsatisfiable():
    errs = _errors("coefficients:\n  b: {kind: bump, center: 0.6, width: 0.15, amplitude: 5.0}\n")
    assert any("coefficients.b" in e or "[0.5, 2.0]" in e for e in errs)


def test_geometry_constraints():
    errs = _errors("geometry:\n  subdomain: {lo: -0.1, hi: 0.5, delta: 0.3}\n")
    assert any("distance" in e for e in errs)


def test_malformed_yaml():
    errs = _errors("physics: [\n")
    assert errs[0].startswith("malformed YAML")


def test_dump_round_trip(tmp_path):
    cfg = parse_config("physics:\n  gamma: 1.0\nensemble:\n  seed: 7\n")
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    again = parse_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert parse_config(str(path)).physics.gamma == 1.0

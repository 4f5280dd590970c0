import math
from pathlib import Path

import pytest

from rflab import config
from rflab.errors import ConfigError, ParameterError

EXAMPLE = """
output_dir = "out"
seed = 3

[scenario]
preset = "dumbbell"

[scenario.params]
bulb_radius = 1.0
neck_radius = 0.2

[grid]
node_count = 200

[controller]
checkpoint_stride = 5e-4
stop_min_psi = 0.02

[constants]
A = 2.0
sigma0 = 1.5

[quotient]
s_nodes = 41
alpha_nodes = 65

[[audits]]
name = "noncollapse"
radii = [0.1, 0.2]

[[audits]]
name = "classify"
points = [{ at = "pole0", expect = "regular" }]
"""


def test_parse_run_config_reads_every_section() -> None:
    """Tables map onto the typed dataclasses; unset values keep defaults."""
    cfg = config.parse_run_config(EXAMPLE)
    assert cfg.scenario.preset == "dumbbell"
    assert cfg.scenario.params == {"bulb_radius": 1.0, "neck_radius": 0.2}
    assert cfg.grid.node_count == 200
    assert cfg.controller.checkpoint_stride == 5e-4
    assert cfg.controller.t_max == math.inf
    assert cfg.constants.A == 2.0
    assert cfg.constants.sigma0 == 1.5
    assert cfg.constants.sigma1 is None
    assert cfg.quotient.resolution().s_nodes == 41
    assert [a.name for a in cfg.audits] == ["noncollapse", "classify"]
    assert cfg.audits[0].params == {"radii": [0.1, 0.2]}
    assert cfg.output_dir == Path("out")
    assert cfg.seed == 3


FLAT = """
output_dir = "out"
scenario.preset = "dumbbell"
scenario.neck_radius = 0.15
scenario.bulb_radius = 1.0
grid.node_count = 200
controller.stop_min_psi = 0.02
constants.A = 2.0
audits.hypothesis = true
audits.noncollapse.radii = [0.1, 0.2]
audits.classify = false
"""


def test_flat_dotted_keys_match_tables() -> None:
    """One key = value per line gives the same run as the table form."""
    cfg = config.parse_run_config(FLAT)
    assert cfg.scenario.preset == "dumbbell"
    assert cfg.scenario.params == {"neck_radius": 0.15, "bulb_radius": 1.0}
    assert cfg.grid.node_count == 200
    assert cfg.controller.stop_min_psi == 0.02
    assert cfg.constants.A == 2.0
    assert [a.name for a in cfg.audits] == ["hypothesis", "noncollapse"]
    assert cfg.audits[1].params == {"radii": [0.1, 0.2]}
    assert cfg.output_dir == Path("out")


def test_flat_scenario_keys_must_belong_to_the_preset() -> None:
    """A parameter the preset does not read is refused on its line."""
    text = 'scenario.preset = "round_sphere"\nscenario.neck_radius = 0.2\n'
    with pytest.raises(ConfigError, match="scenario.neck_radius") as info:
        config.parse_run_config(text)
    assert info.value.lineno == 2
    with pytest.raises(ConfigError, match="set twice"):
        config.parse_run_config('[scenario]\nradius = 1.0\n[scenario.params]\nradius = 2.0\n')
    with pytest.raises(ConfigError, match="audits.noncollapse"):
        config.parse_run_config("audits.noncollapse = 3\n")


def test_empty_config_uses_defaults() -> None:
    """An empty file is a valid round-sphere run without audits."""
    cfg = config.parse_run_config("")
    assert cfg.scenario.preset == "round_sphere"
    assert cfg.audits == []
    assert cfg.controller.to_controller().cfl_fraction == 0.1


def test_unknown_key_reports_its_line() -> None:
    """Unknown keys are refused with the line they appear on."""
    text = "[grid]\nnode_count = 100\nnodes = 3\n"
    with pytest.raises(ConfigError) as info:
        config.parse_run_config(text)
    assert info.value.lineno == 3
    assert str(info.value).startswith("line 3: ")


def test_unknown_preset_and_audit_are_refused() -> None:
    """Names outside the catalogues point at their line."""
    with pytest.raises(ConfigError, match="unknown preset"):
        config.parse_run_config('[scenario]\npreset = "torus"\n')
    with pytest.raises(ConfigError, match="unknown audit") as info:
        config.parse_run_config('[[audits]]\nname = "curvature-magic"\n')
    assert info.value.lineno == 2


def test_invalid_values_are_config_errors() -> None:
    """Controller and constant validation surfaces as ConfigError."""
    with pytest.raises(ConfigError, match=r"\[controller\]"):
        config.parse_run_config("[controller]\ncfl_fraction = 0.9\n")
    with pytest.raises(ConfigError, match=r"\[constants\]"):
        config.parse_run_config("[constants]\nB = 0.5\n")
    with pytest.raises(ConfigError, match="node_count"):
        config.parse_run_config("[grid]\nnode_count = 8\n")
    with pytest.raises(ConfigError):
        config.parse_run_config("[grid\n")


def test_load_run_config_falls_back_to_default_path(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """Without an explicit path the default location is read."""
    cfg_file = tmp_path / "config.toml"
    cfg_file.write_text(EXAMPLE, encoding="utf-8")
    monkeypatch.setattr(config, "DEFAULT_CONFIG_PATH", cfg_file)

    cfg = config.load_run_config()

    assert cfg.scenario.preset == "dumbbell"


def test_load_run_config_missing_file_raises(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """A missing config file is a ConfigError naming the path."""
    cfg_file = tmp_path / "nonexistent.toml"
    monkeypatch.setattr(config, "DEFAULT_CONFIG_PATH", cfg_file)

    with pytest.raises(ConfigError, match="nonexistent.toml"):
        config.load_run_config()


def test_scaled_multiplies_resolutions() -> None:
    """scaled(k) changes the node counts only."""
    cfg = config.parse_run_config(EXAMPLE)
    assert cfg.scaled(1.0) is cfg
    double = cfg.scaled(2.0)
    assert double.grid.node_count == 400
    assert double.quotient.s_nodes > cfg.quotient.s_nodes
    assert double.constants == cfg.constants
    assert cfg.scaled(0.01).grid.node_count == 16
    with pytest.raises(ParameterError):
        cfg.scaled(0.0)


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.toml")), ids=lambda p: p.stem)
def test_bundled_configs_parse(path: Path) -> None:
    """Every scenario under configs/ loads, flat or tabular."""
    cfg = config.load_run_config(path)
    assert cfg.audits


def test_flat_round_sphere_config_keeps_its_params() -> None:
    """The flat round-sphere scenario folds its radius into the preset params."""
    cfg = config.load_run_config(Path(__file__).parent.parent / "configs" / "round_sphere.toml")
    assert cfg.scenario.params == {"radius": 1.0}
    assert cfg.controller.t_max == 0.16
    assert [a.name for a in cfg.audits][:2] == ["hypothesis", "riemann-l2"]
    assert cfg.audits[0].params == {"expected_exponent": 0.5}

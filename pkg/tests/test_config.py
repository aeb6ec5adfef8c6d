"""Config parsing: the flat key=value format, defaults, and validation."""

import pytest

from porocouple.config import ConfigError, load_scenario, load_scenario_file, parse_flat

MINIMAL = "scenario.kind = testcase1\nperm.k = 1e-6\n"


def test_parse_flat_strips_comments_and_tracks_lines():
    text = (
        "# heading comment\n"
        "\n"
        "a.b = 1.5   # trailing comment\n"
        "c.d = two words\n"
        "a.b = 2.5\n"
    )
    entries = parse_flat(text)
    assert entries["a.b"] == ("2.5", 5)
    assert entries["c.d"] == ("two words", 4)


@pytest.mark.parametrize("bad, line", [
    ("a.b = 1\nnot an assignment\n", 2),
    ("flatkey = 1\n", 1),
    ("a.b =\n", 1),
    ("a.b = 1\n = 7\n", 2),
])
def test_parse_flat_reports_the_offending_line(bad, line):
    with pytest.raises(ConfigError, match=f"line {line}:"):
        parse_flat(bad)


def test_testcase1_defaults():
    cfg = load_scenario(MINIMAL)
    assert cfg.kind == "testcase1"
    assert cfg.domain == (0.0, 0.0, 1.0, 0.25)
    assert cfg.pm_box == (0.4, 0.0, 0.6, 0.2)
    assert (cfg.ff_nx, cfg.ff_ny) == (80, 20)
    assert (cfg.pm_nx, cfg.pm_ny) == (8, 8)
    assert cfg.p_left == 1.0e5 + 1.0e-6
    assert cfg.p_right == 1.0e5
    assert cfg.perm_beta == 10.0
    assert cfg.perm_alpha_degrees == 0.0
    assert cfg.scheme == "mpfa"
    assert not cfg.pm_triangulated
    assert cfg.solver.snapshots == ()


def test_testcase2_defaults_include_snapshots():
    cfg = load_scenario("scenario.kind = testcase2\nperm.k = 1e-6\n")
    assert cfg.domain[2] == 2.5
    assert cfg.ff_nx == 200
    assert cfg.p_left == 1.0e5 + 2.0e-3
    assert cfg.perm_beta == 100.0
    assert cfg.solver.snapshots == (20.0, 40.0, 80.0, 200.0, 1000.0)


def test_testcase3_defaults_triangulate_the_obstacle():
    cfg = load_scenario("scenario.kind = testcase3\nperm.k = 1e-6\n")
    assert cfg.pm_triangulated
    assert cfg.perm_alpha_degrees == 45.0
    assert cfg.perm_beta == 10.0
    assert cfg.domain == (0.0, 0.0, 1.0, 0.25)


def test_missing_permeability_is_named():
    with pytest.raises(ConfigError, match="missing required key: perm.k"):
        load_scenario("scenario.kind = testcase1\n")


def test_missing_kind_is_named():
    with pytest.raises(ConfigError, match="scenario.kind"):
        load_scenario("perm.k = 1e-6\n")


def test_unknown_key_carries_its_line():
    text = "scenario.kind = testcase1\nperm.k = 1e-6\nperm.kappa = 3\n"
    with pytest.raises(ConfigError, match="line 3: unknown key 'perm.kappa'"):
        load_scenario(text)


def test_bad_value_carries_key_and_line():
    text = "scenario.kind = testcase1\nperm.k = fast\n"
    with pytest.raises(ConfigError, match="line 2: perm.k"):
        load_scenario(text)


def test_overrides_win_over_the_file():
    cfg = load_scenario(MINIMAL + "perm.beta = 10\n",
                        overrides=("perm.beta=100", "darcy.scheme=tpfa"))
    assert cfg.perm_beta == 100.0
    assert cfg.scheme == "tpfa"


def test_override_without_equals_is_rejected():
    with pytest.raises(ConfigError, match="key=value"):
        load_scenario(MINIMAL, overrides=("perm.beta",))


def test_walls_accept_only_noslip():
    load_scenario(MINIMAL + "bc.walls = noslip\n")
    with pytest.raises(ConfigError, match="noslip"):
        load_scenario(MINIMAL + "bc.walls = slip\n")


def test_snapshot_list_parses_spaces_or_commas():
    cfg = load_scenario(MINIMAL + "time.snapshots = 1 2.5 10\ntime.t_end = 20\n")
    assert cfg.solver.snapshots == (1.0, 2.5, 10.0)
    cfg = load_scenario(MINIMAL + "time.snapshots = 1, 2.5, 10\ntime.t_end = 20\n")
    assert cfg.solver.snapshots == (1.0, 2.5, 10.0)


def test_snapshot_beyond_horizon_is_rejected():
    with pytest.raises(ConfigError, match="snapshot"):
        load_scenario(MINIMAL + "time.snapshots = 2000\n")


@pytest.mark.parametrize("extra", [
    "time.growth = 1.0",
    "time.backoff = 1.0",
    "newton.abs_tol = 0",
    "darcy.xi = 1.5",
    "perm.beta = 0.5",
    "pm.nodes_file = mesh.nodes",
    "freeflow.nx = 0",
    "output.interval = -1",
])
def test_validation_rejects_out_of_range_settings(extra):
    with pytest.raises(ConfigError):
        load_scenario(MINIMAL + extra + "\n")


def test_newton_kw_matches_solver_signature():
    cfg = load_scenario(MINIMAL + "newton.max_iter = 9\nnewton.fd_epsilon = 1e-7\n")
    kw = cfg.solver.newton_kw()
    assert kw == {"abs_tol": 1.0e-11, "rel_tol": 1.0e-8, "max_iter": 9,
                  "fd_eps": 1.0e-7, "max_halvings": 4}


def test_constant_fluid_parameters_pick_density_and_viscosity():
    cfg = load_scenario(MINIMAL + "fluid.kind = constant\n"
                        "fluid.reference_density = 1.2\nfluid.viscosity = 1e-3\n")
    assert cfg.fluid_parameters() == {"density": 1.2, "viscosity": 1.0e-3}


def test_load_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(MINIMAL + "darcy.scheme = tpfa\n")
    cfg = load_scenario_file(str(path))
    assert cfg.scheme == "tpfa"
    with pytest.raises(ConfigError, match="cannot read config"):
        load_scenario_file(str(tmp_path / "absent.cfg"))

from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbconvex.config import ENV_PREFIX, ConfigError, RunConfig

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.ini"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_load(path):
    cfg = RunConfig.load(path, environ={})
    assert RunConfig.from_ini(cfg.to_ini(), environ={}) == cfg


@settings(max_examples=40, deadline=None)
@given(
    tol=st.floats(1e-12, 1.0),
    zeta_max=st.floats(1.0, 20.0),
    seed=st.integers(0, 2**31),
    axes=st.tuples(*[st.floats(0.1, 5.0)] * 3),
    name=st.sampled_from(["sphere", "ellipsoid", "quartic"]),
)
def test_ini_round_trip(tol, zeta_max, seed, axes, name):
    cfg = RunConfig().with_updates(
        solver={"tol": tol}, grid={"zeta_max": zeta_max}, run={"seed": seed}, domain={"axes": axes, "name": name}
    )
    assert RunConfig.from_ini(cfg.to_ini(), environ={}) == cfg


def _error(text, environ=None):
    with pytest.raises(ConfigError) as e:
        RunConfig.from_ini(text, "x.ini", environ or {})
    return str(e.value)


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("[model]\ngamma = 0.5\n", 2, "gamma"),
        ("[grid]\nn_radial = 6\nmesh_theta = 0\n", 3, "mesh_theta"),
        ("[grid]\n\n\ngrazing_cutoff = 0.0\n", 4, "grazing_cutoff"),
        ("[solver]\ntol = -1e-6\n", 2, "tol"),
        ("[grid]\nangular_order = 6\n", 2, "angular_order"),
        ("[solver]\ntol = fast\n", 2, "tol"),
        ("[solver]\nspeed = 3\n", 2, "unknown key"),
        ("[temperature]\nkind = sinusoid\n", 2, "kind"),
    ],
)
def test_errors_name_file_and_line(text, line, fragment):
    msg = _error(text)
    assert msg.startswith(f"x.ini:{line}:")
    assert fragment in msg


def test_unknown_section_and_syntax():
    assert "unknown section" in _error("[solvers]\ntol = 1\n")
    assert _error("tol = 1\n").startswith("x.ini:1:")
    assert "duplicate" in _error("[solver]\ntol = 1\ntol = 2\n")


def test_environment_overrides_file():
    env = {ENV_PREFIX + "SOLVER_TOL": "1e-8", ENV_PREFIX + "GRID_ZETA_MAX": "8", "UNRELATED": "x"}
    cfg = RunConfig.from_ini("[solver]\ntol = 1e-4\n", environ=env)
    assert cfg.solver.tol == 1e-8 and cfg.grid.zeta_max == 8.0


def test_bad_environment_override():
    assert f"{ENV_PREFIX}SOLVER_SPEED" in _error("", {ENV_PREFIX + "SOLVER_SPEED": "1"})
    assert "environment" in _error("", {ENV_PREFIX + "GRID_MESH_THETA": "0"})


def test_tuples_and_builders():
    cfg = RunConfig.from_ini("[domain]\nname = ellipsoid\naxes = 1, 2, 3\n[temperature]\nkind = linear\nt0 = 1\nslope = 0.1, 0, 0\n", environ={})
    assert cfg.build_domain().name == "ellipsoid"
    assert cfg.build_temperature()((2.0, 0.0, 0.0)) == pytest.approx(1.2)
    assert cfg.build_grid().zeta_max == cfg.grid.zeta_max

import json
from pathlib import Path

import numpy as np
import pytest

from ddft import config as cfgmod
from ddft.diagnostics import write_field_csv
from ddft.errors import ConfigError
from ddft.grid import build_grid, integrate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

FULL = """
[domain]
L = 2
N = 48
d = 1

[initial]
kind = mixture
centers = 0.5; 1.5
widths = 0.1
weights = 1; 2
zero_cell = 3

[potentials]
V1 = harmonic:stiffness=2,center=1
V1_modulation = eps=0.2,omega=3
V2 = soft_core:amplitude=0.1,width=0.3

[hi]
Z1 = gaussian:amplitude=0.3,width=0.2
Z2 = gaussian:amplitude=0.2,width=0.2 @ dyadic:c1=1,c2=0.5,eps_reg=0.05

[stepping]
dt = 5e-4
t_end = 0.25
record_every = 4
snapshot_every = 20
rate = yes

[equilibrium]
damping = 0.5
max_iter = 50

[particles]
N = 300
pair_method = binned

[output]
directory = results

[run]
seed = 7
"""


def test_full_config_round_trips():
    cfg = cfgmod.parse_text(FULL)
    assert cfg.L == 2.0 and cfg.N == 48
    assert cfg.initial.zero_cell == 3
    assert cfg.initial.p["centers"] == (0.5, 1.5)
    assert cfg.specs.V1.modulation.eps == 0.2
    assert cfg.specs.Z2.structure == "dyadic"
    assert cfg.stepping.control.dt == 5e-4 and cfg.stepping.rate
    assert cfg.stepping.spectral_every is None
    assert cfg.particles.pair_method == "binned"
    assert cfg.seed == 7 and cfg.output == "results"
    assert cfgmod.parse_text(cfgmod.to_text(cfg)) == cfg
    assert cfgmod.parse_dict(cfgmod.to_sections(cfg)) == cfg


def test_json_and_ini_agree():
    cfg = cfgmod.parse_text(FULL)
    data = json.loads(json.dumps(cfgmod.to_sections(cfg)))
    assert cfgmod.parse_dict(data) == cfg
    native = {"domain": {"L": 2.0, "N": 48}, "stepping": {"rate": True, "snapshot_every": None}}
    c = cfgmod.parse_dict(native)
    assert c.L == 2.0 and c.N == 48 and c.stepping.rate and c.stepping.snapshot_every is None


def test_defaults():
    cfg = cfgmod.parse_text("")
    assert cfg == cfgmod.RunConfig()
    assert not cfg.specs.has_hi


@pytest.mark.parametrize(
    "text,key",
    [
        ("[domian]\nL = 1", "domian"),
        ("[domain]\nLength = 1", "domain.length"),
        ("[domain]\nN = abc", "domain.N"),
        ("[domain]\nN = 12.5", "domain.N"),
        ("[domain]\nL = -1", "domain"),
        ("[domain]\nd = 3", "domain"),
        ("[potentials]\nV1 = wobbly:a=1", "potentials.V1"),
        ("[potentials]\nV2 = harmonic:stiffness=1", "potentials.V2"),
        ("[potentials]\nV2 = gaussian:amplitude", "potentials.V2"),
        ("[hi]\nZ2 = gaussian:amplitude=1,width=0.2 @ helical", "hi.Z2"),
        ("[hi]\nZ2 = gaussian:amplitude=1,width=0.2 @ dyadic:c3=1", "hi.Z2"),
        ("[domain]\nd = 2\nN = 8\n[hi]\nZ1 = gaussian:amplitude=0.1,width=0.2 @ dyadic:c1=1", "hi.Z1"),
        ("[initial]\nkind = spiral", "initial.kind"),
        ("[stepping]\ndt = 0", "stepping"),
        ("[stepping]\nscheme = leapfrog", "stepping"),
        ("[stepping]\nt_end = -1", "stepping.t_end"),
        ("[stepping]\nrecord_every = 0", "stepping.record_every"),
        ("[stepping]\nrate = maybe", "stepping.rate"),
        ("[equilibrium]\ndamping = 1.5", "equilibrium.damping"),
        ("[particles]\npair_method = tree", "particles.pair_method"),
    ],
)
def test_bad_configs_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        cfgmod.parse_text(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_unreadable_inputs(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.parse_text("no section header")
    with pytest.raises(ConfigError):
        cfgmod.parse_dict({"domain": 3})
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        cfgmod.load(bad)
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "missing.ini")


def test_hash_stable_and_seed_override():
    a = cfgmod.parse_text(FULL)
    b = cfgmod.parse_text(cfgmod.to_text(a))
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    assert len(cfgmod.config_hash(a)) == 40
    c = cfgmod.with_seed(a, 99)
    assert c.seed == 99 and c.specs == a.specs
    assert cfgmod.config_hash(c) != cfgmod.config_hash(a)


def _cfg(text):
    return cfgmod.parse_text("[domain]\nL = 1\nN = 64\n" + text)


@pytest.mark.parametrize(
    "body",
    [
        "",
        "[initial]\nkind = gaussian\ncenter = 0.3\nwidth = 0.05",
        "[initial]\nkind = mixture",
        "[initial]\nkind = cosine\namplitude = 0.5\nmode = 2",
        "[initial]\nkind = uniform\nzero_cell = 10",
    ],
)
def test_initial_densities_have_unit_mass(body):
    rho = cfgmod.initial_density(_cfg(body))
    g = build_grid(1.0, 64)
    assert rho.shape == (64,)
    assert integrate(g, rho) == pytest.approx(1.0, abs=1e-14)
    assert rho.min() >= 0


def test_initial_gaussian_peak_and_zero_cell():
    g = build_grid(1.0, 64)
    rho = cfgmod.initial_density(_cfg("[initial]\nkind = gaussian\ncenter = 0.25\nwidth = 0.05\nzero_cell = 0"))
    assert g.centers[np.argmax(rho)] == pytest.approx(0.25, abs=g.h)
    assert rho[0] == 0.0


def test_initial_mixture_weights():
    g = build_grid(1.0, 64)
    rho = cfgmod.initial_density(_cfg("[initial]\nkind = mixture\ncenters = 0.25;0.75\nwidths = 0.05\nweights = 1;3"))
    left = integrate(g, np.where(g.centers < 0.5, rho, 0.0))
    assert left == pytest.approx(0.25, abs=1e-6)


def test_initial_two_dimensional():
    cfg = cfgmod.parse_text("[domain]\nN = 16\nd = 2\n[initial]\nkind = gaussian\ncenter = 0.3;0.6")
    rho = cfgmod.initial_density(cfg)
    g = cfg.grid
    assert rho.shape == (16, 16)
    i, j = np.unravel_index(np.argmax(rho), rho.shape)
    assert abs(g.points[i, j, 0] - 0.3) <= g.h and abs(g.points[i, j, 1] - 0.6) <= g.h


@pytest.mark.parametrize(
    "body,key",
    [
        ("[initial]\nkind = cosine\namplitude = 1.0", "initial.amplitude"),
        ("[initial]\nkind = gaussian\nwidth = 0", "initial.width"),
        ("[initial]\nkind = gaussian\ncenter = 0.1;0.2;0.3", "initial.center"),
        ("[initial]\nkind = uniform\nzero_cell = 64", "initial.zero_cell"),
        ("[initial]\nkind = file", "initial.path"),
        ("[initial]\nkind = file\npath = nowhere.csv", "initial.path"),
    ],
)
def test_initial_density_errors(body, key):
    with pytest.raises(ConfigError) as info:
        cfgmod.initial_density(_cfg(body))
    assert info.value.key == key


def test_initial_from_file(tmp_path):
    g = build_grid(1.0, 64)
    vals = 1 + 0.5 * np.sin(2 * np.pi * g.centers)
    vals /= integrate(g, vals)
    write_field_csv(tmp_path / "rho.csv", g, vals)
    cfg = _cfg("[initial]\nkind = file\npath = rho.csv")
    np.testing.assert_array_equal(cfgmod.initial_density(cfg, tmp_path), vals)
    write_field_csv(tmp_path / "heavy.csv", g, 2 * vals)
    with pytest.raises(ConfigError, match="mass"):
        cfgmod.initial_density(_cfg("[initial]\nkind = file\npath = heavy.csv"), tmp_path)
    write_field_csv(tmp_path / "coarse.csv", build_grid(1.0, 32), np.ones(32))
    with pytest.raises(ConfigError):
        cfgmod.initial_density(_cfg("[initial]\nkind = file\npath = coarse.csv"), tmp_path)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.iterdir()))
def test_shipped_configs_load(name):
    cfg = cfgmod.load(CONFIGS / name)
    rho = cfgmod.initial_density(cfg, CONFIGS)
    assert integrate(cfg.grid, rho) == pytest.approx(1.0, abs=1e-13)
    assert cfgmod.parse_text(cfgmod.to_text(cfg)) == cfg

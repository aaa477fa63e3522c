import hashlib
import json

import pytest

from latticespread.core import LatticeError, LatticeGeometry, PowerLaw, Waveguide
from latticespread.scenarios import (
    ScenarioConfig,
    ScenarioError,
    get_scenario,
    list_scenarios,
    run_scenario,
)

EXPECTED = [
    "fig2a", "fig2b", "fig2c", "fig3a_wg", "fig3b_par_0.6pi", "fig3b_par_0.15pi",
    "fig3c_perp_0.3pi", "fig3c_perp_0.6pi", "fig4a", "fig4b", "sm_fig_s3_spa", "sm_fig_s4",
    "sm_fig_s5", "sm_fig_s5_1.2pi", "sm_fig_s6_x", "sm_fig_s6_y", "sm_fig_s6_z",
]


def _small(**kw):
    base = dict(name="small", model=PowerLaw(3.0), geometry=LatticeGeometry.chain(121),
                times=[5, 10, 15], spa={"enabled": True}, dispersion={"grid": 256})
    base.update(kw)
    return ScenarioConfig(**base)


def test_registry_order_is_stable():
    assert [n for n, _ in list_scenarios()] == EXPECTED
    with pytest.raises(LatticeError, match="unknown scenario"):
        get_scenario("nope")


@pytest.mark.parametrize("name", EXPECTED)
def test_builtin_round_trip(name):
    cfg = get_scenario(name)
    again = ScenarioConfig.from_json(cfg.to_json())
    assert again.to_json() == cfg.to_json()


@pytest.mark.parametrize("path", [(), ("analysis",), ("dispersion",), ("spa",), ("model",), ("geometry",)])
def test_unknown_keys_rejected_at_every_level(path):
    data = _small().to_dict()
    target = data
    for p in path:
        target = target[p]
    target["surprise"] = 1
    with pytest.raises(LatticeError, match="unknown keys"):
        ScenarioConfig.from_dict(data)


@pytest.mark.parametrize("kw", [
    {"times": []}, {"times": [3, 2, 5]}, {"times": [-1, 1, 2]}, {"method": "rk4"},
    {"name": "a/b"}, {"model": Waveguide(1.0), "geometry": LatticeGeometry.square(5)},
    {"initial_site": 999},
])
def test_config_validation(kw):
    with pytest.raises(LatticeError):
        _small(**kw)


def test_missing_required_key():
    data = _small().to_dict()
    del data["times"]
    with pytest.raises(LatticeError, match="missing 'times'"):
        ScenarioConfig.from_dict(data)


def test_run_writes_complete_reproducible_bundle(tmp_path):
    cfg = _small()
    b1 = run_scenario(cfg, tmp_path / "a")
    b2 = run_scenario(cfg, tmp_path / "b")
    root = b1.path
    for rel in ("manifest.json", "timing.json", "classification.json", "contours.json",
                "snapshots/t_5.csv", "snapshots/t_15.json", "dispersion/omega_1d.csv",
                "spa/t_10.csv"):
        assert (root / rel).is_file(), rel
    m1 = (root / "manifest.json").read_bytes()
    assert m1 == (b2.path / "manifest.json").read_bytes()
    manifest = json.loads(m1)
    for rel, digest in manifest["checksums"].items():
        assert hashlib.sha256((root / rel).read_bytes()).hexdigest() == digest
    assert "timing.json" not in manifest["checksums"]
    assert manifest["summary"]["label"] in ("Split", "Unsplit")
    assert manifest["config"] == cfg.to_dict()
    assert not [p for p in (tmp_path / "a").iterdir() if p.name.startswith(".")]


def test_failed_stage_cleans_up_and_keeps_old_bundle(tmp_path):
    good = _small(spa={}, dispersion={"kind": "none"})
    run_scenario(good, tmp_path)
    before = (tmp_path / "small" / "manifest.json").read_bytes()
    bad = _small(spa={}, dispersion={"kind": "powerlaw_2d"}, model=Waveguide(1.0))
    with pytest.raises(ScenarioError) as err:
        run_scenario(bad, tmp_path)
    assert err.value.stage == "dispersion"
    assert (tmp_path / "small" / "manifest.json").read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["small"]


def test_two_dimensional_overall_label(tmp_path):
    cfg = ScenarioConfig("sq", PowerLaw(2.0), LatticeGeometry.square(41), [2, 4, 6],
                         analysis={"lines": ["row", "radial"], "window": 1})
    b = run_scenario(cfg, tmp_path)
    labels = b.manifest["summary"]["labels"]
    assert set(labels) == {"row", "radial"}
    expect = "Split" if "Split" in labels.values() else "Unsplit"
    assert b.manifest["summary"]["label"] == expect

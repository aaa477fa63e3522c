import json
import math

import numpy as np
import pytest

from latticespread.analysis import (
    classify_spreading,
    detect_peaks,
    gauss_bonnet_check,
    local_maxima,
    moment_integrals,
    nogo_suite,
    packet_maxima,
    sign_coverage,
    smooth,
    smooth_battery_1d,
    smooth_battery_2d,
)
from latticespread.core import LatticeError, LatticeGeometry, PowerLaw, Waveguide
from latticespread.dispersion import dispersion_for
from latticespread.dynamics import Profile, WaveformSnapshot

X = np.arange(-200, 201, dtype=float)


def _gauss(center, width=4.0, height=1.0):
    return height * np.exp(-0.5 * ((X - center) / width) ** 2)


def _series(profiles, times=(10.0, 20.0, 30.0)):
    return [(t, Profile(X, p)) for t, p in zip(times, profiles)]


def test_smooth_and_local_maxima():
    np.testing.assert_allclose(smooth([0, 3, 0], 3), [1.5, 1, 1.5])
    assert local_maxima([0, 1, 1, 0, 2]) == [(1, 2), (4, 4)]


def test_detect_peaks_parabolic_refinement():
    pk = detect_peaks(_gauss(10.3), window=1, threshold_frac=0.5, coords=X)
    assert len(pk) == 1 and pk[0].position == pytest.approx(10.3, abs=0.05)
    with pytest.raises(LatticeError):
        detect_peaks(_gauss(0), window=4)


def test_two_receding_packets_split():
    res = classify_spreading(_series([_gauss(-v) + _gauss(v) for v in (20, 40, 60)]))
    assert res.label == "Split"
    rates = sorted(res.separation_rates)
    assert rates[0] == pytest.approx(-2.0, abs=0.05) and rates[-1] == pytest.approx(2.0, abs=0.05)


def test_plateau_with_edge_fringes_is_unsplit():
    profs = []
    for w in (20, 40, 60):
        p = np.where(np.abs(X) <= w, 1.0, 0.0) + _gauss(-w, 2, 0.8) + _gauss(w, 2, 0.8)
        profs.append(p)
    res = classify_spreading(_series(profs))
    assert res.label == "Unsplit"
    assert res.diagnostics["gap_ratio"] > 0.5


def test_static_or_single_packet_unsplit():
    assert classify_spreading(_series([_gauss(0, w) for w in (5, 10, 15)])).label == "Unsplit"
    assert classify_spreading(_series([_gauss(v) for v in (20, 40, 60)])).label == "Unsplit"


def test_classification_requires_three_times_and_serializes(tmp_path):
    with pytest.raises(LatticeError):
        classify_spreading(_series([_gauss(0)] * 2, (1.0, 2.0)))
    res = classify_spreading(_series([_gauss(-v) + _gauss(v) for v in (20, 40, 60)]))
    res.write_json(tmp_path / "c.json", ["deadbeef"])
    data = json.loads((tmp_path / "c.json").read_text())
    assert data["label"] == "Split" and data["inputs"] == ["deadbeef"]


def test_classify_accepts_snapshots():
    g = LatticeGeometry.chain(401)
    snaps = [WaveformSnapshot(t, np.sqrt(_gauss(-2 * t) + _gauss(2 * t)), g) for t in (10.0, 20.0, 30.0)]
    assert classify_spreading(snaps).label == "Split"


def test_packet_maxima_ignores_ripple():
    base = _gauss(-50, 10) + _gauss(50, 10)
    ripple = 1e-3 * (-1) ** np.arange(X.size)
    assert packet_maxima(base + ripple, X) == {"left": 1, "right": 1}
    train = base + 0.5 * _gauss(70, 2) + 0.5 * _gauss(80, 2)
    assert packet_maxima(train, X)["right"] >= 3


@pytest.mark.parametrize("disp", smooth_battery_1d(), ids=lambda d: d.label)
def test_moments_vanish_for_smooth_bands(disp):
    for n in (1, 2):
        r = moment_integrals(disp, n)
        assert r.applicable and abs(r.value) < 1e-9


def test_moments_not_applicable_with_singularities():
    r = moment_integrals(dispersion_for(Waveguide(1.0)), 1)
    assert not r.applicable and math.isnan(r.value)
    # alpha = 3 has a log-divergent second derivative at k = 0
    assert not moment_integrals(dispersion_for(PowerLaw(3)), 2).applicable


def test_moments_from_samples():
    k = np.linspace(-math.pi, math.pi, 1024, endpoint=False)
    assert abs(moment_integrals(np.cos(k) + 0.2 * np.sin(3 * k), 2).value) < 1e-12


@pytest.mark.parametrize("name,f", smooth_battery_2d(), ids=lambda v: v if isinstance(v, str) else "")
def test_gauss_bonnet_vanishes_and_converges(name, f):
    coarse = gauss_bonnet_check(f, n=128).value
    fine = gauss_bonnet_check(f, n=256).value
    assert abs(fine) < 1e-3
    assert abs(fine) < abs(coarse) or max(abs(fine), abs(coarse)) < 1e-12


def test_gauss_bonnet_detects_curvature_of_open_patch():
    # the paraboloid's Gauss map covers a hemisphere: total curvature 2 pi,
    # of which a [-6, 6]^2 patch holds about 1 - 1/6
    k = np.linspace(-6, 6, 401)
    KX, KY = np.meshgrid(k, k)
    r = gauss_bonnet_check(0.5 * (KX**2 + KY**2), h=k[1] - k[0], periodic=False)
    assert 0.8 < r.value < 0.9


def test_sign_coverage():
    cov = sign_coverage(np.array([-1.0, 0.0, 2.0, np.nan]))
    assert cov["has_positive"] and cov["has_negative"]
    assert cov["zero_measure_estimate"] == pytest.approx(1 / 3)


def test_nogo_suite_passes():
    rep = nogo_suite(n_grid=1024, gb_grid=256)
    assert rep["pass"]
    assert len(rep["moments"]) == 10 and len(rep["gauss_bonnet"]) == 5

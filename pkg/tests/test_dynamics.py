import math

import numpy as np
import pytest
import scipy.linalg
import scipy.special

from latticespread.core import LatticeError, LatticeGeometry, PowerLaw
from latticespread.dynamics import (
    KrylovPropagator,
    PropagationError,
    WaveformSnapshot,
    config_hash,
    cross_section,
    evolve,
    read_snapshot_csv,
    survival_probability,
    write_snapshot_csv,
)
from latticespread.hamiltonian import (
    build_free_space,
    build_nearest_neighbor,
    build_power_law,
    build_waveguide,
)


def test_nearest_neighbor_bessel_short_time():
    H = build_nearest_neighbor(LatticeGeometry.chain(101))
    snap = evolve(H, [3.0], tol=1e-12)[0]
    x = np.arange(-50, 51)
    ref = (-1j) ** np.abs(x) * scipy.special.jv(np.abs(x), 6.0)
    np.testing.assert_allclose(snap.amplitudes, ref, atol=1e-11)


@pytest.mark.parametrize("method", ["krylov", "eig"])
def test_matches_expm(method, rng):
    n = 40
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    H = (A + A.T) / (2 * math.sqrt(n))
    snaps = evolve(H, [0.0, 0.5, 2.0], initial_site=3, method=method, tol=1e-10)
    for s in snaps:
        ref = scipy.linalg.expm(-1j * s.time * H)[:, 3]
        assert np.linalg.norm(s.amplitudes - ref) <= 1e-9 * np.linalg.norm(ref)
    np.testing.assert_array_equal(snaps[0].amplitudes, np.eye(n)[3])


def test_krylov_matrix_free_vs_eig_waveguide():
    H = build_waveguide(LatticeGeometry.chain(201), 0.3 * math.pi)
    a = evolve(H, [10.0, 40.0], method="krylov", tol=1e-10)
    b = evolve(H, [10.0, 40.0], method="eig")
    for x, y in zip(a, b):
        assert np.linalg.norm(x.amplitudes - y.amplitudes) < 1e-9


def test_unitary_conserves_norm_and_open_decays():
    s = evolve(build_power_law(LatticeGeometry.chain(51), 2.0), [5.0])[0]
    assert abs(s.survival - 1) < 1e-10
    snaps = evolve(build_free_space(LatticeGeometry.chain(51), 0.6 * math.pi), [0, 1, 2, 4])
    surv = [survival_probability(x) for x in snaps]
    assert surv[0] == 1.0 and all(b <= a + 1e-12 for a, b in zip(surv, surv[1:]))
    assert surv[-1] < 0.9


def test_krylov_reports_failed_step():
    rng = np.random.default_rng(1)
    H = rng.normal(size=(60, 60))
    H = H + H.T
    prop = KrylovPropagator(lambda v: H @ v, 60, tol=0.0, m=4)
    with pytest.raises(PropagationError, match="Krylov step 0"):
        prop.propagate(np.eye(60)[0].astype(complex), 1.0)


def test_krylov_happy_breakdown():
    H = np.diag([1.0, 2.0, 3.0]).astype(complex)
    out = KrylovPropagator(lambda v: H @ v, 3, m=10).propagate(np.array([1, 1, 0], complex), 2.0)
    np.testing.assert_allclose(out, [np.exp(-2j), np.exp(-4j), 0], atol=1e-14)


def test_time_validation():
    H = build_power_law(LatticeGeometry.chain(5), 1.0)
    for bad in ([], [2, 1], [-1, 1], [1, 1]):
        with pytest.raises(LatticeError):
            evolve(H, bad)
    with pytest.raises(LatticeError):
        evolve(H, [1.0], initial_site=9)


def test_cross_sections_square():
    g = LatticeGeometry.square(5)
    amps = np.zeros(25, complex)
    amps[g.site_index(2, 2)] = 0.5
    amps[g.site_index(4, 2)] = 0.5
    amps[g.site_index(3, 3)] = 0.5
    amps[g.site_index(2, 0)] = 0.5
    s = WaveformSnapshot(1.0, amps, g)
    row = cross_section(s, "row")
    np.testing.assert_array_equal(row.coords, [-2, -1, 0, 1, 2])
    np.testing.assert_allclose(row.values, [0, 0, 0.25, 0, 0.25])
    col = cross_section(s, "column")
    np.testing.assert_allclose(col.values, [0.25, 0, 0.25, 0, 0])
    diag = cross_section(s, "diagonal")
    np.testing.assert_allclose(diag.coords, np.arange(-2, 3) * math.sqrt(2))
    np.testing.assert_allclose(diag.values, [0, 0, 0.25, 0.25, 0])
    rad = cross_section(s, "radial")
    assert rad.coords[0] == -rad.coords[-1] and np.all(np.diff(rad.coords) > 0)
    with pytest.raises(LatticeError):
        cross_section(s, "zigzag")


def test_snapshot_csv_round_trip_is_exact(tmp_path):
    H = build_free_space(LatticeGeometry.chain(31), 0.3 * math.pi, (0, 1, 0))
    s = evolve(H, [3.3])[0]
    cfg = {"a": 1}
    write_snapshot_csv(s, tmp_path / "s.csv", H.model, cfg, method="exact-krylov")
    back, side = read_snapshot_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.amplitudes, s.amplitudes)
    assert back.geometry == s.geometry
    assert side["config_hash"] == config_hash(cfg)
    assert side["energy_unit"] == "gamma_A" and side["method"] == "exact-krylov"
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == "site,x,y,prob,re,im"


def test_config_hash_is_canonical():
    assert config_hash({"b": 1, "a": [1.5]}) == config_hash({"a": [1.5], "b": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_power_law_2d_krylov_vs_eig():
    H = build_power_law(LatticeGeometry.square(11), 2.0)
    a = evolve(H, [2.0], method="krylov", tol=1e-10)[0]
    b = evolve(H, [2.0], method="eig")[0]
    assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-9
    assert PowerLaw(2.0) == H.model

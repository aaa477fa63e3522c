import json
import math

import mpmath
import numpy as np
import pytest
import scipy.integrate
import scipy.special

from latticespread.core import FreeSpace, LatticeError, PowerLaw, Waveguide, tilted_polarization
from latticespread.dispersion import (
    SingularPointError,
    closed_form_1d,
    derivatives_1d,
    dispersion_for,
    dispersion_grid_1d,
    find_curvature_extrema,
    find_inflection_points,
    hessian_det_2d,
    k_grid_1d,
    k_grid_2d,
    lattice_sum_dispersion,
    lattice_sum_dispersion_2d,
    power_law_dispersion_2d,
    reg_integrals,
    regularized_dispersion_2d,
    regularized_grid,
    ring_distance,
    subradiant_mask_1d,
    zero_contours,
)

PI = math.pi


# --------------------------------------------------------------- 1D closed forms

@pytest.mark.parametrize("alpha", [1.0, 2.0, 3.0])
def test_polylog_dispersion_matches_closed_form(alpha):
    k = np.linspace(-3.1, 3.1, 301)
    k = k[np.abs(k) > 0.02]
    disp = dispersion_for(PowerLaw(alpha))
    cf = closed_form_1d(PowerLaw(alpha), k)
    np.testing.assert_allclose(disp.omega(k).real, cf.omega.real, rtol=0, atol=1e-12)
    np.testing.assert_allclose(disp.d1(k), cf.d1, atol=1e-11)
    np.testing.assert_allclose(disp.d2(k), cf.d2, atol=1e-10)


def test_alpha1_second_derivative_sign_and_alpha2_parabola():
    # omega_1 = -ln(4 sin^2(k/2)) is convex away from k = 0
    cf = closed_form_1d(PowerLaw(1), np.array([0.5, 2.0, -1.0]))
    assert np.all(cf.d2 > 0)
    np.testing.assert_allclose(cf.d2, 0.5 / np.sin(np.array([0.25, 1.0, -0.5])) ** 2)
    # Re omega_2 at k = pi equals -pi^2/6 (alternating zeta sum)
    assert closed_form_1d(PowerLaw(2), np.array([PI])).omega[0].real == pytest.approx(-PI**2 / 6)


def test_waveguide_closed_form():
    ka = 0.3 * PI
    k = np.linspace(-3.0, 3.0, 200)
    k = k[np.min(np.abs(k[:, None] - np.array([ka, -ka])[None]), axis=1) > 0.05]
    disp = dispersion_for(Waveguide(ka))
    cf = closed_form_1d(Waveguide(ka), k)
    np.testing.assert_allclose(disp.omega(k).real, cf.omega.real, atol=1e-11)
    np.testing.assert_allclose(disp.d1(k), cf.d1, atol=1e-10)
    np.testing.assert_allclose(disp.d2(k), cf.d2, atol=1e-9)
    # the decay rate of the waveguide band vanishes off the light cone
    np.testing.assert_allclose(disp.omega(k).imag, 0, atol=1e-11)


def test_closed_form_singular_points():
    with pytest.raises(SingularPointError):
        closed_form_1d(PowerLaw(3), np.array([0.0]))
    with pytest.raises(SingularPointError):
        closed_form_1d(Waveguide(1.0), np.array([1.0]))


# --------------------------------------------------------------- lattice sums

def test_lattice_sum_alpha3_matches_polylog(kernel_backend):
    k = np.linspace(-PI, PI, 64, endpoint=False) + 0.01
    res = lattice_sum_dispersion(PowerLaw(3), k, R=20000, derivs=True)
    disp = dispersion_for(PowerLaw(3))
    assert res.tail_bound == pytest.approx(1 / 20000**2)
    np.testing.assert_allclose(res.omega.real, disp.omega(k).real, atol=2 * res.tail_bound)
    np.testing.assert_allclose(res.d1, disp.d1(k), atol=1e-3)


def test_lattice_sum_free_space_matches_polylog(kernel_backend):
    m = FreeSpace(0.3 * PI, (0, 1, 0))
    k = np.array([-2.5, -1.5, 1.2, 2.0, 3.0])
    exact = dispersion_for(m).omega(k)
    res = lattice_sum_dispersion(m, k, R=200000)
    coarse = lattice_sum_dispersion(m, k, R=20000)
    assert math.isinf(res.tail_bound)
    # the 1/r tail oscillates, so the truncation error falls like 1/R
    np.testing.assert_allclose(res.omega, exact, atol=5e-5)
    assert np.abs(res.omega - exact).max() < 0.3 * np.abs(coarse.omega - exact).max()


def test_lattice_sum_rejects_bad_cutoff():
    with pytest.raises(LatticeError):
        lattice_sum_dispersion(PowerLaw(2), np.zeros(3), R=0)


def test_free_space_dispersion_radiative_zone():
    m = FreeSpace(0.6 * PI, (0, 1, 0))
    d = dispersion_for(m)
    k = np.linspace(-PI, PI, 101)
    k = k[np.abs(np.abs(k) - m.k_A) > 0.05]
    gam = -2 * d.omega(k).imag
    sub = subradiant_mask_1d(k, m.k_A)
    np.testing.assert_allclose(gam[sub], 0, atol=1e-10)
    assert np.all(gam[~sub] > 0)


# --------------------------------------------------------------- derivatives, grids

def test_k_grid_and_derivative_validation():
    k = k_grid_1d(8, -1.0)
    assert k[0] == -1.0 and k.size == 8 and k[-1] < 2 * PI - 1.0
    with pytest.raises(LatticeError):
        derivatives_1d(np.zeros(4), np.arange(4.0))
    with pytest.raises(LatticeError):
        derivatives_1d(np.zeros(6), np.array([0, 1, 2, 3, 5, 6.0]))


def test_central_differences_converge():
    k = k_grid_1d(512)
    f = np.cos(k) + 0.3 * np.sin(2 * k)
    d1, d2 = derivatives_1d(f, k)
    np.testing.assert_allclose(d1, -np.sin(k) + 0.6 * np.cos(2 * k), atol=1e-3)
    np.testing.assert_allclose(d2, -np.cos(k) - 1.2 * np.sin(2 * k), atol=1e-3)
    d1n, _ = derivatives_1d(f[:100], k[:100], periodic=False)
    assert np.isnan(d1n[0]) and np.isnan(d1n[-1])


def test_dispersion_grid_csv(tmp_path):
    g = dispersion_grid_1d(dispersion_for(Waveguide(0.3 * PI)), 256, -0.3 * PI)
    g.write_csv(tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "kx,ky,re_omega,im_omega,d1,d2,subradiant"
    assert len(lines) == 257
    # singular point k = -k_A is masked
    assert "nan" in lines[1]
    g.write_csv(tmp_path / "b.csv", derivs=False)
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "kx,ky,re_omega,im_omega,subradiant"


# --------------------------------------------------------------- inflection points

def test_alpha3_inflections_at_pi_over_three():
    st = find_inflection_points(dispersion_for(PowerLaw(3)))
    np.testing.assert_allclose(st.inflection_points, [-PI / 3, PI / 3], atol=1e-12)
    # v_g = -2 Cl_2(pi/3) at k = pi/3
    v = -2 * float(mpmath.clsin(2, mpmath.pi / 3))
    np.testing.assert_allclose(st.group_velocities, [-v, v], atol=1e-12)


@pytest.mark.parametrize("alpha", [1.0, 2.0])
def test_no_inflections_for_alpha_one_two(alpha):
    assert len(find_inflection_points(dispersion_for(PowerLaw(alpha)))) == 0


def test_free_space_inflections_and_curvature_minima():
    perp = dispersion_for(FreeSpace(0.3 * PI, (0, 1, 0)))
    st = find_inflection_points(perp, k_lo=-0.3 * PI)
    np.testing.assert_allclose(np.sort(st.inflection_points) / PI, [0.5834, 1.4166], atol=1e-3)
    assert np.all(perp.subradiant(st.inflection_points))
    par = dispersion_for(FreeSpace(0.15 * PI, (1, 0, 0)))
    assert len(find_inflection_points(par, k_lo=-0.15 * PI)) == 0
    ext = find_curvature_extrema(par, k_lo=-0.15 * PI)
    sub = ext.inflection_points[par.subradiant(ext.inflection_points)]
    assert len(sub) == 2
    v = par.d1(sub)
    assert v.min() < -30 and v.max() > 30


def test_sampled_inflection_search():
    k = k_grid_1d(1024)
    st = find_inflection_points((k, np.sin(k)))
    np.testing.assert_allclose(np.sort(np.abs(st.inflection_points)), [0, PI], atol=1e-12)
    with pytest.raises(LatticeError):
        find_inflection_points((k[:10], np.sin(k[:10])))


def test_flat_band_has_no_inflections():
    from latticespread.dispersion import CallableDispersion

    flat = CallableDispersion(lambda k: np.zeros_like(k), lambda k: 0 * k, lambda k: 0 * k)
    assert len(find_inflection_points(flat)) == 0


# --------------------------------------------------------------- 2D

def _ewald_inverse_square(kx, ky, eta=1.0, nr=8, ng=6):
    """Ewald sum of ``sum_{r != 0} exp(-i k.r)/r^2`` on the unit square lattice."""
    out = -eta
    rs = range(-nr, nr + 1)
    for x in rs:
        for y in rs:
            if x or y:
                r2 = x * x + y * y
                out += np.cos(kx * x + ky * y) * math.exp(-eta * r2) / r2
    for gx in range(-ng, ng + 1):
        for gy in range(-ng, ng + 1):
            q2 = (kx + 2 * PI * gx) ** 2 + (ky + 2 * PI * gy) ** 2
            out += PI * scipy.special.exp1(q2 / (4 * eta))
    return out


def test_power_law_2d_sum_matches_ewald():
    kx, ky, om = lattice_sum_dispersion_2d(lambda x, y: np.hypot(x, y) ** -2.0, 32, R=400)
    KX, KY = np.meshgrid(kx, ky)
    ok = np.hypot(KX, KY) > 0.5
    ref = _ewald_inverse_square(KX[ok], KY[ok])
    np.testing.assert_allclose(om[ok].real, ref, atol=2e-5)
    np.testing.assert_allclose(om.imag, 0, atol=1e-9)


def test_ewald_oracle_independent_of_split():
    a = _ewald_inverse_square(1.0, 0.4, eta=0.7)
    b = _ewald_inverse_square(1.0, 0.4, eta=1.6, nr=10)
    assert abs(a - b) < 1e-12


def test_det_hessian_of_analytic_band():
    kx, ky = k_grid_2d(128)
    KX, KY = np.meshgrid(kx, ky)
    om = -2 * np.cos(KX) - 2 * np.cos(KY)
    det, cs = hessian_det_2d(om, kx, ky)
    np.testing.assert_allclose(det, 4 * np.cos(KX) * np.cos(KY), atol=2e-3)
    pts = np.concatenate(cs.polylines)
    assert np.abs(np.cos(pts[:, 0]) * np.cos(pts[:, 1])).max() < 1e-3
    with pytest.raises(LatticeError):
        hessian_det_2d(om[:32, :32], kx[:32], ky[:32])


def test_zero_contour_circle(kernel_backend):
    kx, ky = k_grid_2d(96)
    KX, KY = np.meshgrid(kx, ky)
    cs = zero_contours(KX**2 + KY**2 - 1.0, kx, ky)
    assert len(cs.loops()) == 1
    r = np.hypot(*cs.loops()[0].T)
    np.testing.assert_allclose(r, 1.0, atol=2e-3)
    json.dumps(cs.to_json())


def test_power_law_2d_det_loop():
    kx, ky, om = power_law_dispersion_2d(2.0, 128, R=200)
    det, cs = hessian_det_2d(om, kx, ky)
    assert len(cs.loops()) >= 1


# --------------------------------------------------------------- regularized free space

def _i0_oracle(p2, k_A, a, power=0):
    """C * int dq q^power e^{-a^2 q^2/2} / (L^2 - q^2) along q = s - i c tanh s.

    The outgoing-wave prescription puts the poles at +(L + i0) and -(L + i0);
    the deformed path passes below the first and above the second.
    """
    lam2 = k_A**2 - p2
    C = math.exp(-0.5 * a * a * p2) / (2 * PI * k_A**2)
    c = 1.0 if lam2 > 0 else 0.0

    def f(s):
        q = s - 1j * c * math.tanh(s)
        dq = 1 - 1j * c / math.cosh(s) ** 2
        return dq * q**power * np.exp(-0.5 * a * a * q * q) / (lam2 - q * q)

    lim = 12.0 / a
    re = scipy.integrate.quad(lambda s: f(s).real, -lim, lim, limit=800, epsabs=1e-14, epsrel=1e-13)[0]
    im = scipy.integrate.quad(lambda s: f(s).imag, -lim, lim, limit=800, epsabs=1e-14, epsrel=1e-13)[0]
    return C * (re + 1j * im)


@pytest.mark.parametrize("p,k_A", [(0.2, 0.3 * PI), (1.5, 0.6 * PI), (5.0, 1.2 * PI), (0.1, 2.0)])
def test_reg_integrals_match_quadrature(p, k_A):
    a = 0.1
    I0, I2 = reg_integrals(p * p, k_A, a)
    r0 = _i0_oracle(p * p, k_A, a)
    r2 = _i0_oracle(p * p, k_A, a, power=2)
    assert abs(I0 - r0) <= 1e-8 * abs(r0)
    assert abs(I2 - r2) <= 1e-8 * abs(r2)


def test_reg_integrals_light_cone():
    with pytest.raises(SingularPointError):
        reg_integrals(np.array([1.0]), 1.0, 0.1)


def test_regularized_dispersion_symmetry_and_convergence():
    k_A = 0.3 * PI
    pol = tilted_polarization()
    pts = np.array([[2.0, 1.0], [-1.0, -2.0], [2.5, -0.3]])
    res = regularized_dispersion_2d(pts[:, 0], pts[:, 1], k_A, pol)
    assert res.tail <= 1e-8
    # inversion symmetry omega(k) = omega(-k)
    back = regularized_dispersion_2d(-pts[:, 0], -pts[:, 1], k_A, pol)
    np.testing.assert_allclose(res.omega, back.omega, rtol=1e-10)
    # subradiant points do not decay
    np.testing.assert_allclose(res.omega.imag, 0, atol=1e-8 * np.abs(res.omega).max())
    with pytest.raises(LatticeError, match="not converged"):
        regularized_dispersion_2d(pts[:, 0], pts[:, 1], k_A, pol, G_cutoff=1)


def test_regularized_grid_masks_light_cone():
    kx, ky, om = regularized_grid(64, 1.2 * PI, (0, 0, 1))
    KX, KY = np.meshgrid(kx, ky)
    d = ring_distance(KX, KY, 1.2 * PI)
    assert np.all(np.isnan(om[d < 1e-3]))
    assert np.all(np.isfinite(om[d > 0.2]))

import json
import math

import numpy as np
import pytest

from latticespread.core import (
    FreeSpace,
    LatticeError,
    LatticeGeometry,
    PowerLaw,
    Waveguide,
    energy_unit,
    model_from_dict,
    model_to_dict,
    polarization_from_angles,
    tilted_polarization,
    time_unit,
)


def test_chain_geometry_origin_and_positions():
    g = LatticeGeometry.chain(11)
    assert g.dimension == 1 and g.n_sites == 11
    assert g.origin_site == 5
    pos = g.positions()
    assert pos.shape == (11, 2)
    np.testing.assert_array_equal(pos[:, 0], np.arange(-5, 6))
    np.testing.assert_array_equal(pos[:, 1], 0)


def test_square_geometry_row_major():
    g = LatticeGeometry.rectangular(5, 3, 0.4, 0.8)
    assert g.dimension == 2 and g.n_sites == 15
    assert g.origin_site == g.site_index(2, 1) == 7
    assert g.grid_index(7) == (2, 1)
    np.testing.assert_allclose(g.position(7), [0.0, 0.0])
    np.testing.assert_allclose(g.position(g.site_index(4, 2)), [0.8, 0.8])


@pytest.mark.parametrize("counts,spacings", [((0, 1), (1, 1)), ((3, 3), (0, 1)), ((3, 3), (1, math.nan))])
def test_geometry_rejects_bad_input(counts, spacings):
    with pytest.raises(LatticeError):
        LatticeGeometry(counts, spacings)


def test_geometry_round_trip_and_unknown_keys():
    g = LatticeGeometry.rectangular(9, 7, 0.4, 0.8)
    assert LatticeGeometry.from_dict(json.loads(json.dumps(g.to_dict()))) == g
    with pytest.raises(LatticeError, match="unknown keys"):
        LatticeGeometry.from_dict({"counts": [3, 3], "spacing": [1, 1]})


@pytest.mark.parametrize("model", [PowerLaw(3.0), Waveguide(0.3 * math.pi),
                                   FreeSpace(0.3 * math.pi, (0.6, 0.8j, 0.0))])
def test_model_round_trip(model):
    data = json.loads(json.dumps(model_to_dict(model)))
    assert model_from_dict(data) == model


def test_model_validation():
    with pytest.raises(LatticeError):
        PowerLaw(0.0)
    with pytest.raises(LatticeError):
        Waveguide(-1.0)
    with pytest.raises(LatticeError, match="unit vector"):
        FreeSpace(1.0, (1.0, 1.0, 0.0))
    with pytest.raises(LatticeError, match="unknown model type"):
        model_from_dict({"type": "nope"})
    with pytest.raises(LatticeError, match="unknown keys"):
        model_from_dict({"type": "powerlaw", "alpha": 1, "beta": 2})


def test_units():
    assert energy_unit(PowerLaw(2)) == "1/a^alpha" and time_unit(PowerLaw(2)) == "t0=a^alpha"
    assert energy_unit(Waveguide(1.0)) == "gamma_A" and time_unit(FreeSpace(1.0)) == "1/gamma_A"


def test_polarizations_are_unit_vectors():
    d = np.array(tilted_polarization())
    assert abs(np.linalg.norm(d) - 1) < 1e-15
    np.testing.assert_allclose(d, [math.sin(math.pi / 12) / math.sqrt(2)] * 2 + [math.cos(math.pi / 12)])
    np.testing.assert_allclose(polarization_from_angles(math.pi / 2, 0.0), [1, 0, 0], atol=1e-16)
    FreeSpace(1.0, tilted_polarization())

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanest.arrays import (
    ArrayElement, ArrayModel, ElementPattern, build_uca, build_upa, half_wavelength,
    response_matrix, steering, uca_radius,
)
from chanest.errors import InvalidArgumentError


def test_half_wavelength_at_5p5_ghz():
    # c / (2 f_c) with c = 299792458 m/s
    assert half_wavelength(5.5e9) == pytest.approx(299792458.0 / 11e9, rel=1e-12)
    # rounded speed of light 2.998e8 m/s gives 0.0272545 m
    assert half_wavelength(5.5e9) == pytest.approx(2.998e8 / 11e9, rel=1e-4)


def test_upa_port_count_and_ordering(spacing):
    upa = build_upa(4, 4, spacing)
    assert upa.port_count == 32 == len(upa.elements)
    assert list(upa.polarizations[:4]) == ["V", "H", "V", "H"]
    # V and H of each grid point share a position
    np.testing.assert_array_equal(upa.positions[0::2], upa.positions[1::2])
    # row-major: second grid point is the next column
    np.testing.assert_allclose(upa.positions[2] - upa.positions[0], [0.0, spacing, 0.0])
    np.testing.assert_allclose(upa.positions[8] - upa.positions[0], [0.0, 0.0, -spacing])
    assert np.allclose(upa.positions[:, 0], 0.0)


def test_single_element_upa_sits_at_origin():
    upa = build_upa(1, 1, 0.01)
    assert upa.port_count == 2
    np.testing.assert_array_equal(upa.positions, np.zeros((2, 3)))


def test_uca_geometry(spacing):
    uca = build_uca(4, 8, spacing)
    assert uca.port_count == 64
    r = uca_radius(8, spacing)
    assert r == pytest.approx(spacing / (2 * np.pi / 8))
    ring0 = uca.positions[:16:2]
    np.testing.assert_allclose(np.hypot(ring0[:, 0], ring0[:, 1]), r)
    # arc length between adjacent columns is the spacing
    phi = np.unwrap(np.arctan2(ring0[:, 1], ring0[:, 0]))
    np.testing.assert_allclose(np.diff(phi) * r, spacing)
    np.testing.assert_allclose(uca.positions[16, 2] - uca.positions[0, 2], spacing)


def test_single_ring_uca_is_planar():
    uca = build_uca(1, 3, 0.02)
    assert uca.port_count == 6
    assert np.allclose(uca.positions[:, 2], 0.0)


@pytest.mark.parametrize("args", [(0, 4, 0.01), (4, 0, 0.01), (2, 2, 0.0), (2, 2, -1.0)])
def test_upa_rejects_bad_dimensions(args):
    with pytest.raises(InvalidArgumentError):
        build_upa(*args)


def test_uca_needs_three_columns():
    with pytest.raises(InvalidArgumentError):
        build_uca(2, 2, 0.01)


def test_orientation_must_be_unit():
    with pytest.raises(InvalidArgumentError):
        ArrayElement([0, 0, 0], [1.0, 0.1, 0.0], "V", ElementPattern())


def test_pattern_xpr_ordering_enforced():
    with pytest.raises(InvalidArgumentError):
        ElementPattern(axial_xpr=5.0, sector_xpr=10.0)


def test_pattern_constants():
    p = ElementPattern(beamwidth_3db=60.0)
    # half power at half the beamwidth
    assert p.power_gain(np.cos(np.deg2rad(30.0))) == pytest.approx(0.5)
    assert p.xpr_db(1.0) == pytest.approx(15.0)
    assert p.xpr_db(np.cos(np.deg2rad(60.0))) == pytest.approx(10.0)
    assert p.xpr_db(np.cos(np.deg2rad(120.0))) == pytest.approx(10.0)
    # the back lobe is held at the front-to-back floor
    assert p.power_gain(-1.0) == pytest.approx(10 ** (-17 / 10))
    cos = np.linspace(-1, 1, 101)
    assert np.all(p.power_gain(cos) >= 0)


def test_broadside_upa_phases_equal(spacing):
    upa = build_upa(4, 4, spacing, ElementPattern.isotropic())
    a = response_matrix(upa, 0.0, 0.0, 5.5e9)
    np.testing.assert_allclose(np.angle(a[0::2, 0]), 0.0, atol=1e-12)


def test_half_wavelength_baseline_gives_pi(spacing):
    upa = build_upa(1, 2, spacing, ElementPattern.isotropic())
    # the two grid points lie along +y, so arrival from azimuth 90 runs along the baseline
    a = response_matrix(upa, 0.0, 90.0, 5.5e9)
    dphi = np.angle(a[2, 0] / a[0, 0])
    assert abs(abs(dphi) - np.pi) < 1e-9


def test_axial_xpr_at_boresight(spacing):
    upa = build_upa(1, 1, spacing)
    a = response_matrix(upa, 0.0, 0.0, 5.5e9)
    # port 0 is V: co-pol column 0, leakage from H incidence in column 1
    ratio_db = 20 * np.log10(abs(a[0, 1]) / abs(a[0, 0]))
    assert ratio_db == pytest.approx(-15.0, abs=1e-9)
    # co-located V/H ports share phase
    assert np.angle(a[0, 0]) == pytest.approx(np.angle(a[1, 1]))


@pytest.mark.parametrize("el, az", [(91.0, 0.0), (0.0, 180.0), (-95.0, 0.0), (0.0, -181.0)])
def test_response_rejects_out_of_range_angles(spacing, el, az):
    with pytest.raises(InvalidArgumentError):
        response_matrix(build_upa(1, 1, spacing), el, az, 5.5e9)


@settings(max_examples=30, deadline=None)
@given(el=st.floats(-90, 90), az=st.floats(-180, 179.999), f=st.floats(1e9, 10e9))
def test_isotropic_magnitude_independent_of_frequency(el, az, f):
    uca = build_uca(2, 4, 0.02, ElementPattern.isotropic())
    a1 = response_matrix(uca, el, az, f)
    a2 = response_matrix(uca, el, az, 5.5e9)
    np.testing.assert_allclose(np.abs(a1), np.abs(a2), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_permuting_elements_permutes_rows(seed):
    uca = build_uca(2, 4, 0.02)
    # keep port 0 fixed so the phase reference is unchanged
    order = np.concatenate([[0], 1 + np.random.default_rng(seed).permutation(uca.port_count - 1)])
    perm = uca.permuted(order)
    el, az = np.deg2rad([12.0]), np.deg2rad([-33.0])
    np.testing.assert_allclose(steering(perm, el, az, 5.5e9), steering(uca, el, az, 5.5e9)[:, order])


def test_description_round_trip(spacing):
    for arr in (build_upa(2, 3, spacing), build_uca(2, 5, spacing, ElementPattern.isotropic())):
        again = ArrayModel.from_dict(arr.to_dict())
        np.testing.assert_array_equal(again.positions, arr.positions)
        np.testing.assert_array_equal(again.polarizations, arr.polarizations)

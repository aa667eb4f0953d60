"""Antenna array geometries and dual-polarized array responses.

Two array families are supported, both built from co-located V/H element
pairs:

* ``build_upa`` -- a planar grid in the y-z plane, boresight along +x.
* ``build_uca`` -- a cylinder of rings stacked along z, each column facing
  radially outwards.

Directions use elevation measured from the x-y plane and azimuth measured
from +x towards +y, so the unit propagation vector is
``[cos(el) cos(az), cos(el) sin(az), sin(el)]``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from ._validation import check_angles, check_int, check_positive
from .errors import InvalidArgumentError

POLARIZATIONS = ("V", "H")


def half_wavelength(frequency):
    """Element spacing of half a wavelength at ``frequency`` (Hz)."""
    return SPEED_OF_LIGHT / (2.0 * check_positive(frequency, "frequency"))


def direction_vectors(elevation, azimuth):
    """Unit vectors for angles given in radians; output shape ``(..., 3)``."""
    el = np.asarray(elevation, dtype=float)
    az = np.asarray(azimuth, dtype=float)
    return np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el) * np.ones_like(az)],
        axis=-1,
    )


@dataclass(frozen=True)
class ElementPattern:
    """Power pattern of one antenna element.

    ``beamwidth_3db=None`` means an isotropic element with no cross-polar
    leakage. Otherwise the co-polar power gain is ``G0 * cos(psi)**q`` with
    ``q`` fixed by the 3 dB beamwidth, floored ``front_to_back`` dB below
    boresight. The cross-polar discrimination runs linearly in dB from
    ``axial_xpr`` at boresight to ``sector_xpr`` at 60 degrees and is
    held constant beyond.
    """

    boresight_gain: float = 0.0
    beamwidth_3db: float | None = 90.0
    axial_xpr: float = 15.0
    sector_xpr: float = 10.0
    front_to_back: float = 17.0

    def __post_init__(self):
        if self.beamwidth_3db is not None:
            if not 0.0 < self.beamwidth_3db < 180.0:
                raise InvalidArgumentError("beamwidth_3db must lie in (0, 180) degrees")
            if self.axial_xpr < self.sector_xpr:
                raise InvalidArgumentError("axial_xpr must be >= sector_xpr")
            check_positive(self.front_to_back, "front_to_back", strict=False)

    @classmethod
    def isotropic(cls, gain=0.0):
        return cls(boresight_gain=gain, beamwidth_3db=None, axial_xpr=np.inf, sector_xpr=np.inf)

    @property
    def is_isotropic(self):
        return self.beamwidth_3db is None

    @property
    def exponent(self):
        half = np.deg2rad(self.beamwidth_3db / 2.0)
        return np.log(0.5) / np.log(np.cos(half))

    def power_gain(self, cos_offset):
        """Linear co-polar power gain for the cosine of the off-boresight angle."""
        cos_offset = np.asarray(cos_offset, dtype=float)
        g0 = 10.0 ** (self.boresight_gain / 10.0)
        if self.is_isotropic:
            return np.full(cos_offset.shape, g0)
        floor = 10.0 ** (-self.front_to_back / 10.0)
        shaped = np.clip(cos_offset, 0.0, 1.0) ** self.exponent
        return g0 * np.maximum(shaped, floor)

    def xpr_db(self, cos_offset):
        """Cross-polar discrimination (dB) versus off-boresight angle."""
        cos_offset = np.asarray(cos_offset, dtype=float)
        if self.is_isotropic:
            return np.full(cos_offset.shape, np.inf)
        offset = np.rad2deg(np.arccos(np.clip(cos_offset, -1.0, 1.0)))
        frac = np.clip(offset / 60.0, 0.0, 1.0)
        return self.axial_xpr + frac * (self.sector_xpr - self.axial_xpr)

    def to_dict(self):
        return {
            "boresight_gain": self.boresight_gain,
            "beamwidth_3db": self.beamwidth_3db,
            "axial_xpr": None if np.isinf(self.axial_xpr) else self.axial_xpr,
            "sector_xpr": None if np.isinf(self.sector_xpr) else self.sector_xpr,
            "front_to_back": self.front_to_back,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("beamwidth_3db") is None:
            return cls.isotropic(d.get("boresight_gain", 0.0))
        return cls(
            boresight_gain=float(d.get("boresight_gain", 0.0)),
            beamwidth_3db=float(d["beamwidth_3db"]),
            axial_xpr=float(d.get("axial_xpr", 15.0)),
            sector_xpr=float(d.get("sector_xpr", 10.0)),
            front_to_back=float(d.get("front_to_back", 17.0)),
        )


@dataclass(frozen=True, eq=False)
class ArrayElement:
    position: np.ndarray
    orientation: np.ndarray
    polarization: str
    pattern: ElementPattern

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float).reshape(3)
        orientation = np.asarray(self.orientation, dtype=float).reshape(3)
        if abs(np.linalg.norm(orientation) - 1.0) > 1e-9:
            raise InvalidArgumentError("element orientation must be a unit vector")
        if self.polarization not in POLARIZATIONS:
            raise InvalidArgumentError(f"polarization must be 'V' or 'H', got {self.polarization!r}")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "orientation", orientation)


@dataclass(frozen=True, eq=False)
class ArrayModel:
    """Ordered list of ports. ``description`` regenerates the geometry."""

    elements: tuple
    description: dict = field(default_factory=dict)

    @property
    def port_count(self):
        return len(self.elements)

    def __len__(self):
        return len(self.elements)

    @property
    def positions(self):
        return np.array([e.position for e in self.elements])

    @property
    def orientations(self):
        return np.array([e.orientation for e in self.elements])

    @property
    def polarizations(self):
        return np.array([e.polarization for e in self.elements])

    def to_dict(self):
        if self.description.get("kind") in ("upa", "uca"):
            return dict(self.description)
        return {
            "kind": "custom",
            "elements": [
                {
                    "position": e.position.tolist(),
                    "orientation": e.orientation.tolist(),
                    "polarization": e.polarization,
                    "pattern": e.pattern.to_dict(),
                }
                for e in self.elements
            ],
        }

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "upa":
            return build_upa(d["rows"], d["cols"], d["spacing"], ElementPattern.from_dict(d["pattern"]))
        if kind == "uca":
            return build_uca(
                d["rings"], d["columns"], d["spacing"], ElementPattern.from_dict(d["pattern"])
            )
        if kind == "custom":
            elements = tuple(
                ArrayElement(
                    e["position"], e["orientation"], e["polarization"],
                    ElementPattern.from_dict(e["pattern"]),
                )
                for e in d["elements"]
            )
            return cls(elements)
        raise InvalidArgumentError(f"unknown array kind {kind!r}")

    def permuted(self, order):
        return ArrayModel(tuple(self.elements[i] for i in order))


def build_upa(rows, cols, spacing, pattern=None):
    """Dual-polarized uniform planar array in the y-z plane.

    Ports are ordered row-major over the grid with V before H at each grid
    point; the first grid point sits at the origin.
    """
    rows = check_int(rows, "rows")
    cols = check_int(cols, "cols")
    spacing = check_positive(spacing, "spacing")
    pattern = ElementPattern() if pattern is None else pattern
    boresight = np.array([1.0, 0.0, 0.0])
    elements = []
    for r in range(rows):
        for c in range(cols):
            pos = np.array([0.0, c * spacing, -r * spacing])
            for pol in POLARIZATIONS:
                elements.append(ArrayElement(pos, boresight, pol, pattern))
    desc = {"kind": "upa", "rows": rows, "cols": cols, "spacing": spacing, "pattern": pattern.to_dict()}
    return ArrayModel(tuple(elements), desc)


def uca_radius(columns, spacing):
    # arc length between adjacent columns equals the spacing
    return spacing / (2.0 * np.pi / columns)


def build_uca(rings, columns, spacing, pattern=None):
    """Dual-polarized uniform cylindrical array.

    Rings are stacked along +z from z = 0; within a ring, column ``k`` sits
    at azimuth ``2*pi*k/columns`` facing radially outwards. Ordering is
    ring-major, azimuth-minor, V before H.
    """
    rings = check_int(rings, "rings")
    if int(columns) != columns or columns < 3:
        raise InvalidArgumentError(f"a cylinder needs at least 3 columns, got {columns}")
    columns = int(columns)
    spacing = check_positive(spacing, "spacing")
    pattern = ElementPattern() if pattern is None else pattern
    radius = uca_radius(columns, spacing)
    elements = []
    for ring in range(rings):
        for k in range(columns):
            phi = 2.0 * np.pi * k / columns
            facing = np.array([np.cos(phi), np.sin(phi), 0.0])
            pos = np.array([radius * facing[0], radius * facing[1], ring * spacing])
            for pol in POLARIZATIONS:
                elements.append(ArrayElement(pos, facing, pol, pattern))
    desc = {
        "kind": "uca", "rings": rings, "columns": columns, "spacing": spacing,
        "pattern": pattern.to_dict(),
    }
    return ArrayModel(tuple(elements), desc)


def single_port(polarization="V", pattern=None):
    """A one-port array at the origin, isotropic unless a pattern is given."""
    pattern = ElementPattern.isotropic() if pattern is None else pattern
    element = ArrayElement(np.zeros(3), np.array([1.0, 0.0, 0.0]), polarization, pattern)
    return ArrayModel((element,))


def _pattern_groups(array):
    groups = {}
    for i, e in enumerate(array.elements):
        groups.setdefault(id(e.pattern), (e.pattern, []))[1].append(i)
    return groups.values()


def steering(array, elevation, azimuth, frequency):
    """Vectorized array response for angles in radians.

    Returns a complex array of shape ``(n_dirs, port_count, 2)``; the last
    axis holds the response to V- and H-polarized incidence.
    """
    omega = direction_vectors(np.atleast_1d(elevation), np.atleast_1d(azimuth))
    positions = array.positions - array.positions[0]
    phase = np.exp(1j * (2.0 * np.pi * frequency / SPEED_OF_LIGHT) * (omega @ positions.T))

    cos_off = omega @ array.orientations.T
    amp_co = np.empty(cos_off.shape)
    amp_x = np.empty(cos_off.shape)
    for pattern, idx in _pattern_groups(array):
        gain = pattern.power_gain(cos_off[:, idx])
        amp_co[:, idx] = np.sqrt(gain)
        amp_x[:, idx] = np.sqrt(gain) * 10.0 ** (-pattern.xpr_db(cos_off[:, idx]) / 20.0)

    is_v = array.polarizations == "V"
    out = np.empty(cos_off.shape + (2,), dtype=complex)
    out[..., 0] = np.where(is_v, amp_co, amp_x) * phase
    out[..., 1] = np.where(is_v, amp_x, amp_co) * phase
    return out


def response_matrix(array, elevation, azimuth, frequency):
    """Dual-polarized response ``(port_count, 2)`` for one direction in degrees.

    Column 0 is the response to V-polarized incidence, column 1 to
    H-polarized incidence. Phases are referenced to port 0.
    """
    el, az = check_angles(elevation, azimuth)
    check_positive(frequency, "frequency")
    return steering(array, np.deg2rad(el), np.deg2rad(az), frequency)[0]

"""Von Mises-Fisher angular densities and the spatial covariances they induce."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .arrays import direction_vectors, steering
from .channel import check_mixture

_LOG_4PI = np.log(4.0 * np.pi)


def log_normalizer(kappa):
    """Log of ``kappa**0.5 / ((2 pi)**1.5 * I_0.5(kappa))`` on the 2-sphere.

    With ``I_0.5(k) = sqrt(2 / (pi k)) sinh(k)`` this is
    ``log(kappa / (4 pi sinh kappa))``; evaluated without forming ``sinh``.
    """
    kappa = np.asarray(kappa, dtype=float)
    small = kappa < 1e-8
    k = np.where(small, 1.0, kappa)
    log_sinh = k + np.log1p(-np.exp(-2.0 * k)) - np.log(2.0)
    out = np.log(k) - _LOG_4PI - log_sinh
    # series of log(k / sinh k) near zero
    return np.where(small, -_LOG_4PI - kappa**2 / 6.0, out)


def dlog_normalizer(kappa):
    """Derivative of ``log_normalizer``: ``1/kappa - coth(kappa)``."""
    kappa = np.asarray(kappa, dtype=float)
    small = kappa < 1e-4
    k = np.where(small, 1.0, kappa)
    coth = (1.0 + np.exp(-2.0 * k)) / (1.0 - np.exp(-2.0 * k))
    return np.where(small, -kappa / 3.0, 1.0 / k - coth)


def component_log_density(mean_direction, kappa, omega):
    return log_normalizer(kappa) + kappa * (omega @ mean_direction)


def vmf_density(mixture, elevation, azimuth):
    """Mixture density at directions given in degrees. Integrates to 1 over the sphere."""
    mixture = check_mixture(mixture)
    omega = direction_vectors(np.deg2rad(elevation), np.deg2rad(azimuth))
    total = 0.0
    for comp in mixture:
        total = total + comp.weight * np.exp(
            component_log_density(comp.mean_direction, comp.concentration, omega)
        )
    return total


@lru_cache(maxsize=8)
def sphere_quadrature(n_elevation=90, n_azimuth=180):
    """Product rule: Gauss-Legendre in ``sin(elevation)``, uniform in azimuth.

    Returns ``(elevation, azimuth, weights)`` in radians; weights sum to 4 pi.
    """
    z, wz = np.polynomial.legendre.leggauss(n_elevation)
    az = -np.pi + 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    el = np.arcsin(z)
    el_g, az_g = np.meshgrid(el, az, indexing="ij")
    w = np.repeat(wz, n_azimuth) * (2.0 * np.pi / n_azimuth)
    return el_g.ravel(), az_g.ravel(), w


@dataclass
class SpatialBasis:
    """Scalar port responses of one array sampled on a sphere quadrature.

    The scalar response of a port is the sum of its two polarization
    columns, so the induced covariance carries no polarization index.
    """

    steering: np.ndarray  # (ports, n_points)
    omega: np.ndarray  # (n_points, 3)
    weights: np.ndarray  # (n_points,)

    @classmethod
    def build(cls, array, frequency, n_elevation=90, n_azimuth=180):
        el, az, w = sphere_quadrature(n_elevation, n_azimuth)
        resp = steering(array, el, az, frequency)
        return cls(resp.sum(axis=2).T.copy(), direction_vectors(el, az), w)

    @property
    def port_count(self):
        return self.steering.shape[0]

    def weighted_outer(self, values):
        """``sum_g w_g v_g a_g a_g^H`` for per-point values ``v``."""
        a = self.steering
        return (a * (self.weights * values)) @ a.conj().T


def mixture_density_on(basis, mixture):
    total = np.zeros(basis.omega.shape[0])
    for comp in mixture:
        total += comp.weight * np.exp(
            component_log_density(comp.mean_direction, comp.concentration, basis.omega)
        )
    return total


def dmc_spatial_covariance(mixture, array, grid, basis=None):
    """Spatial covariance of the scalar port response under a VMF angular PSD.

    Trace is normalized to the port count.
    """
    mixture = check_mixture(mixture)
    if basis is None:
        basis = SpatialBasis.build(array, grid.f_c)
    raw = basis.weighted_outer(mixture_density_on(basis, mixture))
    raw = 0.5 * (raw + raw.conj().T)
    return raw * (basis.port_count / np.trace(raw).real)

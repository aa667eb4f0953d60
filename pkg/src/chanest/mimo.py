"""MIMO analysis: Bartlett angular spectra, channel normalization, singular values and capacity."""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_int, check_is_fitted, check_tensor
from .arrays import steering
from .errors import InvalidArgumentError
from .synthesis import synth_smc

log = logging.getLogger(__name__)

_RIDGE = 1e-9


def default_angle_grid(step=2.0):
    el = np.arange(-90.0, 90.0 + 1e-9, step)
    az = np.arange(-180.0, 180.0 - 1e-9, step)
    return el, az


@dataclass
class AngularSpectrum:
    elevation: np.ndarray  # degrees
    azimuth: np.ndarray  # degrees
    power: np.ndarray  # (n_el, n_az), linear
    side: str = "rx"
    mode: str = "literal"
    regularized: bool = False

    @property
    def power_db(self):
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.power)

    def peak(self):
        """(elevation, azimuth) of the global maximum; the first grid cell wins ties."""
        i, j = np.unravel_index(int(np.argmax(self.power)), self.power.shape)
        return float(self.elevation[i]), float(self.azimuth[j])

    @property
    def dynamic_range_db(self):
        lo = self.power.min()
        if lo <= 0:
            return np.inf
        return float(10.0 * np.log10(self.power.max() / lo))

    def to_csv(self, path):
        el, az = np.meshgrid(self.elevation, self.azimuth, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["elevation", "azimuth", "power_dB"])
            for e, a, p in zip(el.ravel(), az.ravel(), self.power_db.ravel()):
                w.writerow([f"{e:.6g}", f"{a:.6g}", f"{p:.6f}"])


def _side_covariance(data, side):
    """Frequency-summed ``H H^H`` (Rx) or ``H^T conj(H)`` (Tx), divided by ``M_f``."""
    n_f = data.shape[-1]
    if side == "rx":
        X = data.reshape(data.shape[0], -1)
    else:
        X = data.transpose(1, 0, 2).reshape(data.shape[1], -1)
    return X @ X.conj().T / n_f


def bartlett_spectrum(H, side="rx", elevation=None, azimuth=None, mode="literal"):
    """Mean Bartlett angular spectrum over frequency for one link end.

    ``literal`` evaluates ``tr(H^H F (F^H F)^-1 F^H H)`` for the 2-column
    dual-polarized response ``F`` of each direction; ``classical`` drops
    the inverse Gram factor and so keeps the element gain in the spectrum.
    """
    H = check_tensor(H, require_arrays=True)
    side = side.lower()
    if side not in ("rx", "tx"):
        raise InvalidArgumentError(f"side must be 'rx' or 'tx', got {side!r}")
    if mode not in ("literal", "classical"):
        raise InvalidArgumentError(f"unknown Bartlett mode {mode!r}")
    d_el, d_az = default_angle_grid()
    el = d_el if elevation is None else np.asarray(elevation, dtype=float)
    az = d_az if azimuth is None else np.asarray(azimuth, dtype=float)
    array = H.rx_array if side == "rx" else H.tx_array
    C = _side_covariance(H.data, side)

    el_g, az_g = np.meshgrid(el, az, indexing="ij")
    F = steering(array, np.deg2rad(el_g.ravel()), np.deg2rad(az_g.ravel()), H.grid.f_c)
    n_dir, n_port, _ = F.shape
    CF = (C @ F.transpose(1, 0, 2).reshape(n_port, -1)).reshape(n_port, n_dir, 2).transpose(1, 0, 2)
    A = np.einsum("nmp,nmq->npq", F.conj(), CF)
    regularized = False
    if mode == "classical":
        power = np.trace(A, axis1=1, axis2=2).real
    else:
        G = np.einsum("nmp,nmq->npq", F.conj(), F)
        lam = np.linalg.eigvalsh(G)
        bad = lam[:, 0] <= 1e-12 * np.maximum(lam[:, -1], 1e-300)
        if np.any(bad):
            regularized = True
            G = G + _RIDGE * np.maximum(lam[:, -1:], 1.0)[:, :, None] * np.eye(2)
        power = np.trace(np.linalg.solve(G, A), axis1=1, axis2=2).real
    power = np.clip(power, 0.0, None).reshape(len(el), len(az))
    return AngularSpectrum(el, az, power, side, mode, regularized)


def normalize_channel(H):
    """Scale ``H`` so that the frequency-averaged ``||H(f)||_F^2`` equals ``M_T * M_R``.

    Returns ``(normalized tensor, gamma)`` with ``H_bar = H / sqrt(gamma)``.
    """
    H = check_tensor(H)
    n_r, n_t, n_f = H.shape
    mean_power = H.power / n_f
    if mean_power == 0.0:
        raise InvalidArgumentError("cannot normalize an all-zero channel")
    gamma = mean_power / (n_r * n_t)
    return H.like(H.data / np.sqrt(gamma), gamma=float(gamma)), float(gamma)


class ChannelNormalizer(TransformerMixin, BaseEstimator):
    """Transformer form of ``normalize_channel``.

    ``fit`` records ``gamma_`` from one tensor; ``transform`` divides any
    tensor by ``sqrt(gamma_)``. ``fit_transform`` on a tensor matches
    ``normalize_channel``.
    """

    def fit(self, X, y=None):
        _, self.gamma_ = normalize_channel(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "gamma_")
        X = check_tensor(X)
        return X.like(X.data / np.sqrt(self.gamma_), gamma=self.gamma_)

    def inverse_transform(self, X):
        check_is_fitted(self, "gamma_")
        X = check_tensor(X)
        return X.like(X.data * np.sqrt(self.gamma_))


@dataclass
class SingularValueProfile:
    per_frequency: np.ndarray  # (M_f, k), descending per row
    profile: np.ndarray  # (k,), mean over frequency
    power_fraction: float  # share of ||H||_F^2 in the top k
    all_values: np.ndarray = field(repr=False, default=None)  # (M_f, min(M_R, M_T))


def singular_values(H, k=3):
    H = check_tensor(H)
    check_int(k, "k")
    if k > min(H.n_rx, H.n_tx):
        raise InvalidArgumentError(f"k={k} exceeds min(M_R, M_T)={min(H.n_rx, H.n_tx)}")
    sv = np.linalg.svd(H.data.transpose(2, 0, 1), compute_uv=False)
    total = np.sum(sv**2)
    frac = float(np.sum(sv[:, :k] ** 2) / total) if total > 0 else 0.0
    return SingularValueProfile(sv[:, :k], sv[:, :k].mean(axis=0), frac, sv)


@dataclass
class CapacityResult:
    snr_db: float
    capacity: float  # bits/s/Hz
    sv_profile: np.ndarray
    gamma: float = 1.0

    def to_row(self, position=""):
        return [position, f"{self.snr_db:.6g}", f"{self.capacity:.9g}", f"{self.gamma:.9g}",
                *[f"{v:.9g}" for v in self.sv_profile]]


def capacity(H_bar, snr_db, k=3, gamma=None):
    """Mean over frequency of ``log2 det(I + rho / M_T * H H^H)`` for a normalized channel."""
    H_bar = check_tensor(H_bar)
    rho = 10.0 ** (snr_db / 10.0)
    sv = np.linalg.svd(H_bar.data.transpose(2, 0, 1), compute_uv=False)
    per_f = np.sum(np.log2(1.0 + rho / H_bar.n_tx * sv**2), axis=1)
    k = min(k, sv.shape[1])
    if gamma is None:
        gamma = float(H_bar.metadata.get("gamma", 1.0))
    return CapacityResult(float(snr_db), max(float(per_f.mean()), 0.0), sv[:, :k].mean(axis=0), gamma)


def dmc_power_fraction(H, paths, noise_floor=0.0):
    """Share of the noise-free power ``||H||_F^2`` left after removing ``paths``.

    ``noise_floor`` is the per-entry noise variance; ``noise_floor * M_f *
    M_R * M_T`` is subtracted from both the residual and the total power.
    """
    H = check_tensor(H, require_arrays=bool(paths))
    noise = noise_floor * H.data.size
    total = H.power - noise
    if total <= 0.0:
        return 0.0
    residual = H.data
    if paths:
        residual = residual - synth_smc(paths, H.tx_array, H.rx_array, H.grid).data
    res_power = float(np.vdot(residual, residual).real) - noise
    return float(np.clip(res_power / total, 0.0, 1.0))

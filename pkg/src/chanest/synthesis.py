"""Forward models: SMC/DMC channel synthesis and the covariances shared with the estimators.

Sign convention: a path of delay ``tau`` contributes ``exp(+j 2 pi f tau)``
across frequency, so the impulse response is recovered with a forward DFT
over frequency divided by ``n_freq`` (see ``to_delay_domain``). A
covariance row ``R[0, m]`` then carries ``exp(-j 2 pi m tau / span)``, and
the unnormalized inverse DFT of the first row returns the delay PSD.
"""
import warnings

import numpy as np
import scipy.linalg as sl

from .arrays import steering
from .channel import ChannelTensor, check_compatible
from .errors import InternalConsistencyError, InvalidArgumentError
from .vmf import SpatialBasis, dmc_spatial_covariance


def to_delay_domain(data):
    """Impulse response over delay bins for frequency-last data."""
    data = np.asarray(data)
    return np.fft.fft(data, axis=-1) / data.shape[-1]


def path_structure(path, tx, rx, frequency):
    """``F_R alpha F_T^T`` for one path: the ``(M_R, M_T)`` spatial signature."""
    f_r = steering(rx, np.deg2rad(path.eoa), np.deg2rad(path.aoa), frequency)[0]
    f_t = steering(tx, np.deg2rad(path.eod), np.deg2rad(path.aod), frequency)[0]
    return f_r @ path.amp @ f_t.T


def _check_geometry(tx, rx):
    if tx is None or rx is None:
        raise InvalidArgumentError("synthesis needs both Tx and Rx arrays")


def synth_smc(paths, tx, rx, grid):
    """Superpose specular paths into a channel tensor.

    Array responses are evaluated at the centre frequency; the delay enters
    through ``exp(+j 2 pi f tau)`` at every grid frequency.
    """
    _check_geometry(tx, rx)
    data = np.zeros((rx.port_count, tx.port_count, grid.n_freq), dtype=complex)
    freqs = grid.frequencies
    for path in paths:
        if path.delay >= grid.max_delay:
            raise InvalidArgumentError(
                f"path delay {path.delay:.3e} s exceeds the unambiguous span {grid.max_delay:.3e} s"
            )
        signature = path_structure(path, tx, rx, grid.f_c)
        data += signature[:, :, None] * np.exp(2j * np.pi * freqs * path.delay)[None, None, :]
    return ChannelTensor(data, grid, tx, rx)


def dmc_delay_psd(model, delays):
    """Delay PSD of a DMC model sampled at ``delays`` (seconds).

    Each process contributes half its peak at the sample nearest its onset
    and an exponential decay after it; processes add in linear power on a
    single shared noise floor.
    """
    delays = np.asarray(delays, dtype=float)
    psd = np.full(delays.shape, float(model.noise_floor))
    flat = delays.ravel()
    step = np.min(np.diff(np.unique(flat))) if np.unique(flat).size > 1 else 0.0
    for proc in model.processes:
        after = delays > proc.base_delay
        onset = int(np.argmin(np.abs(flat - proc.base_delay)))
        # the half-power sample only exists when a sample lies within half a step of the onset
        on_grid = abs(flat[onset] - proc.base_delay) <= step / 2.0
        if on_grid:
            after.flat[onset] = False
        psd[after] += proc.alpha1 * np.exp(-proc.decay * (delays[after] - proc.base_delay))
        if on_grid:
            psd.flat[onset] += proc.alpha1 / 2.0
    return psd


def process_kernel(alpha1, beta, tau_norm, n_freq):
    """First covariance row of one process plus its partial derivatives.

    ``beta`` is the decay per delay bin and ``tau_norm`` the onset as a
    fraction of the delay span. The row is the DFT of the sampled delay
    PSD (half weight at the onset, ``exp(-beta n)`` after it), i.e.
    ``alpha1/M * exp(-j 2 pi m tau) * (1 / (1 - exp(-beta - j 2 pi m / M)) - 1/2)``.
    To first order in ``beta`` and ``m/M`` this is
    ``alpha1/M * exp(-j 2 pi m tau) / (beta + j 2 pi m / M)``.

    Returns ``(row, d_row/d_log_alpha1, d_row/d_log_beta, d_row/d_tau_norm)``.
    """
    m = np.arange(n_freq)
    e = np.exp(-beta - 2j * np.pi * m / n_freq)
    g = 1.0 / (1.0 - e) - 0.5
    shift = np.exp(-2j * np.pi * m * tau_norm)
    row = (alpha1 / n_freq) * shift * g
    d_beta = (alpha1 / n_freq) * shift * (-e / (1.0 - e) ** 2) * beta
    d_tau = -2j * np.pi * m * row
    return row, row, d_beta, d_tau


def hermitian_toeplitz(row):
    """Hermitian Toeplitz matrix whose first row is ``row``."""
    row = np.asarray(row)
    col = row.conj()
    col[0] = row[0].real
    return sl.toeplitz(col, row)


def frequency_covariance_row(processes, grid):
    row = np.zeros(grid.n_freq, dtype=complex)
    for proc in processes:
        beta, tau = proc.normalized(grid)
        row += process_kernel(proc.alpha1, beta, tau, grid.n_freq)[0]
    return row


def dmc_frequency_covariance(processes, noise_floor, grid, check=True):
    """``noise_floor * I`` plus the Hermitian Toeplitz frequency covariance of the processes."""
    if len(processes) < 1:
        raise InvalidArgumentError("need at least one DMC process")
    cov = hermitian_toeplitz(frequency_covariance_row(processes, grid))
    cov[np.diag_indices_from(cov)] += noise_floor
    cov = 0.5 * (cov + cov.conj().T)
    if check:
        lam = np.linalg.eigvalsh(cov)
        if lam[0] < -1e-9 * max(lam[-1], 1e-300):
            raise InternalConsistencyError(
                f"frequency covariance is not PSD (min eigenvalue {lam[0]:.3e})"
            )
    return cov


def covariance_factor(cov):
    """Lower factor ``L`` with ``L L^H = cov``; falls back to eigenvalue clipping.

    Returns ``(L, fell_back)``.
    """
    try:
        return np.linalg.cholesky(cov), False
    except np.linalg.LinAlgError:
        lam, vec = np.linalg.eigh(0.5 * (cov + cov.conj().T))
        return vec * np.sqrt(np.clip(lam, 0.0, None)), True


def _rng(seed):
    # Philox is counter-based: the same seed reproduces the same stream anywhere
    return np.random.Generator(np.random.Philox(seed))


def complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synth_dmc(model, tx, rx, grid, seed, rx_basis=None, tx_basis=None):
    """Draw one DMC realization with covariance ``R_F kron R_A^R kron R_A^T``.

    The spatial factor is applied as ``L_A^T`` so that the vectorized
    tensor (frequency outermost, then Rx, then Tx) has exactly the Kronecker
    covariance. Deterministic for a given seed.
    """
    _check_geometry(tx, rx)
    r_f = dmc_frequency_covariance(model.processes, model.noise_floor, grid, check=False)
    r_rx = dmc_spatial_covariance(model.vmf_rx, rx, grid, basis=rx_basis)
    r_tx = dmc_spatial_covariance(model.vmf_tx, tx, grid, basis=tx_basis)

    fallback = []
    l_f, fb = covariance_factor(r_f)
    fallback.append(fb)
    l_r, fb = covariance_factor(r_rx)
    fallback.append(fb)
    l_t, fb = covariance_factor(r_tx)
    fallback.append(fb)
    if any(fallback):
        warnings.warn("Cholesky failed; used eigenvalue clipping", RuntimeWarning, stacklevel=2)

    z = complex_normal(_rng(seed), (grid.n_freq, rx.port_count, tx.port_count))
    # H[m, r, t] = sum L_F[m, m'] Z[m', r', t'] L_R[r, r'] L_T[t, t']
    n_f, n_r, n_t = z.shape
    h = (l_f @ z.reshape(n_f, -1)).reshape(n_f, n_r, n_t)
    h = np.matmul(l_r, h)
    h = h @ l_t.T
    meta = {"seed": int(seed), "cholesky_fallback": bool(any(fallback))}
    return ChannelTensor(np.ascontiguousarray(h.transpose(1, 2, 0)), grid, tx, rx, meta)


def synth_full(paths, model, tx, rx, grid, seed):
    smc = synth_smc(paths, tx, rx, grid)
    dmc = synth_dmc(model, tx, rx, grid, seed)
    check_compatible(smc, dmc)
    return dmc.like(smc.data + dmc.data)


def white_noise(tensor_shape, variance, seed):
    """Circular complex Gaussian noise of the given per-entry variance."""
    return np.sqrt(variance) * complex_normal(_rng(seed), tensor_shape)


__all__ = [
    "SpatialBasis", "dmc_delay_psd", "dmc_frequency_covariance", "dmc_spatial_covariance",
    "hermitian_toeplitz", "process_kernel", "synth_dmc", "synth_full", "synth_smc",
    "to_delay_domain", "white_noise",
]

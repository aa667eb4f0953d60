"""Dense multipath estimation.

The delay domain is fitted first: the residual delay PSD is segmented by
a first-order difference of its smoothed dB profile, each segment seeds
one exponential process, and all processes plus the noise floor are
refined jointly by damped Fisher scoring on the frequency covariance.
The angular domain is fitted separately per link end with a mixture of
von Mises-Fisher lobes, seeded from the Bartlett spectrum.
"""
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import uniform_filter1d
from sklearn.base import BaseEstimator

from ._validation import check_hermitian, check_is_fitted, check_tensor
from .channel import ChannelTensor, DmcDelayProcess, DmcModel, VmfComponent, check_mixture, uniform_mixture
from .errors import InvalidArgumentError, NumericalError
from .lm import CovarianceModel, gaussian_loglik, maximize_likelihood
from .mimo import bartlett_spectrum
from .smc import MeasuredCovariance
from .synthesis import hermitian_toeplitz, process_kernel, synth_dmc
from .vmf import SpatialBasis, component_log_density, dlog_normalizer, dmc_spatial_covariance

log = logging.getLogger(__name__)

_LOG_KAPPA_MIN = np.log(1e-4)
_LOG_KAPPA_MAX = np.log(1e5)


# ---------------------------------------------------------------- delay PSD


def psd_from_covariance(S):
    """Delay PSD (density units) of a frequency covariance.

    ``p[n] = (1/M) sum_{m,m'} S[m, m'] exp(-j 2 pi (m - m') n / M)``, the
    expected ``|DFT|^2 / M`` of a vector with covariance ``S``. For a
    model covariance this returns the noise floor plus the process PSDs.
    """
    S = np.asarray(S)
    return np.diag(np.fft.ifft(np.fft.fft(S, axis=0), axis=1)).real.copy()


def residual_delay_psd(H_D):
    """Density-unit delay PSD of a residual tensor, averaged over all links."""
    data = H_D.data if isinstance(H_D, ChannelTensor) else np.asarray(H_D)
    n_f = data.shape[-1]
    spec = np.fft.fft(data.reshape(-1, n_f), axis=-1)
    return np.mean(np.abs(spec) ** 2, axis=0) / n_f


def noise_floor_from_psd(psd, tail=0.1, margin_db=3.0):
    """``(floor, threshold)``: median of the last ``tail`` share of bins and that plus ``margin_db``."""
    psd = np.asarray(psd, dtype=float)
    n = max(1, int(round(tail * psd.size)))
    floor = float(np.median(psd[-n:]))
    return floor, floor * 10.0 ** (margin_db / 10.0)


def _db(x):
    return 10.0 * np.log10(np.maximum(x, 1e-300))


@dataclass(frozen=True)
class ProcessSegment:
    start_bin: int
    end_bin: int
    slope_db_per_bin: float
    onset_bin: int

    def __post_init__(self):
        if not self.start_bin < self.end_bin:
            raise InvalidArgumentError(
                f"segment start {self.start_bin} must precede end {self.end_bin}"
            )


def detect_processes(delay_psd_db, noise_floor_db, window=5, onset_db=6.0, k_max=5, min_bins=8):
    """Segment a delay PSD into exponentially decaying processes.

    The dB profile is smoothed in linear power with a centred moving average
    of ``window`` bins and differenced. A rise of at least ``onset_db`` per
    bin, coming after a flat or decaying stretch, marks an onset; the
    onset is then placed on the largest raw rise nearby. Each segment
    runs to the next onset or to the last bin above ``noise_floor_db``.
    """
    psd_db = np.asarray(delay_psd_db, dtype=float)
    lin = 10.0 ** (psd_db / 10.0)
    floor_lin = 10.0 ** (noise_floor_db / 10.0)
    above = lin > floor_lin
    if np.count_nonzero(above) < min_bins:
        return []
    smooth = _db(uniform_filter1d(lin, window, mode="nearest"))
    diff = np.diff(smooth)
    raw_diff = np.diff(psd_db)
    n = psd_db.size

    onsets = []
    i = 0
    while i < n - 1:
        if diff[i] >= onset_db and smooth[i + 1] > noise_floor_db:
            lo = max(i - window, 0)
            stretch = diff[lo:i]
            if onsets and i - onsets[-1] <= window:
                i += 1
                continue
            if stretch.size == 0 or np.mean(stretch) <= 0.0 or smooth[i] <= noise_floor_db + onset_db:
                # raw rise nearest to the smoothed one locates the actual onset
                a, b = max(i - window // 2 - 1, 0), min(i + window, n - 1)
                onset = a + int(np.argmax(raw_diff[a:b])) + 1
                onsets.append(onset)
                # skip the rest of this rise
                while i < n - 1 and diff[i] > 0:
                    i += 1
                continue
        i += 1

    if not onsets:
        # a profile that starts high and decays has its onset at the first bin above the floor
        first = int(np.argmax(above))
        if smooth[first:].max() > noise_floor_db:
            onsets = [first]
    onsets = sorted(set(onsets))[:k_max]

    segments = []
    for k, onset in enumerate(onsets):
        stop = onsets[k + 1] - 1 if k + 1 < len(onsets) else n - 1
        tail = np.nonzero(smooth[onset:stop + 1] <= noise_floor_db)[0]
        end = onset + int(tail[0]) if tail.size else stop
        if end <= onset:
            continue
        seg = np.arange(onset, end + 1)
        slope = float(np.polyfit(seg, smooth[seg], 1)[0]) if seg.size >= 2 else 0.0
        segments.append(ProcessSegment(int(onset), int(end), slope, int(onset)))
    return segments


def init_dmc_delay(segments, delay_psd, grid, noise_threshold=None):
    """Initial processes and noise floor from detected segments.

    ``delay_psd`` is linear, in density units. Each process takes its decay
    from a least-squares exponential fit over its segment (after removing
    the tails of earlier processes), its onset from the bin whose excess is
    closest to half the extrapolated peak, and ``alpha1`` as twice the
    excess there. The noise floor is the median of bins below
    ``noise_threshold``.
    """
    psd = np.asarray(delay_psd, dtype=float)
    n = psd.size
    if noise_threshold is None:
        _, noise_threshold = noise_floor_from_psd(psd)
    below = psd[psd < noise_threshold]
    alpha0 = float(np.median(below)) if below.size else float(np.min(psd))
    bins = np.arange(n)

    processes = []
    model = np.full(n, alpha0)
    for seg in segments:
        if seg.end_bin - seg.start_bin + 1 < 3:
            warnings.warn(f"skipping segment {seg.start_bin}-{seg.end_bin}: shorter than 3 bins",
                          RuntimeWarning, stacklevel=2)
            continue
        excess = psd - model
        fit_bins = bins[seg.onset_bin + 2:seg.end_bin + 1]
        fit_bins = fit_bins[excess[fit_bins] > 0.5 * alpha0]
        if fit_bins.size < 2:
            fit_bins = bins[seg.onset_bin + 1:seg.end_bin + 1]
            fit_bins = fit_bins[excess[fit_bins] > 0]
        if fit_bins.size < 2:
            warnings.warn(f"skipping segment {seg.start_bin}-{seg.end_bin}: no decay to fit",
                          RuntimeWarning, stacklevel=2)
            continue
        slope, intercept = np.polyfit(fit_bins, np.log(excess[fit_bins]), 1)
        beta = max(-slope, 1e-4)
        # onset: excess closest (in log) to half of the extrapolated peak
        cands = [c for c in (seg.onset_bin - 1, seg.onset_bin, seg.onset_bin + 1) if 0 <= c < n]
        err = [abs(np.log(max(excess[c], 1e-300)) - (intercept + slope * c - np.log(2.0))) for c in cands]
        onset = cands[int(np.argmin(err))]
        alpha1 = 2.0 * excess[onset]
        if not alpha1 > 0:
            alpha1 = float(np.exp(intercept + slope * onset))
        proc = DmcDelayProcess(float(alpha1), beta / grid.delay_resolution, onset * grid.delay_resolution)
        processes.append(proc)
        model = model + _process_psd(alpha1, beta, onset, n)
    return processes, alpha0


def _process_psd(alpha1, beta, onset, n):
    out = np.zeros(n)
    k = np.arange(n - onset)
    out[onset:] = alpha1 * np.exp(-beta * k)
    out[onset] = alpha1 / 2.0
    return out


# ---------------------------------------------------------------- delay fit


class DelayCovarianceModel(CovarianceModel):
    """``alpha0 I`` plus ``K`` Toeplitz process kernels.

    ``theta = [log alpha1, log beta, tau_norm] * K + [log alpha0]``.
    """

    def __init__(self, n_freq, n_processes):
        self.n_freq = n_freq
        self.n_processes = n_processes

    def pack(self, processes, alpha0, grid):
        theta = []
        for p in processes:
            beta, tau = p.normalized(grid)
            theta += [np.log(max(p.alpha1, 1e-300)), np.log(beta), tau]
        return np.array(theta + [np.log(max(alpha0, 1e-300))])

    def unpack(self, theta, grid):
        procs = []
        for k in range(self.n_processes):
            la, lb, tau = theta[3 * k:3 * k + 3]
            procs.append(DmcDelayProcess(float(np.exp(la)), float(np.exp(lb)) / grid.delay_resolution,
                                         float(tau) * grid.max_delay))
        return procs, float(np.exp(theta[-1]))

    def _rows(self, theta):
        row = np.zeros(self.n_freq, dtype=complex)
        drows = []
        for k in range(self.n_processes):
            la, lb, tau = theta[3 * k:3 * k + 3]
            r, da, db, dt = process_kernel(np.exp(la), np.exp(lb), tau, self.n_freq)
            row += r
            drows += [da, db, dt]
        return row, drows

    def covariance(self, theta):
        row, _ = self._rows(theta)
        R = hermitian_toeplitz(row)
        R[np.diag_indices_from(R)] += np.exp(theta[-1])
        return R

    def derivatives(self, theta):
        row, drows = self._rows(theta)
        R = hermitian_toeplitz(row)
        R[np.diag_indices_from(R)] += np.exp(theta[-1])
        dRs = [hermitian_toeplitz(d) for d in drows]
        dRs.append(np.exp(theta[-1]) * np.eye(self.n_freq))
        return R, dRs

    def project(self, theta):
        theta = np.array(theta, dtype=float)
        for k in range(self.n_processes):
            theta[3 * k + 2] %= 1.0
            theta[3 * k + 1] = np.clip(theta[3 * k + 1], np.log(1e-6), np.log(50.0))
        return theta

    def jitter(self, theta):
        return np.exp(theta[-1]) * 1e-6


@dataclass
class DmcFitReport:
    fitted: DmcModel
    trace: list
    power_capture_ratio: float
    iterations: int
    converged: bool
    power_ratio: float = float("nan")  # fitted / measured excess power, unclipped
    jittered: bool = False
    segments: list = field(default_factory=list)

    @property
    def log_likelihood(self):
        return self.trace[-1] if self.trace else float("nan")

    def to_text(self):
        lines = [
            f"processes: {self.fitted.n_processes}",
            f"noise_floor: {self.fitted.noise_floor:.9g}",
        ]
        for k, p in enumerate(self.fitted.processes):
            lines.append(
                f"process {k}: alpha1={p.alpha1:.9g} decay={p.decay:.9g} base_delay={p.base_delay:.9g}"
            )
        lines += [
            f"power_capture_ratio: {self.power_capture_ratio:.6f}",
            f"power_ratio: {self.power_ratio:.6f}",
            f"iterations: {self.iterations}",
            f"converged: {self.converged}",
            "loglik_trace: " + " ".join(f"{v:.12g}" for v in self.trace),
        ]
        return "\n".join(lines) + "\n"


def capture_ratios(fitted_psd, measured_psd, noise_floor, window=5):
    """``(capture, ratio)`` of fitted to measured PSD power above ``noise_floor``.

    ``capture`` counts, bin by bin, the part of the measured excess that the
    fit reproduces (the smaller of the two, both smoothed over ``window``
    bins), so over- and under-shoots both lower it. ``ratio`` is the plain
    quotient of the summed excesses.
    """
    fit_ex = np.asarray(fitted_psd) - noise_floor
    meas_ex = np.asarray(measured_psd) - noise_floor
    denom = np.sum(meas_ex)
    if denom <= 0:
        return 0.0, 0.0
    ratio = float(np.sum(fit_ex) / denom)
    f = uniform_filter1d(fit_ex, window, mode="wrap")
    m = uniform_filter1d(meas_ex, window, mode="wrap")
    capture = float(np.sum(np.clip(np.minimum(f, m), 0.0, None)) / np.sum(np.clip(m, 0.0, None)))
    return float(np.clip(capture, 0.0, 1.0)), ratio


def _shift_onsets(model, S, theta, loglik):
    """Move each onset by one bin while that raises the likelihood; ``None`` if nothing moved."""
    best, best_l, moved = theta.copy(), loglik, False
    step = 1.0 / model.n_freq
    for k in range(model.n_processes):
        for direction in (-1.0, 1.0):
            while True:
                cand = best.copy()
                cand[3 * k + 2] += direction * step
                cand = model.project(cand)
                try:
                    val, _ = gaussian_loglik(model.covariance(cand), S, model.jitter(cand))
                except NumericalError:
                    break
                if val <= best_l:
                    break
                best, best_l, moved = cand, val, True
    return best if moved else None


def fit_dmc_delay(S_freq, processes, alpha0, grid, max_iter=100, tol=1e-6, segments=None, callback=None):
    """Maximum-likelihood refinement of all delay processes and the noise floor."""
    S = check_hermitian(S_freq, "frequency covariance")
    if S.shape != (grid.n_freq, grid.n_freq):
        raise InvalidArgumentError(f"covariance shape {S.shape} does not match n_freq={grid.n_freq}")
    if not processes:
        raise InvalidArgumentError("fit_dmc_delay needs at least one initial process")
    model = DelayCovarianceModel(grid.n_freq, len(processes))
    theta0 = model.pack(processes, alpha0, grid)
    res = maximize_likelihood(model, S, theta0, max_iter=max_iter, tol=tol, callback=callback)
    shifted = _shift_onsets(model, S, res.theta, res.loglik)
    if shifted is not None:
        # the likelihood ripples at whole-bin spacing in the onset; restart from the better bin
        again = maximize_likelihood(model, S, shifted, max_iter=max_iter, tol=tol, callback=callback)
        if again.loglik > res.loglik:
            again.trace = list(res.trace) + list(again.trace)
            again.iterations += res.iterations
            again.jittered |= res.jittered
            res = again
    procs, a0 = model.unpack(res.theta, grid)
    fitted = DmcModel(tuple(procs), a0)
    fit_psd = psd_from_covariance(model.covariance(res.theta))
    capture, ratio = capture_ratios(fit_psd, psd_from_covariance(S), a0)
    return DmcFitReport(fitted, list(res.trace), capture, res.iterations, res.converged,
                        ratio, res.jittered, list(segments or []))


# ---------------------------------------------------------------- angular fit


def _mean_dir(el, az):
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def _mean_dir_grads(el, az):
    d_el = np.array([-np.sin(el) * np.cos(az), -np.sin(el) * np.sin(az), np.cos(el)])
    d_az = np.array([-np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), 0.0])
    return d_el, d_az


def _softmax(eta):
    z = np.concatenate([[0.0], eta])
    z = np.exp(z - z.max())
    return z / z.sum()


class VmfCovarianceModel(CovarianceModel):
    """Spatial covariance ``s * M * S(theta) / tr S(theta) + nu I`` of a VMF mixture.

    ``theta`` holds ``[elevation, azimuth, log kappa]`` (radians) per lobe,
    then ``Q - 1`` logits for the weights (the first lobe's logit is fixed
    at 0 so the weights always sum to one), then ``log s`` and ``log nu``.
    """

    def __init__(self, basis, n_components):
        self.basis = basis
        self.n_components = n_components
        self._norms = np.sum(np.abs(basis.steering) ** 2, axis=0)

    def pack(self, mixture, scale, noise):
        theta = []
        for c in mixture:
            kappa = min(max(c.concentration, np.exp(_LOG_KAPPA_MIN)), np.exp(_LOG_KAPPA_MAX))
            theta += [np.deg2rad(c.mean_elevation), np.deg2rad(c.mean_azimuth), np.log(kappa)]
        w = np.array([max(c.weight, 1e-6) for c in mixture])
        theta += list(np.log(w[1:] / w[0]))
        return np.array(theta + [np.log(scale), np.log(noise)])

    def unpack(self, theta):
        q = self.n_components
        eps = _softmax(theta[3 * q:3 * q + q - 1])
        comps = []
        for i in range(q):
            el, az, lk = theta[3 * i:3 * i + 3]
            comps.append(VmfComponent(float(np.rad2deg(el)), float(np.rad2deg(az)), float(np.exp(lk)),
                                      float(eps[i])))
        # weights from a softmax can miss 1 by an ulp; fold the slack into the largest
        total = sum(c.weight for c in comps)
        j = int(np.argmax([c.weight for c in comps]))
        c = comps[j]
        comps[j] = VmfComponent(c.mean_elevation, c.mean_azimuth, c.concentration, c.weight + 1.0 - total)
        return tuple(comps), float(np.exp(theta[-2])), float(np.exp(theta[-1]))

    def _densities(self, theta):
        q = self.n_components
        eps = _softmax(theta[3 * q:3 * q + q - 1])
        f = np.empty((q, self.basis.omega.shape[0]))
        for i in range(q):
            el, az, lk = theta[3 * i:3 * i + 3]
            f[i] = np.exp(component_log_density(_mean_dir(el, az), np.exp(lk), self.basis.omega))
        return eps, f

    def _assemble(self, v):
        S = self.basis.weighted_outer(v)
        return 0.5 * (S + S.conj().T), float(np.sum(self.basis.weights * v * self._norms))

    def covariance(self, theta):
        eps, f = self._densities(theta)
        S, T = self._assemble(eps @ f)
        M = self.basis.port_count
        return np.exp(theta[-2]) * M * S / T + np.exp(theta[-1]) * np.eye(M)

    def derivatives(self, theta):
        q = self.n_components
        M = self.basis.port_count
        omega = self.basis.omega
        eps, f = self._densities(theta)
        v = eps @ f
        S, T = self._assemble(v)
        s, nu = np.exp(theta[-2]), np.exp(theta[-1])
        A = M * S / T

        dvs = []
        for i in range(q):
            el, az, lk = theta[3 * i:3 * i + 3]
            kappa = np.exp(lk)
            mu = _mean_dir(el, az)
            g_el, g_az = _mean_dir_grads(el, az)
            base = eps[i] * f[i] * kappa
            dvs += [base * (omega @ g_el), base * (omega @ g_az),
                    base * (dlog_normalizer(kappa) + omega @ mu)]
        for j in range(1, q):
            dvs.append(eps[j] * (f[j] - v))

        dRs = []
        for dv in dvs:
            dS, dT = self._assemble(dv)
            dRs.append(s * M * (dS / T - S * (dT / T**2)))
        dRs.append(s * A)
        dRs.append(nu * np.eye(M))
        return s * A + nu * np.eye(M), dRs

    def project(self, theta):
        theta = np.array(theta, dtype=float)
        for i in range(self.n_components):
            el, az = theta[3 * i], theta[3 * i + 1]
            el = (el + np.pi) % (2 * np.pi) - np.pi
            if el > np.pi / 2:
                el, az = np.pi - el, az + np.pi
            elif el < -np.pi / 2:
                el, az = -np.pi - el, az + np.pi
            theta[3 * i] = el
            theta[3 * i + 1] = (az + np.pi) % (2 * np.pi) - np.pi
            theta[3 * i + 2] = np.clip(theta[3 * i + 2], _LOG_KAPPA_MIN, _LOG_KAPPA_MAX)
        return theta

    def jitter(self, theta):
        return np.exp(theta[-1]) * 1e-6 + 1e-12 * np.exp(theta[-2])


def _angular_distance(el1, az1, el2, az2):
    a = _mean_dir(np.deg2rad(el1), np.deg2rad(az1))
    b = _mean_dir(np.deg2rad(el2), np.deg2rad(az2))
    return np.rad2deg(np.arccos(np.clip(a @ b, -1.0, 1.0)))


def _half_width(spectrum, i, j):
    """Half-power angular radius (radians) around grid cell ``(i, j)``, or None if never reached."""
    p = spectrum.power
    half = p[i, j] / 2.0
    widths = []
    n_el, n_az = p.shape
    for step in (1, -1):
        k = 1
        while k < n_az // 2 and p[i, (j + step * k) % n_az] > half:
            k += 1
        if k < n_az // 2:
            widths.append(np.deg2rad(abs(spectrum.azimuth[1] - spectrum.azimuth[0]) * k
                                     * np.cos(np.deg2rad(spectrum.elevation[i]))))
        k = 1
        while 0 <= i + step * k < n_el and p[i + step * k, j] > half:
            k += 1
        if 0 <= i + step * k < n_el:
            widths.append(np.deg2rad(abs(spectrum.elevation[1] - spectrum.elevation[0]) * k))
    return float(np.mean(widths)) if widths else None


def _reference_spectrum(spec, array, grid):
    """Classical Bartlett spectrum of a unit isotropic field on the grid of ``spec``."""
    from .arrays import steering

    basis = SpatialBasis.build(array, grid.f_c)
    R = dmc_spatial_covariance(uniform_mixture(), array, grid, basis)
    el_g, az_g = np.meshgrid(spec.elevation, spec.azimuth, indexing="ij")
    F = steering(array, np.deg2rad(el_g.ravel()), np.deg2rad(az_g.ravel()), grid.f_c)
    ref = np.einsum("nmp,mk,nkp->n", F.conj(), R, F).real
    return ref.reshape(spec.power.shape)


def _local_maxima(p):
    """Boolean mask of 8-neighbourhood maxima with azimuth wrap-around."""
    padded = np.pad(p, ((1, 1), (0, 0)), mode="constant", constant_values=-np.inf)
    is_max = np.ones_like(p, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            nb = np.roll(padded, dj, axis=1)[1 + di:1 + di + p.shape[0]]
            is_max &= p >= nb
    return is_max


def bartlett_init_angular(H_D, side="rx", q_max=3, peak_db=6.0, separation=30.0, flat_db=3.0):
    """Initial VMF mixture from peaks of the Bartlett spectrum of a residual.

    The classical spectrum is divided by the spectrum an isotropic field
    would produce, which removes the element patterns. Lobes sit on local
    maxima of this ratio within ``peak_db`` of its maximum, whose classical
    power is also within ``peak_db`` of the strongest (this rejects the
    back-lobe mirrors of planar arrays), taken strongest first and at least
    ``separation`` degrees apart. Weights follow the ratio at each peak and
    the concentration comes from the half-power width ``w`` of the ratio as
    ``ln 2 / (1 - cos w)``. A ratio with less than ``flat_db`` of dynamic
    range gives one uniform lobe.
    """
    H_D = check_tensor(H_D, require_arrays=True)
    side = side.lower()
    spec = bartlett_spectrum(H_D, side, mode="classical")
    array = H_D.rx_array if side == "rx" else H_D.tx_array
    ref = _reference_spectrum(spec, array, H_D.grid)
    ratio = spec.power / np.maximum(ref, 1e-300 * max(ref.max(), 1e-300))
    if ratio.max() <= 0 or _db(ratio.max()) - _db(max(ratio.min(), 1e-300)) < flat_db:
        return uniform_mixture()
    norm = replace(spec, power=ratio)

    cand = np.argwhere(_local_maxima(ratio))
    keep = (ratio[tuple(cand.T)] >= ratio.max() * 10.0 ** (-peak_db / 10.0)) & \
        (spec.power[tuple(cand.T)] >= spec.power.max() * 10.0 ** (-peak_db / 10.0))
    cand = cand[keep]
    order = np.argsort(-spec.power[tuple(cand.T)], kind="stable")
    peaks = []
    for idx in order:
        i, j = cand[idx]
        el, az = spec.elevation[i], spec.azimuth[j]
        if all(_angular_distance(el, az, e, a) >= separation for e, a, _, _ in peaks):
            peaks.append((el, az, i, j))
        if len(peaks) >= q_max:
            break
    values = np.array([ratio[i, j] for _, _, i, j in peaks])
    weights = values / values.sum()
    comps = []
    for (el, az, i, j), w in zip(peaks, weights):
        width = _half_width(norm, i, j)
        kappa = 0.0 if width is None or width >= np.pi / 2 else np.log(2.0) / (1.0 - np.cos(width))
        comps.append(VmfComponent(float(el), float(az), float(kappa), float(w)))
    total = sum(c.weight for c in comps)
    c = comps[0]
    comps[0] = VmfComponent(c.mean_elevation, c.mean_azimuth, c.concentration, c.weight + 1.0 - total)
    return tuple(comps)


@dataclass
class AngularFitReport:
    mixture: tuple
    scale: float
    noise: float
    trace: list
    iterations: int
    converged: bool


def fit_dmc_angular(S_spatial, init, array, grid, basis=None, max_iter=100, tol=1e-6):
    """Maximum-likelihood VMF mixture for one link end's spatial covariance."""
    init = check_mixture(init)
    S = check_hermitian(S_spatial, "spatial covariance")
    if basis is None:
        basis = SpatialBasis.build(array, grid.f_c)
    if S.shape != (basis.port_count, basis.port_count):
        raise InvalidArgumentError(f"covariance shape {S.shape} does not match {basis.port_count} ports")
    M = basis.port_count
    lam = np.linalg.eigvalsh(S)
    level = max(np.trace(S).real / M, 1e-300)
    noise = max(lam[0], 1e-3 * level)
    scale = max(level - noise, 1e-3 * level)
    model = VmfCovarianceModel(basis, len(init))
    res = maximize_likelihood(model, S, model.pack(init, scale, noise), max_iter=max_iter, tol=tol)
    mixture, s, nu = model.unpack(res.theta)
    return AngularFitReport(prune_mixture(mixture), s, nu, list(res.trace), res.iterations, res.converged)


def prune_mixture(mixture, min_weight=1e-3):
    """Drop lobes lighter than ``min_weight`` and renormalize the rest."""
    kept = [c for c in mixture if c.weight >= min_weight]
    if not kept:
        kept = [max(mixture, key=lambda c: c.weight)]
    total = sum(c.weight for c in kept)
    out = [VmfComponent(c.mean_elevation, c.mean_azimuth, c.concentration, c.weight / total) for c in kept]
    slack = 1.0 - sum(c.weight for c in out)
    c = out[0]
    out[0] = VmfComponent(c.mean_elevation, c.mean_azimuth, c.concentration, c.weight + slack)
    return tuple(out)


# ---------------------------------------------------------------- estimators


class DmcDelayEstimator(BaseEstimator):
    """Segment, initialize and fit the DMC delay processes of a residual tensor.

    ``n_processes`` forces the number of processes (the first ones detected,
    or a single segment from the first onset to the floor when set to 1);
    ``None`` uses every detected segment up to ``k_max``.
    """

    def __init__(self, k_max=5, window=5, onset_db=6.0, n_processes=None, max_iter=100, tol=1e-6):
        self.k_max = k_max
        self.window = window
        self.onset_db = onset_db
        self.n_processes = n_processes
        self.max_iter = max_iter
        self.tol = tol

    def _segments(self, psd, threshold):
        segs = detect_processes(_db(psd), _db(threshold), self.window, self.onset_db, self.k_max)
        if self.n_processes is not None and segs:
            if self.n_processes == 1:
                segs = [ProcessSegment(segs[0].start_bin, segs[-1].end_bin,
                                       segs[0].slope_db_per_bin, segs[0].onset_bin)]
            else:
                segs = segs[:self.n_processes]
        return segs

    def fit(self, X, y=None):
        X = check_tensor(X)
        cov = MeasuredCovariance(X)
        S = 0.5 * (cov.frequency + cov.frequency.conj().T)
        psd = psd_from_covariance(S)
        _, threshold = noise_floor_from_psd(psd)
        self.segments_ = self._segments(psd, threshold)
        if not self.segments_:
            self.report_ = None
            self.model_ = None
            log.info("no DMC process detected")
            return self
        procs, alpha0 = init_dmc_delay(self.segments_, psd, X.grid, threshold)
        self.init_ = (procs, alpha0)
        self.report_ = fit_dmc_delay(S, procs, alpha0, X.grid, self.max_iter, self.tol, self.segments_)
        self.model_ = self.report_.fitted
        return self

    def score(self, X, y=None):
        check_is_fitted(self, "model_")
        if self.model_ is None:
            return float("nan")
        X = check_tensor(X)
        model = DelayCovarianceModel(X.grid.n_freq, self.model_.n_processes)
        R = model.covariance(model.pack(self.model_.processes, self.model_.noise_floor, X.grid))
        return gaussian_loglik(R, MeasuredCovariance(X).frequency)[0]


class VmfAngularEstimator(BaseEstimator):
    """Bartlett-initialized VMF mixture fit for one link end (``side`` is 'rx' or 'tx')."""

    def __init__(self, side="rx", q_max=3, peak_db=6.0, max_iter=100, tol=1e-6, n_elevation=90, n_azimuth=180):
        self.side = side
        self.q_max = q_max
        self.peak_db = peak_db
        self.max_iter = max_iter
        self.tol = tol
        self.n_elevation = n_elevation
        self.n_azimuth = n_azimuth

    def fit(self, X, y=None):
        X = check_tensor(X, require_arrays=True)
        side = self.side.lower()
        array = X.rx_array if side == "rx" else X.tx_array
        self.init_ = bartlett_init_angular(X, side, self.q_max, self.peak_db)
        basis = SpatialBasis.build(array, X.grid.f_c, self.n_elevation, self.n_azimuth)
        S = MeasuredCovariance(X).spatial(side)
        self.report_ = fit_dmc_angular(0.5 * (S + S.conj().T), self.init_, array, X.grid, basis,
                                       self.max_iter, self.tol)
        self.mixture_ = self.report_.mixture
        return self


class DmcEstimator(BaseEstimator):
    """Full DMC model (delay processes plus Rx and Tx VMF mixtures) from a residual tensor."""

    def __init__(self, k_max=5, window=5, onset_db=6.0, n_processes=None, q_max=3, max_iter=100,
                 tol=1e-6, fit_angular=True):
        self.k_max = k_max
        self.window = window
        self.onset_db = onset_db
        self.n_processes = n_processes
        self.q_max = q_max
        self.max_iter = max_iter
        self.tol = tol
        self.fit_angular = fit_angular

    def fit(self, X, y=None):
        X = check_tensor(X)
        delay = DmcDelayEstimator(self.k_max, self.window, self.onset_db, self.n_processes,
                                  self.max_iter, self.tol).fit(X)
        self.delay_report_ = delay.report_
        self.segments_ = delay.segments_
        if delay.model_ is None:
            self.model_ = None
            return self
        vmf_rx, vmf_tx = uniform_mixture(), uniform_mixture()
        self.angular_reports_ = {}
        if self.fit_angular and X.rx_array is not None and X.tx_array is not None:
            for side in ("rx", "tx"):
                est = VmfAngularEstimator(side, self.q_max, max_iter=self.max_iter, tol=self.tol).fit(X)
                self.angular_reports_[side] = est.report_
            vmf_rx = self.angular_reports_["rx"].mixture
            vmf_tx = self.angular_reports_["tx"].mixture
        fitted = delay.model_
        self.model_ = DmcModel(fitted.processes, fitted.noise_floor, vmf_rx, vmf_tx)
        return self

    def predict(self, X, seed=0):
        """One DMC realization of the fitted model on ``X``'s geometry."""
        check_is_fitted(self, "model_")
        X = check_tensor(X, require_arrays=True)
        if self.model_ is None:
            return X.like(np.zeros_like(X.data))
        return synth_dmc(self.model_, X.tx_array, X.rx_array, X.grid, seed)

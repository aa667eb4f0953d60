"""Link-level statistics: delay PSDs, MPC extraction, path loss, spreads, K-factor and polarization ratios."""
import csv
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy import stats as sps
from scipy.constants import speed_of_light

from .channel import ChannelTensor
from .errors import InvalidArgumentError
from .synthesis import to_delay_domain

# free-space loss at 1 m and 1 GHz, 20 log10(4 pi 1e9 / c); commonly rounded to 32.4
FSPL_1M_1GHZ = 20.0 * np.log10(4.0 * np.pi * 1e9 / speed_of_light)
SENTINEL_DB = 40.0


def _db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


# ---------------------------------------------------------------- delay PSD and MPCs


def delay_psd(H, links=None):
    """Delay PSD averaged over links, in the Parseval convention.

    ``H`` is a ChannelTensor, an ``(..., M_f)`` array, or one link's
    frequency response. ``links`` optionally selects ``(rx, tx)`` port pairs
    or is a boolean ``(M_R, M_T)`` mask. The bins sum to the mean over
    frequency (and links) of ``|H|^2``.
    """
    data = H.data if isinstance(H, ChannelTensor) else np.asarray(H, dtype=complex)
    if data.size == 0:
        return np.zeros(0)
    if links is not None:
        sel = np.asarray(links)
        if sel.dtype == bool:
            data = data[sel]
        else:
            data = data[sel[:, 0], sel[:, 1]]
    h = to_delay_domain(data.reshape(-1, data.shape[-1]))
    return np.mean(np.abs(h) ** 2, axis=0)


def polarization_psds(H):
    """Delay PSDs per polarization pair, keyed ``rx + tx`` (``'vh'`` is Rx-V from Tx-H)."""
    if H.rx_array is None or H.tx_array is None:
        raise InvalidArgumentError("polarization PSDs need both array descriptions")
    rx_pol = np.array([p.upper() for p in H.rx_array.polarizations])
    tx_pol = np.array([p.upper() for p in H.tx_array.polarizations])
    out = {}
    for r in "VH":
        for t in "VH":
            mask = (rx_pol == r)[:, None] & (tx_pol == t)[None, :]
            if mask.any():
                out[(r + t).lower()] = delay_psd(H, mask)
    return out


def estimate_noise_floor(psd, tail=0.1, margin_db=3.0):
    """Noise floor in dB: median of the last ``tail`` share of bins plus ``margin_db``."""
    psd = np.asarray(psd, dtype=float)
    if psd.size == 0:
        raise InvalidArgumentError("empty PSD")
    n = max(1, int(round(tail * psd.size)))
    return float(_db(np.median(psd[-n:]))) + margin_db


@dataclass(frozen=True)
class Mpc:
    delay: float  # seconds
    power: float  # linear

    def __post_init__(self):
        if not self.power > 0:
            raise InvalidArgumentError(f"MPC power must be positive, got {self.power}")


def mpc_threshold(psd, noise_floor_db, above_noise_db=10.0, below_peak_db=20.0):
    """Active threshold in dB: the larger of ``floor + above_noise_db`` and ``peak - below_peak_db``."""
    peak = float(_db(np.max(psd)))
    return max(noise_floor_db + above_noise_db, peak - below_peak_db)


def extract_mpcs(psd, noise_floor_db, delay_resolution=1.0, above_noise_db=10.0, below_peak_db=20.0):
    """Local maxima of the PSD at or above the active threshold.

    A bin is a local maximum when it is not below either neighbour. Delays
    are ``bin * delay_resolution``.
    """
    psd = np.asarray(psd, dtype=float)
    if psd.size == 0:
        return []
    thr = mpc_threshold(psd, noise_floor_db, above_noise_db, below_peak_db)
    left = np.concatenate([[-np.inf], psd[:-1]])
    right = np.concatenate([psd[1:], [-np.inf]])
    keep = (psd >= left) & (psd >= right) & (_db(psd) >= thr) & (psd > 0)
    return [Mpc(float(n * delay_resolution), float(psd[n])) for n in np.nonzero(keep)[0]]


def received_power(mpcs):
    return float(sum(m.power for m in mpcs))


def _check_mpcs(mpcs):
    if len(mpcs) == 0:
        raise InvalidArgumentError("need at least one MPC")
    return np.array([m.delay for m in mpcs]), np.array([m.power for m in mpcs])


def excess_delay(mpcs):
    tau, _ = _check_mpcs(mpcs)
    return float(tau.max() - tau.min())


def delay_spread(mpcs):
    """Power-weighted RMS delay spread."""
    tau, p = _check_mpcs(mpcs)
    w = p / p.sum()
    mean = np.sum(w * tau)
    return float(np.sqrt(max(np.sum(w * (tau - mean) ** 2), 0.0)))


# ---------------------------------------------------------------- path loss


@dataclass
class PathLossFit:
    model: str
    n: float
    beta: float  # dB
    sigma: float  # dB
    f_c: float  # GHz
    n_points: int = 0

    def predict(self, distance):
        return self.beta + 10.0 * self.n * np.log10(np.asarray(distance, dtype=float))


def ci_intercept(f_c_ghz, constant=FSPL_1M_1GHZ):
    return constant + 20.0 * np.log10(f_c_ghz)


def fit_pathloss(distances, pl_db, model="CI", f_c=5.5, min_distance=None, ci_constant=FSPL_1M_1GHZ):
    """Close-in (fixed intercept) or floating-intercept log-distance fit.

    ``f_c`` is in GHz. ``sigma`` is the RMS residual, the shadow-fading
    standard deviation. Points closer than ``min_distance`` are dropped.
    """
    d = np.asarray(distances, dtype=float)
    pl = np.asarray(pl_db, dtype=float)
    if d.shape != pl.shape:
        raise InvalidArgumentError("distances and path losses differ in length")
    if np.any(d <= 0):
        raise InvalidArgumentError("distances must be positive")
    if min_distance is not None:
        keep = d >= min_distance
        d, pl = d[keep], pl[keep]
    if d.size == 0:
        raise InvalidArgumentError("no points left to fit")
    x = 10.0 * np.log10(d)
    model = model.upper()
    if model == "CI":
        beta = ci_intercept(f_c, ci_constant)
        denom = np.sum(x * x)
        if denom == 0:
            raise InvalidArgumentError("CI fit is undefined when every distance is 1 m")
        n = float(np.sum(x * (pl - beta)) / denom)
    elif model == "FI":
        if np.unique(d).size < 2:
            raise InvalidArgumentError("FI fit needs at least two distinct distances")
        A = np.column_stack([x, np.ones_like(x)])
        (n, beta), *_ = np.linalg.lstsq(A, pl, rcond=None)
        n, beta = float(n), float(beta)
    else:
        raise InvalidArgumentError(f"unknown path-loss model {model!r}")
    resid = pl - (beta + n * x)
    return PathLossFit(model, n, float(beta), float(np.sqrt(np.mean(resid**2))), float(f_c), int(d.size))


# ---------------------------------------------------------------- K-factor and SSF


@dataclass(frozen=True)
class KFactorEstimate:
    db: float
    linear: float
    clamped: bool = False


def kfactor_moment(response):
    """Moment K-factor from the spread of ``|H(f)|^2`` across frequency.

    ``gamma = Var[x] / E[x]^2`` and ``K = sqrt(1 - gamma) / (1 - sqrt(1 - gamma))``.
    Results beyond +-40 dB (including the limits ``gamma = 0`` and
    ``gamma >= 1``) are clamped and flagged.
    """
    h = np.asarray(response).ravel()
    if h.size < 8:
        raise InvalidArgumentError("K-factor estimation needs at least 8 samples")
    x = np.abs(h) ** 2
    mean = x.mean()
    if mean == 0:
        raise InvalidArgumentError("all-zero response")
    gamma = x.var() / mean**2
    if gamma >= 1.0:
        return KFactorEstimate(-SENTINEL_DB, 0.0, True)
    root = np.sqrt(1.0 - gamma)
    if 1.0 - root <= 0.0:
        return KFactorEstimate(SENTINEL_DB, np.inf, True)
    k = root / (1.0 - root)
    k_db = 10.0 * np.log10(k)
    if abs(k_db) > SENTINEL_DB:
        return KFactorEstimate(float(np.sign(k_db) * SENTINEL_DB), float(k), True)
    return KFactorEstimate(float(k_db), float(k), False)


@dataclass
class SsfFit:
    distribution: str  # 'rayleigh' or 'rician'
    k_db: float
    rayleigh_scale: float
    rice_nu: float
    rice_sigma: float
    ks_rayleigh: float
    ks_rician: float


def fit_ssf_amplitude(samples):
    """Fit Rayleigh and Rician laws by ML and keep the one with the smaller KS statistic.

    Ties go to Rayleigh. ``k_db`` is the Rician ``nu^2 / (2 sigma^2)`` in dB.
    """
    r = np.abs(np.asarray(samples, dtype=float).ravel())
    if r.size < 50:
        raise InvalidArgumentError("SSF fitting needs at least 50 samples")
    if np.ptp(r) == 0:
        raise InvalidArgumentError("amplitude samples have zero variance")
    scale = float(np.sqrt(np.mean(r**2) / 2.0))
    ks_ray = sps.kstest(r, sps.rayleigh(scale=scale).cdf).statistic
    # moment K as a starting point for the Rician ML fit
    k0 = kfactor_moment(r).linear
    k0 = 1.0 if not np.isfinite(k0) or k0 <= 0 else k0
    sigma0 = np.sqrt(np.mean(r**2) / (2.0 * (k0 + 1.0)))
    b, _, sig = sps.rice.fit(r, np.sqrt(2.0 * k0), floc=0, scale=sigma0)
    nu = float(b * sig)
    ks_rice = sps.kstest(r, sps.rice(b, scale=sig).cdf).statistic
    k_db = float(_db(nu**2 / (2.0 * sig**2))) if nu > 0 else -np.inf
    dist = "rician" if ks_rice < ks_ray else "rayleigh"
    return SsfFit(dist, k_db, scale, nu, float(sig), float(ks_ray), float(ks_rice))


# ---------------------------------------------------------------- angular spread


def wrap_degrees(a):
    """Wrap to (-180, 180]."""
    a = np.asarray(a, dtype=float)
    return 180.0 - (180.0 - a) % 360.0


def angular_spread(angles, powers):
    """Power-weighted RMS spread of angles after centring on their circular mean."""
    ang = np.asarray(angles, dtype=float)
    p = np.asarray(powers, dtype=float)
    if ang.size == 0 or ang.shape != p.shape:
        raise InvalidArgumentError("angles and powers must be non-empty and equal in length")
    w = p / p.sum()
    mu = np.rad2deg(np.angle(np.sum(w * np.exp(1j * np.deg2rad(ang)))))
    centred = wrap_degrees(ang - mu)
    mean = np.sum(w * centred)
    return float(np.sqrt(max(np.sum(w * (centred - mean) ** 2), 0.0)))


# ---------------------------------------------------------------- polarization


def _ratio_db(num, den):
    if den == 0:
        return np.inf
    if num == 0:
        return -np.inf
    return float(10.0 * np.log10(num / den))


def xpr_cpr_from_psd(psd_hh, psd_hv, psd_vh, psd_vv):
    """``(XPR_H, XPR_V, CPR)`` in dB from summed polarization PSDs.

    ``psd_hv`` is the cross-polar PSD for a transmitted H wave (received on
    V) and ``psd_vh`` the one for a transmitted V wave, so that the ratios
    agree with ``xpr_cpr_per_path``.
    """
    arrs = [np.asarray(p, dtype=float) for p in (psd_hh, psd_hv, psd_vh, psd_vv)]
    if len({a.shape for a in arrs}) != 1:
        raise InvalidArgumentError("polarization PSDs differ in length")
    hh, hv, vh, vv = (float(a.sum()) for a in arrs)
    return _ratio_db(hh, hv), _ratio_db(vv, vh), _ratio_db(hh, vv)


def xpr_cpr_from_tensor(H):
    p = polarization_psds(H)
    return xpr_cpr_from_psd(p["hh"], p["vh"], p["hv"], p["vv"])


def xpr_cpr_per_path(path):
    """Per-path ``(XPR_H, XPR_V, CPR)`` in dB from the 2x2 amplitude (rows Rx, columns Tx)."""
    a = np.abs(np.asarray(path.amp if hasattr(path, "amp") else path)) ** 2
    vv, vh, hv, hh = a[0, 0], a[0, 1], a[1, 0], a[1, 1]
    return _ratio_db(hh, vh), _ratio_db(vv, hv), _ratio_db(hh, vv)


# ---------------------------------------------------------------- distributions and records


def fit_lsp_distribution(values, transform="identity"):
    """Sample mean and standard deviation, after ``log10`` if requested."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise InvalidArgumentError("need at least two values")
    if transform == "log10":
        if np.any(v <= 0):
            raise InvalidArgumentError("log10 transform needs positive values")
        v = np.log10(v)
    elif transform != "identity":
        raise InvalidArgumentError(f"unknown transform {transform!r}")
    return float(v.mean()), float(v.std(ddof=1))


def ecdf(values):
    """Sorted values and their empirical CDF levels."""
    x = np.sort(np.asarray(values, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size


@dataclass
class StatRecord:
    position: str
    distance_3d: float
    pl: float
    ds: float
    ed: float
    kf: float
    asd: float
    asa: float
    esd: float
    esa: float
    xpr_h: float
    xpr_v: float
    cpr: float
    los: bool

    def __post_init__(self):
        if self.ds < 0 or self.ed < 0:
            raise InvalidArgumentError("delay spread and excess delay must be >= 0")

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def to_row(self):
        return [v if isinstance(v, str) else (int(v) if isinstance(v, (bool, np.bool_)) else repr(float(v)))
                for v in astuple(self)]

    @classmethod
    def from_row(cls, row):
        vals = []
        for f, v in zip(fields(cls), row):
            if f.type in ("str", str):
                vals.append(v)
            elif f.type in ("bool", bool):
                vals.append(bool(int(v)))
            else:
                vals.append(float(v))
        return cls(*vals)


def write_stat_records(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(StatRecord.columns())
        for r in records:
            w.writerow(r.to_row())


def read_stat_records(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != StatRecord.columns():
        raise InvalidArgumentError(f"{path}: unexpected stat record header")
    return [StatRecord.from_row(r) for r in rows[1:]]

"""Specular path extraction by successive interference cancellation.

Each path is initialized by a coarse Bartlett-type search over delay and
the two link-end directions on the current residual, its 2x2 polarimetric
amplitude is solved by linear least squares, and its delay and angles are
refined one coordinate at a time until the explained power stops
improving. After detection, a few SAGE sweeps re-estimate every path
against the residual with all other paths removed.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator

from ._validation import check_is_fitted, check_tensor
from .arrays import steering
from .channel import ChannelTensor, SmcPath, check_compatible
from .errors import InvalidArgumentError
from .synthesis import synth_smc

log = logging.getLogger(__name__)


@dataclass
class SageConfig:
    max_paths: int = 50
    stop_db: float = -20.0
    delay_step: float = 1.0  # coarse delay grid, in delay bins
    angle_step: float = 2.0  # coarse angle grid, degrees
    angle_tol: float = 0.01  # refinement resolution, degrees
    refine_iterations: int = 10
    epsilon: float = 1e-6  # relative change of explained power
    sweeps: int = 2

    def __post_init__(self):
        if self.stop_db > 0:
            raise InvalidArgumentError("stop_db must be <= 0 dB")
        if self.max_paths < 1:
            raise InvalidArgumentError("max_paths must be >= 1")
        if self.delay_step <= 0 or self.angle_step <= 0:
            raise InvalidArgumentError("coarse grid steps must be positive")


def wrap_azimuth(az):
    return (np.asarray(az) + 180.0) % 360.0 - 180.0


def _fold_angles(el, az):
    """Map any (elevation, azimuth) pair onto el in [-90, 90], az in [-180, 180)."""
    el = (el + 180.0) % 360.0 - 180.0
    if el > 90.0:
        el, az = 180.0 - el, az + 180.0
    elif el < -90.0:
        el, az = -180.0 - el, az + 180.0
    return float(el), float(wrap_azimuth(az))


class _AngleGrid:
    """Array responses on the coarse (elevation, azimuth) search grid."""

    def __init__(self, array, step, frequency):
        el = np.arange(-90.0, 90.0 + 1e-9, step)
        az = np.arange(-180.0, 180.0 - 1e-9, step)
        el_g, az_g = np.meshgrid(el, az, indexing="ij")
        self.elevation = el_g.ravel()
        self.azimuth = az_g.ravel()
        self.response = steering(array, np.deg2rad(self.elevation), np.deg2rad(self.azimuth), frequency)

    def best(self, scores):
        i = int(np.argmax(scores))
        return self.elevation[i], self.azimuth[i]


class _PathModel:
    """Single-path likelihood machinery for one tensor geometry."""

    def __init__(self, tensor, config):
        self.tx = tensor.tx_array
        self.rx = tensor.rx_array
        self.grid = tensor.grid
        self.freqs = tensor.grid.frequencies
        self.f_c = tensor.grid.f_c
        self.config = config
        self._rx_grid = None
        self._tx_grid = None

    @property
    def rx_grid(self):
        if self._rx_grid is None:
            self._rx_grid = _AngleGrid(self.rx, self.config.angle_step, self.f_c)
        return self._rx_grid

    @property
    def tx_grid(self):
        if self._tx_grid is None:
            self._tx_grid = _AngleGrid(self.tx, self.config.angle_step, self.f_c)
        return self._tx_grid

    def response(self, array, el, az):
        return steering(array, np.deg2rad(el), np.deg2rad(az), self.f_c)[0]

    def matched(self, X, tau):
        """``sum_m X[..., m] exp(-j 2 pi f_m tau)``."""
        return X @ np.exp(-2j * np.pi * self.freqs * tau)

    def solve(self, y, f_r, f_t):
        """Least-squares amplitudes and the power they explain."""
        c = f_r.conj().T @ y @ f_t.conj()
        gram = len(self.freqs) * np.kron(f_r.conj().T @ f_r, f_t.conj().T @ f_t)
        vec = c.ravel()
        try:
            amp = np.linalg.solve(gram, vec)
        except np.linalg.LinAlgError:
            amp = np.linalg.lstsq(gram, vec, rcond=1e-10)[0]
        if not np.all(np.isfinite(amp)):
            amp = np.linalg.lstsq(gram, vec, rcond=1e-10)[0]
        return amp.reshape(2, 2), float(np.vdot(vec, amp).real)

    def explained(self, X, params):
        tau, eoa, aoa, eod, aod = params
        y = self.matched(X, tau)
        return self.solve(y, self.response(self.rx, *_fold_angles(eoa, aoa)),
                          self.response(self.tx, *_fold_angles(eod, aod)))

    def signature(self, path):
        f_r = self.response(self.rx, path.eoa, path.aoa)
        f_t = self.response(self.tx, path.eod, path.aod)
        spatial = f_r @ path.amp @ f_t.T
        return spatial[:, :, None] * np.exp(2j * np.pi * self.freqs * path.delay)[None, None, :]

    def coarse(self, X):
        """Initial (delay, eoa, aoa, eod, aod) from Bartlett-type scans."""
        n_f = X.shape[-1]
        step = self.config.delay_step
        taus = np.arange(0.0, n_f, step) * self.grid.delay_resolution
        # delay profile summed over all links; argmax keeps the smallest delay on ties
        profile = np.zeros(len(taus))
        for k in range(0, len(taus), 64):
            block = np.exp(-2j * np.pi * np.outer(self.freqs, taus[k:k + 64]))
            profile[k:k + 64] = np.sum(np.abs(X.reshape(-1, n_f) @ block) ** 2, axis=0)
        tau = taus[int(np.argmax(profile))]
        y = self.matched(X, tau)

        rg, tg = self.rx_grid, self.tx_grid
        n_r, n_t = y.shape
        rx_flat = rg.response.transpose(0, 2, 1).reshape(-1, n_r).conj()
        scores = np.sum(np.abs(rx_flat @ y) ** 2, axis=1).reshape(-1, 2).sum(axis=1)
        eoa, aoa = rg.best(scores)
        tx_flat = tg.response.transpose(1, 0, 2).reshape(n_t, -1).conj()
        for _ in range(2):
            z = self.response(self.rx, eoa, aoa).conj().T @ y
            scores = np.sum(np.abs(z @ tx_flat) ** 2, axis=0).reshape(-1, 2).sum(axis=1)
            eod, aod = tg.best(scores)
            w = y @ self.response(self.tx, eod, aod).conj()
            scores = np.sum(np.abs(rx_flat @ w) ** 2, axis=1).reshape(-1, 2).sum(axis=1)
            eoa, aoa = rg.best(scores)
        return np.array([tau, eoa, aoa, eod, aod])

    def refine(self, X, params):
        """Cyclic coordinate ascent of the explained power."""
        cfg = self.config
        params = np.array(params, dtype=float)
        dtau = self.grid.delay_resolution
        spans = [cfg.delay_step * dtau] + [cfg.angle_step] * 4
        tols = [dtau * 1e-4] + [cfg.angle_tol] * 4
        _, best = self.explained(X, params)
        for _ in range(cfg.refine_iterations):
            start = best
            for k in range(5):
                lo, hi = params[k] - spans[k], params[k] + spans[k]
                if k == 0:
                    lo = max(lo, 0.0)
                    hi = min(hi, self.grid.max_delay - dtau * 1e-3)

                def negative(v, k=k):
                    trial = params.copy()
                    trial[k] = v
                    return -self.explained(X, trial)[1]

                res = minimize_scalar(negative, bounds=(lo, hi), method="bounded",
                                      options={"xatol": tols[k]})
                if -res.fun > best:
                    params[k], best = res.x, -res.fun
            if best - start <= cfg.epsilon * max(best, 1e-300):
                break
        return params, best

    def to_path(self, X, params):
        amp, _ = self.explained(X, params)
        eoa, aoa = _fold_angles(params[1], params[2])
        eod, aod = _fold_angles(params[3], params[4])
        return SmcPath(eoa, aoa, eod, aod, float(params[0]), amp)


def _params_of(path):
    return np.array([path.delay, path.eoa, path.aoa, path.eod, path.aod])


def estimate_smc(H, config=None):
    """Extract specular paths from a channel tensor, strongest first.

    Detection stops after ``max_paths`` paths or when a candidate's power
    ``||alpha||_F^2`` falls more than ``|stop_db|`` below the first path.
    """
    H = check_tensor(H, require_arrays=True)
    cfg = SageConfig() if config is None else config
    if H.power == 0.0:
        return []
    model = _PathModel(H, cfg)
    residual = H.data.copy()
    params, signatures = [], []
    first_power = None
    threshold = 10.0 ** (cfg.stop_db / 10.0)
    for _ in range(cfg.max_paths):
        if np.vdot(residual, residual).real <= 0.0:
            break
        p, _ = model.refine(residual, model.coarse(residual))
        path = model.to_path(residual, p)
        if first_power is None:
            first_power = path.power
        elif path.power < first_power * threshold:
            break
        sig = model.signature(path)
        residual -= sig
        params.append(p)
        signatures.append(sig)
        log.debug("path %d: delay %.3f ns, power %.2f dB", len(params), p[0] * 1e9, path.power_db)

    for _ in range(cfg.sweeps):
        for l in range(len(params)):
            X = residual + signatures[l]
            p, _ = model.refine(X, params[l])
            path = model.to_path(X, p)
            params[l] = p
            signatures[l] = model.signature(path)
            residual = X - signatures[l]

    paths = [model.to_path(residual + s, p) for p, s in zip(params, signatures)]
    paths.sort(key=lambda q: q.power, reverse=True)
    if paths:
        floor = paths[0].power * threshold
        paths = [q for q in paths if q.power >= floor]
    return paths


def smc_residual(H, paths):
    """``H`` minus the reconstruction of ``paths``."""
    H = check_tensor(H)
    if not paths:
        return H.like(H.data.copy())
    recon = synth_smc(paths, H.tx_array, H.rx_array, H.grid)
    check_compatible(H, recon)
    return H.like(H.data - recon.data)


class MeasuredCovariance:
    """Sample covariance of one residual tensor and its marginals.

    The full covariance uses the vectorization with frequency outermost,
    then Rx port, then Tx port, matching ``R_F kron R_A^R kron R_A^T``.
    """

    def __init__(self, H):
        data = H.data if isinstance(H, ChannelTensor) else np.asarray(H)
        n_r, n_t, n_f = data.shape
        self.shape = data.shape
        self.vec = data.transpose(2, 0, 1).ravel()
        links = data.reshape(-1, n_f)
        self.frequency = links.T @ links.conj() / (n_r * n_t)
        rows = data.reshape(n_r, -1)
        self.rx = rows @ rows.conj().T / (n_t * n_f)
        cols = data.transpose(1, 0, 2).reshape(n_t, -1)
        self.tx = cols @ cols.conj().T / (n_r * n_f)
        self.snapshots = {"frequency": n_r * n_t, "rx": n_t * n_f, "tx": n_r * n_f}

    def full(self, max_size=4096):
        if self.vec.size > max_size:
            raise InvalidArgumentError(
                f"full covariance would be {self.vec.size}x{self.vec.size}; use the marginals"
            )
        return np.outer(self.vec, self.vec.conj())

    def spatial(self, side):
        return {"rx": self.rx, "tx": self.tx}[side.lower()]


def measured_dmc_covariance(H_D):
    return MeasuredCovariance(H_D)


class SageEstimator(BaseEstimator):
    """Estimator wrapper around ``estimate_smc``.

    ``fit`` extracts ``paths_``; ``transform`` returns the residual after
    cancelling them; ``predict`` returns their reconstruction.
    """

    def __init__(self, max_paths=50, stop_db=-20.0, delay_step=1.0, angle_step=2.0,
                 angle_tol=0.01, refine_iterations=10, epsilon=1e-6, sweeps=2):
        self.max_paths = max_paths
        self.stop_db = stop_db
        self.delay_step = delay_step
        self.angle_step = angle_step
        self.angle_tol = angle_tol
        self.refine_iterations = refine_iterations
        self.epsilon = epsilon
        self.sweeps = sweeps

    @property
    def config(self):
        return SageConfig(**self.get_params())

    def fit(self, X, y=None):
        X = check_tensor(X, require_arrays=True)
        self.paths_ = estimate_smc(X, self.config)
        self.n_paths_ = len(self.paths_)
        residual = smc_residual(X, self.paths_)
        self.loglik_ = -residual.power
        return self

    def transform(self, X):
        check_is_fitted(self, "paths_")
        return smc_residual(check_tensor(X), self.paths_)

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    def predict(self, X):
        check_is_fitted(self, "paths_")
        X = check_tensor(X, require_arrays=True)
        return synth_smc(self.paths_, X.tx_array, X.rx_array, X.grid)

    def score(self, X, y=None):
        """Negative squared residual norm, the SMC log-likelihood up to constants."""
        return -self.transform(X).power


__all__ = [
    "MeasuredCovariance", "SageConfig", "SageEstimator", "estimate_smc",
    "measured_dmc_covariance", "smc_residual",
]

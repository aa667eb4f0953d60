"""Input validation helpers used by the estimators and public functions."""
import numpy as np

from .errors import InvalidArgumentError, NotFittedError


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise InvalidArgumentError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_int(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise InvalidArgumentError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def check_finite(array, name):
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return array


def check_angles(elevation, azimuth):
    """Validate elevation in [-90, 90] and azimuth in [-180, 180) degrees."""
    el = np.asarray(elevation, dtype=float)
    az = np.asarray(azimuth, dtype=float)
    if np.any(~np.isfinite(el)) or np.any(~np.isfinite(az)):
        raise InvalidArgumentError("angles must be finite")
    if np.any(el < -90.0) or np.any(el > 90.0):
        raise InvalidArgumentError(f"elevation outside [-90, 90]: {el}")
    if np.any(az < -180.0) or np.any(az >= 180.0):
        raise InvalidArgumentError(f"azimuth outside [-180, 180): {az}")
    return el, az


def check_hermitian(matrix, name, atol=1e-9):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square matrix, got shape {matrix.shape}")
    scale = max(np.abs(matrix).max(), 1.0)
    if np.abs(matrix - matrix.conj().T).max() > atol * scale:
        raise InvalidArgumentError(f"{name} is not Hermitian")
    return 0.5 * (matrix + matrix.conj().T)


def check_tensor(X, require_arrays=False):
    """Return ``X`` as a ChannelTensor, validating finiteness and geometry."""
    from .channel import ChannelTensor

    if not isinstance(X, ChannelTensor):
        raise InvalidArgumentError(f"expected a ChannelTensor, got {type(X).__name__}")
    check_finite(X.data, "channel tensor")
    if require_arrays and (X.tx_array is None or X.rx_array is None):
        raise InvalidArgumentError("channel tensor has no array geometry attached")
    return X


def check_is_fitted(estimator, attributes):
    if isinstance(attributes, str):
        attributes = [attributes]
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() before using it"
        )

"""Core data types: frequency grid, channel tensor, SMC paths and DMC models."""
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_finite, check_int, check_positive
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class FrequencyGrid:
    """``n_freq`` evenly spaced points of spacing ``bandwidth / n_freq`` centred on ``f_c``."""

    f_c: float = 5.5e9
    bandwidth: float = 320e6
    n_freq: int = 256

    def __post_init__(self):
        check_positive(self.f_c, "f_c")
        check_positive(self.bandwidth, "bandwidth")
        check_int(self.n_freq, "n_freq")

    @property
    def spacing(self):
        return self.bandwidth / self.n_freq

    @property
    def delay_resolution(self):
        return 1.0 / self.bandwidth

    @property
    def max_delay(self):
        """Unambiguous delay span ``n_freq * delay_resolution``."""
        return self.n_freq * self.delay_resolution

    @property
    def frequencies(self):
        m = np.arange(self.n_freq)
        return self.f_c + (m - (self.n_freq - 1) / 2.0) * self.spacing

    @property
    def delays(self):
        return np.arange(self.n_freq) * self.delay_resolution

    def to_dict(self):
        return {"f_c": self.f_c, "bandwidth": self.bandwidth, "n_freq": self.n_freq}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["f_c"]), float(d["bandwidth"]), int(d["n_freq"]))


@dataclass(eq=False)
class ChannelTensor:
    """Complex channel response indexed ``[rx_port, tx_port, frequency]``."""

    data: np.ndarray
    grid: FrequencyGrid
    tx_array: object = None
    rx_array: object = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3:
            raise InvalidArgumentError(f"channel data must be 3-D, got shape {self.data.shape}")
        n_rx, n_tx, n_f = self.data.shape
        if n_f != self.grid.n_freq:
            raise InvalidArgumentError(
                f"tensor has {n_f} frequency points but the grid has {self.grid.n_freq}"
            )
        if self.rx_array is not None and self.rx_array.port_count != n_rx:
            raise InvalidArgumentError(
                f"tensor has {n_rx} Rx ports but the Rx array has {self.rx_array.port_count}"
            )
        if self.tx_array is not None and self.tx_array.port_count != n_tx:
            raise InvalidArgumentError(
                f"tensor has {n_tx} Tx ports but the Tx array has {self.tx_array.port_count}"
            )

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_rx(self):
        return self.data.shape[0]

    @property
    def n_tx(self):
        return self.data.shape[1]

    @property
    def power(self):
        """Squared Frobenius norm of the whole tensor."""
        return float(np.vdot(self.data, self.data).real)

    def like(self, data, **metadata):
        """New tensor with the same grid and geometry but different data."""
        meta = dict(self.metadata)
        meta.update(metadata)
        return ChannelTensor(data, self.grid, self.tx_array, self.rx_array, meta)

    def __add__(self, other):
        check_compatible(self, other)
        return self.like(self.data + other.data)

    def __sub__(self, other):
        check_compatible(self, other)
        return self.like(self.data - other.data)


def check_compatible(a, b):
    if a.data.shape != b.data.shape:
        raise InvalidArgumentError(f"tensor shapes differ: {a.data.shape} vs {b.data.shape}")
    if a.grid != b.grid:
        raise InvalidArgumentError("tensors use different frequency grids")


@dataclass
class SmcPath:
    """One specular path.

    Angles are in degrees, ``delay`` in seconds. ``amp`` is the 2x2
    polarimetric amplitude ``[[VV, VH], [HV, HH]]``, rows indexing the Rx
    polarization and columns the Tx polarization.
    """

    eoa: float
    aoa: float
    eod: float
    aod: float
    delay: float
    amp: np.ndarray

    def __post_init__(self):
        self.amp = check_finite(np.asarray(self.amp, dtype=complex).reshape(2, 2), "path amplitude")
        if not np.isfinite(self.delay) or self.delay < 0:
            raise InvalidArgumentError(f"path delay must be finite and >= 0, got {self.delay}")

    @property
    def power(self):
        return float(np.sum(np.abs(self.amp) ** 2))

    @property
    def power_db(self):
        return 10.0 * np.log10(self.power) if self.power > 0 else -np.inf

    def scaled(self, factor):
        return SmcPath(self.eoa, self.aoa, self.eod, self.aod, self.delay, self.amp * factor)

    def to_dict(self):
        return {
            "eoa": self.eoa, "aoa": self.aoa, "eod": self.eod, "aod": self.aod,
            "delay": self.delay,
            "amp_re": self.amp.real.tolist(), "amp_im": self.amp.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        amp = np.asarray(d["amp_re"]) + 1j * np.asarray(d["amp_im"])
        return cls(d["eoa"], d["aoa"], d["eod"], d["aod"], d["delay"], amp)


@dataclass(frozen=True)
class DmcDelayProcess:
    """One exponentially decaying DMC process.

    ``alpha1`` is the peak delay-PSD level, ``decay`` the power decay rate
    in 1/s and ``base_delay`` the onset in seconds.
    """

    alpha1: float
    decay: float
    base_delay: float

    def __post_init__(self):
        # alpha1 == 0 is allowed so that pure-noise models stay expressible
        check_positive(self.alpha1, "alpha1", strict=False)
        check_positive(self.decay, "decay")
        check_positive(self.base_delay, "base_delay", strict=False)

    def normalized(self, grid):
        """``(beta, tau_norm)``: decay per delay bin and onset as a fraction of the span."""
        return self.decay * grid.delay_resolution, self.base_delay / grid.max_delay


@dataclass(frozen=True)
class VmfComponent:
    mean_elevation: float
    mean_azimuth: float
    concentration: float
    weight: float = 1.0

    def __post_init__(self):
        if self.concentration < 0:
            raise InvalidArgumentError("VMF concentration must be >= 0")
        if not 0.0 <= self.weight <= 1.0:
            raise InvalidArgumentError("VMF weight must lie in [0, 1]")

    @property
    def mean_direction(self):
        el, az = np.deg2rad(self.mean_elevation), np.deg2rad(self.mean_azimuth)
        return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def check_mixture(mixture):
    mixture = tuple(mixture)
    if not mixture:
        raise InvalidArgumentError("VMF mixture needs at least one component")
    total = sum(c.weight for c in mixture)
    if abs(total - 1.0) > 1e-9:
        raise InvalidArgumentError(f"VMF weights must sum to 1, got {total}")
    return mixture


def uniform_mixture():
    return (VmfComponent(0.0, 0.0, 0.0, 1.0),)


@dataclass(frozen=True)
class DmcModel:
    processes: tuple
    noise_floor: float
    vmf_rx: tuple = field(default_factory=uniform_mixture)
    vmf_tx: tuple = field(default_factory=uniform_mixture)

    def __post_init__(self):
        object.__setattr__(self, "processes", tuple(self.processes))
        if not self.processes:
            raise InvalidArgumentError("a DMC model needs at least one delay process")
        object.__setattr__(self, "vmf_rx", check_mixture(self.vmf_rx))
        object.__setattr__(self, "vmf_tx", check_mixture(self.vmf_tx))
        check_positive(self.noise_floor, "noise_floor", strict=False)

    @property
    def n_processes(self):
        return len(self.processes)

    def scaled(self, factor):
        """Model with every power (process peaks and noise floor) multiplied by ``factor``."""
        procs = tuple(DmcDelayProcess(p.alpha1 * factor, p.decay, p.base_delay) for p in self.processes)
        return DmcModel(procs, self.noise_floor * factor, self.vmf_rx, self.vmf_tx)

    def to_dict(self):
        def mix(m):
            return [
                {"mean_elevation": c.mean_elevation, "mean_azimuth": c.mean_azimuth,
                 "concentration": c.concentration, "weight": c.weight}
                for c in m
            ]

        return {
            "processes": [
                {"alpha1": p.alpha1, "decay": p.decay, "base_delay": p.base_delay}
                for p in self.processes
            ],
            "noise_floor": self.noise_floor,
            "vmf_rx": mix(self.vmf_rx),
            "vmf_tx": mix(self.vmf_tx),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(DmcDelayProcess(**p) for p in d["processes"]),
            d["noise_floor"],
            tuple(VmfComponent(**c) for c in d["vmf_rx"]),
            tuple(VmfComponent(**c) for c in d["vmf_tx"]),
        )

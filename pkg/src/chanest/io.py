"""Channel-tensor container, campaign configuration and small file helpers.

Container layout (all integers little-endian)::

    offset 0   5 bytes   magic b"CHTN1"
    offset 5   8 bytes   header length N (uint64)
    offset 13  N bytes   UTF-8 JSON header
    offset 13+N          payload: complex128 ('<c16'), shape [M_R, M_T, M_f],
                         C order (frequency fastest, then Tx, then Rx)

The header holds ``shape``, ``grid``, ``tx_array``, ``rx_array``, ``seed`` and
a free-form ``metadata`` map. Headers are written with sorted keys and
fixed separators so that ``write(read(x))`` reproduces ``x`` byte for byte.
"""
import copy
import csv
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .arrays import ArrayModel, ElementPattern, half_wavelength
from .channel import ChannelTensor, FrequencyGrid, SmcPath
from .errors import ConfigError, ContainerFormatError, InvalidArgumentError

MAGIC = b"CHTN1"
_PREFIX = len(MAGIC) + 8
_DTYPE = np.dtype("<c16")


def atomic_write_bytes(path, data):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


# ---------------------------------------------------------------- container


def encode_container(tensor, seed=None):
    header = {
        "shape": list(tensor.shape),
        "grid": tensor.grid.to_dict(),
        "tx_array": None if tensor.tx_array is None else tensor.tx_array.to_dict(),
        "rx_array": None if tensor.rx_array is None else tensor.rx_array.to_dict(),
        "seed": tensor.metadata.get("seed") if seed is None else seed,
        "metadata": {k: v for k, v in tensor.metadata.items() if k != "seed"},
    }
    blob = dump_json(header).encode("utf-8")
    payload = np.ascontiguousarray(tensor.data, dtype=_DTYPE).tobytes()
    return MAGIC + struct.pack("<Q", len(blob)) + blob + payload


def decode_container(raw, source="<bytes>"):
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise ContainerFormatError(f"{source}: bad magic, expected {MAGIC!r}", 0)
    if len(raw) < _PREFIX:
        raise ContainerFormatError(f"{source}: truncated header length field", len(MAGIC))
    (n,) = struct.unpack("<Q", raw[len(MAGIC):_PREFIX])
    if _PREFIX + n > len(raw):
        raise ContainerFormatError(
            f"{source}: header length {n} runs past end of file ({len(raw)} bytes)", len(MAGIC)
        )
    try:
        header = json.loads(raw[_PREFIX:_PREFIX + n].decode("utf-8"))
        shape = tuple(int(x) for x in header["shape"])
        grid = FrequencyGrid.from_dict(header["grid"])
        tx = None if header.get("tx_array") is None else ArrayModel.from_dict(header["tx_array"])
        rx = None if header.get("rx_array") is None else ArrayModel.from_dict(header["rx_array"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ContainerFormatError(f"{source}: unreadable header ({exc})", _PREFIX) from exc
    if len(shape) != 3:
        raise ContainerFormatError(f"{source}: header shape must have 3 entries", _PREFIX)
    start = _PREFIX + n
    expected = _DTYPE.itemsize * int(np.prod(shape))
    if len(raw) - start != expected:
        raise ContainerFormatError(
            f"{source}: payload is {len(raw) - start} bytes, header implies {expected}", start
        )
    data = np.frombuffer(raw, dtype=_DTYPE, offset=start).reshape(shape).astype(complex)
    meta = dict(header.get("metadata") or {})
    if header.get("seed") is not None:
        meta["seed"] = header["seed"]
    try:
        return ChannelTensor(data, grid, tx, rx, meta)
    except InvalidArgumentError as exc:
        raise ContainerFormatError(f"{source}: {exc}", _PREFIX) from exc


def write_container(path, tensor, seed=None):
    atomic_write_bytes(path, encode_container(tensor, seed))


def read_container(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_container(raw, str(path))


# ---------------------------------------------------------------- path CSV

PATH_COLUMNS = [
    "index", "eoa", "aoa", "eod", "aod", "delay_ns",
    "vv_re", "vv_im", "vh_re", "vh_im", "hv_re", "hv_im", "hh_re", "hh_im", "power_dB",
]


def write_paths_csv(path, paths):
    rows = []
    for i, p in enumerate(paths):
        a = p.amp.ravel()
        amps = [v for z in a for v in (z.real, z.imag)]
        rows.append([i, p.eoa, p.aoa, p.eod, p.aod, p.delay * 1e9, *amps, p.power_db])
    lines = [",".join(PATH_COLUMNS)]
    for r in rows:
        lines.append(",".join([str(r[0])] + [repr(float(v)) for v in r[1:]]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_paths_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != PATH_COLUMNS:
        raise ContainerFormatError(f"{path}: unexpected path CSV header", 0)
    paths = []
    for r in rows[1:]:
        v = [float(x) for x in r[1:]]
        amp = np.array(v[5:13:2]) + 1j * np.array(v[6:13:2])
        paths.append(SmcPath(v[0], v[1], v[2], v[3], v[4] * 1e-9, amp.reshape(2, 2)))
    return paths


# ---------------------------------------------------------------- configuration

OUTPUT_ENV = "CHANEST_OUTPUT_ROOT"

_DEFAULTS = {
    "grid": {"f_c": 5.5e9, "bandwidth": 320e6, "n_freq": 256},
    "tx_array": {"kind": "upa", "rows": 4, "cols": 4},
    "rx_array": {"kind": "uca", "rings": 4, "columns": 8},
    "tx_position": [0.0, 0.0, 2.0],
    "positions": [],
    "scenario": {
        "seed": 1,
        "n_paths": [4, 8],
        "min_separation_bins": 5,
        "path_decay_db_per_bin": 0.15,
        "xpr_db": [10.0, 20.0],
        "pathloss": {"los": {"n": 1.7, "sigma": 2.0}, "nlos": {"n": 2.8, "sigma": 4.0}},
        "dmc_fraction": {"los": 0.4, "nlos": 0.6},
        "dmc": {"n_processes": [1, 3], "decay_per_bin": [0.01, 0.06], "onset_gap_bins": [30, 80],
                "onset_jump": [0.2, 0.5], "kappa": [5.0, 30.0]},
        "snr_db": 25.0,
    },
    "estimator": {
        "sage": {"max_paths": 50, "stop_db": -20.0, "delay_step": 1.0, "angle_step": 2.0,
                 "angle_tol": 0.01, "refine_iterations": 10, "epsilon": 1e-6, "sweeps": 2},
        "dmc": {"k_max": 5, "window": 5, "onset_db": 6.0, "q_max": 3, "max_iter": 100,
                "tol": 1e-6, "fit_angular": True},
    },
    "characterize": {"min_distance": 5.1, "snr_db": [0.0, 5.0, 10.0, 20.0], "k_sv": 3,
                     "ci_constant": None},
    "output": {"dir": None},
}


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key '{where}{k}'")
        if isinstance(base[k], dict) and base[k] and not isinstance(v, dict):
            raise ConfigError(f"config key '{where}{k}' must be a mapping")
        if isinstance(base[k], dict) and base[k] and k not in ("tx_array", "rx_array"):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Position:
    id: str
    coordinates: tuple
    los: bool

    def distance_to(self, other):
        return float(np.linalg.norm(np.asarray(self.coordinates) - np.asarray(other)))


@dataclass
class CampaignConfig:
    grid: FrequencyGrid
    tx_array: dict
    rx_array: dict
    tx_position: tuple
    positions: list
    scenario: dict
    estimator: dict
    characterize: dict
    output_dir: str = None
    raw: dict = field(default_factory=dict, repr=False)

    def arrays(self):
        return _build_array(self.tx_array, self.grid), _build_array(self.rx_array, self.grid)

    def resolve_output(self, override=None):
        """``--out`` beats the config's ``output.dir``, which beats the environment variable."""
        for cand in (override, self.output_dir, os.environ.get(OUTPUT_ENV)):
            if cand:
                return Path(cand)
        return Path("chanest-out")

    def with_seed(self, seed):
        cfg = copy.copy(self)
        cfg.scenario = dict(self.scenario, seed=int(seed))
        return cfg


def _build_array(desc, grid):
    d = dict(desc)
    d.setdefault("spacing", half_wavelength(grid.f_c))
    # omitted pattern means the default directional element, not an isotropic one
    d.setdefault("pattern", ElementPattern().to_dict())
    try:
        return ArrayModel.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad array description {desc!r}: {exc}") from exc


def _check_range(value, name, lo=None):
    try:
        a, b = (float(x) for x in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{name}' must be a [min, max] pair") from exc
    if a > b or (lo is not None and a < lo):
        raise ConfigError(f"'{name}' range {value} is invalid")


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a mapping")
    merged = _merge(_DEFAULTS, d)
    try:
        grid = FrequencyGrid.from_dict(merged["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    positions = []
    seen = set()
    for i, p in enumerate(merged["positions"]):
        if not isinstance(p, dict) or "id" not in p or "coordinates" not in p:
            raise ConfigError(f"position {i} needs 'id' and 'coordinates'")
        pid = str(p["id"])
        if pid in seen:
            raise ConfigError(f"duplicate position id {pid!r}")
        seen.add(pid)
        coords = tuple(float(x) for x in p["coordinates"])
        if len(coords) != 3:
            raise ConfigError(f"position {pid!r} needs 3 coordinates")
        los = p.get("los")
        positions.append(Position(pid, coords, None if los is None else bool(los)))
    sc = merged["scenario"]
    if int(sc["seed"]) < 0:
        raise ConfigError("scenario.seed must be >= 0")
    _check_range(sc["n_paths"], "scenario.n_paths", 1)
    _check_range(sc["xpr_db"], "scenario.xpr_db")
    for k in ("n_processes", "decay_per_bin", "onset_gap_bins", "onset_jump", "kappa"):
        _check_range(sc["dmc"][k], f"scenario.dmc.{k}", 0)
    for tag in ("los", "nlos"):
        f = float(sc["dmc_fraction"][tag])
        if not 0.0 <= f < 1.0:
            raise ConfigError(f"scenario.dmc_fraction.{tag} must lie in [0, 1)")
    sage = merged["estimator"]["sage"]
    if float(sage["stop_db"]) > 0 or int(sage["max_paths"]) < 1:
        raise ConfigError("estimator.sage needs stop_db <= 0 and max_paths >= 1")
    cfg = CampaignConfig(
        grid, merged["tx_array"], merged["rx_array"], tuple(float(x) for x in merged["tx_position"]),
        positions, sc, merged["estimator"], merged["characterize"], merged["output"]["dir"], merged,
    )
    try:
        cfg.arrays()
    except InvalidArgumentError as exc:
        raise ConfigError(f"bad array description: {exc}") from exc
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(d or {})

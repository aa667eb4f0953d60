"""Synthetic measurement positions: geometric LOS path, random scatterers, DMC and noise.

Each position draws from its own Philox stream keyed by ``(seed, index)``,
so positions can be generated in any order or in parallel with identical
results.
"""
from dataclasses import dataclass

import numpy as np
from scipy.constants import speed_of_light

from .channel import DmcDelayProcess, DmcModel, SmcPath, VmfComponent
from .stats import ci_intercept
from .synthesis import frequency_covariance_row, synth_dmc, synth_smc, white_noise


def position_rng(seed, index):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


def position_seed(seed, index):
    """Integer seed handed to the DMC and noise generators of one position."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0] >> 1)


def los_angles(tx_xyz, rx_xyz):
    """``(eod, aod, eoa, aoa)`` in degrees for the straight line between the ends."""
    v = np.asarray(rx_xyz, dtype=float) - np.asarray(tx_xyz, dtype=float)
    d = np.linalg.norm(v)
    eod = np.rad2deg(np.arcsin(v[2] / d))
    aod = np.rad2deg(np.arctan2(v[1], v[0]))
    eoa = -eod
    aoa = np.rad2deg(np.arctan2(-v[1], -v[0]))
    return float(eod), float(aod), float(eoa), float(aoa)


def _wrap(az):
    return float((az + 180.0) % 360.0 - 180.0)


@dataclass
class PositionTruth:
    position: str
    distance: float
    los: bool
    pathloss_db: float
    paths: list
    dmc: DmcModel
    seed: int
    smc_power: float  # mean per-entry power of the SMC part
    dmc_power: float  # mean per-entry power of the DMC part, noise excluded

    def to_dict(self):
        return {
            "position": self.position, "distance": self.distance, "los": self.los,
            "pathloss_db": self.pathloss_db, "paths": [p.to_dict() for p in self.paths],
            "dmc": self.dmc.to_dict(), "seed": self.seed, "smc_power": self.smc_power,
            "dmc_power": self.dmc_power,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["position"], d["distance"], d["los"], d["pathloss_db"],
                   [SmcPath.from_dict(p) for p in d["paths"]], DmcModel.from_dict(d["dmc"]),
                   d["seed"], d["smc_power"], d["dmc_power"])


def _draw_paths(rng, sc, grid, los, angles, distance):
    eod0, aod0, eoa0, aoa0 = angles
    lo, hi = (int(x) for x in sc["n_paths"])
    n = int(rng.integers(lo, hi + 1))
    dt = grid.delay_resolution
    first_bin = int(np.round(distance / speed_of_light / dt))
    gap = int(sc["min_separation_bins"])
    bins = [first_bin]
    while len(bins) < n:
        bins.append(bins[-1] + gap + int(rng.integers(0, 3 * gap)))
    bins = [b for b in bins if b < grid.n_freq - 1]
    decay = float(sc["path_decay_db_per_bin"])
    x_lo, x_hi = (float(x) for x in sc["xpr_db"])
    paths = []
    for i, b in enumerate(bins):
        if i == 0:
            el_d, az_d, el_a, az_a = eod0, aod0, eoa0, aoa0
            p_db = 0.0 if los else -3.0
        else:
            el_d, el_a = rng.uniform(-30, 30, 2)
            az_d = _wrap(aod0 + rng.uniform(-60, 60))
            az_a = _wrap(aoa0 + rng.uniform(-150, 150))
            p_db = -decay * (b - first_bin) - rng.uniform(0, 6)
        xpr = rng.uniform(x_lo, x_hi)
        mags = np.sqrt(10.0 ** (np.array([[0.0, -xpr], [-xpr, 0.0]]) / 10.0))
        phases = np.exp(2j * np.pi * rng.uniform(size=(2, 2)))
        amp = np.sqrt(10.0 ** (p_db / 10.0) / np.sum(mags**2)) * mags * phases
        paths.append(SmcPath(float(el_a), float(az_a), float(el_d), float(az_d), b * dt, amp))
    return paths


def _draw_dmc(rng, sc, grid, first_bin, paths):
    dm = sc["dmc"]
    k_lo, k_hi = (int(x) for x in dm["n_processes"])
    k = int(rng.integers(k_lo, k_hi + 1))
    dt = grid.delay_resolution
    procs = []
    onset = first_bin
    level = 1.0
    for i in range(k):
        beta = rng.uniform(*dm["decay_per_bin"])
        if i > 0:
            onset = onset + int(rng.integers(*(int(x) for x in dm["onset_gap_bins"])))
            level = level * rng.uniform(*dm["onset_jump"])
        if onset >= grid.n_freq - 8:
            break
        procs.append(DmcDelayProcess(level, beta / dt, onset * dt))
    strongest = max(paths, key=lambda p: p.power)
    comps_rx = (VmfComponent(strongest.eoa, strongest.aoa, float(rng.uniform(*dm["kappa"])), 1.0),)
    comps_tx = (VmfComponent(strongest.eod, strongest.aod, float(rng.uniform(*dm["kappa"])), 1.0),)
    return procs, comps_rx, comps_tx


def synth_position(cfg, index, tx, rx, seed=None):
    """Channel tensor and ground truth for position ``index`` of a campaign."""
    pos = cfg.positions[index]
    seed = int(cfg.scenario["seed"] if seed is None else seed)
    sc = cfg.scenario
    grid = cfg.grid
    rng = position_rng(seed, index)
    los = bool(pos.los)
    distance = pos.distance_to(cfg.tx_position)
    pl_par = sc["pathloss"]["los" if los else "nlos"]
    pl = ci_intercept(grid.f_c / 1e9) + 10.0 * float(pl_par["n"]) * np.log10(distance) \
        + rng.normal(0.0, float(pl_par["sigma"]))

    angles = los_angles(cfg.tx_position, pos.coordinates)
    paths = _draw_paths(rng, sc, grid, los, angles, distance)
    first_bin = int(round(paths[0].delay / grid.delay_resolution))
    procs, vmf_rx, vmf_tx = _draw_dmc(rng, sc, grid, first_bin, paths)

    smc = synth_smc(paths, tx, rx, grid)
    smc_entry = smc.power / smc.data.size
    gain = 10.0 ** (-pl / 10.0) / smc_entry
    paths = [p.scaled(np.sqrt(gain)) for p in paths]
    smc = smc.like(smc.data * np.sqrt(gain))
    smc_entry *= gain

    frac = float(sc["dmc_fraction"]["los" if los else "nlos"])
    dmc_entry_target = smc_entry * frac / (1.0 - frac)
    unit = DmcModel(tuple(procs), 0.0, vmf_rx, vmf_tx)
    unit_entry = _dmc_entry_power(unit, grid)
    dmc_model = unit.scaled(dmc_entry_target / unit_entry) if unit_entry > 0 else unit
    noise = (smc_entry + dmc_entry_target) / 10.0 ** (float(sc["snr_db"]) / 10.0)
    dmc_model = DmcModel(dmc_model.processes, noise, vmf_rx, vmf_tx)

    pseed = position_seed(seed, index)
    # the noise floor is drawn separately as white noise, so the DMC draw excludes it
    dmc = synth_dmc(DmcModel(dmc_model.processes, 0.0, vmf_rx, vmf_tx), tx, rx, grid, pseed)
    data = smc.data + dmc.data + white_noise(smc.shape, noise, pseed + 1)
    meta = {
        "position": pos.id, "los": los, "distance": distance, "coordinates": list(pos.coordinates),
        "seed": pseed, "cholesky_fallback": dmc.metadata.get("cholesky_fallback", False),
    }
    truth = PositionTruth(pos.id, distance, los, float(pl), paths, dmc_model, pseed,
                          float(smc_entry), float(dmc_entry_target))
    return smc.like(data, **meta), truth


def _dmc_entry_power(model, grid):
    # diagonal of the frequency covariance, noise floor excluded
    return float(frequency_covariance_row(model.processes, grid)[0].real)

"""Campaign orchestration: synthesize, estimate, characterize.

Per-position work runs in a process pool (``jobs > 1``) or inline; results
are collected in position order so every output is independent of the
worker count. Each file is written atomically and the manifest of a stage
is written last.
"""
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .channel import DmcModel, SmcPath
from .dmc import DmcEstimator
from .errors import ConfigError
from .io import (
    atomic_write_text, dump_json, read_container, write_container, write_paths_csv,
)
from .mimo import bartlett_spectrum, capacity, dmc_power_fraction, normalize_channel, singular_values
from .scenario import synth_position
from .smc import SageConfig, estimate_smc, smc_residual
from .stats import (
    FSPL_1M_1GHZ, StatRecord, angular_spread, delay_psd, delay_spread, ecdf,
    estimate_noise_floor, excess_delay, extract_mpcs, fit_lsp_distribution, fit_pathloss,
    kfactor_moment, received_power, write_stat_records, xpr_cpr_from_tensor,
)
from .synthesis import synth_dmc, synth_smc

log = logging.getLogger(__name__)

CONTAINER_DIR = "containers"
ESTIMATE_DIR = "estimates"
REPORT_DIR = "reports"


def _map(func, items, jobs):
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [func(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, *zip(*items)))


# ---------------------------------------------------------------- synth


def _synth_one(cfg, index, out_dir, seed):
    tx, rx = cfg.arrays()
    with warnings.catch_warnings():
        # the fallback is recorded in the container metadata
        warnings.simplefilter("ignore", RuntimeWarning)
        tensor, truth = synth_position(cfg, index, tx, rx, seed)
    name = f"{truth.position}.chtn"
    write_container(out_dir / CONTAINER_DIR / name, tensor)
    d = truth.to_dict()
    d["container"] = f"{CONTAINER_DIR}/{name}"
    return d


def run_synth(cfg, out_dir, seed_override=None, jobs=1):
    out_dir = Path(out_dir)
    if any(p.los is None for p in cfg.positions):
        missing = [p.id for p in cfg.positions if p.los is None]
        raise ConfigError(f"positions without a LOS flag: {', '.join(missing)}")
    seed = cfg.scenario["seed"] if seed_override is None else int(seed_override)
    items = [(cfg, i, out_dir, seed) for i in range(len(cfg.positions))]
    truths = _map(_synth_one, items, jobs)
    manifest = {"stage": "synth", "seed": int(seed), "grid": cfg.grid.to_dict(), "positions": truths}
    atomic_write_text(out_dir / "manifest.json", dump_json(manifest) + "\n")
    return manifest


# ---------------------------------------------------------------- estimate


def _sage_config(cfg, stop_db=None):
    params = dict(cfg.estimator["sage"])
    if stop_db is not None:
        params["stop_db"] = float(stop_db)
    return SageConfig(**params)


def _dmc_params(cfg, k_max=None):
    p = dict(cfg.estimator["dmc"])
    if k_max is not None:
        p["k_max"] = int(k_max)
    return p


def _estimate_one(path, out_dir, sage, dmc_params):
    H = read_container(path)
    pid = str(H.metadata.get("position", Path(path).stem))
    paths = estimate_smc(H, sage)
    residual = smc_residual(H, paths)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = DmcEstimator(**dmc_params).fit(residual)
    est_dir = out_dir / ESTIMATE_DIR
    write_paths_csv(est_dir / f"{pid}_paths.csv", paths)
    summary = {
        "position": pid,
        "container": str(path),
        "los": H.metadata.get("los"),
        "distance": H.metadata.get("distance"),
        "n_paths": len(paths),
        "paths": [p.to_dict() for p in paths],
        "input_power": H.power,
        "residual_power": residual.power,
        "dmc": None if est.model_ is None else est.model_.to_dict(),
    }
    if est.delay_report_ is not None:
        rep = est.delay_report_
        summary.update(power_capture_ratio=rep.power_capture_ratio, lm_iterations=rep.iterations,
                       lm_converged=rep.converged)
        atomic_write_text(est_dir / f"{pid}_dmc.txt", rep.to_text())
    noise = 0.0 if est.model_ is None else est.model_.noise_floor
    summary["dmc_power_fraction"] = dmc_power_fraction(H, paths, noise)
    atomic_write_text(est_dir / f"{pid}_estimate.json", dump_json(summary) + "\n")
    return summary


def run_estimate(cfg, out_dir, containers=None, jobs=1, k_max=None, stop_db=None):
    out_dir = Path(out_dir)
    if containers is None:
        containers = sorted((out_dir / CONTAINER_DIR).glob("*.chtn"))
    containers = [Path(c) for c in containers]
    sage = _sage_config(cfg, stop_db)
    dmc_params = _dmc_params(cfg, k_max)
    items = [(c, out_dir, sage, dmc_params) for c in containers]
    summaries = _map(_estimate_one, items, jobs)
    manifest = {
        "stage": "estimate",
        "positions": [{"position": s["position"], "container": s["container"],
                       "estimate": f"{ESTIMATE_DIR}/{s['position']}_estimate.json"} for s in summaries],
    }
    (out_dir / ESTIMATE_DIR).mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / ESTIMATE_DIR / "manifest.json", dump_json(manifest) + "\n")
    return summaries


# ---------------------------------------------------------------- characterize


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv(rows, header):
    lines = [",".join(header)] + [",".join(_fmt(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _characterize_one(summary, snr_list, k_sv):
    H = read_container(summary["container"])
    pid = summary["position"]
    paths = [SmcPath.from_dict(p) for p in summary["paths"]]
    psd = delay_psd(H)
    floor_db = estimate_noise_floor(psd)
    mpcs = extract_mpcs(psd, floor_db, H.grid.delay_resolution)
    pr = received_power(mpcs) if mpcs else float(np.mean(np.abs(H.data) ** 2))
    if mpcs:
        ds, ed = delay_spread(mpcs), excess_delay(mpcs)
    else:
        ds = ed = 0.0
    links = H.data.reshape(-1, H.grid.n_freq)
    kf = float(np.median([kfactor_moment(h).db for h in links]))
    if paths:
        pw = [p.power for p in paths]
        asa = angular_spread([p.aoa for p in paths], pw)
        asd = angular_spread([p.aod for p in paths], pw)
        esa = angular_spread([p.eoa for p in paths], pw)
        esd = angular_spread([p.eod for p in paths], pw)
    else:
        asa = asd = esa = esd = 0.0
    xh, xv, cpr = xpr_cpr_from_tensor(H)
    rec = StatRecord(pid, float(summary["distance"]), float(-10.0 * np.log10(pr)), ds, ed, kf,
                     asd, asa, esd, esa, xh, xv, cpr, bool(summary["los"]))

    # capacity and SVs for the full channel, the SMC-only and the SMC+DMC reconstruction
    smc = synth_smc(paths, H.tx_array, H.rx_array, H.grid) if paths else None
    variants = {"full": H}
    if smc is not None and smc.power > 0:
        variants["smc"] = smc
        if summary.get("dmc"):
            model = DmcModel.from_dict(summary["dmc"])
            noise_free = DmcModel(model.processes, 0.0, model.vmf_rx, model.vmf_tx)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                dmc = synth_dmc(noise_free, H.tx_array, H.rx_array, H.grid, seed=0)
            variants["smc_dmc"] = smc.like(smc.data + dmc.data)
    k = min(k_sv, H.n_rx, H.n_tx)
    cap_rows, sv_rows = [], []
    for name, T in variants.items():
        Hn, gamma = normalize_channel(T)
        sv = singular_values(Hn, k)
        sv_rows.append([pid, name, sv.power_fraction, *sv.profile])
        for snr in snr_list:
            c = capacity(Hn, snr, k, gamma)
            cap_rows.append([pid, name, snr, c.capacity, gamma])

    plot = {
        "psd": [[n * H.grid.delay_resolution * 1e9, 10 * np.log10(max(v, 1e-300))] for n, v in enumerate(psd)],
    }
    resid = smc_residual(H, paths)
    if resid.power > 0:
        plot["spectrum_rx"] = bartlett_spectrum(resid, "rx", mode="classical")
    return {
        "record": rec, "cap": cap_rows, "sv": sv_rows, "plot": plot,
        "dmc_fraction": summary.get("dmc_power_fraction"),
        "capture": summary.get("power_capture_ratio"),
    }


def run_characterize(cfg, out_dir, jobs=1):
    out_dir = Path(out_dir)
    manifest_path = out_dir / ESTIMATE_DIR / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no estimate manifest at {manifest_path}; run 'estimate' first")
    entries = json.loads(manifest_path.read_text())["positions"]
    summaries = [json.loads((out_dir / e["estimate"]).read_text()) for e in entries]
    missing = [s["position"] for s in summaries if s.get("los") is None]
    if missing:
        raise ConfigError(f"positions without a LOS flag: {', '.join(missing)}")
    chz = cfg.characterize
    snr_list = [float(x) for x in chz["snr_db"]]
    items = [(s, snr_list, int(chz["k_sv"])) for s in summaries]
    results = _map(_characterize_one, items, jobs)

    rep = out_dir / REPORT_DIR
    records = [r["record"] for r in results]
    rep.mkdir(parents=True, exist_ok=True)
    write_stat_records(rep / "records.csv", records)

    # path loss: {CI, FI} x {LOS, NLOS}
    f_ghz = cfg.grid.f_c / 1e9
    ci_const = FSPL_1M_1GHZ if chz.get("ci_constant") is None else float(chz["ci_constant"])
    pl_rows = []
    for tag, flag in (("LOS", True), ("NLOS", False)):
        sel = [r for r in records if r.los == flag]
        d = [r.distance_3d for r in sel]
        pl = [r.pl for r in sel]
        for model in ("CI", "FI"):
            try:
                fit = fit_pathloss(d, pl, model, f_ghz, chz.get("min_distance"), ci_const)
                pl_rows.append([tag, model, fit.n, fit.beta, fit.sigma, fit.n_points])
            except ValueError as exc:
                log.info("skipping %s %s path-loss fit: %s", tag, model, exc)
                pl_rows.append([tag, model, "nan", "nan", "nan", 0])
    atomic_write_text(rep / "pathloss.csv", _csv(pl_rows, ["scenario", "model", "n", "beta_dB", "sigma_dB", "points"]))

    # large-scale parameter distributions
    lsp_rows = []
    specs = [("ds", "log10"), ("kf", "identity"), ("asd", "log10"), ("asa", "log10"),
             ("esd", "log10"), ("esa", "log10"), ("xpr_h", "identity"), ("xpr_v", "identity"),
             ("cpr", "identity")]
    for tag, flag in (("LOS", True), ("NLOS", False)):
        sel = [r for r in records if r.los == flag]
        for name, transform in specs:
            vals = [getattr(r, name) for r in sel]
            vals = [v for v in vals if np.isfinite(v) and (transform != "log10" or v > 0)]
            if len(vals) >= 2:
                mu, sigma = fit_lsp_distribution(vals, transform)
                lsp_rows.append([tag, name, transform, mu, sigma, len(vals)])
    atomic_write_text(rep / "lsp_fits.csv", _csv(lsp_rows, ["scenario", "parameter", "transform", "mu", "sigma", "count"]))

    cap_rows = [row for r in results for row in r["cap"]]
    atomic_write_text(rep / "capacity.csv", _csv(cap_rows, ["position", "channel", "snr_dB", "capacity", "gamma"]))
    k = int(chz["k_sv"])
    sv_rows = [row for r in results for row in r["sv"]]
    atomic_write_text(rep / "singular_values.csv",
                      _csv(sv_rows, ["position", "channel", "power_fraction"] + [f"sv{i + 1}" for i in range(k)]))
    frac_rows = [[r["record"].position, r["dmc_fraction"] if r["dmc_fraction"] is not None else "nan",
                  r["capture"] if r["capture"] is not None else "nan"] for r in results]
    atomic_write_text(rep / "dmc_fraction.csv", _csv(frac_rows, ["position", "dmc_power_fraction", "power_capture_ratio"]))

    plots = rep / "plots"
    for r in results:
        pid = r["record"].position
        atomic_write_text(plots / f"psd_{pid}.csv", _csv(r["plot"]["psd"], ["delay_ns", "psd_dB"]))
        if "spectrum_rx" in r["plot"]:
            s = r["plot"]["spectrum_rx"]
            el, az = np.meshgrid(s.elevation, s.azimuth, indexing="ij")
            rows = zip(el.ravel(), az.ravel(), s.power_db.ravel())
            atomic_write_text(plots / f"spectrum_rx_{pid}.csv", _csv(rows, ["elevation", "azimuth", "power_dB"]))
    for name in ("ds", "kf", "asa", "asd", "xpr_h", "xpr_v", "cpr"):
        vals = [getattr(r, name) for r in records if np.isfinite(getattr(r, name))]
        if vals:
            x, y = ecdf(vals)
            atomic_write_text(plots / f"cdf_{name}.csv", _csv(zip(x, y), [name, "cdf"]))
    manifest = {
        "stage": "characterize",
        "positions": [r.position for r in records],
        "files": sorted(str(p.relative_to(out_dir)) for p in rep.rglob("*.csv")),
    }
    atomic_write_text(rep / "manifest.json", dump_json(manifest) + "\n")
    return manifest


def run_pipeline(cfg, out_dir, seed_override=None, jobs=1, k_max=None, stop_db=None):
    run_synth(cfg, out_dir, seed_override, jobs)
    run_estimate(cfg, out_dir, None, jobs, k_max, stop_db)
    return run_characterize(cfg, out_dir, jobs)

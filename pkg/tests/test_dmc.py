import numpy as np
import pytest
from sklearn.base import clone

from chanest.arrays import build_uca, build_upa, half_wavelength
from chanest.channel import DmcDelayProcess, DmcModel, FrequencyGrid, VmfComponent, uniform_mixture
from chanest.dmc import (
    DmcDelayEstimator, DmcEstimator, ProcessSegment, VmfAngularEstimator,
    bartlett_init_angular, capture_ratios, detect_processes, fit_dmc_angular, fit_dmc_delay,
    init_dmc_delay, noise_floor_from_psd, prune_mixture, psd_from_covariance, residual_delay_psd,
)
from chanest.errors import InvalidArgumentError, NotFittedError
from chanest.synthesis import (
    dmc_delay_psd, dmc_frequency_covariance, dmc_spatial_covariance, synth_dmc, white_noise,
)
from chanest.vmf import SpatialBasis

G256 = FrequencyGrid(n_freq=256)
G512 = FrequencyGrid(n_freq=512)
DT = G256.delay_resolution
S = half_wavelength(5.5e9)


def _db(x):
    return 10 * np.log10(x)


def _psd_db(procs, alpha0, grid=G256):
    return _db(dmc_delay_psd(DmcModel(tuple(procs), alpha0), grid.delays))


@pytest.fixture(scope="module")
def arrays():
    return build_upa(4, 4, S), build_uca(2, 8, S)


# ---------------------------------------------------------------- segmentation


def test_single_process_one_segment():
    psd = _psd_db([DmcDelayProcess(1.0, 0.05 / DT, 40 * DT)], 1e-3)
    segs = detect_processes(psd, _db(1e-3) + 3)
    assert len(segs) == 1
    assert abs(segs[0].onset_bin - 40) <= 1


def test_three_processes_three_segments():
    segs = detect_processes(_psd_db(_truth3(), 1e-3, G512), _db(1e-3) + 3)
    assert len(segs) == 3
    for seg, onset in zip(segs, (30, 150, 300)):
        assert abs(seg.onset_bin - onset) <= 1
    # ordered and non-overlapping
    assert all(a.end_bin < b.start_bin for a, b in zip(segs, segs[1:]))


def test_flat_psd_gives_no_segments():
    assert detect_processes(np.full(256, -30.0), -27.0) == []


def test_weak_onset_not_split():
    # a 13 dB step is spread below 6 dB/bin by the smoothing and stays part of one process
    procs = [DmcDelayProcess(1.0, 0.06 / DT, 20 * DT), DmcDelayProcess(0.3, 0.04 / DT, 90 * DT)]
    assert len(detect_processes(_psd_db(procs, 1e-4), _db(1e-4) + 3)) == 1


def test_k_max_caps_segments():
    assert len(detect_processes(_psd_db(_truth3(), 1e-3, G512), _db(1e-3) + 3, k_max=2)) == 2


def test_segment_invariant():
    with pytest.raises(InvalidArgumentError):
        ProcessSegment(5, 5, -1.0, 5)


# ---------------------------------------------------------------- initialization


def test_init_single_process_noiseless():
    truth = DmcDelayProcess(1.0, 0.05 / DT, 40 * DT)
    psd = dmc_delay_psd(DmcModel((truth,), 1e-3), G256.delays)
    floor, thr = noise_floor_from_psd(psd)
    segs = detect_processes(_db(psd), _db(thr))
    procs, alpha0 = init_dmc_delay(segs, psd, G256, thr)
    p = procs[0]
    assert p.alpha1 == pytest.approx(1.0, rel=0.2)
    assert p.decay == pytest.approx(truth.decay, rel=0.15)
    assert abs(p.base_delay - truth.base_delay) <= DT * (1 + 1e-9)
    assert alpha0 == pytest.approx(1e-3, rel=0.1)


def test_init_noise_floor_on_pure_noise():
    data = white_noise((32, 32, 256), 0.04, 2)
    psd = residual_delay_psd(data)
    _, alpha0 = init_dmc_delay([], psd, G256, np.inf)
    assert alpha0 == pytest.approx(0.04, rel=0.1)


def test_base_delay_normalization():
    p = DmcDelayProcess(1.0, 1e7, G256.max_delay / 2)
    assert p.normalized(G256)[1] == pytest.approx(0.5)


def test_short_segment_skipped_with_warning():
    psd = np.full(256, 1e-3)
    with pytest.warns(RuntimeWarning):
        procs, _ = init_dmc_delay([ProcessSegment(10, 11, -1.0, 10)], psd, G256, 2e-3)
    assert procs == []


# ---------------------------------------------------------------- delay fit


def _truth3():
    # each onset rises well above the previous tail and every tail is gone before the span wraps
    return (DmcDelayProcess(1.0, 0.06 / DT, 30 * DT), DmcDelayProcess(0.3, 0.05 / DT, 150 * DT),
            DmcDelayProcess(0.1, 0.05 / DT, 300 * DT))


def test_fit_from_truth_is_stationary():
    procs, a0 = _truth3(), 1e-3
    Smat = dmc_frequency_covariance(procs, a0, G512)
    rep = fit_dmc_delay(Smat, procs, a0, G512, max_iter=10)
    assert np.all(np.diff(rep.trace) >= 0)
    assert rep.iterations <= 1
    for a, b in zip(rep.fitted.processes, procs):
        assert a.alpha1 == pytest.approx(b.alpha1, rel=1e-3)
        assert a.decay == pytest.approx(b.decay, rel=1e-3)
    assert rep.power_capture_ratio > 0.999


def test_fit_recovers_from_perturbed_init_and_scales():
    procs, a0 = _truth3(), 1e-3
    Smat = dmc_frequency_covariance(procs, a0, G512)
    init = [DmcDelayProcess(p.alpha1 * 1.3, p.decay * 0.8, p.base_delay + DT) for p in procs]
    rep = fit_dmc_delay(Smat, init, a0 * 2, G512, max_iter=100)
    assert np.all(np.diff(rep.trace) >= 0)
    for a, b in zip(rep.fitted.processes, procs):
        assert a.alpha1 == pytest.approx(b.alpha1, rel=0.01)
        assert a.decay == pytest.approx(b.decay, rel=0.01)
        assert a.base_delay == pytest.approx(b.base_delay, abs=0.05 * DT)
        assert 0 <= a.normalized(G512)[1] < 1
    # scale equivariance
    c = 7.0
    rep_c = fit_dmc_delay(c * Smat, [DmcDelayProcess(p.alpha1 * c, p.decay, p.base_delay) for p in init],
                          a0 * 2 * c, G512, max_iter=100)
    for a, b in zip(rep_c.fitted.processes, rep.fitted.processes):
        assert a.alpha1 == pytest.approx(c * b.alpha1, rel=1e-3)
        assert a.decay == pytest.approx(b.decay, rel=1e-3)
        assert a.base_delay == pytest.approx(b.base_delay, abs=1e-3 * DT)
    assert rep_c.fitted.noise_floor == pytest.approx(c * rep.fitted.noise_floor, rel=1e-3)


def test_segmentation_idempotent_on_fit():
    procs, a0 = _truth3(), 1e-3
    psd = dmc_delay_psd(DmcModel(procs, a0), G512.delays)
    _, thr = noise_floor_from_psd(psd)
    segs = detect_processes(_db(psd), _db(thr))
    init, alpha0 = init_dmc_delay(segs, psd, G512, thr)
    rep = fit_dmc_delay(dmc_frequency_covariance(procs, a0, G512), init, alpha0, G512)
    fit_psd = dmc_delay_psd(rep.fitted, G512.delays)
    _, thr2 = noise_floor_from_psd(fit_psd)
    assert len(detect_processes(_db(fit_psd), _db(thr2))) == len(segs) == 3


def test_fit_input_errors():
    Smat = np.eye(256)
    with pytest.raises(InvalidArgumentError):
        fit_dmc_delay(Smat, [], 1e-3, G256)
    with pytest.raises(InvalidArgumentError):
        fit_dmc_delay(np.eye(8), list(_truth3()), 1e-3, G256)
    with pytest.raises(InvalidArgumentError):
        fit_dmc_delay(np.triu(np.ones((256, 256))), list(_truth3()), 1e-3, G256)


def test_capture_ratio_bounds():
    meas = np.array([1.0, 5.0, 3.0, 1.0, 1.0, 1.0])
    cap, ratio = capture_ratios(meas, meas, 1.0, window=1)
    assert cap == pytest.approx(1.0) and ratio == pytest.approx(1.0)
    cap, _ = capture_ratios(np.ones(6), meas, 1.0, window=1)
    assert cap == 0.0
    cap, ratio = capture_ratios(1 + 2 * (meas - 1), meas, 1.0, window=1)
    assert cap == pytest.approx(1.0) and ratio == pytest.approx(2.0)


def test_psd_from_covariance_matches_model():
    procs, a0 = _truth3(), 1e-3
    p = psd_from_covariance(dmc_frequency_covariance(procs, a0, G512))
    truth = dmc_delay_psd(DmcModel(procs, a0), G512.delays)
    np.testing.assert_allclose(p, truth, rtol=0.01)


def test_report_text_lists_parameters():
    procs, a0 = _truth3(), 1e-3
    rep = fit_dmc_delay(dmc_frequency_covariance(procs, a0, G512), procs, a0, G512, max_iter=2)
    text = rep.to_text()
    assert "processes: 3" in text and "power_capture_ratio" in text and "loglik_trace" in text


# ---------------------------------------------------------------- angular


def _angular_tensor(arrays, vmf_rx, vmf_tx, seed=3, grid=FrequencyGrid(n_freq=64)):
    tx, rx = arrays
    dt = grid.delay_resolution
    model = DmcModel((DmcDelayProcess(1.0, 0.1 / dt, 5 * dt),), 1e-3, vmf_rx, vmf_tx)
    return synth_dmc(model, tx, rx, grid, seed)


def _sep(c, el, az):
    a = np.deg2rad([c.mean_elevation, c.mean_azimuth])
    b = np.deg2rad([el, az])
    cosd = np.sin(a[0]) * np.sin(b[0]) + np.cos(a[0]) * np.cos(b[0]) * np.cos(a[1] - b[1])
    return np.rad2deg(np.arccos(np.clip(cosd, -1, 1)))


def test_bartlett_init_single_lobe(arrays):
    H = _angular_tensor(arrays, (VmfComponent(10.0, 40.0, 50.0),), uniform_mixture())
    init = bartlett_init_angular(H, "rx")
    assert len(init) == 1
    assert _sep(init[0], 10.0, 40.0) < 5.0
    assert init[0].concentration > 0


def test_bartlett_init_isotropic(arrays):
    H = _angular_tensor(arrays, uniform_mixture(), uniform_mixture())
    init = bartlett_init_angular(H, "rx")
    assert len(init) == 1 and init[0].concentration == 0.0


def test_bartlett_init_two_lobes(arrays):
    lobes = (VmfComponent(0.0, -45.0, 30.0, 0.5), VmfComponent(0.0, 45.0, 30.0, 0.5))
    H = _angular_tensor(arrays, uniform_mixture(), lobes)
    init = bartlett_init_angular(H, "tx")
    assert len(init) == 2
    for c in init:
        assert c.weight == pytest.approx(0.5, abs=0.1)
    assert sorted(round(c.mean_azimuth / 45) for c in init) == [-1, 1]


def test_fit_angular_from_exact_covariance(arrays):
    _, rx = arrays
    basis = SpatialBasis.build(rx, 5.5e9, 60, 120)
    truth = (VmfComponent(5.0, 30.0, 40.0),)
    Smat = dmc_spatial_covariance(truth, rx, G256, basis) + 1e-3 * np.eye(rx.port_count)
    init = (VmfComponent(0.0, 25.0, 20.0),)
    rep = fit_dmc_angular(Smat, init, rx, G256, basis)
    assert np.all(np.diff(rep.trace) >= 0)
    c = rep.mixture[0]
    assert _sep(c, 5.0, 30.0) < 1.0
    assert c.concentration == pytest.approx(40.0, rel=0.05)
    # likelihood at the truth is no lower than at the initial guess
    assert rep.trace[-1] >= rep.trace[0]


def test_fit_angular_uniform_truth(arrays):
    H = _angular_tensor(arrays, uniform_mixture(), uniform_mixture(), seed=8)
    est = VmfAngularEstimator("rx", n_elevation=60, n_azimuth=120).fit(H)
    assert all(c.concentration <= 0.5 for c in est.mixture_)


def test_prune_mixture():
    mix = (VmfComponent(0, 0, 1.0, 0.9995), VmfComponent(0, 90, 1.0, 0.0005))
    out = prune_mixture(mix)
    assert len(out) == 1 and out[0].weight == pytest.approx(1.0)


# ---------------------------------------------------------------- estimator API


def test_delay_estimator_api(arrays):
    tx, rx = arrays
    g = FrequencyGrid(n_freq=128)
    dt = g.delay_resolution
    model = DmcModel((DmcDelayProcess(1.0, 0.08 / dt, 15 * dt),), 1e-3)
    H = synth_dmc(model, tx, rx, g, 1)
    est = DmcDelayEstimator(max_iter=30)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.score(H)
    est.fit(H)
    assert len(est.segments_) == 1
    assert est.model_.processes[0].decay == pytest.approx(0.08 / dt, rel=0.15)
    assert np.isfinite(est.score(H))
    noise = H.like(white_noise(H.shape, 1e-3, 4))
    assert DmcDelayEstimator().fit(noise).model_ is None


def test_full_estimator_predict(arrays):
    tx, rx = arrays
    g = FrequencyGrid(n_freq=64)
    dt = g.delay_resolution
    model = DmcModel((DmcDelayProcess(1.0, 0.1 / dt, 5 * dt),), 1e-3,
                     (VmfComponent(0.0, 20.0, 20.0),), (VmfComponent(0.0, -10.0, 20.0),))
    H = synth_dmc(model, tx, rx, g, 2)
    est = DmcEstimator(max_iter=30).fit(H)
    assert set(est.angular_reports_) == {"rx", "tx"}
    draw = est.predict(H, seed=3)
    assert draw.shape == H.shape
    assert draw.power == pytest.approx(H.power, rel=0.5)

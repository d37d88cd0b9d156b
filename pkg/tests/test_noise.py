import numpy as np
import pytest

from jointclock.noise import (
    CalibrationError,
    LOTrace,
    NoiseModel,
    StatisticsWarning,
    calibrate_flicker,
    fit_chi,
    flicker_kernel,
    generate,
    generate_ensemble,
    phase_variance,
    psd,
    psd_slope,
    window_phase,
    window_phases,
)
from jointclock.spin import ParameterError


def _traces(model, n_traces=2000, n_steps=400, dt=0.01, seed=0):
    return generate(np.random.default_rng(seed), model, dt, n_steps, n_traces)


def test_white_phase_variance_is_linear():
    tr = _traces(NoiseModel.white(1.0))
    t, v2 = phase_variance(tr)
    ratio = v2 / t
    assert ratio.mean() == pytest.approx(1.0, abs=0.1)
    # pointwise: sample variance of chi^2_1 with 2000 draws
    se = np.sqrt(2.0 / tr.n_traces) * t
    assert np.all(np.abs(v2 - t) < 4 * se)


def test_white_grid_mean_within_two_percent():
    tr = _traces(NoiseModel.white(1.0), n_traces=20000, n_steps=100, seed=1)
    t, v2 = phase_variance(tr)
    assert np.mean(v2 / t) == pytest.approx(1.0, abs=0.02)


def test_white_scaling_with_gamma():
    t, v1 = phase_variance(_traces(NoiseModel.white(1.0), seed=4))
    _, v3 = phase_variance(_traces(NoiseModel.white(3.0), seed=4))
    np.testing.assert_allclose(v3, 3 * v1, rtol=1e-12)


def test_flicker_kernel():
    np.testing.assert_allclose(flicker_kernel(4), [1, 0.5, 0.375, 0.3125])
    np.testing.assert_allclose(flicker_kernel(3, alpha=0.0), [1, 0, 0])


@pytest.fixture(scope="module")
def flicker_traces():
    return generate(np.random.default_rng(2), NoiseModel.flicker(1.0), 1e-3, 1000, 4000)


def test_flicker_psd_slope(flicker_traces):
    f, S = psd(flicker_traces)
    assert psd_slope(f, S) == pytest.approx(-1.0, abs=0.1)


def test_flicker_phase_variance_and_chi(flicker_traces):
    cal = calibrate_flicker(flicker_traces)
    assert cal.gamma == pytest.approx(1.0, rel=0.1)
    assert cal.r2 > 0.95
    # one-sided periodogram convention: chi ~ 1/ln 2
    assert fit_chi(flicker_traces, gamma_target=1.0) == pytest.approx(1.4, abs=0.15)


def test_fit_chi_rejects_gamma_mismatch(flicker_traces):
    with pytest.raises(CalibrationError):
        fit_chi(flicker_traces, gamma_target=2.0)


def test_white_noise_rejected_by_flicker_calibration():
    tr = _traces(NoiseModel.white(1.0), n_traces=500, n_steps=1000, dt=1e-3, seed=3)
    with pytest.raises(CalibrationError):
        calibrate_flicker(tr)


def test_h_round_trip():
    m = NoiseModel.flicker(1.0)
    m2 = NoiseModel.from_h(1, 2 * m.h)
    assert m2.gamma == pytest.approx(np.sqrt(2))
    assert NoiseModel.from_h(0, 2.0).gamma == pytest.approx(1.0)


def test_zero_noise_gives_zero_trace():
    tr = generate(np.random.default_rng(0), NoiseModel.white(0.0), 0.1, 64, 200)
    assert not tr.values.any()
    _, S = psd(tr)
    assert not S.any()
    tr = generate(np.random.default_rng(0), NoiseModel.flicker(0.0), 0.1, 64)
    assert not tr.values.any()


def test_constant_offset_phase_variance():
    tr = LOTrace(0.5, np.full((200, 10), 2.0))
    t, v2 = phase_variance(tr)
    np.testing.assert_allclose(v2, (2.0 * t) ** 2)


def test_window_phase_examples():
    tr = LOTrace(0.5, np.arange(10.0))
    assert window_phase(tr, 0, 4) == pytest.approx(0.5 * 6)
    assert window_phase(tr, 6, 4) == pytest.approx(0.5 * 30)
    assert window_phase(tr, 3, 0) == 0
    np.testing.assert_allclose(window_phases(tr, 5), [5.0, 17.5])
    with pytest.raises(ParameterError):
        window_phase(tr, 8, 4)
    with pytest.raises(ParameterError):
        window_phase(tr, -1, 2)


def test_disjoint_window_correlations():
    white = window_phases(_traces(NoiseModel.white(1.0), 4000, 200, seed=5), 100)
    r = np.corrcoef(white[:, 0], white[:, 1])[0, 1]
    assert abs(r) < 4 / np.sqrt(4000)
    flick = window_phases(_traces(NoiseModel.flicker(1.0), 4000, 200, seed=6), 100)
    assert np.corrcoef(flick[:, 0], flick[:, 1])[0, 1] > 0.2


def test_determinism_and_ensembles():
    a = generate(np.random.default_rng(9), NoiseModel.flicker(), 0.01, 50, 3)
    b = generate(np.random.default_rng(9), NoiseModel.flicker(), 0.01, 50, 3)
    np.testing.assert_array_equal(a.values, b.values)
    e1 = generate_ensemble(7, NoiseModel.white(), 0.01, 20, 1200, workers=1)
    e2 = generate_ensemble(7, NoiseModel.white(), 0.01, 20, 1200, workers=2)
    np.testing.assert_array_equal(e1.values, e2.values)


def test_few_traces_warn():
    tr = _traces(NoiseModel.white(), n_traces=10, n_steps=20)
    with pytest.warns(StatisticsWarning):
        phase_variance(tr)


def test_validation():
    with pytest.raises(ParameterError):
        NoiseModel(2, 1.0)
    with pytest.raises(ParameterError):
        NoiseModel.white(-1.0)
    with pytest.raises(ParameterError):
        LOTrace(0.0, np.zeros(3))
    with pytest.raises(ParameterError):
        LOTrace(1.0, np.array([1.0, np.nan]))
    with pytest.raises(ParameterError):
        generate(np.random.default_rng(), NoiseModel.white(), 0.1, 0)


def test_csv_export(tmp_path):
    tr = LOTrace(1.0, np.array([0.25, -1.5]))
    p = tmp_path / "trace.csv"
    tr.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,value"
    assert [float(x.split(",")[1]) for x in lines[1:]] == [0.25, -1.5]
    with pytest.raises(ParameterError):
        LOTrace(1.0, np.zeros((2, 2))).to_csv(p)
